//! Experiment configuration, seeded repeat runs, sweeps and CSV output.

use std::fmt;
use std::hash::Hasher;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::centralized::{run_centralized, theorem_threshold, ProtocolConfig};
use crate::decentralized::run_decentralized;
use crate::environment::EnvConfig;
use crate::error::ProtocolError;
use crate::network::{Network, NetworkError, Topology};
use crate::privatizer::{plan_noise, NoisePlan, PrivacyBudget};
use crate::record::{CheckpointRow, RunRecord};

/// Environment variable capping run-level parallelism.
pub const THREADS_ENV: &str = "FEDBAN_THREADS";

pub const CSV_HEADER: [&str; 6] = ["run_id", "t", "agent", "cum_regret", "sync_count", "messages_sent"];
pub const PLOT_HEADER: [&str; 4] = ["axis_value", "T", "mean_per_agent_regret", "std"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("{0}")]
    Io(String),
    #[error("no records for axis {0}")]
    MissingAxis(String),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Centralized,
    Decentralized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedThreshold {
    /// `D = 0`
    EveryRound,
    TheoremDefault,
    /// `D = ∞`
    Never,
}

/// Synchronization threshold: a number or one of the named regimes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSpec {
    Value(f64),
    Named(NamedThreshold),
}

impl ThresholdSpec {
    pub fn label(&self) -> String {
        match self {
            ThresholdSpec::Value(v) => format!("{v}"),
            ThresholdSpec::Named(NamedThreshold::EveryRound) => "every_round".into(),
            ThresholdSpec::Named(NamedThreshold::TheoremDefault) => "theorem_default".into(),
            ThresholdSpec::Named(NamedThreshold::Never) => "never".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub topology: Topology,
    /// Message TTL `γ`.
    pub gamma: usize,
}

fn default_epsilons() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}

fn default_regimes() -> Vec<ThresholdSpec> {
    vec![
        ThresholdSpec::Named(NamedThreshold::EveryRound),
        ThresholdSpec::Named(NamedThreshold::TheoremDefault),
        ThresholdSpec::Named(NamedThreshold::Never),
    ]
}

fn default_dimensions() -> Vec<usize> {
    vec![5, 10, 20]
}

/// Values swept by `fedban sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_epsilons")]
    pub epsilon: Vec<f64>,
    #[serde(default = "default_regimes")]
    pub communication: Vec<ThresholdSpec>,
    #[serde(default = "default_dimensions")]
    pub dimension: Vec<usize>,
    /// Also run every communication regime without privacy noise.
    #[serde(default)]
    pub non_private_baseline: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            epsilon: default_epsilons(),
            communication: default_regimes(),
            dimension: default_dimensions(),
            non_private_baseline: false,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_one() -> u64 {
    1
}

fn default_checkpoint() -> u64 {
    100
}

fn default_regularizer() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub env: EnvConfig,
    pub budget: PrivacyBudget,
    /// Inject privacy noise; `false` runs the noise-free baseline with a
    /// `regularizer · I` group regularizer.
    #[serde(default = "default_true")]
    pub private: bool,
    /// `D`; defaults to the theorem setting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdSpec>,
    /// Communication rounds planned in advance (sizes the noise tree).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_fixed: Option<u64>,
    #[serde(default = "default_regularizer")]
    pub regularizer: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default = "default_one")]
    pub repeats: u64,
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    pub fn new(mode: Mode, env: EnvConfig, budget: PrivacyBudget) -> Self {
        Self {
            mode,
            env,
            budget,
            private: true,
            threshold: None,
            n_fixed: None,
            regularizer: 1.0,
            network: None,
            repeats: 1,
            checkpoint_every: 100,
            sweep: None,
        }
    }

    /// Every violated invariant.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.env.violations();
        out.extend(self.budget.violations().into_iter().map(|(f, v)| format!("{f}: out of range (got {v})")));
        if self.repeats == 0 {
            out.push("repeats: must be >= 1".into());
        }
        if self.checkpoint_every == 0 {
            out.push("checkpoint_every: must be >= 1".into());
        }
        if !(self.regularizer > 0.0 && self.regularizer.is_finite()) {
            out.push("regularizer: must be positive".into());
        }
        if self.n_fixed == Some(0) {
            out.push("n_fixed: must be >= 1".into());
        }
        if let Some(ThresholdSpec::Value(v)) = self.threshold {
            if v.is_nan() || v < 0.0 {
                out.push(format!("threshold: must be >= 0 (got {v})"));
            }
        }
        match (self.mode, &self.network) {
            (Mode::Decentralized, None) => out.push("network: required in decentralized mode".into()),
            (Mode::Decentralized, Some(spec)) => {
                if let Err(e) = self.build_network(spec) {
                    out.push(format!("network: {e}"));
                }
            }
            _ => {}
        }
        if let Some(sw) = &self.sweep {
            if sw.epsilon.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
                out.push("sweep.epsilon: values must be positive".into());
            }
            if sw.dimension.iter().any(|&d| d < 2) {
                out.push("sweep.dimension: values must be >= 2".into());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Validation(v))
        }
    }

    fn build_network(&self, spec: &NetworkSpec) -> Result<Network, NetworkError> {
        let graph = spec.topology.build(self.env.agents)?;
        Network::new(graph, spec.gamma)
    }

    pub fn network(&self) -> Result<Option<Network>, NetworkError> {
        match (self.mode, &self.network) {
            (Mode::Decentralized, Some(spec)) => self.build_network(spec).map(Some),
            _ => Ok(None),
        }
    }

    fn gamma(&self) -> Option<u64> {
        match (self.mode, &self.network) {
            (Mode::Decentralized, Some(spec)) => Some(spec.gamma as u64),
            _ => None,
        }
    }

    pub fn noise_plan(&self) -> Result<NoisePlan, ProtocolError> {
        let env = &self.env;
        if self.private {
            Ok(plan_noise(&self.budget, env.horizon, self.n_fixed, self.gamma(), env.action_bound, env.d, env.agents)?)
        } else {
            Ok(NoisePlan::non_private(self.regularizer, env.agents, env.horizon, self.gamma()))
        }
    }

    /// Resolves the threshold spec to a value of `D`.
    pub fn resolve_threshold(&self, plan: &NoisePlan) -> f64 {
        let env = &self.env;
        let theorem = || theorem_threshold(env.horizon.max(1), env.d, env.action_bound, plan.rho_min, plan.rho_max);
        match self.threshold {
            None | Some(ThresholdSpec::Named(NamedThreshold::TheoremDefault)) => theorem(),
            Some(ThresholdSpec::Named(NamedThreshold::EveryRound)) => 0.0,
            Some(ThresholdSpec::Named(NamedThreshold::Never)) => f64::INFINITY,
            Some(ThresholdSpec::Value(v)) => v,
        }
    }

    pub fn protocol_config(&self) -> Result<ProtocolConfig, ProtocolError> {
        let plan = self.noise_plan()?;
        Ok(ProtocolConfig {
            threshold: self.resolve_threshold(&plan),
            plan,
            env: self.env.clone(),
            private: self.private,
            alpha: self.budget.alpha,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// FNV-1a of the compact JSON form, as 16 hex digits.
    pub fn hash(&self) -> String {
        let mut h = fnv::FnvHasher::default();
        h.write(serde_json::to_string(self).expect("config serializes").as_bytes());
        format!("{:016x}", h.finish())
    }
}

/// Parses and validates a config from JSON text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = serde_json::from_str(text)
        .map_err(|e| ConfigError::Parse { line: e.line(), column: e.column(), msg: e.to_string() })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    parse_config(&text)
}

/// Thread cap from `FEDBAN_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// One seeded run; `run_id` selects the random streams.
pub fn run_once(cfg: &ExperimentConfig, run_id: u64) -> Result<RunRecord, HarnessError> {
    let pcfg = cfg.protocol_config()?;
    let mut rec = match cfg.network()? {
        Some(net) => run_decentralized::<f64, _>(&pcfg, &net, run_id, cfg.checkpoint_every, &mut ())?.record,
        None => run_centralized::<f64, _>(&pcfg, run_id, cfg.checkpoint_every, &mut ())?,
    };
    rec.meta.config_hash = cfg.hash();
    Ok(rec)
}

/// `repeats` runs with ids `0..repeats`, in parallel, returned in id order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, HarnessError> {
    cfg.validate()?;
    let ids: Vec<u64> = (0..cfg.repeats).collect();
    let work = || ids.par_iter().map(|&r| run_once(cfg, r)).collect::<Result<Vec<_>, _>>();
    match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Io(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per-checkpoint aggregate across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSummary {
    pub t: u64,
    pub mean_per_agent_regret: f64,
    pub std: f64,
    pub runs: usize,
}

/// Mean and spread over runs of each run's per-agent regret at every checkpoint.
pub fn summarize(records: &[RunRecord]) -> Vec<CheckpointSummary> {
    let mut by_t: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
    for rec in records {
        let mut per_t: std::collections::BTreeMap<u64, (f64, usize)> = Default::default();
        for row in &rec.rows {
            let e = per_t.entry(row.t).or_default();
            e.0 += row.cum_regret;
            e.1 += 1;
        }
        for (t, (sum, n)) in per_t {
            by_t.entry(t).or_default().push(sum / n as f64);
        }
    }
    by_t.into_iter()
        .map(|(t, vals)| {
            let (mean, std) = mean_std(&vals);
            CheckpointSummary { t, mean_per_agent_regret: mean, std, runs: vals.len() }
        })
        .collect()
}

/// Shortest decimal form of `x` rounded to 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("float round-trips");
    format!("{rounded}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, HarnessError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

/// Checkpoint rows of every record, ordered by `(run_id, t, agent)`.
pub fn write_csv(records: &[RunRecord], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut rows: Vec<&CheckpointRow> = records.iter().flat_map(|r| r.rows.iter()).collect();
    rows.sort_by_key(|r| (r.run_id, r.t, r.agent));
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.run_id.to_string(),
            r.t.to_string(),
            r.agent.to_string(),
            format_sig9(r.cum_regret),
            r.sync_count.to_string(),
            r.messages_sent.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<CheckpointRow>, HarnessError> {
    let mut rd = csv::Reader::from_path(path.as_ref())?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(HarnessError::Io(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        let (run_id, t, agent, cum_regret, sync_count, messages_sent) = rec?;
        out.push(CheckpointRow { run_id, t, agent, cum_regret, sync_count, messages_sent });
    }
    Ok(out)
}

/// The three swept quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Epsilon,
    Communication,
    Dimension,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Epsilon => "epsilon",
            Axis::Communication => "communication",
            Axis::Dimension => "dimension",
        })
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "epsilon" => Ok(Axis::Epsilon),
            "communication" => Ok(Axis::Communication),
            "dimension" => Ok(Axis::Dimension),
            _ => Err(format!("unknown axis {s:?} (expected epsilon, communication or dimension)")),
        }
    }
}

/// Records of one swept value.
#[derive(Debug, Clone)]
pub struct Series {
    pub axis_value: String,
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
}

/// Per-value configs of a sweep over `axis`, labelled by axis value.
pub fn sweep_configs(base: &ExperimentConfig, axis: Axis) -> Vec<(String, ExperimentConfig)> {
    let spec = base.sweep.clone().unwrap_or_default();
    let mut out = Vec::new();
    match axis {
        Axis::Epsilon => {
            for &eps in &spec.epsilon {
                let mut c = base.clone();
                c.budget.epsilon = eps;
                c.private = true;
                out.push((format!("{eps}"), c));
            }
        }
        Axis::Communication => {
            let privacy: &[bool] = if spec.non_private_baseline { &[true, false] } else { &[true] };
            for &private in privacy {
                for &th in &spec.communication {
                    let mut c = base.clone();
                    c.threshold = Some(th);
                    c.private = private;
                    let label = if private { th.label() } else { format!("{}:non_private", th.label()) };
                    out.push((label, c));
                }
            }
        }
        Axis::Dimension => {
            for &d in &spec.dimension {
                let mut c = base.clone();
                c.env.d = d;
                c.env.actions = c.env.actions.map(|k| k.min(d * d));
                out.push((format!("{d}"), c));
            }
        }
    }
    out
}

pub fn run_sweep(base: &ExperimentConfig, axis: Axis) -> Result<Vec<Series>, HarnessError> {
    base.validate()?;
    sweep_configs(base, axis)
        .into_iter()
        .map(|(axis_value, config)| {
            let records = run_experiment(&config)?;
            Ok(Series { axis_value, config, records })
        })
        .collect()
}

/// Tidy `(axis_value, T, mean_per_agent_regret, std)` rows, one per series
/// and checkpoint.
pub fn emit_plot_data(series: &[Series], axis: Axis, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    if series.is_empty() || series.iter().any(|s| s.records.is_empty()) {
        return Err(HarnessError::MissingAxis(axis.to_string()));
    }
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(PLOT_HEADER)?;
    for s in series {
        for cp in summarize(&s.records) {
            w.write_record([
                s.axis_value.clone(),
                cp.t.to_string(),
                format_sig9(cp.mean_per_agent_regret),
                format_sig9(cp.std),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
