//! Centralized federated LinUCB with a synchronizing controller.
//!
//! Each agent keeps the last synchronized group parameters `(S, s)` and its
//! own unsynchronized deltas `(U, ū)`. It acts optimistically on
//! `V = S + U`, `θ̄ = V⁻¹(s + ū)`, and requests a synchronization once the
//! log-determinant of its would-be Gram outgrows `S` by `D / Δt`. A
//! synchronization pushes every agent's staged block through its privatizer
//! and hands everyone the sum of the private releases.
//!
//! Trials are two-phase: all agents act on trial-start state, then at most
//! one synchronization round is applied.

use serde::{Deserialize, Serialize};

use crate::environment::{DecisionSet, EnvConfig, Environment, GroundTruth};
use crate::error::ProtocolError;
use crate::linalg::{Cholesky, SymMatrix, Vector};
use crate::privatizer::{privatize_output, NoisePlan, NoiseTree, StagedBlock};
use crate::record::{checkpoint_trials, CheckpointRow, RunMeta, RunRecord};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

/// Slack on the action/reward bound checks.
const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Synchronization threshold `D`; `f64::INFINITY` disables communication.
    pub threshold: f64,
    pub plan: NoisePlan,
    pub env: EnvConfig,
    /// Whether the plan injects privacy noise (informational; the plan decides).
    pub private: bool,
    /// Confidence level used in `β`.
    pub alpha: f64,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(ProtocolError::InvalidConfig(format!("threshold D = {}", self.threshold)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ProtocolError::InvalidConfig(format!("alpha = {}", self.alpha)));
        }
        if !(self.plan.rho_min > 0.0) {
            return Err(ProtocolError::InvalidConfig(format!("rho_min = {}", self.plan.rho_min)));
        }
        if let Some(v) = self.env.violations().into_iter().next() {
            return Err(ProtocolError::InvalidConfig(v));
        }
        Ok(())
    }
}

/// `D = 2Td / (ln(ρ_max/ρ_min + TL²/(dρ_min)) + 1)`.
pub fn theorem_threshold(horizon: u64, d: usize, action_bound: f64, rho_min: f64, rho_max: f64) -> f64 {
    let t = horizon as f64;
    let d = d as f64;
    let growth = (rho_max / rho_min + t * action_bound * action_bound / (d * rho_min)).ln();
    2.0 * t * d / (growth + 1.0)
}

/// Upper bound on synchronization rounds:
/// `2 √((dT/D) · ln(ρ_max/ρ_min + TL²/(dρ_min))) + 4`.
pub fn communication_bound(horizon: u64, d: usize, threshold: f64, action_bound: f64, rho_min: f64, rho_max: f64) -> f64 {
    let t = horizon as f64;
    let df = d as f64;
    let growth = (rho_max / rho_min + t * action_bound * action_bound / (df * rho_min)).ln();
    2.0 * ((df * t / threshold) * growth).sqrt() + 4.0
}

/// Per-agent protocol state.
#[derive(Debug, Clone)]
pub struct AgentState<T> {
    /// `S`: synchronized group Gram.
    pub synced_gram: SymMatrix<T>,
    /// `s`: synchronized group reward vector.
    pub synced_reward: Vector<T>,
    /// `U`: Gram of own observations since the last synchronization.
    pub local_gram: SymMatrix<T>,
    /// `ū`
    pub local_reward: Vector<T>,
    pub staged: StagedBlock<T>,
    /// `Δt`: trials since the last synchronization.
    pub since_sync: u64,
    pub tree: NoiseTree<T>,
    synced_logdet: T,
}

impl<T: Scalar> AgentState<T> {
    /// Fresh state with `S = M ρ_min I`.
    pub fn new(d: usize, agents: usize, plan: &NoisePlan, tree: NoiseTree<T>) -> Self {
        let s0 = SymMatrix::scaled_identity(d, T::lit(agents as f64 * plan.rho_min));
        Self::with_synced(s0, Vector::zeros(d), tree)
    }

    pub fn with_synced(synced_gram: SymMatrix<T>, synced_reward: Vector<T>, tree: NoiseTree<T>) -> Self {
        let d = synced_reward.dim();
        let synced_logdet = synced_gram.cholesky().map(|c| c.logdet()).unwrap_or(T::neg_infinity());
        Self {
            synced_gram,
            synced_reward,
            local_gram: SymMatrix::zeros(d),
            local_reward: Vector::zeros(d),
            staged: StagedBlock::new(d),
            since_sync: 0,
            tree,
            synced_logdet,
        }
    }

    pub fn dim(&self) -> usize {
        self.synced_reward.dim()
    }

    /// Replaces `(S, s)`, keeping the cached `ln det S` current.
    pub fn set_synced(&mut self, gram: SymMatrix<T>, reward: Vector<T>) -> Result<(), ProtocolError> {
        self.synced_logdet = gram.cholesky()?.logdet();
        self.synced_gram = gram;
        self.synced_reward = reward;
        Ok(())
    }

    /// Clears local deltas after a synchronization.
    pub fn reset_local(&mut self) {
        let d = self.dim();
        self.local_gram = SymMatrix::zeros(d);
        self.local_reward = Vector::zeros(d);
        self.staged.reset();
        self.since_sync = 0;
    }

    pub fn synced_logdet(&self) -> T {
        self.synced_logdet
    }
}

/// `V`, `ũ`, `θ̄`, `β` for one agent at one trial.
#[derive(Debug, Clone)]
pub struct ComposedParams<T> {
    pub v: SymMatrix<T>,
    pub u_tilde: Vector<T>,
    pub theta_bar: Vector<T>,
    pub beta: T,
    chol: Cholesky<T>,
}

impl<T: Scalar> ComposedParams<T> {
    pub fn logdet_v(&self) -> T {
        self.chol.logdet()
    }

    /// `‖x‖_{V⁻¹}`
    pub fn inv_norm(&self, x: &[T]) -> T {
        self.chol.inv_norm(x)
    }

    /// `⟨x, θ̄⟩ + β ‖x‖_{V⁻¹}`
    pub fn ucb(&self, x: &Vector<T>) -> T {
        x.dot(&self.theta_bar) + self.beta * self.inv_norm(x)
    }
}

/// `V = S + U`, `ũ = s + ū`, `θ̄ = V⁻¹ ũ`. `β` is left at zero.
pub fn compose<T: Scalar>(st: &AgentState<T>) -> Result<ComposedParams<T>, ProtocolError> {
    let v = st.synced_gram.add(&st.local_gram);
    let u_tilde = st.synced_reward.add(&st.local_reward);
    let chol = v.cholesky()?;
    let theta_bar = chol.solve(&u_tilde)?;
    Ok(ComposedParams { v, u_tilde, theta_bar, beta: T::zero(), chol })
}

/// `β = σ √(2 ln(2/α) + ln det V − d ln(Mρ_min)) + M S √ρ_max + M κ`.
///
/// The radicand is clamped at zero.
pub fn compute_beta<T: Scalar>(cp: &ComposedParams<T>, cfg: &ProtocolConfig) -> T {
    let env = &cfg.env;
    let plan = &cfg.plan;
    let m = env.agents as f64;
    let d = cp.v.dim() as f64;
    let radicand = 2.0 * (2.0 / cfg.alpha).ln() + cp.logdet_v().to_f64_lossy() - d * (m * plan.rho_min).ln();
    let beta = env.sigma * radicand.max(0.0).sqrt() + m * env.param_bound * plan.rho_max.sqrt() + m * plan.kappa;
    T::lit(beta)
}

/// Index of the UCB-maximizing action; ties go to the lowest index.
pub fn select_action<T: Scalar>(cp: &ComposedParams<T>, ds: &DecisionSet<T>) -> usize {
    let mut best = 0;
    let mut best_val = T::neg_infinity();
    for (i, x) in ds.actions.iter().enumerate() {
        let val = cp.ucb(x);
        if val > best_val {
            best = i;
            best_val = val;
        }
    }
    best
}

/// `U += xxᵀ`, `ū += y x`, `Q̂ += [x; y][x; y]ᵀ`.
pub fn local_update<T: Scalar>(st: &mut AgentState<T>, x: &Vector<T>, y: T, env: &EnvConfig) -> Result<(), ProtocolError> {
    if x.norm().to_f64_lossy() > env.action_bound + BOUND_TOL {
        return Err(ProtocolError::BoundViolation(format!("|x| = {} > L = {}", x.norm(), env.action_bound)));
    }
    if y.abs().to_f64_lossy() > env.reward_bound + BOUND_TOL {
        return Err(ProtocolError::BoundViolation(format!("|y| = {} > B = {}", y.abs(), env.reward_bound)));
    }
    st.local_gram.add_outer_assign(x, T::one())?;
    st.local_reward.axpy(y, x);
    st.staged.accumulate(x, y)?;
    Ok(())
}

/// `ln det(V + xxᵀ + M(ρ_max − ρ_min)I) − ln det S`.
pub fn logdet_gap<T: Scalar>(st: &AgentState<T>, v: &SymMatrix<T>, x: &Vector<T>, cfg: &ProtocolConfig) -> Result<T, ProtocolError> {
    let mut w = v.clone();
    w.add_outer_assign(x, T::one())?;
    w.add_diagonal(T::lit(cfg.env.agents as f64 * (cfg.plan.rho_max - cfg.plan.rho_min)));
    Ok(w.cholesky()?.logdet() - st.synced_logdet())
}

/// Fires when the log-det gap reaches `D / max(Δt, 1)`.
pub fn sync_check<T: Scalar>(st: &AgentState<T>, v: &SymMatrix<T>, x: &Vector<T>, cfg: &ProtocolConfig) -> Result<bool, ProtocolError> {
    if cfg.threshold <= 0.0 {
        return Ok(true);
    }
    if cfg.threshold.is_infinite() {
        return Ok(false);
    }
    let gap = logdet_gap(st, v, x, cfg)?.to_f64_lossy();
    Ok(gap >= cfg.threshold / st.since_sync.max(1) as f64)
}

/// One synchronization round: every agent privatizes its staged block, the
/// controller sums the releases, and every agent adopts the sums.
pub fn synchronize_all<T: Scalar>(agents: &mut [AgentState<T>], plan: &NoisePlan) -> Result<(), ProtocolError> {
    let Some(first) = agents.first() else {
        return Ok(());
    };
    let d = first.dim();
    let mut gram = SymMatrix::zeros(d);
    let mut reward = Vector::zeros(d);
    for st in agents.iter_mut() {
        st.tree.insert(&st.staged)?;
        let release = privatize_output(&st.tree, plan, d)?;
        gram.add_assign(&release.gram);
        reward.axpy(T::one(), &release.reward);
    }
    let logdet = gram.cholesky()?.logdet();
    for st in agents.iter_mut() {
        st.synced_gram = gram.clone();
        st.synced_reward = reward.clone();
        st.synced_logdet = logdet;
        st.reset_local();
    }
    Ok(())
}

/// Everything an observer sees about one agent's action.
pub struct ActionEvent<'a, T> {
    /// 1-based trial.
    pub t: u64,
    pub agent: usize,
    pub params: &'a ComposedParams<T>,
    pub decision_set: &'a DecisionSet<T>,
    pub chosen: usize,
    pub reward: T,
    pub regret: T,
    pub truth: &'a GroundTruth<T>,
    pub fired: bool,
}

/// Hooks for tests and diagnostics; all default to no-ops.
pub trait Observer<T> {
    fn on_action(&mut self, _ev: &ActionEvent<'_, T>) {}
    /// Called after a synchronization round on trial `t` (1-based).
    fn on_sync(&mut self, _t: u64, _agents: &[AgentState<T>]) {}
}

impl<T> Observer<T> for () {}

/// Fresh per-agent states for run `run_id`.
pub fn init_agents<T: Scalar>(cfg: &ProtocolConfig, run_id: u64) -> Vec<AgentState<T>> {
    let env = &cfg.env;
    (0..env.agents)
        .map(|i| {
            let mut r = rng::stream(env.master_seed, Purpose::TreeNoise, run_id, i as u64, 0);
            let tree = NoiseTree::new(&cfg.plan, env.d, &mut r);
            AgentState::new(env.d, env.agents, &cfg.plan, tree)
        })
        .collect()
}

/// Runs `T` trials of `M` agents and records checkpoint rows every
/// `checkpoint_every` trials.
pub fn run_centralized<T: Scalar, O: Observer<T>>(
    cfg: &ProtocolConfig,
    run_id: u64,
    checkpoint_every: u64,
    observer: &mut O,
) -> Result<RunRecord, ProtocolError> {
    cfg.validate()?;
    let env_cfg = &cfg.env;
    let m = env_cfg.agents;
    let horizon = env_cfg.horizon;
    let env: Environment<T> = Environment::new(env_cfg.clone(), run_id)?;
    let mut agents = init_agents::<T>(cfg, run_id);

    let checkpoints = checkpoint_trials(horizon, checkpoint_every);
    let mut next_cp = 0;
    let mut record = RunRecord {
        run_id,
        meta: RunMeta {
            seed: env_cfg.master_seed,
            noise_seeds: agents.iter().map(|a| a.tree.noise_seed()).collect(),
            ..RunMeta::default()
        },
        ..RunRecord::default()
    };
    let mut cum_regret = vec![0.0f64; m];
    let mut messages = vec![0u64; m];
    let mut rounds = 0u64;
    let mut beta0 = 0.0;

    for step in 0..horizon {
        let t = step + 1;
        let mut any_fired = false;
        for (i, st) in agents.iter_mut().enumerate() {
            let ds = env.decision_set(i, step)?;
            let mut cp = compose(st)?;
            cp.beta = compute_beta(&cp, cfg);
            let chosen = select_action(&cp, &ds);
            let x = &ds.actions[chosen];
            let y = env.reward(i, step, x)?;
            let regret = ds.regret_of(chosen, &env.truth);
            cum_regret[i] += regret.to_f64_lossy();
            let fired = sync_check(st, &cp.v, x, cfg)?;
            any_fired |= fired;
            if i == 0 {
                beta0 = cp.beta.to_f64_lossy();
            }
            observer.on_action(&ActionEvent {
                t,
                agent: i,
                params: &cp,
                decision_set: &ds,
                chosen,
                reward: y,
                regret,
                truth: &env.truth,
                fired,
            });
            local_update(st, x, y, env_cfg)?;
        }
        if any_fired {
            synchronize_all(&mut agents, &cfg.plan)?;
            rounds += 1;
            record.sync_trials.push(t);
            // one upload and one download per agent
            messages.iter_mut().for_each(|c| *c += 2);
            observer.on_sync(t, &agents);
        } else {
            agents.iter_mut().for_each(|st| st.since_sync += 1);
        }
        if next_cp < checkpoints.len() && checkpoints[next_cp] == t {
            for i in 0..m {
                record.rows.push(CheckpointRow {
                    run_id,
                    t,
                    agent: i,
                    cum_regret: cum_regret[i],
                    sync_count: rounds,
                    messages_sent: messages[i],
                });
            }
            record.meta.beta_trace.push((t, beta0));
            next_cp += 1;
        }
    }
    record.meta.n_total = rounds;
    record.final_regret = cum_regret;
    Ok(record)
}
