//! Synthetic federated contextual bandit.
//!
//! A hidden parameter `θ*` near the unit sphere, per-(agent, trial) decision
//! sets with one optimal action in a high inner-product band and `K-1`
//! actions in a lower band, and Beta-distributed rewards with mean `⟨x, θ*⟩`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Vector;
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

/// Lower edge of the suboptimal inner-product band.
pub const SUBOPTIMAL_BAND_LO: f64 = 0.5;
/// Width of both bands.
pub const BAND_WIDTH: f64 = 0.1;
/// Rejection budget per action.
pub const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("dimension {0} is too small (need d >= 2)")]
    DimensionTooSmall(usize),
    #[error("|theta*| = {0} is below 0.7; the optimal band is unreachable")]
    ThetaTooShort(f64),
    #[error("rejection sampling exceeded {MAX_ATTEMPTS} attempts for one action")]
    GenerationFailure,
    #[error("reward mean {0} is outside (0, 1)")]
    MeanOutOfRange(f64),
    #[error("chosen action is not in the decision set")]
    ActionNotInSet,
}

fn default_sigma() -> f64 {
    0.5
}

fn default_unit() -> f64 {
    1.0
}

fn default_gap() -> f64 {
    0.1
}

/// Environment parameters. `actions` of `None` means `min(d², 20)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub d: usize,
    pub agents: usize,
    pub horizon: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<usize>,
    /// Action norm bound `L`.
    #[serde(default = "default_unit")]
    pub action_bound: f64,
    /// Parameter norm bound `S`.
    #[serde(default = "default_unit")]
    pub param_bound: f64,
    /// Sub-Gaussian proxy of the reward noise.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Reward magnitude bound `B`.
    #[serde(default = "default_unit")]
    pub reward_bound: f64,
    /// Gap between the suboptimal band's top and the optimal band's bottom.
    #[serde(default = "default_gap")]
    pub gap: f64,
    #[serde(default)]
    pub master_seed: u64,
}

impl EnvConfig {
    pub fn new(d: usize, agents: usize, horizon: u64) -> Self {
        Self {
            d,
            agents,
            horizon,
            actions: None,
            action_bound: 1.0,
            param_bound: 1.0,
            sigma: default_sigma(),
            reward_bound: 1.0,
            gap: default_gap(),
            master_seed: 0,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.actions.unwrap_or_else(|| (self.d * self.d).min(20))
    }

    /// `[lo, hi]` of the optimal action's inner product with `θ*`.
    pub fn optimal_band(&self) -> (f64, f64) {
        let lo = SUBOPTIMAL_BAND_LO + BAND_WIDTH + self.gap;
        (lo, lo + BAND_WIDTH)
    }

    pub fn suboptimal_band(&self) -> (f64, f64) {
        (SUBOPTIMAL_BAND_LO, SUBOPTIMAL_BAND_LO + BAND_WIDTH)
    }

    /// Every violated invariant, as `field: reason`.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.d < 2 {
            out.push(format!("env.d: must be >= 2 (got {})", self.d));
        }
        if self.agents == 0 {
            out.push("env.agents: must be >= 1".into());
        }
        let k = self.num_actions();
        if k == 0 || k > self.d * self.d {
            out.push(format!("env.actions: must be in [1, d^2] (got {k})"));
        }
        if !(self.action_bound > 0.0 && self.action_bound.is_finite()) {
            out.push("env.action_bound: must be positive".into());
        }
        if !(self.param_bound > 0.0 && self.param_bound.is_finite()) {
            out.push("env.param_bound: must be positive".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            out.push("env.sigma: must be nonnegative".into());
        }
        if !(self.reward_bound > 0.0 && self.reward_bound.is_finite()) {
            out.push("env.reward_bound: must be positive".into());
        }
        if !(self.gap > 0.0 && self.gap <= 0.1) {
            out.push(format!("env.gap: must be in (0, 0.1] (got {})", self.gap));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth<T> {
    pub theta_star: Vector<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionSet<T> {
    pub actions: Vec<Vector<T>>,
    pub optimal_index: usize,
}

impl<T: Scalar> DecisionSet<T> {
    pub fn optimal(&self) -> &Vector<T> {
        &self.actions[self.optimal_index]
    }

    /// Pseudoregret of playing `actions[index]`.
    pub fn regret_of(&self, index: usize, gt: &GroundTruth<T>) -> T {
        let best = self.optimal().dot(&gt.theta_star);
        best - self.actions[index].dot(&gt.theta_star)
    }
}

fn random_unit<T: Scalar, R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector<T> {
    loop {
        let v = Vector::from_vec((0..d).map(|_| T::sample_standard_normal(rng)).collect());
        let n = v.norm();
        if n > T::lit(1e-12) {
            return v.scaled(T::one() / n);
        }
    }
}

/// `θ*` = uniform direction times a radius drawn from `[0.9, 1.0]`.
pub fn gen_theta<T: Scalar, R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Result<GroundTruth<T>, EnvError> {
    if cfg.d < 2 {
        return Err(EnvError::DimensionTooSmall(cfg.d));
    }
    let dir: Vector<T> = random_unit(cfg.d, rng);
    let radius = T::lit(rng.gen_range(0.9..=1.0));
    Ok(GroundTruth { theta_star: dir.scaled(radius) })
}

/// One action with `⟨x, θ*⟩ = c` exactly (up to rounding) and `‖x‖ <= L`.
///
/// `x = (c/‖θ‖)·θ̂ + r·ŵ` with `ŵ` a uniform direction orthogonal to `θ*`
/// and `r ~ U[0, L]`; draws violating the norm bound are rejected.
fn sample_in_band<T: Scalar, R: Rng + ?Sized>(
    theta_hat: &Vector<T>,
    theta_norm: T,
    band: (f64, f64),
    bound: T,
    rng: &mut R,
) -> Result<Vector<T>, EnvError> {
    let d = theta_hat.dim();
    let mut w = vec![T::zero(); d];
    for _ in 0..MAX_ATTEMPTS {
        let c = T::lit(rng.gen_range(band.0..=band.1));
        let along = c / theta_norm;
        // Gaussian draw projected off θ̂: a uniform direction in the complement.
        w.iter_mut().for_each(|v| *v = T::sample_standard_normal(rng));
        let proj: T = w.iter().zip(theta_hat.iter()).map(|(&a, &b)| a * b).sum();
        w.iter_mut().zip(theta_hat.iter()).for_each(|(v, &h)| *v -= proj * h);
        let wn = w.iter().map(|&v| v * v).sum::<T>().sqrt();
        if wn <= T::lit(1e-9) {
            continue;
        }
        let r = T::lit(rng.gen::<f64>()) * bound;
        if along * along + r * r > bound * bound {
            continue;
        }
        let scale = r / wn;
        w.iter_mut().zip(theta_hat.iter()).for_each(|(v, &h)| *v = h * along + *v * scale);
        let x = Vector::from_vec(w);
        if x.norm() <= bound {
            return Ok(x);
        }
        w = x.into_vec();
    }
    Err(EnvError::GenerationFailure)
}

pub fn gen_decision_set<T: Scalar, R: Rng + ?Sized>(
    gt: &GroundTruth<T>,
    cfg: &EnvConfig,
    rng: &mut R,
) -> Result<DecisionSet<T>, EnvError> {
    let theta_norm = gt.theta_star.norm();
    if theta_norm < T::lit(0.7) {
        return Err(EnvError::ThetaTooShort(theta_norm.to_f64_lossy()));
    }
    let theta_hat = gt.theta_star.scaled(T::one() / theta_norm);
    let bound = T::lit(cfg.action_bound);
    let k = cfg.num_actions();
    let optimal_index = rng.gen_range(0..k);
    let mut actions = Vec::with_capacity(k);
    for i in 0..k {
        let band = if i == optimal_index { cfg.optimal_band() } else { cfg.suboptimal_band() };
        actions.push(sample_in_band(&theta_hat, theta_norm, band, bound, rng)?);
    }
    Ok(DecisionSet { actions, optimal_index })
}

/// Beta(μ, 1-μ) reward with `μ = ⟨x, θ*⟩`.
pub fn sample_reward<T: Scalar, R: Rng + ?Sized>(x: &Vector<T>, gt: &GroundTruth<T>, rng: &mut R) -> Result<T, EnvError> {
    let mu = x.dot(&gt.theta_star);
    if !(mu > T::zero() && mu < T::one()) {
        return Err(EnvError::MeanOutOfRange(mu.to_f64_lossy()));
    }
    T::sample_beta(rng, mu, T::one() - mu).ok_or(EnvError::MeanOutOfRange(mu.to_f64_lossy()))
}

/// `⟨x* - chosen, θ*⟩`
pub fn instant_regret<T: Scalar>(chosen: &Vector<T>, ds: &DecisionSet<T>, gt: &GroundTruth<T>) -> Result<T, EnvError> {
    let index = ds.actions.iter().position(|a| a == chosen).ok_or(EnvError::ActionNotInSet)?;
    Ok(ds.regret_of(index, gt))
}

/// One run's environment with every draw keyed by `(run, agent, trial)`.
#[derive(Debug, Clone)]
pub struct Environment<T> {
    pub config: EnvConfig,
    pub truth: GroundTruth<T>,
    pub run: u64,
}

impl<T: Scalar> Environment<T> {
    pub fn new(config: EnvConfig, run: u64) -> Result<Self, EnvError> {
        let mut r = rng::stream(config.master_seed, Purpose::GroundTruth, run, 0, 0);
        let truth = gen_theta(&config, &mut r)?;
        Ok(Self { config, truth, run })
    }

    pub fn decision_set(&self, agent: usize, trial: u64) -> Result<DecisionSet<T>, EnvError> {
        let mut r = rng::stream(self.config.master_seed, Purpose::DecisionSet, self.run, agent as u64, trial);
        gen_decision_set(&self.truth, &self.config, &mut r)
    }

    pub fn reward(&self, agent: usize, trial: u64, x: &Vector<T>) -> Result<T, EnvError> {
        let mut r = rng::stream(self.config.master_seed, Purpose::Reward, self.run, agent as u64, trial);
        sample_reward(x, &self.truth, &mut r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(d: usize) -> EnvConfig {
        EnvConfig::new(d, 1, 10)
    }

    #[test]
    fn theta_norm_bounded_and_deterministic() {
        for seed in 0..10_000u64 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let gt: GroundTruth<f64> = gen_theta(&cfg(5), &mut r).unwrap();
            let n = gt.theta_star.norm();
            assert!((0.9 - 1e-12..=1.0 + 1e-12).contains(&n));
        }
        let a: GroundTruth<f64> = gen_theta(&cfg(4), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b: GroundTruth<f64> = gen_theta(&cfg(4), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            gen_theta::<f64, _>(&cfg(1), &mut ChaCha8Rng::seed_from_u64(0)),
            Err(EnvError::DimensionTooSmall(1))
        );
    }

    #[test]
    fn theta_direction_octants_are_uniform() {
        // chi-square over the 8 sign octants of the first three coordinates
        let n = 16_000;
        let mut counts = [0usize; 8];
        let mut r = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..n {
            let gt: GroundTruth<f64> = gen_theta(&cfg(3), &mut r).unwrap();
            let t = &gt.theta_star;
            let idx = (t[0] > 0.0) as usize | ((t[1] > 0.0) as usize) << 1 | ((t[2] > 0.0) as usize) << 2;
            counts[idx] += 1;
        }
        let expected = n as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square(7) upper 1% point
        assert!(chi2 < 18.475, "chi2 = {chi2}");
    }

    #[test]
    fn decision_sets_satisfy_bands() {
        let c = cfg(5);
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let gt: GroundTruth<f64> = gen_theta(&c, &mut r).unwrap();
        for _ in 0..10_000 {
            let ds = gen_decision_set(&gt, &c, &mut r).unwrap();
            assert_eq!(ds.actions.len(), c.num_actions());
            let ips: Vec<f64> = ds.actions.iter().map(|x| x.dot(&gt.theta_star)).collect();
            for (i, (&ip, x)) in ips.iter().zip(&ds.actions).enumerate() {
                assert!(x.norm() <= 1.0 + 1e-12);
                if i == ds.optimal_index {
                    assert!((0.7 - 1e-12..=0.8 + 1e-12).contains(&ip));
                } else {
                    assert!((0.5 - 1e-12..=0.6 + 1e-12).contains(&ip));
                }
            }
            let argmax = (0..ips.len()).max_by(|&a, &b| ips[a].partial_cmp(&ips[b]).unwrap()).unwrap();
            assert_eq!(argmax, ds.optimal_index);
            let best_sub = ips.iter().enumerate().filter(|&(i, _)| i != ds.optimal_index).map(|(_, &v)| v).fold(f64::MIN, f64::max);
            assert!(ips[ds.optimal_index] - best_sub >= 0.1 - 1e-12);
        }
    }

    #[test]
    fn short_theta_rejected() {
        let gt = GroundTruth { theta_star: Vector::from_vec(vec![0.5, 0.0]) };
        let err = gen_decision_set(&gt, &cfg(2), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert_eq!(err, EnvError::ThetaTooShort(0.5));
    }

    #[test]
    fn reward_mean_and_range() {
        let gt = GroundTruth { theta_star: Vector::basis(2, 0) };
        let x = Vector::from_vec(vec![0.75, 0.0]);
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let y = sample_reward(&x, &gt, &mut r).unwrap();
            assert!((0.0..=1.0).contains(&y));
            sum += y;
        }
        assert!((sum / n as f64 - 0.75).abs() <= 0.01);
    }

    #[test]
    fn reward_rejects_degenerate_mean() {
        let gt: GroundTruth<f64> = GroundTruth { theta_star: Vector::basis(2, 0) };
        let mut r = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_reward(&Vector::basis(2, 0), &gt, &mut r), Err(EnvError::MeanOutOfRange(1.0)));
        assert!(sample_reward(&Vector::zeros(2), &gt, &mut r).is_err());
    }

    #[test]
    fn instant_regret_cases() {
        let c = cfg(4);
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let gt: GroundTruth<f64> = gen_theta(&c, &mut r).unwrap();
        let ds = gen_decision_set(&gt, &c, &mut r).unwrap();
        assert_eq!(instant_regret(ds.optimal(), &ds, &gt).unwrap(), 0.0);
        for (i, x) in ds.actions.iter().enumerate() {
            if i != ds.optimal_index {
                let reg = instant_regret(x, &ds, &gt).unwrap();
                assert!((0.1 - 1e-12..=0.3 + 1e-12).contains(&reg));
            }
        }
        assert_eq!(instant_regret(&Vector::zeros(4), &ds, &gt), Err(EnvError::ActionNotInSet));
    }

    #[test]
    fn environment_is_replayable() {
        let mut c = cfg(3);
        c.master_seed = 77;
        let env: Environment<f64> = Environment::new(c.clone(), 2).unwrap();
        let again: Environment<f64> = Environment::new(c, 2).unwrap();
        let a = env.decision_set(1, 40).unwrap();
        assert_eq!(a, again.decision_set(1, 40).unwrap());
        assert_ne!(a, env.decision_set(1, 41).unwrap());
        let x = a.optimal();
        assert_eq!(env.reward(1, 40, x).unwrap(), again.reward(1, 40, x).unwrap());
    }
}
