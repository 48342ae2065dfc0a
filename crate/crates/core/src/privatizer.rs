//! Tree-based Gaussian mechanism for releasing private Gram/reward sums.
//!
//! Each agent stages `[xᵀ y]ᵀ[xᵀ y]` blocks between synchronizations and
//! inserts the staged block as one leaf of a binary counting tree. A query
//! returns the prefix sum over all inserted leaves plus the noise of the
//! `popcount(leaf_count)` dyadic nodes covering it.
//!
//! Node noise is `(N + Nᵀ)/√2` with `N` iid `N(0, σ_N²)`, drawn from a
//! counter-based stream keyed by the tree's seed and the node coordinates.
//! A node's noise is therefore fixed at construction and identical on every
//! read; the tree only keeps the `O(depth)` partial sums a future query can
//! still touch.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{symmetrize, LinalgError, SquareMatrix, SymMatrix, Vector};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrivacyError {
    #[error("invalid privacy budget: {field} = {value}")]
    InvalidBudget { field: &'static str, value: f64 },
    #[error("noise tree is full ({capacity} leaves); more synchronization rounds than planned")]
    TreeFull { capacity: u64 },
    #[error("noise tree has no inserted blocks")]
    EmptyTree,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64, alpha: f64) -> Self {
        Self { epsilon, delta, alpha }
    }

    /// Every out-of-range field, reported as `budget.<field>`.
    pub fn violations(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            out.push(("budget.epsilon", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            out.push(("budget.delta", self.delta));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            out.push(("budget.alpha", self.alpha));
        }
        out
    }

    pub fn validate(&self) -> Result<(), PrivacyError> {
        match self.violations().first() {
            Some(&(field, value)) => Err(PrivacyError::InvalidBudget { field, value }),
            None => Ok(()),
        }
    }
}

/// Noise calibration and the spectral bounds it implies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    /// Tree depth `m`; the tree holds `2^(m-1)` leaves.
    pub depth: u32,
    /// Per-node noise standard deviation `σ_N`.
    pub sigma_n: f64,
    /// High-probability operator-norm bound `Λ` on the accumulated noise.
    pub lambda: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub kappa: f64,
    /// Communication rounds fixed in advance, or 0 when planning for the worst case.
    pub n_planned: u64,
    /// Diagonal shift added to every released Gram block.
    pub shift: f64,
}

/// `⌈log₂ n⌉` for `n >= 1`.
pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Calibrates the tree mechanism.
///
/// Depth is `1 + ⌈log₂ n⌉` where `n` is `n_fixed` if given, otherwise the
/// horizon (or `⌈T/γ⌉` per parameter stream when `gamma` is given). The
/// union-bound count inside `Λ` and `κ` is the total number of releases an
/// agent can make: `n_fixed`, `T`, or `γ·⌈T/γ⌉`.
pub fn plan_noise(
    budget: &PrivacyBudget,
    horizon: u64,
    n_fixed: Option<u64>,
    gamma: Option<u64>,
    action_bound: f64,
    d: usize,
    agents: usize,
) -> Result<NoisePlan, PrivacyError> {
    budget.validate()?;
    let gamma = gamma.unwrap_or(1).max(1);
    let per_stream = match n_fixed {
        Some(n) => n,
        None => horizon.div_ceil(gamma),
    }
    .max(1);
    let releases = match n_fixed {
        Some(n) => n,
        None => per_stream * gamma,
    }
    .max(1) as f64;

    let depth = 1 + ceil_log2(per_stream);
    let m = depth as f64;
    let l2p1 = action_bound * action_bound + 1.0;
    let eps = budget.epsilon;
    let delta = budget.delta;
    let union = (2.0 * releases * agents as f64 / budget.alpha).ln();
    let sd = (d as f64).sqrt();

    let sigma_sq = 16.0 * m * l2p1 * l2p1 * (2.0 / delta).ln().powi(2) / (eps * eps);
    let lambda = 32f64.sqrt() * m * l2p1 * (4.0 / delta).ln() * (4.0 * sd + 2.0 * union) / eps;
    let kappa = (m * l2p1 * (sd + 2.0 * union) / (std::f64::consts::SQRT_2 * eps)).sqrt();

    Ok(NoisePlan {
        depth,
        sigma_n: sigma_sq.sqrt(),
        lambda,
        rho_min: lambda,
        rho_max: 3.0 * lambda,
        kappa,
        n_planned: n_fixed.unwrap_or(0),
        shift: 2.0 * lambda,
    })
}

impl NoisePlan {
    /// Noise-free plan with a fixed `λI` group regularizer: each agent's
    /// release is shifted by `λ/M`, so `ρ_min = ρ_max = λ/M` and `κ = 0`.
    pub fn non_private(regularizer: f64, agents: usize, horizon: u64, gamma: Option<u64>) -> Self {
        let per_stream = horizon.div_ceil(gamma.unwrap_or(1).max(1)).max(1);
        let rho = regularizer / agents.max(1) as f64;
        Self {
            depth: 1 + ceil_log2(per_stream),
            sigma_n: 0.0,
            lambda: 0.0,
            rho_min: rho,
            rho_max: rho,
            kappa: 0.0,
            n_planned: 0,
            shift: rho,
        }
    }

    /// Same bounds and shift, no noise.
    pub fn without_noise(mut self) -> Self {
        self.sigma_n = 0.0;
        self
    }

    pub fn leaf_capacity(&self) -> u64 {
        1u64 << (self.depth - 1)
    }
}

/// `Q̂`: accumulated `[xᵀ y]ᵀ[xᵀ y]` since the last synchronization.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedBlock<T> {
    pub q: SymMatrix<T>,
    pub staged_trials: u64,
}

impl<T: Scalar> StagedBlock<T> {
    pub fn new(d: usize) -> Self {
        Self { q: SymMatrix::zeros(d + 1), staged_trials: 0 }
    }

    pub fn accumulate(&mut self, x: &[T], y: T) -> Result<(), LinalgError> {
        let mut row = Vec::with_capacity(x.len() + 1);
        row.extend_from_slice(x);
        row.push(y);
        self.q.add_outer_assign(&row, T::one())?;
        self.staged_trials += 1;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.q = SymMatrix::zeros(self.q.dim());
        self.staged_trials = 0;
    }
}

/// A node of the tree, `level` 0 being the leaves. Node `(level, index)`
/// covers leaves `[index·2^level, (index+1)·2^level)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub level: u32,
    pub index: u64,
}

/// Dyadic nodes whose union is exactly the leaves `[0, count)`.
pub fn prefix_nodes(count: u64) -> Vec<NodeId> {
    (0..64)
        .rev()
        .filter(|&level| count >> level & 1 == 1)
        .map(|level| NodeId { level, index: (count >> level) - 1 })
        .collect()
}

#[derive(Debug, Clone)]
struct Level<T> {
    /// Sum of the node at `leaf_count >> level`, still receiving leaves.
    filling: SymMatrix<T>,
    /// Sum of the most recently completed node at this level.
    completed: SymMatrix<T>,
    /// That node's noise, drawn when it completed.
    completed_noise: SymMatrix<T>,
}

#[derive(Debug, Clone)]
pub struct NoiseTree<T> {
    depth: u32,
    block_dim: usize,
    sigma_n: T,
    noise_seed: u64,
    leaf_count: u64,
    levels: Vec<Level<T>>,
}

impl<T: Scalar> NoiseTree<T> {
    /// Tree of depth `plan.depth` over `(d+1)x(d+1)` blocks. The noise seed is
    /// drawn from `rng`.
    pub fn new<R: Rng + ?Sized>(plan: &NoisePlan, d: usize, rng: &mut R) -> Self {
        Self::with_seed(plan, d, rng.gen())
    }

    pub fn with_seed(plan: &NoisePlan, d: usize, noise_seed: u64) -> Self {
        assert!(plan.depth >= 1, "tree depth must be at least 1");
        let block_dim = d + 1;
        let levels = (0..plan.depth)
            .map(|_| Level {
                filling: SymMatrix::zeros(block_dim),
                completed: SymMatrix::zeros(block_dim),
                completed_noise: SymMatrix::zeros(block_dim),
            })
            .collect();
        Self {
            depth: plan.depth,
            block_dim,
            sigma_n: T::lit(plan.sigma_n),
            noise_seed,
            leaf_count: 0,
            levels,
        }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn node_count(&self) -> u64 {
        (1u64 << self.depth) - 1
    }

    pub fn capacity(&self) -> u64 {
        1u64 << (self.depth - 1)
    }

    pub fn leaf_count(&self) -> u64 {
        self.leaf_count
    }

    pub fn noise_seed(&self) -> u64 {
        self.noise_seed
    }

    /// Noise stored at `node`: symmetrized iid Gaussian, a pure function of
    /// the tree seed and the node coordinates.
    pub fn node_noise(&self, node: NodeId) -> SymMatrix<T> {
        debug_assert!(node.level < self.depth);
        if self.sigma_n == T::zero() {
            return SymMatrix::zeros(self.block_dim);
        }
        let mut r = rng::stream(self.noise_seed, Purpose::TreeNoise, node.level as u64, node.index, 0);
        let sigma = self.sigma_n;
        let raw = SquareMatrix::from_fn(self.block_dim, |_, _| sigma * T::sample_standard_normal(&mut r));
        symmetrize(&raw)
    }

    pub fn insert(&mut self, block: &StagedBlock<T>) -> Result<(), PrivacyError> {
        self.insert_matrix(&block.q)
    }

    pub fn insert_matrix(&mut self, block: &SymMatrix<T>) -> Result<(), PrivacyError> {
        if block.dim() != self.block_dim {
            return Err(LinalgError::DimensionMismatch { expected: self.block_dim, found: block.dim() }.into());
        }
        if self.leaf_count >= self.capacity() {
            return Err(PrivacyError::TreeFull { capacity: self.capacity() });
        }
        self.leaf_count += 1;
        let count = self.leaf_count;
        for level in 0..self.levels.len() {
            self.levels[level].filling.add_assign(block);
            if count.is_multiple_of(1u64 << level) {
                let noise = self.node_noise(NodeId { level: level as u32, index: (count >> level) - 1 });
                let state = &mut self.levels[level];
                state.completed = std::mem::replace(&mut state.filling, SymMatrix::zeros(self.block_dim));
                state.completed_noise = noise;
            }
        }
        Ok(())
    }

    /// Noisy nodes a query at the current leaf count reads.
    pub fn query_nodes(&self) -> Vec<NodeId> {
        prefix_nodes(self.leaf_count)
    }

    /// Noisy prefix sum over every inserted block.
    pub fn query(&self) -> Result<SymMatrix<T>, PrivacyError> {
        if self.leaf_count == 0 {
            return Err(PrivacyError::EmptyTree);
        }
        let mut out = SymMatrix::zeros(self.block_dim);
        for node in self.query_nodes() {
            let state = &self.levels[node.level as usize];
            out.add_assign(&state.completed);
            out.add_assign(&state.completed_noise);
        }
        Ok(out)
    }

    /// Total noise a query currently carries (prefix sum minus exact sum).
    pub fn query_noise(&self) -> SymMatrix<T> {
        let mut out = SymMatrix::zeros(self.block_dim);
        for node in self.query_nodes() {
            out.add_assign(&self.levels[node.level as usize].completed_noise);
        }
        out
    }
}

/// Private release `(Û, û)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateRelease<T> {
    pub gram: SymMatrix<T>,
    pub reward: Vector<T>,
}

/// `Û` = top-left `d x d` of the noisy prefix sum plus `shift·I`; `û` = first
/// `d` entries of its last column.
pub fn privatize_output<T: Scalar>(tree: &NoiseTree<T>, plan: &NoisePlan, d: usize) -> Result<PrivateRelease<T>, PrivacyError> {
    let m = tree.query()?;
    let mut gram = m.top_left(d);
    gram.add_diagonal(T::lit(plan.shift));
    let reward = m.column_head(d, d);
    Ok(PrivateRelease { gram, reward })
}
