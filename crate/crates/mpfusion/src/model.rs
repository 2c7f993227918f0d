//! Separable state-space models.
//!
//! A separable model decomposes into K subsystems whose states and
//! observations do not interact: conditioned on the shared global parameter
//! vector, subsystem k evolves and is observed independently of all others.
//! [`SeparableModel`] captures that structure for the filters; the concrete
//! types here are the block/parameter bookkeeping and the nonlinear benchmark
//! system used by the experiment harness.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::Gaussian;

/// Layout of the unknown static parameter vector
/// `[local_1 | local_2 | ... | local_K | global]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    dim_global: usize,
    dims_local: Vec<usize>,
}

impl ParamLayout {
    pub fn new(dim_global: usize, dims_local: Vec<usize>) -> Self {
        ParamLayout {
            dim_global,
            dims_local,
        }
    }

    /// Layout with no local parameters for `k` subsystems.
    pub fn global_only(dim_global: usize, k: usize) -> Self {
        ParamLayout {
            dim_global,
            dims_local: vec![0; k],
        }
    }

    pub fn dim_global(&self) -> usize {
        self.dim_global
    }

    pub fn dims_local(&self) -> &[usize] {
        &self.dims_local
    }

    pub fn k(&self) -> usize {
        self.dims_local.len()
    }

    /// Total unknown-parameter dimension.
    pub fn total(&self) -> usize {
        self.dim_global + self.dims_local.iter().sum::<usize>()
    }

    /// Index range of subsystem k's local block within the full vector.
    pub fn local_range(&self, k: usize) -> Range<usize> {
        let start: usize = self.dims_local[..k].iter().sum();
        start..start + self.dims_local[k]
    }

    /// Index range of the global block within the full vector.
    pub fn global_range(&self) -> Range<usize> {
        let start: usize = self.dims_local.iter().sum();
        start..start + self.dim_global
    }
}

/// Contiguous block decomposition of the state and observation vectors into
/// K subsystems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partitioning {
    state_blocks: Vec<Range<usize>>,
    obs_blocks: Vec<Range<usize>>,
}

fn validate_blocks(blocks: &[Range<usize>], what: &str) -> Result<usize> {
    if blocks.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} blocks must be non-empty")));
    }
    let mut cursor = 0usize;
    for (k, b) in blocks.iter().enumerate() {
        if b.start != cursor || b.end <= b.start {
            return Err(Error::InvalidArgument(format!(
                "{what} block {k} ({}..{}) breaks the contiguous ascending cover",
                b.start, b.end
            )));
        }
        cursor = b.end;
    }
    Ok(cursor)
}

impl Partitioning {
    /// Builds a partitioning from explicit state and observation blocks,
    /// validating that each list is a disjoint, contiguous, ascending cover.
    pub fn new(state_blocks: Vec<Range<usize>>, obs_blocks: Vec<Range<usize>>) -> Result<Self> {
        if state_blocks.len() != obs_blocks.len() {
            return Err(Error::InvalidArgument(format!(
                "state and observation block counts differ: {} vs {}",
                state_blocks.len(),
                obs_blocks.len()
            )));
        }
        validate_blocks(&state_blocks, "state")?;
        validate_blocks(&obs_blocks, "observation")?;
        Ok(Partitioning {
            state_blocks,
            obs_blocks,
        })
    }

    /// K contiguous state blocks of equal width `d_x / k`, with observation
    /// blocks identical to state blocks.
    pub fn equal_blocks(d_x: usize, k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidArgument("partition count K must be at least 1".into()));
        }
        if d_x % k != 0 {
            return Err(Error::InvalidArgument(format!(
                "state dimension {d_x} is not divisible by partition count {k}"
            )));
        }
        let width = d_x / k;
        let blocks: Vec<Range<usize>> = (0..k).map(|i| i * width..(i + 1) * width).collect();
        Partitioning::new(blocks.clone(), blocks)
    }

    pub fn k(&self) -> usize {
        self.state_blocks.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_blocks.last().map_or(0, |b| b.end)
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_blocks.last().map_or(0, |b| b.end)
    }

    pub fn state_block(&self, k: usize) -> &Range<usize> {
        &self.state_blocks[k]
    }

    pub fn obs_block(&self, k: usize) -> &Range<usize> {
        &self.obs_blocks[k]
    }

    pub fn state_blocks(&self) -> &[Range<usize>] {
        &self.state_blocks
    }
}

/// A simulated ground-truth run: row t holds the state and the observation
/// generated from that same state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: DMatrix<f64>,
    pub observations: DMatrix<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    /// True state at step `t` (0-based).
    pub fn state_at(&self, t: usize) -> DVector<f64> {
        self.states.row(t).transpose()
    }

    /// Observation at step `t` (0-based).
    pub fn observation_at(&self, t: usize) -> DVector<f64> {
        self.observations.row(t).transpose()
    }
}

fn std_normal(rng: &mut dyn RngCore) -> f64 {
    rng.sample(StandardNormal)
}

/// A state-space model whose subsystems are conditionally independent given
/// the shared global parameters. All randomness flows through the explicit
/// rng arguments; implementations hold their true parameter values for
/// simulation.
pub trait SeparableModel: Sync {
    fn partitioning(&self) -> &Partitioning;

    /// Layout of the unknown static parameters tracked by the filters.
    fn param_layout(&self) -> &ParamLayout;

    /// Prior over the unknown global parameter block (dimension may be 0).
    fn global_prior(&self) -> Gaussian;

    /// Prior over subsystem k's unknown local block (dimension may be 0).
    fn local_prior(&self, k: usize) -> Gaussian;

    /// Draws an initial substate for subsystem k into `out`.
    fn init_substate_into(&self, k: usize, rng: &mut dyn RngCore, out: &mut [f64]);

    /// One transition-prior draw for subsystem k; process noise is drawn from
    /// `rng` inside the call.
    fn propagate_into(
        &self,
        k: usize,
        x_prev: &[f64],
        local: &[f64],
        global: &[f64],
        rng: &mut dyn RngCore,
        out: &mut [f64],
    );

    /// Draws an observation of subsystem k's state into `out`.
    fn observe_into(
        &self,
        k: usize,
        x: &[f64],
        local: &[f64],
        global: &[f64],
        rng: &mut dyn RngCore,
        out: &mut [f64],
    );

    /// Log-likelihood of subsystem k's observation block given its substate
    /// and parameters.
    fn block_log_lik(&self, k: usize, y: &[f64], x: &[f64], local: &[f64], global: &[f64]) -> f64;

    /// True values of subsystem k's unknown local parameters.
    fn true_local_params(&self, k: usize) -> DVector<f64>;

    /// True values of the unknown global parameters.
    fn true_global_params(&self) -> DVector<f64>;

    /// Simulates `t_steps` steps of the true system: the initial state is
    /// drawn from the model's initial prior, then each step applies the
    /// transition and observation draws with fresh noise.
    fn simulate(&self, t_steps: usize, rng: &mut dyn RngCore) -> Result<Trajectory> {
        if t_steps < 1 {
            return Err(Error::InvalidArgument("trajectory length T must be at least 1".into()));
        }
        let p = self.partitioning();
        let (d_x, d_y, k_count) = (p.state_dim(), p.obs_dim(), p.k());
        let global = self.true_global_params();
        let locals: Vec<DVector<f64>> = (0..k_count).map(|k| self.true_local_params(k)).collect();

        let mut x = vec![0.0; d_x];
        for k in 0..k_count {
            let b = p.state_block(k).clone();
            self.init_substate_into(k, rng, &mut x[b]);
        }

        let mut states = DMatrix::zeros(t_steps, d_x);
        let mut observations = DMatrix::zeros(t_steps, d_y);
        let mut next = vec![0.0; d_x];
        let mut y = vec![0.0; d_y];
        for t in 0..t_steps {
            for k in 0..k_count {
                let b = p.state_block(k).clone();
                self.propagate_into(k, &x[b.clone()], locals[k].as_slice(), global.as_slice(), rng, &mut next[b]);
            }
            x.copy_from_slice(&next);
            for k in 0..k_count {
                let sb = p.state_block(k).clone();
                let ob = p.obs_block(k).clone();
                self.observe_into(k, &x[sb], locals[k].as_slice(), global.as_slice(), rng, &mut y[ob]);
            }
            for (j, v) in x.iter().enumerate() {
                states[(t, j)] = *v;
            }
            for (j, v) in y.iter().enumerate() {
                observations[(t, j)] = *v;
            }
        }
        Ok(Trajectory {
            states,
            observations,
        })
    }
}

/// The nonlinear benchmark system: a sigmoid state transition and an affine
/// observation, applied elementwise over the state dimensions,
///
/// ```text
/// x_i' = theta1 / (1 + exp(-x_i + theta5)) + theta2 + u_i,   u_i ~ N(0, sigma_u2)
/// y_i  = theta3 x_i + theta4 + v_i,                          v_i ~ N(0, sigma_v2)
/// ```
///
/// The first `unknown_count` entries of `theta` are treated as unknown global
/// parameters to estimate; the rest stay fixed at their true values and are
/// never part of the estimation layout.
#[derive(Debug, Clone)]
pub struct BenchmarkModel {
    d_x: usize,
    theta_full: [f64; 5],
    unknown_count: usize,
    sigma_u2: f64,
    sigma_v2: f64,
    partitioning: Partitioning,
    layout: ParamLayout,
}

impl BenchmarkModel {
    /// True parameter vector of the benchmark system.
    pub const THETA_TRUE: [f64; 5] = [2.0, -2.0, 2.0, -2.0, 3.0];

    /// Builds the benchmark model over `d_x` dimensions split into `k` equal
    /// subsystems. Noise variances may be zero for deterministic test runs;
    /// experiment configurations require them positive.
    pub fn new(
        d_x: usize,
        k: usize,
        unknown_count: usize,
        theta_full: [f64; 5],
        sigma_u2: f64,
        sigma_v2: f64,
    ) -> Result<Self> {
        if unknown_count > 5 {
            return Err(Error::InvalidArgument(format!(
                "unknown parameter count {unknown_count} exceeds the 5 benchmark parameters"
            )));
        }
        if sigma_u2 < 0.0 || sigma_v2 < 0.0 {
            return Err(Error::InvalidArgument("noise variances must be non-negative".into()));
        }
        let partitioning = Partitioning::equal_blocks(d_x, k)?;
        Ok(BenchmarkModel {
            d_x,
            theta_full,
            unknown_count,
            sigma_u2,
            sigma_v2,
            partitioning,
            layout: ParamLayout::global_only(unknown_count, k),
        })
    }

    /// Benchmark model with the paper-style defaults for the given sizes.
    pub fn with_defaults(d_x: usize, k: usize, unknown_count: usize) -> Result<Self> {
        Self::new(d_x, k, unknown_count, Self::THETA_TRUE, 2.0, 1.0)
    }

    pub fn state_dim(&self) -> usize {
        self.d_x
    }

    pub fn theta_full(&self) -> &[f64; 5] {
        &self.theta_full
    }

    pub fn sigma_u2(&self) -> f64 {
        self.sigma_u2
    }

    pub fn sigma_v2(&self) -> f64 {
        self.sigma_v2
    }

    fn transition_scalar(x_prev: f64, theta: &[f64; 5]) -> f64 {
        theta[0] / (1.0 + (theta[4] - x_prev).exp()) + theta[1]
    }

    fn observe_scalar(x: f64, theta: &[f64; 5]) -> f64 {
        theta[2] * x + theta[3]
    }

    /// Full parameter vector with the unknown prefix replaced by `global`.
    fn effective_theta(&self, global: &[f64]) -> [f64; 5] {
        let mut theta = self.theta_full;
        theta[..global.len()].copy_from_slice(global);
        theta
    }

    /// Elementwise sigmoid transition with the supplied noise vector;
    /// deterministic given its inputs.
    pub fn transition(&self, x_prev: &DVector<f64>, theta: &[f64; 5], noise: &DVector<f64>) -> Result<DVector<f64>> {
        if x_prev.len() != self.d_x {
            return Err(Error::DimensionMismatch {
                context: "transition state",
                expected: self.d_x,
                actual: x_prev.len(),
            });
        }
        if noise.len() != self.d_x {
            return Err(Error::DimensionMismatch {
                context: "transition noise",
                expected: self.d_x,
                actual: noise.len(),
            });
        }
        Ok(DVector::from_iterator(
            self.d_x,
            x_prev
                .iter()
                .zip(noise.iter())
                .map(|(&x, &u)| Self::transition_scalar(x, theta) + u),
        ))
    }

    /// Elementwise affine observation with the supplied noise vector.
    pub fn observe(&self, x: &DVector<f64>, theta: &[f64; 5], noise: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.d_x {
            return Err(Error::DimensionMismatch {
                context: "observe state",
                expected: self.d_x,
                actual: x.len(),
            });
        }
        if noise.len() != self.d_x {
            return Err(Error::DimensionMismatch {
                context: "observe noise",
                expected: self.d_x,
                actual: noise.len(),
            });
        }
        Ok(DVector::from_iterator(
            self.d_x,
            x.iter().zip(noise.iter()).map(|(&xi, &v)| Self::observe_scalar(xi, theta) + v),
        ))
    }

    /// Sum over the block of Gaussian observation log-densities
    /// `log N(y_i; theta3 x_i + theta4, sigma_v2)`. The likelihood of a full
    /// observation equals the sum over any partitioning of it.
    pub fn log_likelihood(&self, y_block: &[f64], x_block: &[f64], theta: &[f64; 5]) -> Result<f64> {
        if y_block.len() != x_block.len() || y_block.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "log_likelihood blocks",
                expected: x_block.len(),
                actual: y_block.len(),
            });
        }
        let var = self.sigma_v2;
        let log_norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
        let mut acc = 0.0;
        for (&y, &x) in y_block.iter().zip(x_block.iter()) {
            let r = y - Self::observe_scalar(x, theta);
            acc += log_norm - r * r / (2.0 * var);
        }
        Ok(acc)
    }

    /// Ground-truth simulation for `t_steps` steps (see
    /// [`SeparableModel::simulate`]).
    pub fn simulate_trajectory(&self, t_steps: usize, rng: &mut dyn RngCore) -> Result<Trajectory> {
        self.simulate(t_steps, rng)
    }
}

impl SeparableModel for BenchmarkModel {
    fn partitioning(&self) -> &Partitioning {
        &self.partitioning
    }

    fn param_layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn global_prior(&self) -> Gaussian {
        Gaussian::isotropic(self.unknown_count, 1.0, 2.0)
    }

    fn local_prior(&self, _k: usize) -> Gaussian {
        Gaussian::isotropic(0, 0.0, 0.0)
    }

    fn init_substate_into(&self, _k: usize, rng: &mut dyn RngCore, out: &mut [f64]) {
        let sd = self.sigma_u2.sqrt();
        for v in out.iter_mut() {
            *v = sd * std_normal(rng);
        }
    }

    fn propagate_into(
        &self,
        _k: usize,
        x_prev: &[f64],
        _local: &[f64],
        global: &[f64],
        rng: &mut dyn RngCore,
        out: &mut [f64],
    ) {
        let theta = self.effective_theta(global);
        let sd = self.sigma_u2.sqrt();
        for (o, &x) in out.iter_mut().zip(x_prev.iter()) {
            *o = Self::transition_scalar(x, &theta) + sd * std_normal(rng);
        }
    }

    fn observe_into(
        &self,
        _k: usize,
        x: &[f64],
        _local: &[f64],
        global: &[f64],
        rng: &mut dyn RngCore,
        out: &mut [f64],
    ) {
        let theta = self.effective_theta(global);
        let sd = self.sigma_v2.sqrt();
        for (o, &xi) in out.iter_mut().zip(x.iter()) {
            *o = Self::observe_scalar(xi, &theta) + sd * std_normal(rng);
        }
    }

    fn block_log_lik(&self, _k: usize, y: &[f64], x: &[f64], _local: &[f64], global: &[f64]) -> f64 {
        let theta = self.effective_theta(global);
        let var = self.sigma_v2;
        let log_norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
        let mut acc = 0.0;
        for (&yi, &xi) in y.iter().zip(x.iter()) {
            let r = yi - Self::observe_scalar(xi, &theta);
            acc += log_norm - r * r / (2.0 * var);
        }
        acc
    }

    fn true_local_params(&self, _k: usize) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn true_global_params(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.theta_full[..self.unknown_count])
    }
}
