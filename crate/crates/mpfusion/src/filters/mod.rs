//! The four filtering algorithms over separable models:
//!
//! * `Spf` — a single bootstrap particle filter over the full state with the
//!   unknown parameters augmented as states under a Gaussian random walk.
//! * `Dapf` — density-assisted filtering: the weighted joint cloud is
//!   replaced each step by draws from its moment-matched Gaussian.
//! * `MpfNoFusion` — one independent bootstrap filter per subsystem; the
//!   global-parameter estimate is the average of the per-filter estimates.
//! * `MpfFusion` — one filter per subsystem; each step the per-filter joint
//!   posteriors are fitted with Gaussians, their global-parameter marginals
//!   are fused with the shared running prior, and every filter is resampled
//!   by drawing globals from the fused marginal and substates from the
//!   fitted conditional.
//!
//! Every filter owns one rng stream per particle cloud plus one for the
//! fusion stage, so the per-cloud phases can run concurrently with
//! scheduling-independent output.

mod linear;

pub use linear::{make_linear_gaussian_oracle, KalmanFilter, LinearGaussianModel, StaticMeanModel};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{ensure_pd, fuse, FusionOutcome, Gaussian};
use crate::model::SeparableModel;
use crate::particles::{normalize, systematic_resample, CloudLayout, ParticleCloud};

/// Which algorithm a [`FilterState`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Spf,
    Dapf,
    MpfNoFusion,
    MpfFusion,
}

/// Tuning knobs shared by the algorithms.
#[derive(Debug, Clone, Copy)]
pub struct FilterParams {
    /// Variance of the Gaussian random walk applied to parameter particles
    /// by `Spf` and `MpfNoFusion`; small relative to the parameter prior.
    pub sigma_rw2: f64,
    /// Relative eigenvalue floor for covariance repair.
    pub pd_floor: f64,
    /// Minimum effective sample size a cloud needs for its fitted marginal
    /// to enter the fusion. A moment fit over a handful of effective
    /// particles degenerates toward a point mass, and a single such
    /// near-delta marginal would dominate the fused precision permanently;
    /// below the threshold the filter abstains for that step (its marginal
    /// is replaced by the shared prior, a no-op in the fusion rule).
    pub min_fusion_ess: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            sigma_rw2: 0.01,
            pd_floor: crate::gaussian::DEFAULT_PD_FLOOR,
            min_fusion_ess: 5.0,
        }
    }
}

/// Point estimates produced by one filter step, computed from the weighted
/// cloud before resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    /// Posterior mean of the full latent state.
    pub state_mean: DVector<f64>,
    /// Posterior mean of the unknown global parameters.
    pub theta_mean: DVector<f64>,
    /// Per-filter global-parameter means (diagnostics; one entry per cloud).
    pub per_filter_theta: Vec<DVector<f64>>,
    /// Set once the filter has diverged; the means are then frozen at the
    /// last valid values.
    pub failed: bool,
}

impl Estimates {
    fn is_finite(&self) -> bool {
        self.state_mean.iter().all(|v| v.is_finite()) && self.theta_mean.iter().all(|v| v.is_finite())
    }
}

/// Counters for the fusion fallback routes (see [`crate::gaussian::fuse`])
/// and per-filter abstentions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionDiagnostics {
    pub product_only: u64,
    pub reused_prior: u64,
    /// Filter-steps whose fitted marginal was left out of the fusion
    /// because the cloud's effective sample size was too small.
    pub abstained: u64,
}

impl FusionDiagnostics {
    pub fn total_fallbacks(&self) -> u64 {
        self.product_only + self.reused_prior
    }
}

/// Complete state of one running filter: particle clouds, rng streams, the
/// fused parameter prior (fusion variant only), and the failure flag.
#[derive(Debug, Clone)]
pub struct FilterState {
    kind: FilterKind,
    clouds: Vec<ParticleCloud>,
    cloud_rngs: Vec<ChaCha8Rng>,
    fusion_rng: ChaCha8Rng,
    fused_prior: Option<Gaussian>,
    t: usize,
    failed: bool,
    params: FilterParams,
    diagnostics: FusionDiagnostics,
    last_estimates: Estimates,
}

/// Weighted summary of one cloud after propagation and weighting, taken
/// before any resampling.
struct CloudPhase {
    probs: DVector<f64>,
    state_mean: DVector<f64>,
    theta_mean: DVector<f64>,
}

impl FilterState {
    /// Initializes a filter with `n_total` particles in total: one cloud for
    /// `Spf`/`Dapf`, K clouds of `n_total / K` for the MPF variants. Initial
    /// substates and parameters are drawn from the model's priors with
    /// uniform weights; rng streams derive from `seed` (stream k for cloud
    /// k, one extra stream for the fusion stage).
    pub fn init<M: SeparableModel>(
        kind: FilterKind,
        model: &M,
        n_total: usize,
        params: FilterParams,
        seed: u64,
    ) -> Result<Self> {
        let p = model.partitioning();
        let k_count = p.k();
        if n_total == 0 {
            return Err(Error::InvalidArgument("particle count must be positive".into()));
        }
        let multi = matches!(kind, FilterKind::MpfNoFusion | FilterKind::MpfFusion);
        if multi && n_total % k_count != 0 {
            return Err(Error::InvalidArgument(format!(
                "total particle count {n_total} is not divisible by K = {k_count}"
            )));
        }
        if kind == FilterKind::MpfFusion && model.param_layout().dim_global() == 0 {
            return Err(Error::InvalidArgument(
                "fusion filtering requires at least one global parameter".into(),
            ));
        }

        let n_clouds = if multi { k_count } else { 1 };
        let mut cloud_rngs: Vec<ChaCha8Rng> = (0..n_clouds)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                rng
            })
            .collect();
        let mut fusion_rng = ChaCha8Rng::seed_from_u64(seed);
        fusion_rng.set_stream(n_clouds as u64);

        let mut clouds = Vec::with_capacity(n_clouds);
        if multi {
            let per = n_total / k_count;
            for k in 0..k_count {
                clouds.push(init_cloud(model, &[k], per, &mut cloud_rngs[k])?);
            }
        } else {
            let all_blocks: Vec<usize> = (0..k_count).collect();
            clouds.push(init_cloud(model, &all_blocks, n_total, &mut cloud_rngs[0])?);
        }

        let fused_prior = (kind == FilterKind::MpfFusion).then(|| model.global_prior());

        let mut state = FilterState {
            kind,
            clouds,
            cloud_rngs,
            fusion_rng,
            fused_prior,
            t: 0,
            failed: false,
            params,
            diagnostics: FusionDiagnostics::default(),
            last_estimates: Estimates {
                state_mean: DVector::zeros(0),
                theta_mean: DVector::zeros(0),
                per_filter_theta: Vec::new(),
                failed: false,
            },
        };
        state.last_estimates = state.initial_estimates(model)?;
        Ok(state)
    }

    fn initial_estimates<M: SeparableModel>(&self, model: &M) -> Result<Estimates> {
        let d_x = model.partitioning().state_dim();
        let mut state_mean = DVector::zeros(d_x);
        let mut per_filter_theta = Vec::with_capacity(self.clouds.len());
        let mut offset = 0usize;
        for cloud in &self.clouds {
            let probs = cloud.probabilities()?;
            let sub = cloud.weighted_block_mean(&probs, &cloud.layout().substate);
            state_mean.rows_mut(offset, sub.len()).copy_from(&sub);
            offset += sub.len();
            per_filter_theta.push(cloud.weighted_block_mean(&probs, &cloud.layout().global));
        }
        let theta_mean = match &self.fused_prior {
            Some(prior) => prior.mean().clone(),
            None => average_vectors(&per_filter_theta),
        };
        Ok(Estimates {
            state_mean,
            theta_mean,
            per_filter_theta,
            failed: false,
        })
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    /// Number of steps processed so far.
    pub fn time(&self) -> usize {
        self.t
    }

    pub fn has_failed(&self) -> bool {
        self.failed
    }

    pub fn clouds(&self) -> &[ParticleCloud] {
        &self.clouds
    }

    /// The running fused parameter marginal (fusion variant only): after
    /// step t this is the fused posterior, which serves as the shared prior
    /// of step t+1.
    pub fn fused_prior(&self) -> Option<&Gaussian> {
        self.fused_prior.as_ref()
    }

    pub fn diagnostics(&self) -> FusionDiagnostics {
        self.diagnostics
    }

    /// Latest estimates (frozen at the last valid values once failed).
    pub fn estimates(&self) -> &Estimates {
        &self.last_estimates
    }

    /// Advances the filter by one observation. Divergence (degenerate
    /// weights, non-finite estimates, unrecoverable numerics) sets the
    /// failure flag and freezes the estimates instead of erroring; hard
    /// contract violations (dimension mismatch) do error.
    pub fn step<M: SeparableModel>(&mut self, model: &M, y: &DVector<f64>) -> Result<Estimates> {
        let d_y = model.partitioning().obs_dim();
        if y.len() != d_y {
            return Err(Error::DimensionMismatch {
                context: "FilterState::step observation",
                expected: d_y,
                actual: y.len(),
            });
        }
        self.t += 1;
        if self.failed {
            let mut est = self.last_estimates.clone();
            est.failed = true;
            return Ok(est);
        }
        let outcome = match self.kind {
            FilterKind::Spf => self.spf_step(model, y),
            FilterKind::Dapf => self.dapf_step(model, y),
            FilterKind::MpfNoFusion => self.mpf_step_no_fusion(model, y),
            FilterKind::MpfFusion => self.mpf_step_fusion(model, y),
        };
        match outcome {
            Ok(est) if est.is_finite() => {
                self.last_estimates = est.clone();
                Ok(est)
            }
            Ok(_) | Err(Error::DegenerateWeights) | Err(Error::NumericalFailure(_)) => {
                self.failed = true;
                let mut est = self.last_estimates.clone();
                est.failed = true;
                Ok(est)
            }
            Err(e) => Err(e),
        }
    }

    /// Single-filter step over all subsystems: random walk on the parameter
    /// particles, bootstrap propagation, weighting by the full likelihood,
    /// then systematic resampling back to uniform weights.
    fn spf_step<M: SeparableModel>(&mut self, model: &M, y: &DVector<f64>) -> Result<Estimates> {
        let all_blocks: Vec<usize> = (0..model.partitioning().k()).collect();
        let sigma_rw2 = self.params.sigma_rw2;
        let cloud = &mut self.clouds[0];
        let rng = &mut self.cloud_rngs[0];
        let phase = propagate_and_weight(model, &all_blocks, cloud, rng, y, sigma_rw2)?;
        let est = Estimates {
            state_mean: phase.state_mean,
            theta_mean: phase.theta_mean.clone(),
            per_filter_theta: vec![phase.theta_mean],
            failed: false,
        };
        let idx = systematic_resample(&phase.probs, cloud.n_particles(), rng);
        cloud.select(&idx);
        Ok(est)
    }

    /// Density-assisted step: static parameters, full-likelihood weighting,
    /// then Gaussian resampling — the weighted joint cloud is replaced by
    /// draws from its moment-matched Gaussian.
    fn dapf_step<M: SeparableModel>(&mut self, model: &M, y: &DVector<f64>) -> Result<Estimates> {
        let all_blocks: Vec<usize> = (0..model.partitioning().k()).collect();
        let floor = self.params.pd_floor;
        let cloud = &mut self.clouds[0];
        let rng = &mut self.cloud_rngs[0];
        let phase = propagate_and_weight(model, &all_blocks, cloud, rng, y, 0.0)?;
        let est = Estimates {
            state_mean: phase.state_mean,
            theta_mean: phase.theta_mean.clone(),
            per_filter_theta: vec![phase.theta_mean],
            failed: false,
        };
        let fitted = Gaussian::fit(cloud.samples(), &phase.probs, floor);
        let draws = fitted.sample_n(cloud.n_particles(), rng)?;
        cloud.replace_samples(draws)?;
        Ok(est)
    }

    /// Independent per-subsystem bootstrap filters; the global estimate is
    /// the unweighted average of the per-filter estimates.
    fn mpf_step_no_fusion<M: SeparableModel>(&mut self, model: &M, y: &DVector<f64>) -> Result<Estimates> {
        let sigma_rw2 = self.params.sigma_rw2;
        let results = for_each_cloud(&mut self.clouds, &mut self.cloud_rngs, |k, cloud, rng| {
            let phase = propagate_and_weight(model, &[k], cloud, rng, y, sigma_rw2)?;
            let idx = systematic_resample(&phase.probs, cloud.n_particles(), rng);
            cloud.select(&idx);
            Ok::<_, Error>((phase.state_mean, phase.theta_mean))
        });
        let mut state_parts = Vec::with_capacity(results.len());
        let mut thetas = Vec::with_capacity(results.len());
        for r in results {
            let (s, th) = r?;
            state_parts.push(s);
            thetas.push(th);
        }
        Ok(Estimates {
            state_mean: concat_vectors(&state_parts),
            theta_mean: average_vectors(&thetas),
            per_filter_theta: thetas,
            failed: false,
        })
    }

    /// Fusion step: per-cloud propagation and weighting with static
    /// parameters, Gaussian fits of each joint posterior, fusion of the
    /// global marginals with the shared running prior, then per-cloud
    /// resampling from the fused marginal and the fitted conditionals.
    fn mpf_step_fusion<M: SeparableModel>(&mut self, model: &M, y: &DVector<f64>) -> Result<Estimates> {
        let floor = self.params.pd_floor;
        let min_ess = self.params.min_fusion_ess;
        // with a single filter there is no cross-filter precision pile-up to
        // counteract, and the fused marginal must reduce to the fitted one
        let marginals_unbiased = self.clouds.len() > 1;

        // phase A, concurrent per cloud
        let phase_a = for_each_cloud(&mut self.clouds, &mut self.cloud_rngs, |k, cloud, rng| {
            let phase = propagate_and_weight(model, &[k], cloud, rng, y, 0.0)?;
            let ess = crate::particles::effective_sample_size(&phase.probs);
            let beta = Gaussian::fit(cloud.samples(), &phase.probs, floor);
            let global_rows: Vec<usize> = cloud.layout().global.clone().collect();
            let marginal = beta.marginal(&global_rows)?;
            Ok::<_, Error>((phase, beta, marginal, ess))
        });
        let prior = self.fused_prior.clone().expect("fusion filter always has a prior");
        let mut phases = Vec::with_capacity(phase_a.len());
        let mut betas = Vec::with_capacity(phase_a.len());
        let mut marginals = Vec::with_capacity(phase_a.len());
        for r in phase_a {
            let (phase, beta, marginal, ess) = r?;
            phases.push(phase);
            betas.push(beta);
            if ess < min_ess {
                // a moment fit this starved would enter the fused precision
                // as spurious near-certainty; the filter sits this one out
                self.diagnostics.abstained += 1;
                marginals.push(prior.clone());
            } else if marginals_unbiased {
                marginals.push(denoise_marginal(&marginal, &prior, ess, floor)?);
            } else {
                marginals.push(marginal);
            }
        }

        // fusion barrier; an indefinite combined precision means the fits
        // collectively claim less information than the prior already
        // carried, so the step fuses nothing rather than fusing noise
        let fused = match fuse(&marginals, &prior, floor) {
            Ok((q, FusionOutcome::Exact)) => q,
            Ok((_, FusionOutcome::ProductOnly)) => {
                self.diagnostics.product_only += 1;
                prior.clone()
            }
            Err(Error::NumericalFailure(_)) => {
                self.diagnostics.reused_prior += 1;
                prior.clone()
            }
            Err(e) => return Err(e),
        };

        // the fusion stage owns the draws from the fused marginal
        let theta_draws: Vec<DMatrix<f64>> = self
            .clouds
            .iter()
            .map(|cloud| fused.sample_n(cloud.n_particles(), &mut self.fusion_rng))
            .collect::<Result<_>>()?;

        // phase B, concurrent per cloud: substates and local parameters are
        // redrawn from the fitted conditional given each fused draw
        let betas_ref = &betas;
        let draws_ref = &theta_draws;
        let phase_b = for_each_cloud(&mut self.clouds, &mut self.cloud_rngs, |k, cloud, rng| {
            resample_cloud_from_fusion(cloud, &betas_ref[k], &draws_ref[k], floor, rng)
        });
        for r in phase_b {
            r?;
        }

        let state_parts: Vec<DVector<f64>> = phases.into_iter().map(|p| p.state_mean).collect();
        let per_filter_theta: Vec<DVector<f64>> = marginals.iter().map(|m| m.mean().clone()).collect();
        let est = Estimates {
            state_mean: concat_vectors(&state_parts),
            theta_mean: fused.mean().clone(),
            per_filter_theta,
            failed: false,
        };
        self.fused_prior = Some(fused);
        Ok(est)
    }
}

/// Draws the initial cloud for the given subsystem set: per particle the
/// substate blocks in order, then batched local-prior and global-prior
/// draws.
fn init_cloud<M: SeparableModel>(
    model: &M,
    blocks: &[usize],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ParticleCloud> {
    let p = model.partitioning();
    let layout = model.param_layout();
    let sub_dim: usize = blocks.iter().map(|&k| p.state_block(k).len()).sum();
    let loc_dim: usize = blocks.iter().map(|&k| layout.dims_local()[k]).sum();
    let g_dim = layout.dim_global();
    let cl = CloudLayout::new(sub_dim, loc_dim, g_dim);
    let dim = cl.dim();

    let mut samples = DMatrix::zeros(dim, n);
    {
        let flat = samples.as_mut_slice();
        for j in 0..n {
            let base = j * dim;
            let mut off = 0usize;
            for &k in blocks {
                let w = p.state_block(k).len();
                model.init_substate_into(k, rng, &mut flat[base + off..base + off + w]);
                off += w;
            }
        }
    }
    let mut row = sub_dim;
    for &k in blocks {
        let d = layout.dims_local()[k];
        if d > 0 {
            let draws = model.local_prior(k).sample_n(n, rng)?;
            samples.view_mut((row, 0), (d, n)).copy_from(&draws);
            row += d;
        }
    }
    if g_dim > 0 {
        let draws = model.global_prior().sample_n(n, rng)?;
        samples.view_mut((sub_dim + loc_dim, 0), (g_dim, n)).copy_from(&draws);
    }

    ParticleCloud::new(samples, DVector::from_element(n, -(n as f64).ln()), cl)
}

/// One bootstrap propagation-and-weighting pass of a cloud over the given
/// subsystem blocks. With `sigma_rw2 > 0` the parameter rows first take a
/// Gaussian random-walk step; otherwise they stay static. Log-weights gain
/// the block log-likelihoods and the cloud is left normalized; the returned
/// means are the weighted (pre-resampling) estimates.
fn propagate_and_weight<M: SeparableModel>(
    model: &M,
    blocks: &[usize],
    cloud: &mut ParticleCloud,
    rng: &mut ChaCha8Rng,
    y: &DVector<f64>,
    sigma_rw2: f64,
) -> Result<CloudPhase> {
    use rand_distr::StandardNormal;

    let p = model.partitioning();
    let layout = model.param_layout();
    let cl = cloud.layout().clone();
    let dim = cl.dim();
    let n = cloud.n_particles();
    let rw_sd = sigma_rw2.sqrt();

    // row offsets of each subsystem's substate and local blocks within this
    // cloud; local offsets are rebased to the parameter region that starts
    // at row `cl.substate.end`
    let mut sub_offsets = Vec::with_capacity(blocks.len());
    let mut local_offsets = Vec::with_capacity(blocks.len());
    let mut sub_acc = 0usize;
    let mut loc_acc = 0usize;
    for &k in blocks {
        sub_offsets.push(sub_acc);
        sub_acc += p.state_block(k).len();
        local_offsets.push(loc_acc..loc_acc + layout.dims_local()[k]);
        loc_acc += layout.dims_local()[k];
    }
    let global_in_params = (cl.global.start - cl.substate.end)..(cl.global.end - cl.substate.end);

    let mut x_prev = vec![0.0; cl.substate.len()];
    {
        let flat = cloud.samples_mut().as_mut_slice();
        for j in 0..n {
            let base = j * dim;
            if rw_sd > 0.0 {
                for idx in cl.local.start..cl.global.end {
                    let z: f64 = rng.sample(StandardNormal);
                    flat[base + idx] += rw_sd * z;
                }
            }
            x_prev.copy_from_slice(&flat[base..base + cl.substate.end]);
            let (head, tail) = flat.split_at_mut(base + cl.substate.end);
            let out_sub = &mut head[base..];
            let params = &tail[..dim - cl.substate.end];
            for (bi, &k) in blocks.iter().enumerate() {
                let w = p.state_block(k).len();
                let off = sub_offsets[bi];
                model.propagate_into(
                    k,
                    &x_prev[off..off + w],
                    &params[local_offsets[bi].clone()],
                    &params[global_in_params.clone()],
                    rng,
                    &mut out_sub[off..off + w],
                );
            }
        }
    }

    // weighting pass, no rng draws
    for j in 0..n {
        let mut ll = 0.0;
        for (bi, &k) in blocks.iter().enumerate() {
            let ob = p.obs_block(k);
            let w = p.state_block(k).len();
            let off = sub_offsets[bi];
            let y_block = &y.as_slice()[ob.start..ob.end];
            let x_block = &cloud.block(j, &cl.substate)[off..off + w];
            let local = &cloud.block(j, &cl.local)[local_offsets[bi].clone()];
            let global = cloud.block(j, &cl.global);
            ll += model.block_log_lik(k, y_block, x_block, local, global);
        }
        cloud.add_log_weight(j, ll);
    }

    let probs = normalize(cloud.log_weights())?;
    cloud.set_probabilities(&probs);
    let state_mean = cloud.weighted_block_mean(&probs, &cl.substate);
    let theta_mean = cloud.weighted_block_mean(&probs, &cl.global);
    Ok(CloudPhase {
        probs,
        state_mean,
        theta_mean,
    })
}

/// Cleans one fitted global-parameter marginal before it enters the fusion.
///
/// Two finite-sample defects of a weighted moment fit would otherwise be
/// read as evidence by the precision-summing fusion rule:
///
/// * the population-weighted covariance under-disperses by the reliability
///   factor `1 - sum(w^2)`, so the covariance is rescaled by its inverse;
/// * the fitted mean carries sampling noise of order `cov/ESS` in every
///   direction, including directions the block's observation says nothing
///   about, where the exact local posterior would coincide with the prior.
///
/// The mean is therefore shrunk toward the prior with the gain
/// `D (D + cov/ESS)^-1`, where `D = psd(prior_cov - cov)` is the movement
/// budget implied by the identity `Var(E[theta|y]) = Var(theta) -
/// E[Var(theta|y)]`: directions without posterior contraction get no
/// movement budget and shrink fully; well-informed directions pass through.
fn denoise_marginal(marginal: &Gaussian, prior: &Gaussian, ess: f64, floor: f64) -> Result<Gaussian> {
    let unbiased_cov = marginal.cov() / (1.0 - 1.0 / ess).max(f64::MIN_POSITIVE);

    // PSD part of (prior_cov - fitted_cov): how far a local posterior mean
    // can legitimately have moved, per direction
    let movement = {
        let diff = prior.cov() - &unbiased_cov;
        let sym = (&diff + diff.transpose()) * 0.5;
        let mut eig = sym.symmetric_eigen();
        for ev in eig.eigenvalues.iter_mut() {
            if *ev < 0.0 {
                *ev = 0.0;
            }
        }
        &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues) * eig.eigenvectors.transpose()
    };
    let fit_noise = &unbiased_cov / ess;
    let denom = {
        let m = &movement + &fit_noise;
        (&m + m.transpose()) * 0.5
    };
    // gain = movement (movement + fit_noise)^-1; both factors symmetric
    let gain_t = nalgebra::Cholesky::new(ensure_pd(&denom, floor))
        .ok_or_else(|| Error::NumericalFailure("marginal de-noising gain".into()))?
        .solve(&movement);
    let shifted = prior.mean() + gain_t.transpose() * (marginal.mean() - prior.mean());
    Gaussian::new(shifted, ensure_pd(&unbiased_cov, floor))
}

/// Rebuilds a cloud from the fused resampling rule: the global rows take the
/// supplied fused draws, the substate-and-local rows are drawn from the
/// fitted joint's conditional given each draw. Weights reset to uniform.
fn resample_cloud_from_fusion(
    cloud: &mut ParticleCloud,
    beta: &Gaussian,
    theta_draws: &DMatrix<f64>,
    floor: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let cl = cloud.layout().clone();
    let n = cloud.n_particles();
    let target: Vec<usize> = cl.state_and_local().collect();
    let given: Vec<usize> = cl.global.clone().collect();

    let cond = beta.conditioner(&target, &given, floor)?;
    let means = cond.means_given_all(theta_draws)?;
    let noise_gauss = Gaussian::new(DVector::zeros(target.len()), ensure_pd(cond.cov(), floor))?;
    let noise = noise_gauss.sample_n(n, rng)?;

    let mut samples = DMatrix::zeros(cl.dim(), n);
    samples
        .view_mut((0, 0), (target.len(), n))
        .copy_from(&(means + noise));
    samples
        .view_mut((cl.global.start, 0), (given.len(), n))
        .copy_from(theta_draws);
    cloud.replace_samples(samples)
}

/// Applies `f` to every (cloud, rng stream) pair, concurrently when the
/// `parallel` feature is enabled. Output order is by cloud index either way.
fn for_each_cloud<F, R>(clouds: &mut [ParticleCloud], rngs: &mut [ChaCha8Rng], f: F) -> Vec<R>
where
    F: Fn(usize, &mut ParticleCloud, &mut ChaCha8Rng) -> R + Sync,
    R: Send,
{
    #[cfg(feature = "parallel")]
    {
        clouds
            .par_iter_mut()
            .zip_eq(rngs.par_iter_mut())
            .enumerate()
            .map(|(k, (cloud, rng))| f(k, cloud, rng))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        clouds
            .iter_mut()
            .zip(rngs.iter_mut())
            .enumerate()
            .map(|(k, (cloud, rng))| f(k, cloud, rng))
            .collect()
    }
}

fn concat_vectors(parts: &[DVector<f64>]) -> DVector<f64> {
    let total: usize = parts.iter().map(|v| v.len()).sum();
    let mut out = DVector::zeros(total);
    let mut off = 0;
    for v in parts {
        out.rows_mut(off, v.len()).copy_from(v);
        off += v.len();
    }
    out
}

fn average_vectors(parts: &[DVector<f64>]) -> DVector<f64> {
    if parts.is_empty() {
        return DVector::zeros(0);
    }
    let mut out = DVector::zeros(parts[0].len());
    for v in parts {
        out += v;
    }
    out / parts.len() as f64
}
