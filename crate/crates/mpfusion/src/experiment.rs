//! Monte Carlo experiment harness: configuration, reproducible seed
//! derivation, per-realization error recording, and cross-realization MSE
//! aggregation.
//!
//! Realizations are independent work items; with the `parallel` feature they
//! run on rayon. Every stream of randomness is derived from the master seed
//! by a stable mixing function and results are assembled in canonical
//! (algorithm, realization, t) order, so output is bit-identical across
//! runs and thread counts. All algorithms of one realization share the same
//! trajectory seed (paired comparison).

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::{FilterKind, FilterParams, FilterState};
use crate::model::{BenchmarkModel, SeparableModel, Trajectory};

/// The four compared algorithms, in canonical output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Spf,
    Dapf,
    Mpf,
    MpfFusion,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Spf, Algorithm::Dapf, Algorithm::Mpf, Algorithm::MpfFusion];

    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Spf => "spf",
            Algorithm::Dapf => "dapf",
            Algorithm::Mpf => "mpf",
            Algorithm::MpfFusion => "mpf-fusion",
        }
    }

    pub fn parse(s: &str) -> Option<Algorithm> {
        Algorithm::ALL.iter().copied().find(|a| a.label() == s)
    }

    fn kind(&self) -> FilterKind {
        match self {
            Algorithm::Spf => FilterKind::Spf,
            Algorithm::Dapf => FilterKind::Dapf,
            Algorithm::Mpf => FilterKind::MpfNoFusion,
            Algorithm::MpfFusion => FilterKind::MpfFusion,
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Full description of one simulation study over the benchmark model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// State dimension.
    pub d_x: usize,
    /// Number of unknown leading parameters (1..=5).
    pub d_theta_g: usize,
    /// True parameter vector; entries past `d_theta_g` stay known.
    pub theta_full: [f64; 5],
    /// Per-dimension state-noise variance.
    pub sigma_u2: f64,
    /// Per-dimension observation-noise variance.
    pub sigma_v2: f64,
    /// Time steps per realization.
    pub t_steps: usize,
    /// Number of subsystems for the MPF variants.
    pub k_partitions: usize,
    /// Particle budget factor: the total count is
    /// `particles_per_unit * d_theta_g * d_x`.
    pub particles_per_unit: usize,
    /// Monte Carlo realizations per algorithm.
    pub realizations: usize,
    /// Algorithms to run.
    pub algorithms: Vec<Algorithm>,
    /// Master seed all per-realization streams derive from.
    pub master_seed: u64,
    /// Random-walk variance for the parameter-augmented baselines.
    pub sigma_rw2: f64,
    /// Eigenvalue floor for covariance repair.
    pub pd_floor: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d_x: 10,
            d_theta_g: 2,
            theta_full: BenchmarkModel::THETA_TRUE,
            sigma_u2: 2.0,
            sigma_v2: 1.0,
            t_steps: 50,
            k_partitions: 5,
            particles_per_unit: 100,
            realizations: 100,
            algorithms: Algorithm::ALL.to_vec(),
            master_seed: 1,
            sigma_rw2: 0.01,
            pd_floor: 1e-9,
        }
    }
}

impl ExperimentConfig {
    /// Total particle budget shared by every algorithm.
    pub fn n_total(&self) -> usize {
        self.particles_per_unit * self.d_theta_g * self.d_x
    }

    /// Per-filter particle count for the MPF variants.
    pub fn n_per_filter(&self) -> usize {
        self.n_total() / self.k_partitions
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_theta_g < 1 || self.d_theta_g > 5 {
            return Err(Error::InvalidArgument(format!(
                "d_theta_g must be in 1..=5, got {}",
                self.d_theta_g
            )));
        }
        if self.d_x == 0 {
            return Err(Error::InvalidArgument("d_x must be positive".into()));
        }
        if self.k_partitions == 0 || self.d_x % self.k_partitions != 0 {
            return Err(Error::InvalidArgument(format!(
                "state dimension {} is not divisible by partition count {}",
                self.d_x, self.k_partitions
            )));
        }
        if self.t_steps == 0 {
            return Err(Error::InvalidArgument("T must be at least 1".into()));
        }
        if self.sigma_u2 <= 0.0 || self.sigma_v2 <= 0.0 {
            return Err(Error::InvalidArgument("noise variances must be positive".into()));
        }
        if self.sigma_rw2 <= 0.0 {
            return Err(Error::InvalidArgument("sigma_rw2 must be positive".into()));
        }
        if self.pd_floor <= 0.0 {
            return Err(Error::InvalidArgument("pd_floor must be positive".into()));
        }
        if self.realizations == 0 {
            return Err(Error::InvalidArgument("realizations must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidArgument("algorithms must not be empty".into()));
        }
        let needs_split = self
            .algorithms
            .iter()
            .any(|a| matches!(a, Algorithm::Mpf | Algorithm::MpfFusion));
        if needs_split && self.n_total() % self.k_partitions != 0 {
            return Err(Error::InvalidArgument(format!(
                "particle budget {} is not divisible by partition count {}",
                self.n_total(),
                self.k_partitions
            )));
        }
        Ok(())
    }

    /// The benchmark model this configuration describes.
    pub fn model(&self) -> Result<BenchmarkModel> {
        BenchmarkModel::new(
            self.d_x,
            self.k_partitions,
            self.d_theta_g,
            self.theta_full,
            self.sigma_u2,
            self.sigma_v2,
        )
    }

    fn filter_params(&self) -> FilterParams {
        FilterParams {
            sigma_rw2: self.sigma_rw2,
            pd_floor: self.pd_floor,
            ..FilterParams::default()
        }
    }

    /// Algorithms in canonical order with duplicates removed.
    pub fn canonical_algorithms(&self) -> Vec<Algorithm> {
        let mut algs = self.algorithms.clone();
        algs.sort();
        algs.dedup();
        algs
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable per-stream seed derivation: two splitmix64 finalizer rounds over
/// the master seed and the stream index, xored with an FNV-1a hash of the
/// label, then finalized once more. Identical inputs give identical output
/// on every platform; distinct (index, label) pairs give distinct streams
/// with overwhelming probability.
pub fn derive_seed(master: u64, index: u64, label: &str) -> u64 {
    let mut label_hash = FNV_OFFSET;
    for b in label.bytes() {
        label_hash = (label_hash ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    splitmix64(splitmix64(splitmix64(master) ^ index) ^ label_hash)
}

/// Per-dimension mean squared error `|estimate - truth|^2 / dim`.
pub fn mse(estimate: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    debug_assert_eq!(estimate.len(), truth.len());
    (estimate - truth).norm_squared() / estimate.len() as f64
}

/// One (algorithm, realization, time) error record.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailRow {
    pub algorithm: Algorithm,
    pub realization: u64,
    /// 1-based time index.
    pub t: usize,
    pub mse_state: f64,
    pub mse_param: f64,
    pub failed: bool,
}

/// Cross-realization average at one (algorithm, time) cell; failed rows are
/// excluded from the averages and counted instead.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub t: usize,
    pub avg_mse_state: f64,
    pub avg_mse_param: f64,
    pub n_failed: usize,
}

/// Detail rows in canonical (algorithm, realization, t) order plus their
/// per-time-step summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub details: Vec<DetailRow>,
    pub summary: Vec<SummaryRow>,
}

impl ResultTable {
    pub fn new(details: Vec<DetailRow>) -> Self {
        let summary = summarize(&details);
        ResultTable { details, summary }
    }

    pub fn summary_for(&self, algorithm: Algorithm, t: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.algorithm == algorithm && r.t == t)
    }

    /// Number of realizations of `algorithm` that failed at any step.
    pub fn failed_realizations(&self, algorithm: Algorithm) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.details {
            if r.algorithm == algorithm && r.failed {
                seen.insert(r.realization);
            }
        }
        seen.len()
    }

    /// Writes the detail rows as CSV (LF endings, shortest round-trip float
    /// formatting).
    pub fn write_details_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "algorithm,realization,t,mse_state,mse_param,failed")?;
        for r in &self.details {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.algorithm, r.realization, r.t, r.mse_state, r.mse_param, r.failed
            )?;
        }
        Ok(())
    }

    /// Writes the summary rows as CSV.
    pub fn write_summary_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "algorithm,t,avg_mse_state,avg_mse_param,n_failed")?;
        for r in &self.summary {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.algorithm, r.t, r.avg_mse_state, r.avg_mse_param, r.n_failed
            )?;
        }
        Ok(())
    }
}

/// Averages detail rows per (algorithm, t), excluding failed rows from the
/// means and counting them in `n_failed`. A cell whose rows all failed
/// averages to NaN.
pub fn summarize(details: &[DetailRow]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(Algorithm, usize), (f64, f64, usize, usize)> = BTreeMap::new();
    for r in details {
        let cell = cells.entry((r.algorithm, r.t)).or_insert((0.0, 0.0, 0, 0));
        if r.failed {
            cell.3 += 1;
        } else {
            cell.0 += r.mse_state;
            cell.1 += r.mse_param;
            cell.2 += 1;
        }
    }
    cells
        .into_iter()
        .map(|((algorithm, t), (sum_s, sum_p, n_ok, n_failed))| SummaryRow {
            algorithm,
            t,
            avg_mse_state: if n_ok > 0 { sum_s / n_ok as f64 } else { f64::NAN },
            avg_mse_param: if n_ok > 0 { sum_p / n_ok as f64 } else { f64::NAN },
            n_failed,
        })
        .collect()
}

/// The ground-truth trajectory of one realization. Its seed depends only on
/// the master seed and the realization id, so every algorithm of that
/// realization filters the same data.
pub fn trajectory_for(config: &ExperimentConfig, realization: u64) -> Result<Trajectory> {
    let model = config.model()?;
    let seed = derive_seed(config.master_seed, realization, "trajectory");
    model.simulate_trajectory(config.t_steps, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Runs one algorithm over one realization: simulate the shared trajectory,
/// filter through all T steps, and record the per-step errors of the running
/// estimates. Filter divergence flags the remaining rows; it does not abort.
pub fn run_realization(config: &ExperimentConfig, algorithm: Algorithm, realization: u64) -> Result<Vec<DetailRow>> {
    config.validate()?;
    let model = config.model()?;
    let traj = trajectory_for(config, realization)?;
    let filter_seed = derive_seed(config.master_seed, realization, algorithm.label());
    let mut filter = FilterState::init(
        algorithm.kind(),
        &model,
        config.n_total(),
        config.filter_params(),
        filter_seed,
    )?;
    let theta_true = model.true_global_params();

    let mut rows = Vec::with_capacity(config.t_steps);
    for t in 0..config.t_steps {
        let est = filter.step(&model, &traj.observation_at(t))?;
        rows.push(DetailRow {
            algorithm,
            realization,
            t: t + 1,
            mse_state: mse(&est.state_mean, &traj.state_at(t)),
            mse_param: mse(&est.theta_mean, &theta_true),
            failed: est.failed,
        });
    }
    Ok(rows)
}

/// Runs the full (algorithm x realization) grid and aggregates the result
/// table. Work items execute concurrently under the `parallel` feature; the
/// output is assembled in canonical order either way, so the table is
/// bit-identical across runs and thread counts.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let algorithms = config.canonical_algorithms();
    let work: Vec<(Algorithm, u64)> = algorithms
        .iter()
        .flat_map(|&a| (0..config.realizations as u64).map(move |i| (a, i)))
        .collect();

    #[cfg(feature = "parallel")]
    let per_cell: Vec<Result<Vec<DetailRow>>> = work
        .par_iter()
        .map(|&(a, i)| run_realization(config, a, i))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let per_cell: Vec<Result<Vec<DetailRow>>> = work
        .iter()
        .map(|&(a, i)| run_realization(config, a, i))
        .collect();

    let mut details = Vec::with_capacity(work.len() * config.t_steps);
    for rows in per_cell {
        details.extend(rows?);
    }
    details.sort_by_key(|r| (r.algorithm, r.realization, r.t));
    Ok(ResultTable::new(details))
}
