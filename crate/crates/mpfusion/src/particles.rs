//! Weighted-particle arithmetic: normalization in log space, weighted
//! moments, effective sample size, and systematic resampling.
//!
//! All weight handling is done in log space with a log-sum-exp guard so that
//! high-dimensional likelihoods do not underflow in linear space.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Index ranges of the three blocks of one particle:
/// `[substate | local params | global params]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CloudLayout {
    pub substate: Range<usize>,
    pub local: Range<usize>,
    pub global: Range<usize>,
}

impl CloudLayout {
    /// Layout for contiguous blocks of the given widths, in block order.
    pub fn new(substate_dim: usize, local_dim: usize, global_dim: usize) -> Self {
        let a = substate_dim;
        let b = a + local_dim;
        let c = b + global_dim;
        CloudLayout {
            substate: 0..a,
            local: a..b,
            global: b..c,
        }
    }

    /// Total particle dimension.
    pub fn dim(&self) -> usize {
        self.global.end
    }

    /// Indices of the combined `[substate | local]` block (the conditional
    /// target during fused resampling).
    pub fn state_and_local(&self) -> Range<usize> {
        self.substate.start..self.local.end
    }
}

/// A set of weighted particles over a fixed block layout.
///
/// Samples are stored column-major: one column per particle, so a particle's
/// contiguous block is a contiguous slice in memory.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    samples: DMatrix<f64>,
    log_weights: DVector<f64>,
    layout: CloudLayout,
}

impl ParticleCloud {
    /// Builds a cloud from a `dim x n` sample matrix and per-particle
    /// log-weights.
    pub fn new(samples: DMatrix<f64>, log_weights: DVector<f64>, layout: CloudLayout) -> Result<Self> {
        if samples.nrows() != layout.dim() {
            return Err(Error::DimensionMismatch {
                context: "ParticleCloud::new sample rows",
                expected: layout.dim(),
                actual: samples.nrows(),
            });
        }
        if samples.ncols() != log_weights.len() {
            return Err(Error::DimensionMismatch {
                context: "ParticleCloud::new log-weights",
                expected: samples.ncols(),
                actual: log_weights.len(),
            });
        }
        if samples.ncols() == 0 {
            return Err(Error::InvalidArgument("particle cloud must be non-empty".into()));
        }
        Ok(ParticleCloud {
            samples,
            log_weights,
            layout,
        })
    }

    /// Cloud of `n` particles with all samples zero and uniform weights.
    pub fn zeros(layout: CloudLayout, n: usize) -> Result<Self> {
        let dim = layout.dim();
        Self::new(
            DMatrix::zeros(dim, n),
            DVector::from_element(n, -(n as f64).ln()),
            layout,
        )
    }

    pub fn n_particles(&self) -> usize {
        self.samples.ncols()
    }

    pub fn dim(&self) -> usize {
        self.samples.nrows()
    }

    pub fn layout(&self) -> &CloudLayout {
        &self.layout
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.samples
    }

    pub fn log_weights(&self) -> &DVector<f64> {
        &self.log_weights
    }

    /// Contiguous view of rows `range` of particle `n`.
    pub fn block(&self, n: usize, range: &Range<usize>) -> &[f64] {
        let dim = self.dim();
        &self.samples.as_slice()[n * dim + range.start..n * dim + range.end]
    }

    /// Mutable view of rows `range` of particle `n`.
    pub fn block_mut(&mut self, n: usize, range: &Range<usize>) -> &mut [f64] {
        let dim = self.dim();
        &mut self.samples.as_mut_slice()[n * dim + range.start..n * dim + range.end]
    }

    /// Adds a log-likelihood increment to particle `n`'s log-weight.
    pub fn add_log_weight(&mut self, n: usize, delta: f64) {
        self.log_weights[n] += delta;
    }

    /// Resets all log-weights to the uniform value `-ln n`.
    pub fn set_uniform_weights(&mut self) {
        let lw = -(self.n_particles() as f64).ln();
        self.log_weights.fill(lw);
    }

    /// Normalized probability weights of the cloud.
    pub fn probabilities(&self) -> Result<DVector<f64>> {
        normalize(&self.log_weights)
    }

    /// Overwrites the log-weights with the logs of an already-normalized
    /// probability vector.
    pub fn set_probabilities(&mut self, probs: &DVector<f64>) {
        for (lw, p) in self.log_weights.iter_mut().zip(probs.iter()) {
            *lw = p.ln();
        }
    }

    /// Replaces the samples by the selected columns (resampling gather) and
    /// resets the weights to uniform.
    pub fn select(&mut self, indices: &[usize]) {
        let dim = self.dim();
        let mut out = DMatrix::zeros(dim, indices.len());
        for (j, &idx) in indices.iter().enumerate() {
            out.column_mut(j).copy_from(&self.samples.column(idx));
        }
        self.samples = out;
        self.log_weights = DVector::from_element(indices.len(), -(indices.len() as f64).ln());
    }

    /// Replaces the samples with a freshly drawn matrix (Gaussian
    /// resampling); weights become uniform.
    pub fn replace_samples(&mut self, samples: DMatrix<f64>) -> Result<()> {
        if samples.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "ParticleCloud::replace_samples rows",
                expected: self.dim(),
                actual: samples.nrows(),
            });
        }
        let n = samples.ncols();
        self.samples = samples;
        self.log_weights = DVector::from_element(n, -(n as f64).ln());
        Ok(())
    }

    /// Weighted mean of rows `range` under the given probability weights.
    pub fn weighted_block_mean(&self, probs: &DVector<f64>, range: &Range<usize>) -> DVector<f64> {
        let block = self.samples.rows(range.start, range.len());
        block * probs
    }
}

/// Log of the sum of exponentials, stable against overflow. Returns `-inf`
/// for an all-`-inf` input.
pub fn log_sum_exp(values: &DVector<f64>) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + sum.ln()
}

/// Normalizes log-weights into a probability vector.
///
/// Invariant to adding a constant to every entry. Fails with
/// [`Error::DegenerateWeights`] when no entry is greater than `-inf` (or any
/// entry is NaN), which signals filter divergence.
pub fn normalize(log_weights: &DVector<f64>) -> Result<DVector<f64>> {
    if log_weights.iter().any(|v| v.is_nan()) {
        return Err(Error::DegenerateWeights);
    }
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    // dividing by the linear-space sum keeps the error of each weight
    // relative to the weight itself
    let mut probs = log_weights.map(|v| (v - m).exp());
    let sum = probs.sum();
    probs /= sum;
    Ok(probs)
}

/// Weighted mean and population covariance of a sample set.
///
/// `samples` holds one column per sample; `weights` must be a normalized
/// probability vector. The covariance is the population form
/// `sum_n w_n (z_n - mean)(z_n - mean)^T` with no bias correction, so a
/// rank-deficient result is legal output.
pub fn weighted_mean_cov(samples: &DMatrix<f64>, weights: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mean = samples * weights;
    let mut centered = samples.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let mut scaled = centered.clone();
    for (mut col, w) in scaled.column_iter_mut().zip(weights.iter()) {
        col *= *w;
    }
    let mut cov = &scaled * centered.transpose();
    // exact symmetry regardless of gemm rounding
    let covt = cov.transpose();
    cov = (cov + covt) * 0.5;
    (mean, cov)
}

/// Systematic resampling: returns `m` indices into the weight vector.
///
/// Index `n` appears either `floor(m * w_n)` or `ceil(m * w_n)` times. A
/// single uniform draw positions the comb, so the result is deterministic
/// given the rng state.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &DVector<f64>, m: usize, rng: &mut R) -> Vec<usize> {
    assert!(m >= 1, "resample output count must be at least 1");
    let n = weights.len();
    let u0: f64 = rng.gen::<f64>() / m as f64;
    let mut indices = Vec::with_capacity(m);
    let mut cumulative = weights[0];
    let mut i = 0usize;
    for j in 0..m {
        let point = u0 + j as f64 / m as f64;
        while point > cumulative && i + 1 < n {
            i += 1;
            cumulative += weights[i];
        }
        indices.push(i);
    }
    indices
}

/// Effective sample size `1 / sum w_n^2` of a normalized weight vector;
/// ranges from 1 (point mass) to N (uniform).
pub fn effective_sample_size(weights: &DVector<f64>) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn normalize_uniform() {
        let p = normalize(&dv(&[0.0, 0.0, 0.0])).unwrap();
        for w in p.iter() {
            assert_relative_eq!(*w, 1.0 / 3.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn normalize_direct_exponentiation() {
        // oracle: exp(0) = 1, exp(ln 3) = 3, so weights are 1/4 and 3/4
        let p = normalize(&dv(&[0.0, 3.0_f64.ln()])).unwrap();
        assert_relative_eq!(p[0], 0.25, epsilon = 1e-14);
        assert_relative_eq!(p[1], 0.75, epsilon = 1e-14);
    }

    #[test]
    fn normalize_shift_guards_overflow() {
        let p = normalize(&dv(&[1000.0, 1000.0 + 3.0_f64.ln()])).unwrap();
        assert_relative_eq!(p[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn normalize_handles_neg_inf_entries() {
        let p = normalize(&dv(&[f64::NEG_INFINITY, 0.0])).unwrap();
        assert_eq!(p[0], 0.0);
        assert_relative_eq!(p[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn normalize_all_neg_inf_is_degenerate() {
        let err = normalize(&dv(&[f64::NEG_INFINITY, f64::NEG_INFINITY])).unwrap_err();
        assert!(matches!(err, Error::DegenerateWeights));
    }

    #[test]
    fn normalize_rejects_nan() {
        let err = normalize(&dv(&[0.0, f64::NAN])).unwrap_err();
        assert!(matches!(err, Error::DegenerateWeights));
    }

    #[test]
    fn normalize_sums_to_one() {
        let p = normalize(&dv(&[-3.0, 0.4, 2.2, -701.0])).unwrap();
        assert_relative_eq!(p.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn weighted_moments_symmetric_pair() {
        let samples = DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        let (mean, cov) = weighted_mean_cov(&samples, &dv(&[0.5, 0.5]));
        assert_relative_eq!(mean[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(cov[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn weighted_moments_degenerate() {
        let samples = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 0.0]);
        let (mean, cov) = weighted_mean_cov(&samples, &dv(&[0.2, 0.5, 0.3]));
        assert_eq!(mean[0], 0.0);
        assert_eq!(cov[(0, 0)], 0.0);
    }

    #[test]
    fn weighted_moments_hand_computed() {
        // mean = 0.3 + 1.0 = 1.3
        // var  = 0.2*1.69 + 0.3*0.09 + 0.5*0.49 = 0.61
        let samples = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 2.0]);
        let (mean, cov) = weighted_mean_cov(&samples, &dv(&[0.2, 0.3, 0.5]));
        assert_relative_eq!(mean[0], 1.3, epsilon = 1e-14);
        assert_relative_eq!(cov[(0, 0)], 0.61, epsilon = 1e-14);
    }

    #[test]
    fn systematic_uniform_is_stratified() {
        let n = 64;
        let w = DVector::from_element(n, 1.0 / n as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let idx = systematic_resample(&w, n, &mut rng);
        let mut counts = vec![0usize; n];
        for i in idx {
            counts[i] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn systematic_point_mass() {
        let w = dv(&[1.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = systematic_resample(&w, 5, &mut rng);
        assert_eq!(idx, vec![0, 0, 0, 0, 0]);
    }

    #[test]
    fn systematic_exact_integer_counts() {
        let w = dv(&[0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let idx = systematic_resample(&w, 4, &mut rng);
        let ones = idx.iter().filter(|&&i| i == 1).count();
        assert_eq!(ones, 2);
        assert_eq!(idx.len() - ones, 2);
    }

    #[test]
    fn systematic_floor_ceil_guarantee() {
        let w = dv(&[0.37, 0.21, 0.02, 0.4]);
        let m = 13usize;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = systematic_resample(&w, m, &mut rng);
            let mut counts = vec![0usize; w.len()];
            for i in idx {
                counts[i] += 1;
            }
            for (c, wi) in counts.iter().zip(w.iter()) {
                let expected = m as f64 * wi;
                assert!(
                    *c == expected.floor() as usize || *c == expected.ceil() as usize,
                    "count {c} outside [{}, {}]",
                    expected.floor(),
                    expected.ceil()
                );
            }
        }
    }

    #[test]
    fn resampling_unbiasedness() {
        // empirical index frequency over many repetitions stays within a
        // 4-sigma binomial band around the weight
        let w = dv(&[0.62, 0.05, 0.23, 0.10]);
        let m = 7usize;
        let reps = 10_000usize;
        let mut counts = vec![0usize; w.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..reps {
            for i in systematic_resample(&w, m, &mut rng) {
                counts[i] += 1;
            }
        }
        let total = (reps * m) as f64;
        for (c, wi) in counts.iter().zip(w.iter()) {
            let freq = *c as f64 / total;
            let band = 4.0 * (wi * (1.0 - wi) / total).sqrt();
            assert!(
                (freq - wi).abs() <= band,
                "freq {freq} deviates from {wi} by more than {band}"
            );
        }
    }

    #[test]
    fn ess_extremes_and_hand_value() {
        let n = 100;
        let uniform = DVector::from_element(n, 1.0 / n as f64);
        assert_relative_eq!(effective_sample_size(&uniform), n as f64, epsilon = 1e-9);

        let mut point = DVector::zeros(4);
        point[2] = 1.0;
        assert_relative_eq!(effective_sample_size(&point), 1.0, epsilon = 1e-12);

        // 1 / (0.5625 + 0.0625) = 1.6
        assert_relative_eq!(effective_sample_size(&dv(&[0.75, 0.25])), 1.6, epsilon = 1e-12);
    }

    #[test]
    fn cloud_block_views() {
        let layout = CloudLayout::new(2, 1, 2);
        let samples = DMatrix::from_column_slice(5, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let cloud = ParticleCloud::new(samples, dv(&[0.0, 0.0]), layout).unwrap();
        assert_eq!(cloud.block(0, &cloud.layout().substate.clone()), &[1.0, 2.0]);
        assert_eq!(cloud.block(1, &cloud.layout().global.clone()), &[9.0, 10.0]);
        assert_eq!(cloud.layout().state_and_local(), 0..3);
    }

    #[test]
    fn cloud_select_gathers_columns() {
        let layout = CloudLayout::new(1, 0, 0);
        let samples = DMatrix::from_row_slice(1, 3, &[10.0, 20.0, 30.0]);
        let mut cloud = ParticleCloud::new(samples, dv(&[0.1_f64.ln(), 0.6_f64.ln(), 0.3_f64.ln()]), layout).unwrap();
        cloud.select(&[2, 2, 0]);
        assert_eq!(cloud.samples().as_slice(), &[30.0, 30.0, 10.0]);
        let p = cloud.probabilities().unwrap();
        for w in p.iter() {
            assert_relative_eq!(*w, 1.0 / 3.0, epsilon = 1e-14);
        }
    }

    proptest! {
        // adding an exactly-representable constant leaves the normalized
        // weights bit-identical
        #[test]
        fn shift_invariance_exact_on_lattice(
            raw in proptest::collection::vec(-(1i64 << 20)..(1i64 << 20), 1..20),
            c in -(1i64 << 20)..(1i64 << 20),
        ) {
            let lw = DVector::from_iterator(raw.len(), raw.iter().map(|&v| v as f64 / 16.0));
            let shifted = lw.map(|v| v + c as f64 / 16.0);
            let p = normalize(&lw).unwrap();
            let q = normalize(&shifted).unwrap();
            prop_assert_eq!(p.as_slice(), q.as_slice());
        }

        #[test]
        fn shift_invariance_float(
            raw in proptest::collection::vec(-300.0f64..300.0, 1..20),
            c in -500.0f64..500.0,
        ) {
            let lw = DVector::from_vec(raw);
            let shifted = lw.map(|v| v + c);
            let p = normalize(&lw).unwrap();
            let q = normalize(&shifted).unwrap();
            for (a, b) in p.iter().zip(q.iter()) {
                // rounding of lw + c costs up to ~ulp(|lw| + |c|) per entry
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn uniform_weights_match_population_moments(
            raw in proptest::collection::vec(-50.0f64..50.0, 2..40),
        ) {
            let n = raw.len();
            let samples = DMatrix::from_row_slice(1, n, &raw);
            let uniform = DVector::from_element(n, 1.0 / n as f64);
            let (mean, cov) = weighted_mean_cov(&samples, &uniform);
            let pop_mean = raw.iter().sum::<f64>() / n as f64;
            let pop_var = raw.iter().map(|z| (z - pop_mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!((mean[0] - pop_mean).abs() <= 1e-12 * (1.0 + pop_mean.abs()));
            prop_assert!((cov[(0, 0)] - pop_var).abs() <= 1e-12 * (1.0 + pop_var));
        }
    }
}
