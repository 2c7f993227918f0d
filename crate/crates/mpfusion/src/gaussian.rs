//! Multivariate Gaussian algebra: fitting from weighted particles,
//! marginalization, conditioning, sampling, density evaluation, and the
//! optimal Bayesian fusion rule for posteriors that share a common prior.
//!
//! Fusing K local posteriors `p_k` over the same quantity, all computed from
//! the same prior `p0`, into the posterior given all local data amounts to
//! `prod_k p_k / p0^(K-1)`: the product combines the local updates and the
//! division removes the K-1 extra copies of the prior. For Gaussians this is
//! closed form in information space:
//!
//! ```text
//! cov_q  = (sum_k cov_k^-1 - (K-1) cov_0^-1)^-1
//! mean_q = cov_q (sum_k cov_k^-1 mean_k - (K-1) cov_0^-1 mean_0)
//! ```
//!
//! Monte Carlo noise in the fitted local covariances can make the combined
//! precision indefinite; [`fuse`] then degrades through a documented fallback
//! chain instead of failing.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::particles::{weighted_mean_cov, ParticleCloud};

/// Default relative eigenvalue floor used for positive-definiteness repair.
pub const DEFAULT_PD_FLOOR: f64 = 1e-9;

/// A multivariate Gaussian given by mean vector and covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

/// Which route [`fuse`] took to produce a usable fused Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionOutcome {
    /// The combined precision was positive definite as computed.
    Exact,
    /// The prior-division term was dropped (flat-prior product fusion).
    /// This is the conservative limit of the fusion rule: Monte Carlo noise
    /// in the fitted local covariances made the exact combined precision
    /// indefinite, and clamping an indefinite precision from below would
    /// create near-flat directions whose draws destroy the filter.
    ProductOnly,
}

impl Gaussian {
    /// Builds a Gaussian, checking only shape consistency. The covariance is
    /// taken as given; use [`ensure_pd`] when it may be indefinite.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(Error::InvalidArgument(format!(
                "covariance must be square, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "Gaussian::new covariance",
                expected: mean.len(),
                actual: cov.nrows(),
            });
        }
        Ok(Gaussian { mean, cov })
    }

    /// Isotropic Gaussian `N(mean_value * 1, var * I)` in `dim` dimensions.
    pub fn isotropic(dim: usize, mean_value: f64, var: f64) -> Self {
        Gaussian {
            mean: DVector::from_element(dim, mean_value),
            cov: DMatrix::identity(dim, dim) * var,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Moment-matched fit to weighted samples (one column per sample),
    /// followed by positive-definiteness repair. A degenerate sample set
    /// yields a jittered covariance rather than an error.
    pub fn fit(samples: &DMatrix<f64>, probs: &DVector<f64>, floor: f64) -> Self {
        let (mean, cov) = weighted_mean_cov(samples, probs);
        Gaussian {
            mean,
            cov: ensure_pd(&cov, floor),
        }
    }

    /// Restriction of the Gaussian to the given index set.
    pub fn marginal(&self, idx: &[usize]) -> Result<Gaussian> {
        if idx.is_empty() {
            return Err(Error::InvalidArgument("marginal index set is empty".into()));
        }
        let d = self.dim();
        if let Some(&bad) = idx.iter().find(|&&i| i >= d) {
            return Err(Error::InvalidArgument(format!(
                "marginal index {bad} out of range for dimension {d}"
            )));
        }
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i]));
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.cov[(idx[r], idx[c])]);
        Ok(Gaussian { mean, cov })
    }

    /// Conditional distribution of the `target` block given that the `given`
    /// block equals `value`. The conditional covariance does not depend on
    /// `value`.
    pub fn conditional(
        &self,
        target: &[usize],
        given: &[usize],
        value: &DVector<f64>,
        floor: f64,
    ) -> Result<Gaussian> {
        let cond = self.conditioner(target, given, floor)?;
        Ok(Gaussian {
            mean: cond.mean_given(value)?,
            cov: cond.cov().clone(),
        })
    }

    /// Precomputes the conditioning factors so that many conditionals of the
    /// same joint (differing only in the conditioning value) are cheap.
    pub fn conditioner(&self, target: &[usize], given: &[usize], floor: f64) -> Result<Conditioner> {
        if target.is_empty() || given.is_empty() {
            return Err(Error::InvalidArgument(
                "conditional target and given index sets must be non-empty".into(),
            ));
        }
        let d = self.dim();
        if let Some(&bad) = target.iter().chain(given.iter()).find(|&&i| i >= d) {
            return Err(Error::InvalidArgument(format!(
                "conditional index {bad} out of range for dimension {d}"
            )));
        }
        if target.iter().any(|i| given.contains(i)) {
            return Err(Error::InvalidArgument(
                "conditional target and given index sets overlap".into(),
            ));
        }
        let a = target.len();
        let b = given.len();
        let mean_a = DVector::from_iterator(a, target.iter().map(|&i| self.mean[i]));
        let mean_b = DVector::from_iterator(b, given.iter().map(|&i| self.mean[i]));
        let sigma_aa = DMatrix::from_fn(a, a, |r, c| self.cov[(target[r], target[c])]);
        let sigma_ab = DMatrix::from_fn(a, b, |r, c| self.cov[(target[r], given[c])]);
        let sigma_bb = DMatrix::from_fn(b, b, |r, c| self.cov[(given[r], given[c])]);

        let chol_bb = Cholesky::new(ensure_pd(&sigma_bb, floor)).ok_or_else(|| {
            Error::NumericalFailure("conditional: given-block covariance is singular after repair".into())
        })?;
        // X = sigma_bb^-1 sigma_ba, so the gain is X^T
        let x = chol_bb.solve(&sigma_ab.transpose());
        let gain = x.transpose();
        let mut cond_cov = sigma_aa - &sigma_ab * &x;
        let t = cond_cov.transpose();
        cond_cov = (cond_cov + t) * 0.5;
        Ok(Conditioner {
            mean_a,
            mean_b,
            gain,
            cond_cov,
        })
    }

    /// One draw `mean + L eps` with `L` the lower Cholesky factor.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        Ok(self.sample_n(1, rng)?.column(0).into_owned())
    }

    /// `n` draws as the columns of a `dim x n` matrix; the Cholesky factor is
    /// computed once.
    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if d == 0 {
            return Ok(DMatrix::zeros(0, n));
        }
        let chol = self.cholesky()?;
        let mut eps = DMatrix::zeros(d, n);
        for j in 0..n {
            for i in 0..d {
                eps[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let mut out = chol.l() * eps;
        for mut col in out.column_iter_mut() {
            col += &self.mean;
        }
        Ok(out)
    }

    /// Log-density at `x`, evaluated via a Cholesky solve.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                context: "Gaussian::log_pdf point",
                expected: d,
                actual: x.len(),
            });
        }
        if d == 0 {
            return Ok(0.0);
        }
        let chol = self.cholesky()?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let diff = x - &self.mean;
        let solved = chol.solve(&diff);
        let quad = diff.dot(&solved);
        Ok(-0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        Cholesky::new(sym).ok_or_else(|| {
            Error::NumericalFailure("Cholesky factorization of covariance failed".into())
        })
    }
}

/// Precomputed factors for conditioning one block of a joint Gaussian on
/// another: gain `sigma_ab sigma_bb^-1`, conditional covariance, and the
/// block means.
#[derive(Debug, Clone)]
pub struct Conditioner {
    mean_a: DVector<f64>,
    mean_b: DVector<f64>,
    gain: DMatrix<f64>,
    cond_cov: DMatrix<f64>,
}

impl Conditioner {
    /// Conditional mean for one conditioning value.
    pub fn mean_given(&self, value: &DVector<f64>) -> Result<DVector<f64>> {
        if value.len() != self.mean_b.len() {
            return Err(Error::DimensionMismatch {
                context: "Conditioner::mean_given value",
                expected: self.mean_b.len(),
                actual: value.len(),
            });
        }
        Ok(&self.mean_a + &self.gain * (value - &self.mean_b))
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cond_cov
    }

    /// Regression gain `sigma_ab sigma_bb^-1`.
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// Conditional means for many conditioning values at once (one column
    /// per value).
    pub fn means_given_all(&self, values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if values.nrows() != self.mean_b.len() {
            return Err(Error::DimensionMismatch {
                context: "Conditioner::means_given_all values",
                expected: self.mean_b.len(),
                actual: values.nrows(),
            });
        }
        let mut centered = values.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean_b;
        }
        let mut out = &self.gain * centered;
        for mut col in out.column_iter_mut() {
            col += &self.mean_a;
        }
        Ok(out)
    }
}

/// Moment-matched Gaussian of a weighted particle cloud, with repaired
/// covariance. Degenerate sample spread produces a jittered covariance, not
/// an error; degenerate weights do error.
pub fn fit_from_weighted(cloud: &ParticleCloud, floor: f64) -> Result<Gaussian> {
    let probs = cloud.probabilities()?;
    Ok(Gaussian::fit(cloud.samples(), &probs, floor))
}

/// Symmetrizes `cov` and clamps its eigenvalues from below at
/// `floor * max(trace/D, 1e-300)` so the result admits a Cholesky
/// factorization. An input whose eigenvalues already clear the clamp is
/// returned unchanged apart from symmetrization.
pub fn ensure_pd(cov: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let d = cov.nrows();
    if d == 0 {
        return cov.clone();
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let scale = f64::max(sym.trace() / d as f64, 1e-300);
    let clamp = floor * scale;
    let mut eig = sym.clone().symmetric_eigen();
    let mut changed = false;
    for ev in eig.eigenvalues.iter_mut() {
        if *ev < clamp {
            *ev = clamp;
            changed = true;
        }
    }
    if !changed {
        return sym;
    }
    let rebuilt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues)
        * eig.eigenvectors.transpose();
    let t = rebuilt.transpose();
    (rebuilt + t) * 0.5
}

/// Inverse of a (nominally) positive-definite matrix via Cholesky, repairing
/// the input once if the first factorization fails.
fn pd_inverse(m: &DMatrix<f64>, floor: f64, context: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let chol = match Cholesky::new(sym) {
        Some(c) => c,
        None => Cholesky::new(ensure_pd(m, floor)).ok_or_else(|| {
            Error::NumericalFailure(format!("{context}: covariance not invertible after repair"))
        })?,
    };
    let inv = chol.inverse();
    let t = inv.transpose();
    Ok((inv + t) * 0.5)
}

/// Optimal Bayesian fusion of `K` local Gaussian posteriors that share the
/// Gaussian `prior`:
///
/// * fused precision  = `sum_k cov_k^-1 - (K-1) prior_cov^-1`
/// * fused mean       = `fused_cov (sum_k cov_k^-1 mean_k - (K-1) prior_cov^-1 prior_mean)`
///
/// With `K = 1` the correction terms vanish and the single local posterior is
/// returned unchanged. When the fused precision is not positive definite the
/// function drops the prior-division term entirely (flat-prior product
/// fusion); the returned [`FusionOutcome`] reports which route was taken.
pub fn fuse(locals: &[Gaussian], prior: &Gaussian, floor: f64) -> Result<(Gaussian, FusionOutcome)> {
    if locals.is_empty() {
        return Err(Error::InvalidArgument("fuse requires at least one local posterior".into()));
    }
    let d = prior.dim();
    for (k, g) in locals.iter().enumerate() {
        if g.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "fuse local posterior",
                expected: d,
                actual: locals[k].dim(),
            });
        }
    }
    if locals.len() == 1 {
        return Ok((locals[0].clone(), FusionOutcome::Exact));
    }

    let k_minus_1 = (locals.len() - 1) as f64;
    let mut lambda = DMatrix::zeros(d, d);
    let mut info = DVector::zeros(d);
    for g in locals {
        let prec = pd_inverse(&g.cov, floor, "fuse: local covariance")?;
        info += &prec * &g.mean;
        lambda += prec;
    }
    let product_lambda = lambda.clone();
    let product_info = info.clone();
    let prior_prec = pd_inverse(&prior.cov, floor, "fuse: prior covariance")?;
    info -= k_minus_1 * (&prior_prec * &prior.mean);
    lambda -= k_minus_1 * prior_prec;
    let lambda = (&lambda + lambda.transpose()) * 0.5;

    if let Some(chol) = Cholesky::new(lambda.clone()) {
        if let Some(g) = gaussian_from_information(&chol, &info) {
            return Ok((g, FusionOutcome::Exact));
        }
    }

    // Indefinite combined precision: treat the prior as flat and fuse by
    // product only.
    if let Some(chol) = Cholesky::new((&product_lambda + product_lambda.transpose()) * 0.5) {
        if let Some(g) = gaussian_from_information(&chol, &product_info) {
            return Ok((g, FusionOutcome::ProductOnly));
        }
    }
    Err(Error::NumericalFailure(
        "fuse: precision not positive definite on any fallback route".into(),
    ))
}

fn gaussian_from_information(chol: &Cholesky<f64, Dyn>, info: &DVector<f64>) -> Option<Gaussian> {
    let cov = chol.inverse();
    let mean = chol.solve(info);
    if cov.iter().all(|v| v.is_finite()) && mean.iter().all(|v| v.is_finite()) {
        let t = cov.transpose();
        Some(Gaussian {
            mean,
            cov: (cov + t) * 0.5,
        })
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::CloudLayout;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn gauss(mean: &[f64], cov_rows: &[&[f64]]) -> Gaussian {
        let d = mean.len();
        let flat: Vec<f64> = cov_rows.iter().flat_map(|r| r.iter().copied()).collect();
        Gaussian::new(dv(mean), DMatrix::from_row_slice(d, d, &flat)).unwrap()
    }

    #[test]
    fn fit_symmetric_pair() {
        let samples = DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        let g = Gaussian::fit(&samples, &dv(&[0.5, 0.5]), DEFAULT_PD_FLOOR);
        assert_relative_eq!(g.mean()[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(g.cov()[(0, 0)], 1.0, max_relative = 1e-9);
    }

    #[test]
    fn fit_degenerate_cloud_gets_jitter() {
        let c = 4.2;
        let samples = DMatrix::from_element(2, 5, c);
        let g = Gaussian::fit(&samples, &DVector::from_element(5, 0.2), DEFAULT_PD_FLOOR);
        assert_eq!(g.mean()[0], c);
        assert!(g.cov()[(0, 0)] > 0.0, "jitter floor must make the covariance usable");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draw = g.sample(&mut rng).unwrap();
        let eps = g.cov()[(0, 0)];
        assert!((draw[0] - c).abs() <= 5.0 * eps.sqrt());
    }

    #[test]
    fn fit_monte_carlo_recovers_moments() {
        // oracle: 1e5 draws from N(3, 4) with uniform weights
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut samples = DMatrix::zeros(1, n);
        for j in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            samples[(0, j)] = 3.0 + 2.0 * z;
        }
        let probs = DVector::from_element(n, 1.0 / n as f64);
        let g = Gaussian::fit(&samples, &probs, DEFAULT_PD_FLOOR);
        assert!((g.mean()[0] - 3.0).abs() < 0.05);
        assert!((g.cov()[(0, 0)] - 4.0).abs() < 0.15);
    }

    #[test]
    fn fit_from_weighted_cloud() {
        let layout = CloudLayout::new(1, 0, 0);
        let samples = DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        let lw = dv(&[0.5_f64.ln(), 0.5_f64.ln()]);
        let cloud = ParticleCloud::new(samples, lw, layout).unwrap();
        let g = fit_from_weighted(&cloud, DEFAULT_PD_FLOOR).unwrap();
        assert_relative_eq!(g.cov()[(0, 0)], 1.0, max_relative = 1e-9);
    }

    #[test]
    fn marginal_diagonal_extraction() {
        let g = gauss(&[5.0, 7.0], &[&[1.0, 0.0], &[0.0, 4.0]]);
        let m = g.marginal(&[1]).unwrap();
        assert_eq!(m.mean()[0], 7.0);
        assert_eq!(m.cov()[(0, 0)], 4.0);
    }

    #[test]
    fn marginal_identity_and_submatrix() {
        let g = gauss(&[1.0, 2.0], &[&[2.0, 1.0], &[1.0, 2.0]]);
        let all = g.marginal(&[0, 1]).unwrap();
        assert_eq!(all.mean(), g.mean());
        assert_eq!(all.cov(), g.cov());
        let first = g.marginal(&[0]).unwrap();
        assert_eq!(first.cov()[(0, 0)], 2.0);
    }

    #[test]
    fn marginal_out_of_range_errors() {
        let g = Gaussian::isotropic(2, 0.0, 1.0);
        assert!(g.marginal(&[2]).is_err());
        assert!(g.marginal(&[]).is_err());
    }

    #[test]
    fn conditional_independent_blocks_reduce_to_marginal() {
        let g = gauss(&[1.0, -3.0], &[&[2.0, 0.0], &[0.0, 5.0]]);
        for v in [-10.0, 0.0, 3.5] {
            let c = g.conditional(&[0], &[1], &dv(&[v]), DEFAULT_PD_FLOOR).unwrap();
            assert_relative_eq!(c.mean()[0], 1.0, epsilon = 1e-12);
            assert_relative_eq!(c.cov()[(0, 0)], 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn conditional_worked_example_with_grid_oracle() {
        // N([0,0], [[2,1],[1,2]]) conditioned on x1 = 2:
        // mean = 0 + (1/2)(2 - 0) = 1, var = 2 - 1/2 = 1.5
        let g = gauss(&[0.0, 0.0], &[&[2.0, 1.0], &[1.0, 2.0]]);
        let c = g.conditional(&[0], &[1], &dv(&[2.0]), DEFAULT_PD_FLOOR).unwrap();
        assert_relative_eq!(c.mean()[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.cov()[(0, 0)], 1.5, epsilon = 1e-12);

        // cross-check against 1-D integration of the joint density along x1 = 2
        let mut mass = 0.0;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        let steps = 40_000;
        let (lo, hi) = (-20.0, 20.0);
        let h = (hi - lo) / steps as f64;
        for i in 0..=steps {
            let x0 = lo + i as f64 * h;
            let p = g.log_pdf(&dv(&[x0, 2.0])).unwrap().exp();
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            mass += w * p;
            m1 += w * p * x0;
            m2 += w * p * x0 * x0;
        }
        let mean = m1 / mass;
        let var = m2 / mass - mean * mean;
        assert_relative_eq!(c.mean()[0], mean, epsilon = 1e-8);
        assert_relative_eq!(c.cov()[(0, 0)], var, epsilon = 1e-8);
    }

    #[test]
    fn conditional_at_given_mean_is_centered() {
        let g = gauss(&[4.0, -1.0], &[&[3.0, 0.7], &[0.7, 1.2]]);
        let c = g.conditional(&[0], &[1], &dv(&[-1.0]), DEFAULT_PD_FLOOR).unwrap();
        assert_relative_eq!(c.mean()[0], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn conditional_rejects_overlap() {
        let g = Gaussian::isotropic(3, 0.0, 1.0);
        assert!(g.conditional(&[0, 1], &[1], &dv(&[0.0]), DEFAULT_PD_FLOOR).is_err());
    }

    #[test]
    fn conditioner_batch_matches_single() {
        let g = gauss(&[0.5, -0.5, 2.0], &[&[2.0, 0.3, 0.1], &[0.3, 1.5, 0.4], &[0.1, 0.4, 1.0]]);
        let cond = g.conditioner(&[0, 1], &[2], DEFAULT_PD_FLOOR).unwrap();
        let values = DMatrix::from_row_slice(1, 3, &[-1.0, 0.0, 2.5]);
        let batch = cond.means_given_all(&values).unwrap();
        for j in 0..3 {
            let single = cond.mean_given(&dv(&[values[(0, j)]])).unwrap();
            assert_relative_eq!(batch[(0, j)], single[0], epsilon = 1e-14);
            assert_relative_eq!(batch[(1, j)], single[1], epsilon = 1e-14);
        }
    }

    #[test]
    fn marginal_conditional_consistency() {
        // marginalizing out the given block then conditioning on nothing is
        // just the marginal of the target block
        let g = gauss(&[1.0, 2.0, 3.0], &[&[2.0, 0.5, 0.2], &[0.5, 1.0, 0.3], &[0.2, 0.3, 1.5]]);
        let joint_marginal = g.marginal(&[0, 1]).unwrap();
        let direct = g.marginal(&[0, 1]).unwrap();
        assert_eq!(joint_marginal.mean(), direct.mean());
        assert_eq!(joint_marginal.cov(), direct.cov());
    }

    #[test]
    fn fuse_no_information_case() {
        // all K locals equal to the prior: K*P - (K-1)*P = P
        let prior = gauss(&[1.0, -1.0], &[&[2.0, 0.4], &[0.4, 1.0]]);
        let locals = vec![prior.clone(), prior.clone(), prior.clone()];
        let (fused, outcome) = fuse(&locals, &prior, DEFAULT_PD_FLOOR).unwrap();
        assert_eq!(outcome, FusionOutcome::Exact);
        assert_relative_eq!(fused.mean(), prior.mean(), epsilon = 1e-10);
        assert_relative_eq!(fused.cov(), prior.cov(), epsilon = 1e-10);
    }

    #[test]
    fn fuse_scalar_worked_example() {
        // locals N(1,1), N(3,1), prior N(0,2):
        // precision 1 + 1 - 0.5 = 1.5 -> cov 2/3; mean (2/3)(1 + 3 - 0) = 8/3
        let locals = vec![gauss(&[1.0], &[&[1.0]]), gauss(&[3.0], &[&[1.0]])];
        let prior = gauss(&[0.0], &[&[2.0]]);
        let (fused, outcome) = fuse(&locals, &prior, DEFAULT_PD_FLOOR).unwrap();
        assert_eq!(outcome, FusionOutcome::Exact);
        assert_relative_eq!(fused.cov()[(0, 0)], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(fused.mean()[0], 8.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn fuse_scalar_grid_oracle() {
        // independent route: pointwise product of the two local densities
        // divided by the prior density, integrated on a fine grid
        let locals = vec![gauss(&[1.0], &[&[1.0]]), gauss(&[3.0], &[&[1.0]])];
        let prior = gauss(&[0.0], &[&[2.0]]);
        let (fused, _) = fuse(&locals, &prior, DEFAULT_PD_FLOOR).unwrap();

        let steps = 200_000;
        let (lo, hi) = (-30.0, 30.0);
        let h = (hi - lo) / steps as f64;
        let (mut mass, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..=steps {
            let x = dv(&[lo + i as f64 * h]);
            let log_q = locals[0].log_pdf(&x).unwrap() + locals[1].log_pdf(&x).unwrap()
                - prior.log_pdf(&x).unwrap();
            let q = log_q.exp();
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            mass += w * q;
            m1 += w * q * x[0];
            m2 += w * q * x[0] * x[0];
        }
        let mean = m1 / mass;
        let var = m2 / mass - mean * mean;
        assert!((fused.mean()[0] - mean).abs() < 1e-6);
        assert!((fused.cov()[(0, 0)] - var).abs() < 1e-6);
    }

    #[test]
    fn fuse_single_local_is_identity() {
        let local = gauss(&[2.5], &[&[0.8]]);
        let prior = gauss(&[-7.0], &[&[0.1]]);
        let (fused, outcome) = fuse(std::slice::from_ref(&local), &prior, DEFAULT_PD_FLOOR).unwrap();
        assert_eq!(outcome, FusionOutcome::Exact);
        assert_eq!(fused.mean(), local.mean());
        assert_eq!(fused.cov(), local.cov());
    }

    #[test]
    fn fuse_indefinite_precision_falls_back() {
        // locals looser than the prior: 0.1 + 0.1 - 1.0 < 0
        let locals = vec![gauss(&[0.0], &[&[10.0]]), gauss(&[1.0], &[&[10.0]])];
        let prior = gauss(&[0.0], &[&[1.0]]);
        let (fused, outcome) = fuse(&locals, &prior, DEFAULT_PD_FLOOR).unwrap();
        assert_ne!(outcome, FusionOutcome::Exact);
        assert!(fused.cov()[(0, 0)].is_finite());
        assert!(fused.cov()[(0, 0)] > 0.0);
    }

    #[test]
    fn fuse_precision_identity_when_exact() {
        let locals = vec![
            gauss(&[1.0, 0.0], &[&[0.5, 0.1], &[0.1, 0.6]]),
            gauss(&[0.0, 2.0], &[&[0.7, -0.2], &[-0.2, 0.9]]),
            gauss(&[1.5, 1.0], &[&[0.4, 0.0], &[0.0, 0.5]]),
        ];
        let prior = gauss(&[0.5, 0.5], &[&[2.0, 0.3], &[0.3, 2.0]]);
        let (fused, outcome) = fuse(&locals, &prior, DEFAULT_PD_FLOOR).unwrap();
        assert_eq!(outcome, FusionOutcome::Exact);
        let mut expected = DMatrix::zeros(2, 2);
        for g in &locals {
            expected += g.cov().clone().try_inverse().unwrap();
        }
        expected -= 2.0 * prior.cov().clone().try_inverse().unwrap();
        let fused_prec = fused.cov().clone().try_inverse().unwrap();
        assert_relative_eq!(fused_prec, expected, max_relative = 1e-9);
    }

    #[test]
    fn sample_deterministic_and_zero_cov_limit() {
        let g = Gaussian::isotropic(3, 2.0, 1.0);
        let a = g.sample(&mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = g.sample(&mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);

        let tiny = Gaussian::new(dv(&[5.0]), DMatrix::from_element(1, 1, 1e-12)).unwrap();
        let draw = tiny.sample(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((draw[0] - 5.0).abs() <= 5.0 * 1e-6);
    }

    #[test]
    fn sample_monte_carlo_moments() {
        let g = Gaussian::isotropic(2, 0.0, 1.0);
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = g.sample_n(n, &mut rng).unwrap();
        let uniform = DVector::from_element(n, 1.0 / n as f64);
        let (mean, cov) = weighted_mean_cov(&draws, &uniform);
        for i in 0..2 {
            assert!(mean[i].abs() < 0.02, "mean[{i}] = {}", mean[i]);
            for j in 0..2 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((cov[(i, j)] - expected).abs() < 0.03);
            }
        }
    }

    #[test]
    fn sample_log_pdf_entropy_round_trip() {
        // mean log-density of draws approximates the negative differential
        // entropy -0.5 ln((2 pi e)^d det cov)
        let g = gauss(&[1.0, -2.0], &[&[2.0, 0.5], &[0.5, 1.0]]);
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = g.sample_n(n, &mut rng).unwrap();
        let mut acc = 0.0;
        for j in 0..n {
            acc += g.log_pdf(&draws.column(j).into_owned()).unwrap();
        }
        let avg = acc / n as f64;
        let d = 2.0;
        let det: f64 = 2.0 * 1.0 - 0.25;
        let neg_entropy = -0.5 * (d * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + det.ln());
        // var of log-density is d/2; 5 sigma Monte Carlo band
        let band = 5.0 * (d / 2.0_f64).sqrt() / (n as f64).sqrt();
        assert!(
            (avg - neg_entropy).abs() < band,
            "avg {avg} vs {neg_entropy} (band {band})"
        );
    }

    #[test]
    fn ensure_pd_leaves_pd_input_unchanged() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let out = ensure_pd(&m, 1e-9);
        assert_relative_eq!(out, m, epsilon = 1e-12);
    }

    #[test]
    fn ensure_pd_zero_matrix() {
        let out = ensure_pd(&DMatrix::zeros(2, 2), 1e-9);
        assert!(out[(0, 0)] > 0.0);
        assert!(Cholesky::new(out).is_some());
    }

    #[test]
    fn ensure_pd_rank_deficient() {
        // eigenvalues of [[1,1],[1,1]] are {2, 0}; the zero one gets clamped
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let floor = 1e-6;
        let out = ensure_pd(&m, floor);
        let eig = out.clone().symmetric_eigen();
        let scale = 1.0; // trace/D
        let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_ev >= floor * scale * 0.999, "min eigenvalue {min_ev}");
        assert!(Cholesky::new(out).is_some());
    }

    #[test]
    fn log_pdf_standard_normal_values() {
        let g = Gaussian::isotropic(1, 0.0, 1.0);
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(g.log_pdf(&dv(&[0.0])).unwrap(), -half_ln_2pi, epsilon = 1e-14);
        assert_relative_eq!(g.log_pdf(&dv(&[1.0])).unwrap(), -half_ln_2pi - 0.5, epsilon = 1e-14);
    }
}
