//! Validation models with closed-form posteriors: a block-diagonal
//! linear-Gaussian state-space model with its exact Kalman recursion, and a
//! static Gaussian-mean model whose parameter posterior is conjugate.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::{ensure_pd, Gaussian};
use crate::model::{ParamLayout, Partitioning, SeparableModel, Trajectory};

const LN_2PI: f64 = 1.8378770664093453;

fn is_block_diagonal(m: &DMatrix<f64>, rows: &[std::ops::Range<usize>], cols: &[std::ops::Range<usize>]) -> bool {
    for (bi, rb) in rows.iter().enumerate() {
        for r in rb.clone() {
            for c in 0..m.ncols() {
                let inside = cols[bi].contains(&c);
                if !inside && m[(r, c)].abs() > 1e-12 {
                    return false;
                }
            }
        }
    }
    true
}

/// Linear-Gaussian model `x' = A x + u`, `y = C x + v` with block-diagonal
/// system matrices, so each state block forms an independent subsystem. All
/// parameters are known (the unknown-parameter layout is empty); the model
/// exists to validate the particle filters against the exact Kalman
/// recursion.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    init: Gaussian,
    partitioning: Partitioning,
    layout: ParamLayout,
    // cached per-block factors
    a_blocks: Vec<DMatrix<f64>>,
    c_blocks: Vec<DMatrix<f64>>,
    q_chols: Vec<DMatrix<f64>>,
    r_chols: Vec<DMatrix<f64>>,
    r_invs: Vec<DMatrix<f64>>,
    r_logdets: Vec<f64>,
    init_means: Vec<DVector<f64>>,
    init_chols: Vec<DMatrix<f64>>,
}

impl LinearGaussianModel {
    /// Builds the model split into `k` equal state blocks (and equal
    /// observation blocks). Errors if any system matrix couples different
    /// blocks, which would break the separability assumption.
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        init_mean: DVector<f64>,
        init_cov: DMatrix<f64>,
        k: usize,
    ) -> Result<Self> {
        let d_x = a.nrows();
        let d_y = c.nrows();
        if a.ncols() != d_x || q.shape() != (d_x, d_x) || c.ncols() != d_x || r.shape() != (d_y, d_y) {
            return Err(Error::InvalidArgument("inconsistent system matrix shapes".into()));
        }
        if init_mean.len() != d_x || init_cov.shape() != (d_x, d_x) {
            return Err(Error::InvalidArgument("inconsistent initial prior shape".into()));
        }
        if d_y % k != 0 {
            return Err(Error::InvalidArgument(format!(
                "observation dimension {d_y} is not divisible by partition count {k}"
            )));
        }
        let state_p = Partitioning::equal_blocks(d_x, k)?;
        let obs_p = Partitioning::equal_blocks(d_y, k)?;
        let partitioning = Partitioning::new(state_p.state_blocks().to_vec(), obs_p.state_blocks().to_vec())?;

        let sb: Vec<_> = (0..k).map(|i| partitioning.state_block(i).clone()).collect();
        let ob: Vec<_> = (0..k).map(|i| partitioning.obs_block(i).clone()).collect();
        for (m, rows, cols, name) in [
            (&a, &sb, &sb, "A"),
            (&q, &sb, &sb, "Q"),
            (&c, &ob, &sb, "C"),
            (&r, &ob, &ob, "R"),
            (&init_cov, &sb, &sb, "initial covariance"),
        ] {
            if !is_block_diagonal(m, rows, cols) {
                return Err(Error::InvalidArgument(format!(
                    "{name} couples different subsystems; the model is not separable"
                )));
            }
        }

        let chol_l = |m: &DMatrix<f64>| -> DMatrix<f64> {
            Cholesky::new(ensure_pd(m, crate::gaussian::DEFAULT_PD_FLOOR))
                .expect("repaired covariance factorizes")
                .l()
        };
        let mut a_blocks = Vec::new();
        let mut c_blocks = Vec::new();
        let mut q_chols = Vec::new();
        let mut r_chols = Vec::new();
        let mut r_invs = Vec::new();
        let mut r_logdets = Vec::new();
        let mut init_means = Vec::new();
        let mut init_chols = Vec::new();
        for i in 0..k {
            let s = &sb[i];
            let o = &ob[i];
            a_blocks.push(a.view((s.start, s.start), (s.len(), s.len())).into_owned());
            c_blocks.push(c.view((o.start, s.start), (o.len(), s.len())).into_owned());
            q_chols.push(chol_l(&q.view((s.start, s.start), (s.len(), s.len())).into_owned()));
            let r_block = r.view((o.start, o.start), (o.len(), o.len())).into_owned();
            let r_l = chol_l(&r_block);
            r_logdets.push(r_l.diagonal().iter().map(|v| 2.0 * v.ln()).sum());
            let r_chol = Cholesky::new(ensure_pd(&r_block, crate::gaussian::DEFAULT_PD_FLOOR))
                .expect("repaired covariance factorizes");
            r_invs.push(r_chol.inverse());
            r_chols.push(r_l);
            init_means.push(DVector::from_iterator(s.len(), s.clone().map(|j| init_mean[j])));
            init_chols.push(chol_l(
                &init_cov.view((s.start, s.start), (s.len(), s.len())).into_owned(),
            ));
        }

        Ok(LinearGaussianModel {
            a,
            c,
            q,
            r,
            init: Gaussian::new(init_mean, init_cov)?,
            layout: ParamLayout::global_only(0, k),
            partitioning,
            a_blocks,
            c_blocks,
            q_chols,
            r_chols,
            r_invs,
            r_logdets,
            init_means,
            init_chols,
        })
    }

    pub fn init_prior(&self) -> &Gaussian {
        &self.init
    }

    pub fn system_matrices(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
        (&self.a, &self.c, &self.q, &self.r)
    }
}

fn draw_with_factor(l: &DMatrix<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
    let d = l.nrows();
    let eps = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    l * eps
}

impl SeparableModel for LinearGaussianModel {
    fn partitioning(&self) -> &Partitioning {
        &self.partitioning
    }

    fn param_layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn global_prior(&self) -> Gaussian {
        Gaussian::isotropic(0, 0.0, 0.0)
    }

    fn local_prior(&self, _k: usize) -> Gaussian {
        Gaussian::isotropic(0, 0.0, 0.0)
    }

    fn init_substate_into(&self, k: usize, rng: &mut dyn RngCore, out: &mut [f64]) {
        let draw = &self.init_means[k] + draw_with_factor(&self.init_chols[k], rng);
        out.copy_from_slice(draw.as_slice());
    }

    fn propagate_into(
        &self,
        k: usize,
        x_prev: &[f64],
        _local: &[f64],
        _global: &[f64],
        rng: &mut dyn RngCore,
        out: &mut [f64],
    ) {
        let x = DVector::from_column_slice(x_prev);
        let draw = &self.a_blocks[k] * x + draw_with_factor(&self.q_chols[k], rng);
        out.copy_from_slice(draw.as_slice());
    }

    fn observe_into(
        &self,
        k: usize,
        x: &[f64],
        _local: &[f64],
        _global: &[f64],
        rng: &mut dyn RngCore,
        out: &mut [f64],
    ) {
        let x = DVector::from_column_slice(x);
        let draw = &self.c_blocks[k] * x + draw_with_factor(&self.r_chols[k], rng);
        out.copy_from_slice(draw.as_slice());
    }

    fn block_log_lik(&self, k: usize, y: &[f64], x: &[f64], _local: &[f64], _global: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let resid = DVector::from_column_slice(y) - &self.c_blocks[k] * xv;
        let quad = resid.dot(&(&self.r_invs[k] * &resid));
        -0.5 * (y.len() as f64 * LN_2PI + self.r_logdets[k] + quad)
    }

    fn true_local_params(&self, _k: usize) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn true_global_params(&self) -> DVector<f64> {
        DVector::zeros(0)
    }
}

/// Exact Kalman recursion over the full (block-diagonal) system; the oracle
/// the particle filters are compared against.
#[derive(Debug, Clone)]
pub struct KalmanFilter {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl KalmanFilter {
    pub fn new(model: &LinearGaussianModel) -> Self {
        let (a, c, q, r) = model.system_matrices();
        KalmanFilter {
            a: a.clone(),
            c: c.clone(),
            q: q.clone(),
            r: r.clone(),
            mean: model.init_prior().mean().clone(),
            cov: model.init_prior().cov().clone(),
        }
    }

    /// One predict-update cycle.
    pub fn step(&mut self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.c.nrows() {
            return Err(Error::DimensionMismatch {
                context: "KalmanFilter::step observation",
                expected: self.c.nrows(),
                actual: y.len(),
            });
        }
        let pred_mean = &self.a * &self.mean;
        let pred_cov = &self.a * &self.cov * self.a.transpose() + &self.q;
        let s = &self.c * &pred_cov * self.c.transpose() + &self.r;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::NumericalFailure("Kalman innovation covariance is singular".into()))?;
        let gain = &pred_cov * self.c.transpose() * s_inv;
        self.mean = &pred_mean + &gain * (y - &self.c * &pred_mean);
        let cov = (DMatrix::identity(self.mean.len(), self.mean.len()) - &gain * &self.c) * pred_cov;
        let t = cov.transpose();
        self.cov = (cov + t) * 0.5;
        Ok(())
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

/// Convenience constructor pairing a separable linear-Gaussian model with
/// its exact filter.
pub fn make_linear_gaussian_oracle(
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    init_mean: DVector<f64>,
    init_cov: DMatrix<f64>,
    k: usize,
) -> Result<(LinearGaussianModel, KalmanFilter)> {
    let model = LinearGaussianModel::new(a, c, q, r, init_mean, init_cov, k)?;
    let kalman = KalmanFilter::new(&model);
    Ok((model, kalman))
}

/// Static Gaussian-mean model: every subsystem observes the full unknown
/// global parameter vector directly, `y_k = theta + v_k`, and the substates
/// are inert random walks that carry no information. The parameter posterior
/// is conjugate, so the fused estimate can be compared to a closed form.
#[derive(Debug, Clone)]
pub struct StaticMeanModel {
    theta_true: DVector<f64>,
    obs_var: f64,
    state_rw_var: f64,
    prior: Gaussian,
    partitioning: Partitioning,
    layout: ParamLayout,
}

impl StaticMeanModel {
    pub fn new(k: usize, theta_true: DVector<f64>, obs_var: f64, prior: Gaussian) -> Result<Self> {
        if prior.dim() != theta_true.len() {
            return Err(Error::DimensionMismatch {
                context: "StaticMeanModel prior",
                expected: theta_true.len(),
                actual: prior.dim(),
            });
        }
        if obs_var <= 0.0 {
            return Err(Error::InvalidArgument("observation variance must be positive".into()));
        }
        let d = theta_true.len();
        let state_blocks: Vec<_> = (0..k).map(|i| i..i + 1).collect();
        let obs_blocks: Vec<_> = (0..k).map(|i| i * d..(i + 1) * d).collect();
        Ok(StaticMeanModel {
            layout: ParamLayout::global_only(d, k),
            partitioning: Partitioning::new(state_blocks, obs_blocks)?,
            theta_true,
            obs_var,
            state_rw_var: 0.5,
            prior,
        })
    }

    /// Closed-form posterior over the parameters after the first `t_steps`
    /// rows of a trajectory: `t_steps * K` direct observations with
    /// isotropic noise applied to the Gaussian prior.
    pub fn exact_posterior(&self, traj: &Trajectory, t_steps: usize) -> Result<Gaussian> {
        let d = self.theta_true.len();
        let k = self.partitioning.k();
        let p0_inv = self
            .prior
            .cov()
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NumericalFailure("prior covariance is singular".into()))?;
        let count = (t_steps * k) as f64;
        let precision = &p0_inv + DMatrix::identity(d, d) * (count / self.obs_var);
        let mut info = &p0_inv * self.prior.mean();
        for t in 0..t_steps {
            for block in 0..k {
                let ob = self.partitioning.obs_block(block);
                for (i, col) in ob.clone().enumerate() {
                    info[i] += traj.observations[(t, col)] / self.obs_var;
                }
            }
        }
        let cov = precision
            .try_inverse()
            .ok_or_else(|| Error::NumericalFailure("posterior precision is singular".into()))?;
        let mean = &cov * info;
        Ok(Gaussian::new(mean, cov)?)
    }
}

impl SeparableModel for StaticMeanModel {
    fn partitioning(&self) -> &Partitioning {
        &self.partitioning
    }

    fn param_layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn global_prior(&self) -> Gaussian {
        self.prior.clone()
    }

    fn local_prior(&self, _k: usize) -> Gaussian {
        Gaussian::isotropic(0, 0.0, 0.0)
    }

    fn init_substate_into(&self, _k: usize, rng: &mut dyn RngCore, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
    }

    fn propagate_into(
        &self,
        _k: usize,
        x_prev: &[f64],
        _local: &[f64],
        _global: &[f64],
        rng: &mut dyn RngCore,
        out: &mut [f64],
    ) {
        let sd = self.state_rw_var.sqrt();
        for (o, &x) in out.iter_mut().zip(x_prev.iter()) {
            *o = x + sd * rng.sample::<f64, _>(StandardNormal);
        }
    }

    fn observe_into(
        &self,
        _k: usize,
        _x: &[f64],
        _local: &[f64],
        _global: &[f64],
        rng: &mut dyn RngCore,
        out: &mut [f64],
    ) {
        let sd = self.obs_var.sqrt();
        for (o, &th) in out.iter_mut().zip(self.theta_true.iter()) {
            *o = th + sd * rng.sample::<f64, _>(StandardNormal);
        }
    }

    fn block_log_lik(&self, _k: usize, y: &[f64], _x: &[f64], _local: &[f64], global: &[f64]) -> f64 {
        let log_norm = -0.5 * (LN_2PI + self.obs_var.ln());
        let mut acc = 0.0;
        for (&yi, &th) in y.iter().zip(global.iter()) {
            let r = yi - th;
            acc += log_norm - r * r / (2.0 * self.obs_var);
        }
        acc
    }

    fn true_local_params(&self, _k: usize) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn true_global_params(&self) -> DVector<f64> {
        self.theta_true.clone()
    }
}
