use ndarray::{Array2, ArrayView2};

use super::Rows;
use crate::error::{MoeError, Result};
use crate::model::{dot, Dataset, NonlinearityKind};

/// Smallest noise level accepted by the likelihood.
pub const SIGMA_FLOOR: f64 = 1e-8;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Fixed regressors and noise model for the gating stage.
#[derive(Debug, Clone)]
pub struct GatingContext {
    pub regressors: Array2<f64>,
    pub kind: NonlinearityKind,
    pub sigma: f64,
    pub radius_r: f64,
}

impl GatingContext {
    /// `sigma` is raised to [`SIGMA_FLOOR`] when smaller.
    pub fn new(regressors: Array2<f64>, kind: NonlinearityKind, sigma: f64, radius_r: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(MoeError::InvalidArgument(format!("sigma {sigma} must be finite and >= 0")));
        }
        if !(radius_r > 0.0) {
            return Err(MoeError::InvalidArgument(format!("radius {radius_r} must be positive")));
        }
        Ok(Self {
            regressors: regressors.as_standard_layout().into_owned(),
            kind,
            sigma: sigma.max(SIGMA_FLOOR),
            radius_r,
        })
    }

    pub fn k(&self) -> usize {
        self.regressors.nrows()
    }

    fn check(&self, w: ArrayView2<f64>, data: &Dataset, rows: &Rows) -> Result<()> {
        if w.nrows() + 1 != self.k() || (w.nrows() > 0 && w.ncols() != data.dim()) {
            return Err(MoeError::DimensionMismatch(format!(
                "gating {}x{} does not fit k={} experts in d={}",
                w.nrows(),
                w.ncols(),
                self.k(),
                data.dim()
            )));
        }
        if self.regressors.ncols() != data.dim() {
            return Err(MoeError::DimensionMismatch("regressor width differs from input width".into()));
        }
        if rows.count(data.len()) == 0 {
            return Err(MoeError::EmptyDataset);
        }
        Ok(())
    }
}

/// Writes `log p_i(x) + log N(y | g(a_i.x), sigma^2)` into `log_joint` and
/// `p_i(x)` into `prior`; returns the log-sum-exp of `log_joint`.
#[inline]
fn log_joint_into(
    w: ArrayView2<f64>,
    a: ArrayView2<f64>,
    kind: NonlinearityKind,
    sigma: f64,
    x: &[f64],
    y: f64,
    prior: &mut [f64],
    log_joint: &mut [f64],
) -> f64 {
    let k = a.nrows();
    let mut max_logit = 0.0f64;
    for i in 0..k - 1 {
        let l = dot(w.row(i).to_slice().expect("standard layout"), x);
        prior[i] = l;
        max_logit = max_logit.max(l);
    }
    prior[k - 1] = 0.0;
    let mut z = 0.0;
    for p in prior.iter() {
        z += (p - max_logit).exp();
    }
    let log_norm = max_logit + z.ln();
    let inv_var = 1.0 / (sigma * sigma);
    let log_sigma = sigma.ln();
    let mut max_j = f64::NEG_INFINITY;
    for i in 0..k {
        let log_p = prior[i] - log_norm;
        prior[i] = log_p.exp();
        let mean = kind.eval(dot(a.row(i).to_slice().expect("standard layout"), x));
        let r = y - mean;
        log_joint[i] = log_p - HALF_LN_2PI - log_sigma - 0.5 * r * r * inv_var;
        max_j = max_j.max(log_joint[i]);
    }
    let mut s = 0.0;
    for v in log_joint.iter() {
        s += (v - max_j).exp();
    }
    max_j + s.ln()
}

/// Posterior responsibility `P(z = i | x, y)` under gating `w` and regressors `a`.
pub fn posterior(
    w: ArrayView2<f64>,
    a: ArrayView2<f64>,
    kind: NonlinearityKind,
    x: &[f64],
    y: f64,
    sigma: f64,
) -> Vec<f64> {
    let w = w.as_standard_layout();
    let a = a.as_standard_layout();
    let k = a.nrows();
    let mut prior = vec![0.0; k];
    let mut lj = vec![0.0; k];
    let lse = log_joint_into(w.view(), a.view(), kind, sigma.max(SIGMA_FLOOR), x, y, &mut prior, &mut lj);
    lj.iter().map(|v| (v - lse).exp()).collect()
}

pub fn llog_value(w: ArrayView2<f64>, ctx: &GatingContext, data: &Dataset) -> Result<f64> {
    llog_value_on(w, ctx, data, Rows::All)
}

pub fn llog_value_on(w: ArrayView2<f64>, ctx: &GatingContext, data: &Dataset, rows: Rows) -> Result<f64> {
    Ok(pass(w, ctx, data, rows, false)?.0)
}

pub fn llog_gradient_w(w: ArrayView2<f64>, ctx: &GatingContext, data: &Dataset) -> Result<Array2<f64>> {
    llog_gradient_w_on(w, ctx, data, Rows::All)
}

/// `-mean[(posterior_i - p_i(x)) x]` for the k-1 free gating rows.
pub fn llog_gradient_w_on(w: ArrayView2<f64>, ctx: &GatingContext, data: &Dataset, rows: Rows) -> Result<Array2<f64>> {
    Ok(pass(w, ctx, data, rows, true)?.1)
}

fn pass(w: ArrayView2<f64>, ctx: &GatingContext, data: &Dataset, rows: Rows, grad: bool) -> Result<(f64, Array2<f64>)> {
    ctx.check(w, data, &rows)?;
    let w = w.as_standard_layout();
    let k = ctx.k();
    let d = data.dim();
    let mut prior = vec![0.0; k];
    let mut lj = vec![0.0; k];
    let mut nll = 0.0;
    let mut g = Array2::<f64>::zeros((k - 1, d));
    rows.for_each(data.len(), |n| {
        let x = data.x(n);
        let lse = log_joint_into(w.view(), ctx.regressors.view(), ctx.kind, ctx.sigma, x, data.y(n), &mut prior, &mut lj);
        nll -= lse;
        if grad {
            for i in 0..k - 1 {
                let coef = (lj[i] - lse).exp() - prior[i];
                let mut row = g.row_mut(i);
                let row = row.as_slice_mut().expect("standard layout");
                for (r, xv) in row.iter_mut().zip(x) {
                    *r -= coef * xv;
                }
            }
        }
    });
    let inv = 1.0 / rows.count(data.len()) as f64;
    Ok((nll * inv, g * inv))
}
