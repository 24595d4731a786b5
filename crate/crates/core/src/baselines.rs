//! Comparison methods: EM and joint SGD on the squared loss.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::gating_probs_into;
use crate::error::{MoeError, Result};
use crate::losses::{l2_gradients_on, l2_value_on, llog_value, posterior, GatingContext, Rows, SIGMA_FLOOR};
use crate::metrics::{gating_error, regressor_error};
use crate::model::{Dataset, MoEParameters, NonlinearityKind};
use crate::optim::{draw_batch, project_omega, Record, TrainConfig, Trajectory};

/// Ridge added to every weighted normal system.
pub const EM_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub iterations: usize,
    pub gating_inner_steps: usize,
    pub gating_step_size: f64,
    pub radius_r: f64,
    /// Re-estimate the noise level in the M-step.
    pub estimate_sigma: bool,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { iterations: 50, gating_inner_steps: 5, gating_step_size: 0.5, radius_r: 1.0, estimate_sigma: false, seed: 0 }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.gating_inner_steps == 0 {
            return Err(MoeError::InvalidArgument("EM iteration counts must be positive".into()));
        }
        if !(self.gating_step_size >= 0.0) || !(self.radius_r > 0.0) {
            return Err(MoeError::InvalidArgument("EM step size must be >= 0 and radius > 0".into()));
        }
        Ok(())
    }
}

fn responsibilities(params: &MoEParameters, kind: NonlinearityKind, data: &Dataset) -> Array2<f64> {
    let k = params.k();
    let w = params.gating.as_standard_layout();
    let a = params.regressors.as_standard_layout();
    let mut r = Array2::zeros((data.len(), k));
    for n in 0..data.len() {
        let p = posterior(w.view(), a.view(), kind, data.x(n), data.y(n), params.noise_sigma);
        r.row_mut(n).assign(&ndarray::ArrayView1::from(&p));
    }
    r
}

/// Ascent direction `mean[(r_i - p_i(x)) x]` of the gating Q-function.
fn q_gradient(w: ArrayView2<f64>, resp: ArrayView2<f64>, data: &Dataset) -> Array2<f64> {
    let k = w.nrows() + 1;
    let d = data.dim();
    let w = w.as_standard_layout();
    let mut p = vec![0.0; k];
    let mut g = Array2::zeros((k - 1, d));
    for n in 0..data.len() {
        let x = data.x(n);
        gating_probs_into(w.view(), x, &mut p);
        for i in 0..k - 1 {
            let c = resp[[n, i]] - p[i];
            let mut row = g.row_mut(i);
            for (gv, xv) in row.iter_mut().zip(x) {
                *gv += c * xv;
            }
        }
    }
    g / data.len() as f64
}

/// One gradient-EM step on the gating rows: `Pi(W + alpha mean[(post - p) x])`.
pub fn gradient_em_step_gating(
    w: ArrayView2<f64>,
    a: ArrayView2<f64>,
    kind: NonlinearityKind,
    sigma: f64,
    data: &Dataset,
    alpha: f64,
    radius_r: f64,
) -> Result<Array2<f64>> {
    if data.is_empty() {
        return Err(MoeError::EmptyDataset);
    }
    if w.nrows() + 1 != a.nrows() || a.ncols() != data.dim() || (w.nrows() > 0 && w.ncols() != data.dim()) {
        return Err(MoeError::DimensionMismatch("gating, regressors and inputs disagree".into()));
    }
    let params = MoEParameters {
        regressors: a.to_owned(),
        gating: w.as_standard_layout().into_owned(),
        noise_sigma: sigma.max(SIGMA_FLOOR),
    };
    let resp = responsibilities(&params, kind, data);
    let g = q_gradient(w, resp.view(), data);
    Ok(project_omega((&w + &(g * alpha)).view(), radius_r))
}

/// One EM iteration for identity experts with the noise level held fixed.
///
/// Regressors get the exact posterior-weighted least-squares update; the
/// gating rows take `gating_inner_steps` projected ascent steps on the
/// Q-function with the responsibilities frozen.
pub fn em_step(params: &MoEParameters, data: &Dataset, kind: NonlinearityKind, cfg: &EmConfig) -> Result<MoEParameters> {
    if kind != NonlinearityKind::Identity {
        return Err(MoeError::Unsupported(format!("closed-form EM needs identity experts, got {kind}")));
    }
    cfg.validate()?;
    if data.is_empty() {
        return Err(MoeError::EmptyDataset);
    }
    if params.d() != data.dim() {
        return Err(MoeError::DimensionMismatch("parameter width differs from input width".into()));
    }
    let k = params.k();
    let d = data.dim();
    let mut working = params.clone();
    working.noise_sigma = params.noise_sigma.max(SIGMA_FLOOR);
    let resp = responsibilities(&working, kind, data);

    let mut a = Array2::zeros((k, d));
    for i in 0..k {
        let mut m = DMatrix::<f64>::identity(d, d) * EM_RIDGE;
        let mut b = DVector::<f64>::zeros(d);
        for n in 0..data.len() {
            let r = resp[[n, i]];
            if r == 0.0 {
                continue;
            }
            let x = data.x(n);
            for p in 0..d {
                let rx = r * x[p];
                b[p] += rx * data.y(n);
                for q in p..d {
                    m[(p, q)] += rx * x[q];
                }
            }
        }
        for p in 0..d {
            for q in 0..p {
                m[(p, q)] = m[(q, p)];
            }
        }
        let sol = m
            .cholesky()
            .ok_or_else(|| MoeError::Singular(format!("weighted normal equations of expert {i}")))?
            .solve(&b);
        for p in 0..d {
            a[[i, p]] = sol[p];
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(MoeError::NonFinite("EM regressor update"));
    }

    let mut sigma = params.noise_sigma;
    if cfg.estimate_sigma {
        let mut sse = 0.0;
        for n in 0..data.len() {
            let x = data.x(n);
            for i in 0..k {
                let pred: f64 = a.row(i).iter().zip(x).map(|(u, v)| u * v).sum();
                sse += resp[[n, i]] * (data.y(n) - pred).powi(2);
            }
        }
        sigma = (sse / data.len() as f64).sqrt().max(SIGMA_FLOOR);
    }

    let mut w = params.gating.as_standard_layout().into_owned();
    for _ in 0..cfg.gating_inner_steps {
        let g = q_gradient(w.view(), resp.view(), data);
        w = project_omega((&w + &(g * cfg.gating_step_size)).view(), cfg.radius_r);
    }
    Ok(MoEParameters { regressors: a, gating: w, noise_sigma: sigma })
}

fn metrics_of(a: ArrayView2<f64>, w: ArrayView2<f64>, truth: Option<&MoEParameters>) -> Result<(Option<f64>, Option<f64>)> {
    match truth {
        None => Ok((None, None)),
        Some(t) => {
            let m = regressor_error(a, t.regressors.view())?;
            let g = gating_error(w, t.gating.view(), &m.permutation)?;
            Ok((Some(m.error), Some(g)))
        }
    }
}

/// Runs `cfg.iterations` EM steps, recording the negative log-likelihood and,
/// with `truth`, both recovery errors after every step.
pub fn run_em(
    init: &MoEParameters,
    data: &Dataset,
    kind: NonlinearityKind,
    cfg: &EmConfig,
    truth: Option<&MoEParameters>,
) -> Result<(MoEParameters, Trajectory)> {
    cfg.validate()?;
    let mut params = init.clone();
    let mut traj = Trajectory::default();
    let record = |p: &MoEParameters, it: usize, traj: &mut Trajectory| -> Result<()> {
        let ctx = GatingContext::new(p.regressors.clone(), kind, p.noise_sigma, cfg.radius_r)?;
        let loss = llog_value(p.gating.view(), &ctx, data)?;
        let (metric, gating_metric) = metrics_of(p.regressors.view(), p.gating.view(), truth)?;
        traj.push(Record { iter: it, loss, metric, param_distance: None, gating_metric })
    };
    record(&params, 0, &mut traj)?;
    for it in 1..=cfg.iterations {
        params = em_step(&params, data, kind, cfg)?;
        record(&params, it, &mut traj)?;
    }
    Ok((params, traj))
}

/// Simultaneous minibatch SGD on the squared loss over regressors and gating.
pub fn l2_joint_sgd(
    a0: ArrayView2<f64>,
    w0: ArrayView2<f64>,
    data: &Dataset,
    kind: NonlinearityKind,
    cfg: &TrainConfig,
    truth: Option<&MoEParameters>,
) -> Result<(Array2<f64>, Array2<f64>, Trajectory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(MoeError::EmptyDataset);
    }
    let n = data.len();
    let full = cfg.batch_size >= n;
    let mut a = a0.as_standard_layout().into_owned();
    let mut w = w0.as_standard_layout().into_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx = Vec::with_capacity(cfg.batch_size);
    let mut traj = Trajectory::default();
    for it in 0..cfg.iterations {
        let rows = if full {
            Rows::All
        } else {
            draw_batch(&mut rng, n, cfg.batch_size, &mut idx);
            Rows::Indices(&idx)
        };
        if it % cfg.record_every == 0 {
            let loss = l2_value_on(a.view(), w.view(), data, kind, rows.clone())?;
            let (metric, gating_metric) = metrics_of(a.view(), w.view(), truth)?;
            traj.push(Record { iter: it, loss, metric, param_distance: None, gating_metric })?;
        }
        let (ga, gw) = l2_gradients_on(a.view(), w.view(), data, kind, rows)?;
        a.scaled_add(-cfg.learning_rate, &ga);
        w.scaled_add(-cfg.learning_rate, &gw);
        if a.iter().chain(w.iter()).any(|v| !v.is_finite()) {
            return Err(MoeError::NonFinite("squared-loss SGD diverged"));
        }
    }
    let loss = l2_value_on(a.view(), w.view(), data, kind, Rows::Range(0..n.min(cfg.batch_size)))?;
    let (metric, gating_metric) = metrics_of(a.view(), w.view(), truth)?;
    traj.push(Record { iter: cfg.iterations, loss, metric, param_distance: None, gating_metric })?;
    Ok((a, w, traj))
}
