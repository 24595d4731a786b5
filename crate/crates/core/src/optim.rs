//! Gradient drivers for the regressor and gating stages.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MoeError, Result};
use crate::losses::{l4_value_and_gradient_on, llog_gradient_w_on, llog_value_on, GatingContext, L4Context, Rows};
use crate::metrics::{gating_error, regressor_error};
use crate::model::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Number of disjoint chunks the data is split into, one per step.
    pub split_t: Option<usize>,
    pub record_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, batch_size: 1024, iterations: 1000, split_t: None, record_every: 10, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(MoeError::InvalidArgument(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(MoeError::InvalidArgument("batch size must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(MoeError::InvalidArgument("record_every must be positive".into()));
        }
        if let Some(t) = self.split_t {
            if t == 0 || t > self.iterations.max(1) {
                return Err(MoeError::InvalidArgument(format!("split count {t} must lie in 1..={}", self.iterations)));
            }
        }
        Ok(())
    }

    fn records_at(&self, it: usize) -> bool {
        it % self.record_every == 0 || it == self.iterations
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub iter: usize,
    pub loss: f64,
    pub metric: Option<f64>,
    pub param_distance: Option<f64>,
    pub gating_metric: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<Record>,
}

impl Trajectory {
    /// Appends a record; iteration numbers must strictly increase.
    pub fn push(&mut self, rec: Record) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.iter <= last.iter {
                return Err(MoeError::InvalidArgument(format!("iteration {} after {}", rec.iter, last.iter)));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    pub fn final_metric(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.metric)
    }

    pub fn final_distance(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.param_distance)
    }
}

/// Rescales every row with norm above `radius` onto the sphere of that radius.
///
/// Rows already within a few ulps of the sphere are left alone, which keeps
/// the map idempotent under rounding.
pub fn project_omega(w: ArrayView2<f64>, radius: f64) -> Array2<f64> {
    let mut out = w.to_owned();
    for mut r in out.rows_mut() {
        let n = r.dot(&r).sqrt();
        if n > radius * (1.0 + 4.0 * f64::EPSILON) {
            r *= radius / n;
        }
    }
    out
}

/// Largest row norm of `a - b`.
pub fn max_row_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    (&a - &b).rows().into_iter().map(|r| r.dot(&r).sqrt()).fold(0.0, f64::max)
}

pub(crate) fn draw_batch(rng: &mut ChaCha8Rng, n: usize, size: usize, buf: &mut Vec<usize>) {
    buf.clear();
    buf.extend((0..size).map(|_| rng.random_range(0..n)));
}

/// Minibatch SGD on the quartic loss.
///
/// Batches are drawn with replacement; a batch at least as large as the
/// data uses every sample. With `truth`, the regressor error is recorded.
pub fn sgd_l4(
    a0: ArrayView2<f64>,
    data: &Dataset,
    ctx: &L4Context,
    cfg: &TrainConfig,
    truth: Option<ArrayView2<f64>>,
) -> Result<(Array2<f64>, Trajectory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(MoeError::EmptyDataset);
    }
    let n = data.len();
    let mut a = a0.as_standard_layout().into_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut traj = Trajectory::default();
    let mut idx = Vec::with_capacity(cfg.batch_size);
    let full = cfg.batch_size >= n;
    let metric = |a: &Array2<f64>| -> Result<Option<f64>> {
        truth.map(|t| regressor_error(a.view(), t).map(|m| m.error)).transpose()
    };
    for it in 0..cfg.iterations {
        let rows = if full {
            Rows::All
        } else {
            draw_batch(&mut rng, n, cfg.batch_size, &mut idx);
            Rows::Indices(&idx)
        };
        let (loss, g) = l4_value_and_gradient_on(a.view(), data, ctx, rows)?;
        if !loss.is_finite() {
            return Err(MoeError::NonFinite("quartic loss diverged"));
        }
        if cfg.records_at(it) {
            traj.push(Record { iter: it, loss, metric: metric(&a)?, param_distance: None, gating_metric: None })?;
        }
        a.scaled_add(-cfg.learning_rate, &g);
    }
    let (loss, _) = l4_value_and_gradient_on(a.view(), data, ctx, if full { Rows::All } else { Rows::Range(0..n.min(cfg.batch_size)) })?;
    traj.push(Record { iter: cfg.iterations, loss, metric: metric(&a)?, param_distance: None, gating_metric: None })?;
    Ok((a, traj))
}

/// Projected gradient descent on the gating log-likelihood with the
/// regressors held fixed.
///
/// With `split_t = T`, the data is cut into `T` chunks of `n / T` samples
/// and step `t` uses chunk `t mod T`; otherwise every step is full-batch.
/// With `truth` (in the same expert order as `ctx`), the largest row distance
/// and the gating error against it are recorded.
pub fn projected_gd_gating(
    w0: ArrayView2<f64>,
    ctx: &GatingContext,
    data: &Dataset,
    cfg: &TrainConfig,
    truth: Option<ArrayView2<f64>>,
) -> Result<(Array2<f64>, Trajectory)> {
    cfg.validate()?;
    let n = data.len();
    let chunk = match cfg.split_t {
        Some(t) if n < t => {
            return Err(MoeError::InvalidArgument(format!("{n} samples cannot be split into {t} chunks")));
        }
        Some(t) => Some(n / t),
        None => None,
    };
    let rows_at = |t: usize| match (chunk, cfg.split_t) {
        (Some(c), Some(tt)) => {
            let s = (t % tt) * c;
            Rows::Range(s..s + c)
        }
        _ => Rows::All,
    };
    let mut w = project_omega(w0, ctx.radius_r);
    let mut traj = Trajectory::default();
    let identity: Vec<usize> = (0..ctx.k()).collect();
    let dist = |w: &Array2<f64>| truth.map(|t| max_row_distance(w.view(), t));
    let gerr = |w: &Array2<f64>| truth.map(|t| gating_error(w.view(), t, &identity)).transpose();
    for it in 0..cfg.iterations {
        let rows = rows_at(it);
        if cfg.records_at(it) {
            let loss = llog_value_on(w.view(), ctx, data, rows.clone())?;
            traj.push(Record { iter: it, loss, metric: None, param_distance: dist(&w), gating_metric: gerr(&w)? })?;
        }
        let g = llog_gradient_w_on(w.view(), ctx, data, rows)?;
        w.scaled_add(-cfg.learning_rate, &g);
        w = project_omega(w.view(), ctx.radius_r);
    }
    let loss = llog_value_on(w.view(), ctx, data, rows_at(cfg.iterations))?;
    traj.push(Record { iter: cfg.iterations, loss, metric: None, param_distance: dist(&w), gating_metric: gerr(&w)? })?;
    Ok((w, traj))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub ratios: Vec<f64>,
    /// Geometric mean of the first ten ratios.
    pub summary: f64,
}

/// Successive ratios of recorded parameter distances; a zero denominator
/// yields a ratio of 0.
pub fn contraction_diagnostic(traj: &Trajectory) -> Result<ContractionReport> {
    let d: Vec<f64> = traj.records.iter().filter_map(|r| r.param_distance).collect();
    if d.len() < 2 {
        return Err(MoeError::InvalidArgument("need at least two recorded distances".into()));
    }
    let ratios: Vec<f64> = d.windows(2).map(|p| if p[0] == 0.0 { 0.0 } else { p[1] / p[0] }).collect();
    let head = &ratios[..ratios.len().min(10)];
    let summary = if head.iter().any(|r| *r == 0.0) {
        0.0
    } else {
        (head.iter().map(|r| r.ln()).sum::<f64>() / head.len() as f64).exp()
    };
    Ok(ContractionReport { ratios, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, InputDistribution};
    use crate::model::{ground_truth_paper_instance, init_random, NonlinearityKind, RegularizationConfig};
    use crate::transforms::NonlinearityProfile;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn projection_examples() {
        let w = array![[2.0, 0.0], [0.3, 0.4]];
        let p = project_omega(w.view(), 1.0);
        assert_eq!(p, array![[1.0, 0.0], [0.3, 0.4]]);
    }

    proptest! {
        #[test]
        fn projection_idempotent(v in proptest::collection::vec(-3.0f64..3.0, 6), r in 0.1f64..2.0) {
            let w = Array2::from_shape_vec((2, 3), v).unwrap();
            let p = project_omega(w.view(), r);
            prop_assert_eq!(project_omega(p.view(), r), p.clone());
            for row in p.rows() {
                prop_assert!(row.dot(&row).sqrt() <= r + 1e-12);
            }
        }
    }

    fn setup(n: usize) -> (crate::model::MoEParameters, Dataset, L4Context) {
        let truth = ground_truth_paper_instance(3, 10).unwrap();
        let data = generate_dataset(&truth, NonlinearityKind::Identity, &InputDistribution::StandardGaussian, n, 7, false, 1).unwrap();
        let prof = NonlinearityProfile::new(NonlinearityKind::Identity, 0.05).unwrap();
        let ctx = L4Context::new(prof, RegularizationConfig::default(), &data);
        (truth, data, ctx)
    }

    #[test]
    fn zero_rate_is_noop() {
        let (truth, data, ctx) = setup(2000);
        let a0 = init_random(3, 10, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().regressors;
        let cfg = TrainConfig { learning_rate: 0.0, batch_size: 64, iterations: 20, ..Default::default() };
        let (a, traj) = sgd_l4(a0.view(), &data, &ctx, &cfg, Some(truth.regressors.view())).unwrap();
        assert_eq!(a, a0);
        assert_eq!(traj.records.first().unwrap().iter, 0);
        assert_eq!(traj.last().unwrap().iter, 20);
        assert!(traj.records.windows(2).all(|p| p[0].iter < p[1].iter));

        let gctx = GatingContext::new(truth.regressors.clone(), NonlinearityKind::Identity, 0.05, 1.0).unwrap();
        let w0 = array![[0.1; 10], [0.0; 10]];
        let (w, _) = projected_gd_gating(w0.view(), &gctx, &data, &cfg, None).unwrap();
        assert_eq!(w, w0);
    }

    #[test]
    fn sgd_is_deterministic() {
        let (truth, data, ctx) = setup(2000);
        let a0 = init_random(3, 10, 1.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap().regressors;
        let cfg = TrainConfig { learning_rate: 0.005, batch_size: 128, iterations: 30, seed: 4, ..Default::default() };
        let r1 = sgd_l4(a0.view(), &data, &ctx, &cfg, Some(truth.regressors.view())).unwrap();
        let r2 = sgd_l4(a0.view(), &data, &ctx, &cfg, Some(truth.regressors.view())).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn gating_iterates_stay_in_ball_and_splitting_checks() {
        let (truth, data, _) = setup(1000);
        let gctx = GatingContext::new(truth.regressors.clone(), NonlinearityKind::Identity, 0.05, 1.0).unwrap();
        let w0 = Array2::zeros((2, 10));
        let cfg = TrainConfig { learning_rate: 5.0, iterations: 10, split_t: Some(5), record_every: 1, ..Default::default() };
        let (w, traj) = projected_gd_gating(w0.view(), &gctx, &data, &cfg, Some(truth.gating.view())).unwrap();
        assert!(w.rows().into_iter().all(|r| r.dot(&r).sqrt() <= 1.0 + 1e-12));
        assert_eq!(traj.records.len(), 11);
        let small = data.select(&[0, 1, 2]);
        let cfg = TrainConfig { split_t: Some(5), iterations: 5, ..Default::default() };
        assert!(projected_gd_gating(w0.view(), &gctx, &small, &cfg, None).is_err());
    }

    fn traj_of(d: &[f64]) -> Trajectory {
        Trajectory {
            records: d
                .iter()
                .enumerate()
                .map(|(i, &v)| Record { iter: i, loss: 0.0, metric: None, param_distance: Some(v), gating_metric: None })
                .collect(),
        }
    }

    #[test]
    fn contraction_examples() {
        let geo: Vec<f64> = (0..15).map(|t| 0.5f64.powi(t)).collect();
        let r = contraction_diagnostic(&traj_of(&geo)).unwrap();
        assert!(r.ratios.iter().all(|v| (v - 0.5).abs() < 1e-15));
        assert!((r.summary - 0.5).abs() < 1e-14);
        let r = contraction_diagnostic(&traj_of(&[2.0; 5])).unwrap();
        assert!(r.ratios.iter().all(|v| *v == 1.0));
        let r = contraction_diagnostic(&traj_of(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(r.ratios, vec![0.0, 0.0]);
        assert!(contraction_diagnostic(&traj_of(&[1.0])).is_err());
    }

    #[test]
    fn trajectory_rejects_out_of_order() {
        let mut t = Trajectory::default();
        let rec = Record { iter: 3, loss: 0.0, metric: None, param_distance: None, gating_metric: None };
        t.push(rec).unwrap();
        assert!(t.push(rec).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { split_t: Some(2000), ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
