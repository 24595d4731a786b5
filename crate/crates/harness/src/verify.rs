//! Oracle suites with fixed seeds. Every check reports its measured value
//! next to the tolerance it is held to.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use moe_core::baselines::gradient_em_step_gating;
use moe_core::datagen::{generate_dataset, InputDistribution};
use moe_core::gru_bridge::max_equivalence_gap;
use moe_core::losses::{
    expected_gating, l2_gradients, l2_value, l4_gradient, l4_population_oracle, l4_value, l4_value_jackknife,
    llog_gradient_w, llog_value, GatingContext, L4Context,
};
use moe_core::model::{ground_truth_paper_instance, init_random};
use moe_core::optim::{contraction_diagnostic, projected_gd_gating, TrainConfig};
use moe_core::transforms::{
    check_validity, q2, q4, score_s2, score_s4, t1, t1_numerator, t2, NonlinearityProfile, Tensor4,
};
use moe_core::{Dataset, MoEParameters, NonlinearityKind, RegularizationConfig};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Tensor,
    Gradients,
    Gru,
    Coeffs,
    Contraction,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Tensor, Suite::Gradients, Suite::Gru, Suite::Coeffs, Suite::Contraction];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Tensor => "tensor",
            Suite::Gradients => "gradients",
            Suite::Gru => "gru",
            Suite::Coeffs => "coeffs",
            Suite::Contraction => "contraction",
        }
    }
}

impl FromStr for Suite {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| HarnessError::Config(format!("unknown suite '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    AtMost,
    Below,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub bound: Bound,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: f64, bound: Bound, tolerance: f64) -> Self {
        Self { name: name.into(), measured, tolerance, bound }
    }

    pub fn passed(&self) -> bool {
        match self.bound {
            Bound::AtMost => self.measured <= self.tolerance,
            Bound::Below => self.measured < self.tolerance,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.bound {
            Bound::AtMost => "<=",
            Bound::Below => "<",
        };
        write!(
            f,
            "[{}] {}: measured {:.3e} (required {op} {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "suite {}", self.suite.name())?;
        for c in &self.checks {
            writeln!(f, "  {c}")?;
        }
        Ok(())
    }
}

pub fn run_verification(suite: Suite) -> Result<Report> {
    let checks = match suite {
        Suite::Tensor => {
            let (t4, t2) = tensor_oracle(1_000_000, 1_000_000)?;
            vec![t4, t2, loss_form_equivalence(10, 1_000_000)?, transform_identities(1000)?]
        }
        Suite::Gradients => gradient_checks(20)?,
        Suite::Gru => vec![gru_equivalence(1000)?],
        Suite::Coeffs => coefficient_checks()?,
        Suite::Contraction => {
            let (ratio, distance) = contraction(100_000, 50)?;
            vec![fixed_point(100_000)?, ratio, distance, gradient_em_identity(10)?]
        }
    };
    Ok(Report { suite, checks })
}

fn instance_data(k: usize, d: usize, n: usize, seed: u64, kind: NonlinearityKind) -> Result<(MoEParameters, Dataset)> {
    let truth = ground_truth_paper_instance(k, d)?;
    let data = generate_dataset(&truth, kind, &InputDistribution::StandardGaussian, n, seed, false, 1)?;
    Ok((truth, data))
}

fn rel_frobenius(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Empirical `mean[Q4(y) S4(x)]` and `mean[Q2(y) S2(x)]` against the
/// population tensors built from Monte-Carlo gating means.
pub fn tensor_oracle(n: usize, n_mc: usize) -> Result<(Check, Check)> {
    let (k, d, sigma) = (2, 4, 0.05);
    let (truth, data) = instance_data(k, d, n, 101, NonlinearityKind::Identity)?;
    let prof = NonlinearityProfile::new(NonlinearityKind::Identity, sigma)?;
    let mut emp4 = Tensor4::zeros(d);
    let mut emp2 = Array2::<f64>::zeros((d, d));
    for i in 0..data.len() {
        let (x, y) = (data.x(i), data.y(i));
        emp4.add_scaled(&score_s4(x)?, q4(y, &prof.coeffs));
        emp2.scaled_add(q2(y, &prof.coeffs), &score_s2(x));
    }
    emp4.scale(1.0 / n as f64);
    emp2 /= n as f64;
    let pi = expected_gating(truth.gating.view(), k, n_mc, &mut ChaCha8Rng::seed_from_u64(102));
    let mut pop4 = Tensor4::zeros(d);
    let mut pop2 = Array2::<f64>::zeros((d, d));
    for (m, row) in truth.regressors.rows().into_iter().enumerate() {
        let a = row.to_slice().expect("row-major");
        pop4.add_rank_one(a, prof.constants.c4 * pi[m]);
        let outer = Array2::from_shape_fn((d, d), |(i, j)| a[i] * a[j]);
        pop2.scaled_add(prof.constants.c2 * pi[m], &outer);
    }
    let e4 = rel_frobenius(emp4.as_slice(), pop4.as_slice());
    let e2 = rel_frobenius(emp2.as_slice().expect("standard"), pop2.as_slice().expect("standard"));
    Ok((
        Check::new("fourth-order moment tensor, relative Frobenius error", e4, Bound::AtMost, 0.05),
        Check::new("second-order moment tensor, relative Frobenius error", e2, Bound::AtMost, 0.02),
    ))
}

/// Largest `|L4(A) - population L4(A)|` in jackknife standard errors over
/// `trials` random regressor matrices.
pub fn loss_form_equivalence(trials: usize, n: usize) -> Result<Check> {
    let (truth, data) = instance_data(3, 10, n, 103, NonlinearityKind::Identity)?;
    let reg = RegularizationConfig::default();
    let ctx = L4Context::new(NonlinearityProfile::new(NonlinearityKind::Identity, truth.noise_sigma)?, reg, &data);
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let a = init_random(3, 10, 1.0, &mut rng)?.regressors;
        let (v, se) = l4_value_jackknife(a.view(), &data, &ctx, 50)?;
        let oracle = l4_population_oracle(a.view(), &truth, n, &mut ChaCha8Rng::seed_from_u64(200 + t as u64), &reg)?;
        worst = worst.max((v - oracle).abs() / se);
    }
    Ok(Check::new(
        format!("sample vs population quartic loss on {trials} random A, in standard errors"),
        worst,
        Bound::AtMost,
        3.0,
    ))
}

/// `t1(u,u,x) = t2(u,x)` and `S4(x)(u,u,v,v) = t1 numerator`, errors scaled
/// by `max(1, |value|)`.
pub fn transform_identities(draws: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let d = rng.random_range(1..=6);
        let mut vec = || -> Vec<f64> { (0..d).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (u, v) = (vec(), vec());
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c4 = 24.0;
        let lhs = t1(&u, &u, &x, c4);
        let rhs = t2(&u, &x, c4);
        worst = worst.max((lhs - rhs).abs() / rhs.abs().max(1.0));
        let s4 = score_s4(&x)?.contract(&u, &u, &v, &v);
        let num = t1_numerator(&u, &v, &x);
        worst = worst.max((s4 - num).abs() / num.abs().max(1.0));
    }
    Ok(Check::new(format!("transform identities over {draws} draws"), worst, Bound::AtMost, 1e-12))
}

fn max_abs(a: ArrayView2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn rel_err(analytic: ArrayView2<f64>, fd: ArrayView2<f64>) -> f64 {
    max_abs((&analytic - &fd).view()) / max_abs(analytic).max(1e-8)
}

fn central_difference<F: Fn(ArrayView2<f64>) -> Result<f64>>(p: ArrayView2<f64>, f: F, h: f64) -> Result<Array2<f64>> {
    let mut g = Array2::zeros(p.raw_dim());
    let mut q = p.to_owned();
    for idx in 0..p.len() {
        let (i, j) = (idx / p.ncols(), idx % p.ncols());
        let orig = q[[i, j]];
        q[[i, j]] = orig + h;
        let up = f(q.view())?;
        q[[i, j]] = orig - h;
        let down = f(q.view())?;
        q[[i, j]] = orig;
        g[[i, j]] = (up - down) / (2.0 * h);
    }
    Ok(g)
}

/// Analytic against central-difference gradients of the three losses.
pub fn gradient_checks(instances: usize) -> Result<Vec<Check>> {
    let (k, d) = (3, 10);
    let kind = NonlinearityKind::Identity;
    let (truth, data) = instance_data(k, d, 2000, 106, kind)?;
    let ctx4 = L4Context::new(NonlinearityProfile::new(kind, truth.noise_sigma)?, RegularizationConfig::default(), &data);
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let (mut e4, mut elog, mut el2) = (0.0f64, 0.0f64, 0.0f64);
    let h = 1e-5;
    for _ in 0..instances {
        let p = init_random(k, d, 1.0, &mut rng)?;
        let a = &p.regressors;
        let w = &p.gating;

        let an = l4_gradient(a.view(), &data, &ctx4)?;
        let fd = central_difference(a.view(), |x| Ok(l4_value(x, &data, &ctx4)?), h)?;
        e4 = e4.max(rel_err(an.view(), fd.view()));

        let gctx = GatingContext::new(a.clone(), kind, 0.5, 10.0)?;
        let an = llog_gradient_w(w.view(), &gctx, &data)?;
        let fd = central_difference(w.view(), |x| Ok(llog_value(x, &gctx, &data)?), h)?;
        elog = elog.max(rel_err(an.view(), fd.view()));

        let (ga, gw) = l2_gradients(a.view(), w.view(), &data, kind)?;
        let fa = central_difference(a.view(), |x| Ok(l2_value(x, w.view(), &data, kind)?), h)?;
        let fw = central_difference(w.view(), |x| Ok(l2_value(a.view(), x, &data, kind)?), h)?;
        el2 = el2.max(rel_err(ga.view(), fa.view())).max(rel_err(gw.view(), fw.view()));
    }
    let name = |loss: &str| format!("{loss} gradient vs central differences, {instances} instances");
    Ok(vec![
        Check::new(name("quartic loss (A)"), e4, Bound::AtMost, 1e-5),
        Check::new(name("gating log-likelihood (W)"), elog, Bound::AtMost, 1e-5),
        Check::new(name("squared loss (A, W)"), el2, Bound::AtMost, 1e-5),
    ])
}

/// Binary-gated GRU step against the hierarchical mixture on random
/// instances for several activations.
pub fn gru_equivalence(trials: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let mut worst = 0.0f64;
    for kind in [NonlinearityKind::Identity, NonlinearityKind::Relu, NonlinearityKind::Sigmoid] {
        worst = worst.max(max_equivalence_gap(trials, 8, 6, kind, &mut rng)?);
    }
    Ok(Check::new(format!("GRU step vs hierarchical mixture, {trials} instances per activation"), worst, Bound::AtMost, 0.0))
}

pub fn coefficient_checks() -> Result<Vec<Check>> {
    let mut id_err = 0.0f64;
    for sigma in [0.0, 0.05, 0.5, 1.0] {
        let c = NonlinearityProfile::new(NonlinearityKind::Identity, sigma)?.coeffs;
        let expect = [0.0, -6.0 * (1.0 + sigma * sigma), 0.0, 0.0];
        for (got, want) in [c.alpha, c.beta, c.gamma, c.delta_q].iter().zip(expect) {
            id_err = id_err.max((got - want).abs());
        }
    }
    let relu = NonlinearityProfile::new(NonlinearityKind::Relu, 0.05)?;
    let dq = (relu.coeffs.delta_q + 2.0 * (2.0 / std::f64::consts::PI).sqrt()).abs();
    let mut resid = 0.0f64;
    for kind in [NonlinearityKind::Relu, NonlinearityKind::Sigmoid, NonlinearityKind::LeakyRelu(0.2)] {
        let rep = check_validity(&NonlinearityProfile::new(kind, 0.05)?);
        resid = rep.cond1_residuals.iter().fold(resid, |m, v| m.max(v.abs())).max(rep.cond2_residual.abs());
    }
    Ok(vec![
        Check::new("identity coefficients vs closed form", id_err, Bound::AtMost, 1e-12),
        Check::new("ReLU linear output coefficient vs closed form", dq, Bound::AtMost, 1e-12),
        Check::new("coefficient system residuals (ReLU, sigmoid, leaky ReLU)", resid, Bound::AtMost, 1e-10),
    ])
}

/// Largest gating-gradient entry at the true parameters.
pub fn fixed_point(n: usize) -> Result<Check> {
    let (truth, data) = instance_data(3, 10, n, 109, NonlinearityKind::Identity)?;
    let ctx = GatingContext::new(truth.regressors.clone(), NonlinearityKind::Identity, truth.noise_sigma, 1.0)?;
    let g = llog_gradient_w(truth.gating.view(), &ctx, &data)?;
    Ok(Check::new("gating gradient at the truth, max entry", max_abs(g.view()), Bound::AtMost, 0.05))
}

/// Full-batch projected descent from a random start with the true
/// regressors: geometric-mean ratio of the first ten steps and the final
/// distance.
pub fn contraction(n: usize, steps: usize) -> Result<(Check, Check)> {
    let (truth, data) = instance_data(3, 10, n, 110, NonlinearityKind::Identity)?;
    let ctx = GatingContext::new(truth.regressors.clone(), NonlinearityKind::Identity, truth.noise_sigma, 1.0)?;
    let w0 = init_random(3, 10, 1.0, &mut ChaCha8Rng::seed_from_u64(111))?.gating;
    let cfg = TrainConfig { learning_rate: 2.0, batch_size: n, iterations: steps, split_t: None, record_every: 1, seed: 0 };
    let (_, traj) = projected_gd_gating(w0.view(), &ctx, &data, &cfg, Some(truth.gating.view()))?;
    let rep = contraction_diagnostic(&traj)?;
    let last = traj.final_distance().unwrap_or(f64::INFINITY);
    Ok((
        Check::new("geometric-mean contraction ratio, first 10 steps", rep.summary, Bound::Below, 1.0),
        Check::new(format!("gating distance after {steps} steps"), last, Bound::AtMost, 0.05),
    ))
}

/// One gradient-EM gating step against one projected descent step.
pub fn gradient_em_identity(instances: usize) -> Result<Check> {
    let kind = NonlinearityKind::Identity;
    let (_, data) = instance_data(3, 10, 2000, 112, kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(113);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let p = init_random(3, 10, 1.0, &mut rng)?;
        let sigma = rng.random_range(0.05..1.0);
        let alpha = rng.random_range(0.1..1.0);
        let em = gradient_em_step_gating(p.gating.view(), p.regressors.view(), kind, sigma, &data, alpha, 1.0)?;
        let ctx = GatingContext::new(p.regressors.clone(), kind, sigma, 1.0)?;
        let cfg = TrainConfig { learning_rate: alpha, batch_size: data.len(), iterations: 1, ..TrainConfig::default() };
        let (gd, _) = projected_gd_gating(p.gating.view(), &ctx, &data, &cfg, None)?;
        worst = worst.max(max_abs((&em - &gd).view()));
    }
    Ok(Check::new(format!("gradient-EM step vs projected descent step, {instances} instances"), worst, Bound::AtMost, 1e-10))
}
