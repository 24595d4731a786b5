use moe_core::datagen::{gating_probs, generate_dataset, InputDistribution};
use moe_core::losses::{
    l4_population_oracle, l4_value, l4_value_jackknife, llog_gradient_w, llog_value_on, GatingContext, L4Context, Rows,
};
use moe_core::model::{ground_truth_paper_instance, init_random, Dataset, MoEParameters, NonlinearityKind, RegularizationConfig};
use moe_core::optim::{projected_gd_gating, sgd_l4, TrainConfig};
use moe_core::transforms::{q4, score_s2, score_s4, t1, t2, NonlinearityProfile};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn instance(n: usize, seed: u64) -> (MoEParameters, Dataset) {
    let truth = ground_truth_paper_instance(3, 10).unwrap();
    let data = generate_dataset(&truth, NonlinearityKind::Identity, &InputDistribution::StandardGaussian, n, seed, false, 1).unwrap();
    (truth, data)
}

#[test]
fn score_tensors_have_zero_mean() {
    let d = 3;
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut m2 = Array2::<f64>::zeros((d, d));
    let mut m4 = vec![0.0; d * d * d * d];
    let mut x = vec![0.0; d];
    for _ in 0..n {
        for v in x.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        m2 += &score_s2(&x);
        for (acc, v) in m4.iter_mut().zip(score_s4(&x).unwrap().as_slice()) {
            *acc += v;
        }
    }
    let nf = n as f64;
    assert!(m2.iter().all(|v| (v / nf).abs() <= 5e-3));
    // fourth-order entries have variance up to 96, so allow 5 standard errors
    let tol = 5.0 * (96.0f64 / nf).sqrt();
    let worst = m4.iter().fold(0.0f64, |m, v| m.max((v / nf).abs()));
    assert!(worst <= tol, "{worst} > {tol}");
}

#[test]
fn quartic_transform_recovers_hermite_constant() {
    let sigma = 0.05;
    let prof = NonlinearityProfile::new(NonlinearityKind::Identity, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 1_000_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        let xi: f64 = rng.sample(StandardNormal);
        let he4 = z.powi(4) - 6.0 * z * z + 3.0;
        acc += q4(z + sigma * xi, &prof.coeffs) * he4;
    }
    assert!((acc / n as f64 - 24.0).abs() <= 0.5);
}

#[test]
fn gating_depends_only_on_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let w = Array2::from_shape_fn((2, 5), |_| rng.random_range(-1.0..1.0));
        let x: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        // move x within the orthogonal complement of the gating rows
        let v0 = Array1::from_iter((0..5).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let gram = w.dot(&w.t());
        let det = gram[[0, 0]] * gram[[1, 1]] - gram[[0, 1]] * gram[[1, 0]];
        let inv = ndarray::array![[gram[[1, 1]], -gram[[0, 1]]], [-gram[[1, 0]], gram[[0, 0]]]] / det;
        let v = &v0 - &w.t().dot(&inv.dot(&w.dot(&v0)));
        let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + 3.0 * b).collect();
        let p = gating_probs(w.view(), &x);
        let q = gating_probs(w.view(), &y);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn latent_frequencies_follow_gating_in_bins() {
    let truth = ground_truth_paper_instance(2, 4).unwrap();
    let data = generate_dataset(&truth, NonlinearityKind::Identity, &InputDistribution::StandardGaussian, 100_000, 4, true, 1).unwrap();
    let z = data.latents.as_ref().unwrap();
    let edges = [-1.5, -0.5, 0.5, 1.5];
    let mut count = [0usize; 5];
    let mut hits = [0usize; 5];
    let mut expect = [0.0f64; 5];
    for n in 0..data.len() {
        let x = data.x(n);
        let l = x[2];
        let b = edges.iter().filter(|&&e| l > e).count();
        count[b] += 1;
        hits[b] += usize::from(z[n] == 0);
        expect[b] += gating_probs(truth.gating.view(), x)[0];
    }
    for b in 0..5 {
        let nb = count[b] as f64;
        let p = expect[b] / nb;
        let se = (p * (1.0 - p) / nb).sqrt();
        let freq = hits[b] as f64 / nb;
        assert!((freq - p).abs() <= 3.0 * se, "bin {b}: {freq} vs {p}");
    }
}

#[test]
fn quartic_loss_matches_population_form_at_truth() {
    let (truth, data) = instance(1_000_000, 5);
    let prof = NonlinearityProfile::new(NonlinearityKind::Identity, 0.05).unwrap();
    let reg = RegularizationConfig::default();
    let ctx = L4Context::new(prof, reg, &data);
    let (v, se) = l4_value_jackknife(truth.regressors.view(), &data, &ctx, 50).unwrap();
    let oracle = l4_population_oracle(truth.regressors.view(), &truth, 1_000_000, &mut ChaCha8Rng::seed_from_u64(6), &reg).unwrap();
    assert!((v - oracle).abs() <= 3.0 * se, "{v} vs {oracle} (se {se})");
}

#[test]
fn quartic_loss_ignores_constant_shift_of_q4() {
    let (_, data) = instance(1_000_000, 7);
    let prof = NonlinearityProfile::new(NonlinearityKind::Identity, 0.05).unwrap();
    let reg = RegularizationConfig::default();
    let ctx = L4Context::new(prof, reg, &data);
    let mut shifted = ctx.clone();
    let c = 3.0;
    shifted.q4.iter_mut().for_each(|v| *v += c);
    let a = init_random(3, 10, 1.0, &mut ChaCha8Rng::seed_from_u64(8)).unwrap().regressors;
    let diff = l4_value(a.view(), &data, &shifted).unwrap() - l4_value(a.view(), &data, &ctx).unwrap();
    // the difference is c times a sample mean of centered t-terms
    let c4 = prof.constants.c4;
    let rows: Vec<&[f64]> = a.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
    let per: Vec<f64> = (0..data.len())
        .map(|n| {
            let x = data.x(n);
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        s += t1(rows[i], rows[j], x, c4);
                    }
                }
                s -= reg.mu * t2(rows[i], x, c4);
            }
            c * s
        })
        .collect();
    let nf = per.len() as f64;
    let mean = per.iter().sum::<f64>() / nf;
    let sd = (per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    assert!((diff - mean).abs() < 1e-9);
    assert!(diff.abs() <= 3.0 * sd / nf.sqrt(), "{diff} vs se {}", sd / nf.sqrt());
}

#[test]
fn truth_minimizes_gating_likelihood() {
    let (truth, data) = instance(100_000, 9);
    let ctx = GatingContext::new(truth.regressors.clone(), NonlinearityKind::Identity, 0.05, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let at_truth = llog_value_on(truth.gating.view(), &ctx, &data, Rows::All).unwrap();
    for _ in 0..20 {
        let w0 = init_random(3, 10, 1.0, &mut rng).unwrap().gating;
        // paired per-sample differences give the standard error
        let mut diffs = Vec::with_capacity(data.len());
        for n in 0..data.len() {
            let one = [n];
            let a = llog_value_on(truth.gating.view(), &ctx, &data, Rows::Indices(&one)).unwrap();
            let b = llog_value_on(w0.view(), &ctx, &data, Rows::Indices(&one)).unwrap();
            diffs.push(a - b);
        }
        let nf = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / nf;
        let se = (diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0) / nf).sqrt();
        let other = llog_value_on(w0.view(), &ctx, &data, Rows::All).unwrap();
        assert!(at_truth <= other + 3.0 * se);
    }
}

#[test]
fn gating_gradient_vanishes_at_truth() {
    let (truth, data) = instance(100_000, 11);
    let ctx = GatingContext::new(truth.regressors.clone(), NonlinearityKind::Identity, 0.05, 1.0).unwrap();
    let g = llog_gradient_w(truth.gating.view(), &ctx, &data).unwrap();
    assert!(g.iter().all(|v| v.abs() <= 0.05));
}

#[test]
fn gating_descent_from_truth_stays_near_truth() {
    let (truth, data) = instance(100_000, 12);
    let ctx = GatingContext::new(truth.regressors.clone(), NonlinearityKind::Identity, 0.05, 1.0).unwrap();
    let cfg = TrainConfig { learning_rate: 0.5, iterations: 20, record_every: 1, ..Default::default() };
    let (_, traj) = projected_gd_gating(truth.gating.view(), &ctx, &data, &cfg, Some(truth.gating.view())).unwrap();
    assert!(traj.records.iter().all(|r| r.param_distance.unwrap() <= 0.05));
}

#[test]
fn quartic_sgd_loss_trends_down() {
    let (truth, data) = instance(200_000, 13);
    let prof = NonlinearityProfile::new(NonlinearityKind::Identity, 0.05).unwrap();
    let ctx = L4Context::new(prof, RegularizationConfig::default(), &data);
    let a0 = init_random(3, 10, 1.0, &mut ChaCha8Rng::seed_from_u64(14)).unwrap().regressors;
    let cfg = TrainConfig { learning_rate: 1e-3, batch_size: 1024, iterations: 2000, record_every: 1, seed: 1, split_t: None };
    let (_, traj) = sgd_l4(a0.view(), &data, &ctx, &cfg, Some(truth.regressors.view())).unwrap();
    let losses: Vec<f64> = traj.records.iter().map(|r| r.loss).collect();
    let window = |end: usize| losses[end - 100..end].iter().sum::<f64>() / 100.0;
    assert!(window(losses.len()) < window(100));
}
