use ndarray::ArrayView2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::datagen::gating_probs_into;
use crate::error::{MoeError, Result};
use crate::model::{dot, MoEParameters, RegularizationConfig};

/// Monte Carlo estimate of `E[p_m(x)]` for standard Gaussian `x`.
///
/// Returns exactly `1/k` when every gating row is zero.
pub fn expected_gating<R: Rng + ?Sized>(gating: ArrayView2<f64>, k: usize, n_mc: usize, rng: &mut R) -> Vec<f64> {
    if gating.iter().all(|v| *v == 0.0) || n_mc == 0 {
        return vec![1.0 / k as f64; k];
    }
    let gating = gating.as_standard_layout();
    let d = gating.ncols();
    let mut x = vec![0.0; d];
    let mut p = vec![0.0; k];
    let mut acc = vec![0.0; k];
    for _ in 0..n_mc {
        for v in x.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        gating_probs_into(gating.view(), &x, &mut p);
        for (a, v) in acc.iter_mut().zip(&p) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / n_mc as f64).collect()
}

/// Population quartic loss for mixing weights `pi` over the true regressors.
pub fn l4_population_value(a: ArrayView2<f64>, truth: &MoEParameters, pi: &[f64], reg: &RegularizationConfig) -> Result<f64> {
    let k_true = truth.k();
    if pi.len() != k_true || a.ncols() != truth.d() {
        return Err(MoeError::DimensionMismatch(format!(
            "A has {} columns, truth has d={} and k={}, weights have {} entries",
            a.ncols(),
            truth.d(),
            k_true,
            pi.len()
        )));
    }
    let a = a.as_standard_layout();
    let at = truth.regressors.as_standard_layout();
    let k = a.nrows();
    // ip[m][i] = <a*_m, a_i>^2
    let ip: Vec<Vec<f64>> = (0..k_true)
        .map(|m| {
            let am = at.row(m);
            let am = am.to_slice().expect("standard layout");
            (0..k).map(|i| dot(am, a.row(i).to_slice().expect("standard layout")).powi(2)).collect()
        })
        .collect();
    let mut cross = 0.0;
    let mut quart = 0.0;
    for (m, row) in ip.iter().enumerate() {
        let s: f64 = row.iter().sum();
        let sq: f64 = row.iter().map(|v| v * v).sum();
        cross += pi[m] * (s * s - sq);
        quart += pi[m] * sq;
    }
    let mut pen = 0.0;
    for i in 0..k {
        let s: f64 = (0..k_true).map(|m| pi[m] * ip[m][i]).sum();
        pen += (s - 1.0).powi(2);
    }
    let frob: f64 = a.iter().map(|v| v * v).sum();
    Ok(cross - reg.mu * quart + reg.lambda * pen + 0.5 * reg.delta_reg * frob)
}

/// [`l4_population_value`] with the mixing weights estimated from `n_mc`
/// fresh Gaussian inputs.
pub fn l4_population_oracle<R: Rng + ?Sized>(
    a: ArrayView2<f64>,
    truth: &MoEParameters,
    n_mc: usize,
    rng: &mut R,
    reg: &RegularizationConfig,
) -> Result<f64> {
    let pi = expected_gating(truth.gating.view(), truth.k(), n_mc, rng);
    l4_population_value(a, truth, &pi, reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ground_truth_paper_instance;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reg() -> RegularizationConfig {
        RegularizationConfig::default()
    }

    #[test]
    fn zero_gating_at_truth() {
        let k = 3;
        let a = Array2::from_shape_fn((k, 6), |(i, j)| if i == j { 1.0 } else { 0.0 });
        let truth = MoEParameters::new(a.clone(), Array2::zeros((k - 1, 6)), 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = reg();
        let v = l4_population_oracle(a.view(), &truth, 1000, &mut rng, &r).unwrap();
        let kf = k as f64;
        let want = r.lambda * kf * (1.0 / kf - 1.0).powi(2) - r.mu + 0.5 * r.delta_reg * kf;
        assert!((v - want).abs() < 1e-12, "{v} vs {want}");
    }

    #[test]
    fn orthogonal_rows_and_homogeneity() {
        let truth = ground_truth_paper_instance(2, 6).unwrap();
        let r = reg();
        let a = array![[0.0, 0.0, 0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 0.0, 2.0, 0.0]];
        let v = l4_population_value(a.view(), &truth, &[0.5, 0.5], &r).unwrap();
        assert!((v - (r.lambda * 2.0 + 0.5 * r.delta_reg * 5.0)).abs() < 1e-12);

        let base = array![[0.7, 0.2, 0.0, 0.0, 0.0, 0.0]];
        let pi = [0.3, 0.7];
        let only_mu = RegularizationConfig { lambda: 0.0, delta_reg: 0.0, ..r };
        let v1 = l4_population_value(base.view(), &truth, &pi, &only_mu).unwrap();
        let v2 = l4_population_value((&base * 1.5).view(), &truth, &pi, &only_mu).unwrap();
        assert!((v2 - 1.5f64.powi(4) * v1).abs() < 1e-12);
    }

    #[test]
    fn expected_gating_sums_to_one() {
        let truth = ground_truth_paper_instance(3, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pi = expected_gating(truth.gating.view(), 3, 20_000, &mut rng);
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // symmetric logits: the two gated experts share the same marginal weight
        assert!((pi[0] - pi[1]).abs() < 0.02);
    }
}
