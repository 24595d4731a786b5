//! Browser bindings. Each exported function is a thin wrapper over a plain
//! Rust function of the same name with a `_impl` suffix.

use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use moe_core::datagen::{gating_probs, generate_dataset, InputDistribution};
use moe_core::losses::L4Context;
use moe_core::model::{ground_truth_paper_instance, init_random};
use moe_core::optim::{sgd_l4, TrainConfig};
use moe_core::transforms::{q2, q4, NonlinearityProfile};
use moe_core::{NonlinearityKind, RegularizationConfig};

fn to_js(e: String) -> JsError {
    JsError::new(&e)
}

/// `[alpha, beta, gamma, delta_q, c4, c2]` for activation `g` at noise `sigma`.
pub fn transform_coefficients_impl(g: &str, sigma: f64) -> Result<Vec<f64>, String> {
    let kind: NonlinearityKind = g.parse().map_err(|e| format!("{e}"))?;
    let p = NonlinearityProfile::new(kind, sigma).map_err(|e| e.to_string())?;
    let c = p.coeffs;
    Ok(vec![c.alpha, c.beta, c.gamma, c.delta_q, p.constants.c4, p.constants.c2])
}

#[wasm_bindgen]
pub fn transform_coefficients(g: &str, sigma: f64) -> Result<Vec<f64>, JsError> {
    transform_coefficients_impl(g, sigma).map_err(to_js)
}

/// Quartic and quadratic transforms at each `y`, interleaved as
/// `[q4(y0), q2(y0), q4(y1), ...]`.
pub fn transform_curve_impl(g: &str, sigma: f64, ys: &[f64]) -> Result<Vec<f64>, String> {
    let kind: NonlinearityKind = g.parse().map_err(|e| format!("{e}"))?;
    let c = NonlinearityProfile::new(kind, sigma).map_err(|e| e.to_string())?.coeffs;
    Ok(ys.iter().flat_map(|&y| [q4(y, &c), q2(y, &c)]).collect())
}

#[wasm_bindgen]
pub fn transform_curve(g: &str, sigma: f64, ys: &[f64]) -> Result<Vec<f64>, JsError> {
    transform_curve_impl(g, sigma, ys).map_err(to_js)
}

/// Quartic-loss SGD on the orthonormal `k x d` instance with identity
/// experts. Returns `[iter, E_reg]` pairs, flattened.
pub fn train_quartic_impl(
    k: usize,
    d: usize,
    n: usize,
    iterations: usize,
    batch: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let kind = NonlinearityKind::Identity;
    let truth = ground_truth_paper_instance(k, d).map_err(|e| e.to_string())?;
    let data = generate_dataset(&truth, kind, &InputDistribution::StandardGaussian, n, seed, false, 1).map_err(|e| e.to_string())?;
    let prof = NonlinearityProfile::new(kind, truth.noise_sigma).map_err(|e| e.to_string())?;
    let ctx = L4Context::new(prof, RegularizationConfig::default(), &data);
    let init = init_random(k, d, 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        learning_rate: lr,
        batch_size: batch,
        iterations,
        split_t: None,
        record_every: (iterations / 100).max(1),
        seed,
    };
    let (_, traj) = sgd_l4(init.regressors.view(), &data, &ctx, &cfg, Some(truth.regressors.view())).map_err(|e| e.to_string())?;
    Ok(traj.records.iter().flat_map(|r| [r.iter as f64, r.metric.unwrap_or(f64::NAN)]).collect())
}

#[wasm_bindgen]
pub fn train_quartic(k: usize, d: usize, n: usize, iterations: usize, batch: usize, lr: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    train_quartic_impl(k, d, n, iterations, batch, lr, seed).map_err(to_js)
}

/// Softmax gating probabilities; `w` holds `k - 1` rows of length `x.len()`.
pub fn gating_probabilities_impl(w: &[f64], x: &[f64]) -> Result<Vec<f64>, String> {
    let d = x.len();
    if d == 0 || w.len() % d != 0 {
        return Err(format!("{} gating entries do not form rows of length {d}", w.len()));
    }
    let w = Array2::from_shape_vec((w.len() / d, d), w.to_vec()).map_err(|e| e.to_string())?;
    Ok(gating_probs(w.view(), x))
}

#[wasm_bindgen]
pub fn gating_probabilities(w: &[f64], x: &[f64]) -> Result<Vec<f64>, JsError> {
    gating_probabilities_impl(w, x).map_err(to_js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_coefficients() {
        let c = transform_coefficients_impl("id", 0.0).unwrap();
        assert_eq!(&c[..4], &[0.0, -6.0, 0.0, 0.0]);
        assert!(transform_coefficients_impl("nope", 0.1).is_err());
    }

    #[test]
    fn curve_interleaves() {
        let v = transform_curve_impl("id", 0.0, &[1.0, 2.0]).unwrap();
        assert_eq!(v, vec![-5.0, 1.0, -8.0, 4.0]);
    }

    #[test]
    fn gating_sums_to_one() {
        let p = gating_probabilities_impl(&[1.0, 0.0, 0.0, 1.0], &[0.3, -0.2]).unwrap();
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(gating_probabilities_impl(&[1.0, 2.0, 3.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn short_training_run() {
        let t = train_quartic_impl(2, 4, 4000, 200, 256, 1e-3, 1).unwrap();
        assert_eq!(t.len() % 2, 0);
        assert_eq!(t[0], 0.0);
        assert!(t.chunks(2).all(|p| p[1].is_finite()));
    }
}
