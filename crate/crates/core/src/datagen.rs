//! Sampling from the ground-truth mixture of experts.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{MoeError, Result};
use crate::model::{dot, unit_vector, Dataset, MoEParameters, NonlinearityKind};

/// Rows per independently seeded block in [`generate_dataset`].
pub const BLOCK_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum InputDistribution {
    StandardGaussian,
    /// `p N(mu, I) + (1 - p) N(-mu, I)`.
    SymmetricGaussianMixture { p: f64, mu: Vec<f64> },
}

impl InputDistribution {
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            Self::StandardGaussian => Ok(()),
            Self::SymmetricGaussianMixture { p, mu } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(MoeError::InvalidArgument(format!("mixing probability {p} outside [0,1]")));
                }
                if mu.len() != d {
                    return Err(MoeError::DimensionMismatch(format!(
                        "mixture mean has length {}, expected {d}",
                        mu.len()
                    )));
                }
                if mu.iter().any(|v| !v.is_finite()) {
                    return Err(MoeError::NonFinite("mixture mean"));
                }
                Ok(())
            }
        }
    }

    /// Mixture with a unit-norm mean drawn uniformly from the sphere.
    pub fn random_mixture<R: Rng + ?Sized>(p: f64, d: usize, rng: &mut R) -> Self {
        Self::SymmetricGaussianMixture {
            p,
            mu: unit_vector(d, rng).to_vec(),
        }
    }
}

/// Softmax over the logits `(w_1.x, ..., w_{k-1}.x, 0)`, written into `out`
/// (length k). Max-subtracted.
#[inline]
pub fn gating_probs_into(gating: ArrayView2<f64>, x: &[f64], out: &mut [f64]) {
    let k = gating.nrows() + 1;
    debug_assert_eq!(out.len(), k);
    let mut max = 0.0f64;
    for (i, w) in gating.rows().into_iter().enumerate() {
        let l = dot(w.as_slice().expect("gating stored row-major"), x);
        out[i] = l;
        max = max.max(l);
    }
    out[k - 1] = 0.0;
    let mut total = 0.0;
    for v in out.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in out.iter_mut() {
        *v /= total;
    }
}

pub fn gating_probs(gating: ArrayView2<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; gating.nrows() + 1];
    let g = gating.as_standard_layout();
    gating_probs_into(g.view(), x, &mut out);
    out
}

pub fn sample_inputs<R: Rng + ?Sized>(dist: &InputDistribution, n: usize, d: usize, rng: &mut R) -> Result<Array2<f64>> {
    dist.validate(d)?;
    let mut x = Array2::zeros((n, d));
    for mut row in x.rows_mut() {
        let shift = match dist {
            InputDistribution::StandardGaussian => None,
            InputDistribution::SymmetricGaussianMixture { p, mu } => {
                let u: f64 = rng.random();
                Some((if u < *p { 1.0 } else { -1.0 }, mu))
            }
        };
        for (j, v) in row.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *v = match shift {
                Some((sign, mu)) => z + sign * mu[j],
                None => z,
            };
        }
    }
    Ok(x)
}

/// Inverse-CDF draw from a probability vector.
#[inline]
pub(crate) fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws one expert per input from the true gating, then
/// `y = g(a_z . x) + sigma * xi`.
pub fn sample_moe<R: Rng + ?Sized>(
    params: &MoEParameters,
    kind: NonlinearityKind,
    inputs: Array2<f64>,
    rng: &mut R,
    keep_latents: bool,
) -> Result<Dataset> {
    params.validate()?;
    if inputs.ncols() != params.d() {
        return Err(MoeError::DimensionMismatch(format!(
            "inputs have {} columns, parameters have d={}",
            inputs.ncols(),
            params.d()
        )));
    }
    let inputs = inputs.as_standard_layout().into_owned();
    let gating = params.gating.as_standard_layout().into_owned();
    let k = params.k();
    let n = inputs.nrows();
    let mut probs = vec![0.0; k];
    let mut outputs = Array1::zeros(n);
    let mut latents = Vec::with_capacity(if keep_latents { n } else { 0 });
    for (i, x) in inputs.rows().into_iter().enumerate() {
        let x = x.as_slice().expect("row-major");
        gating_probs_into(gating.view(), x, &mut probs);
        let z = sample_categorical(&probs, rng.random());
        let a = params.regressors.row(z);
        let s: f64 = a.iter().zip(x).map(|(p, q)| p * q).sum();
        let xi: f64 = rng.sample(StandardNormal);
        outputs[i] = kind.eval(s) + params.noise_sigma * xi;
        if keep_latents {
            latents.push(z);
        }
    }
    Dataset::new(inputs, outputs, keep_latents.then_some(latents))
}

/// SplitMix64 finalizer over `(master, index)`; the sub-seed rule for
/// block-parallel sampling.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates `n` samples in blocks of [`BLOCK_ROWS`], block `b` seeded with
/// `derive_seed(master_seed, b)`. The result does not depend on `threads`.
pub fn generate_dataset(
    params: &MoEParameters,
    kind: NonlinearityKind,
    dist: &InputDistribution,
    n: usize,
    master_seed: u64,
    keep_latents: bool,
    threads: usize,
) -> Result<Dataset> {
    params.validate()?;
    dist.validate(params.d())?;
    let blocks = n.div_ceil(BLOCK_ROWS);
    let make_block = |b: usize| -> Result<Dataset> {
        let rows = BLOCK_ROWS.min(n - b * BLOCK_ROWS);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, b as u64));
        let x = sample_inputs(dist, rows, params.d(), &mut rng)?;
        sample_moe(params, kind, x, &mut rng, keep_latents)
    };
    let threads = threads.clamp(1, blocks.max(1));
    let parts: Vec<Result<Dataset>> = if threads == 1 {
        (0..blocks).map(make_block).collect()
    } else {
        let mut slots: Vec<Option<Result<Dataset>>> = (0..blocks).map(|_| None).collect();
        std::thread::scope(|scope| {
            let chunk = blocks.div_ceil(threads);
            for (t, slot_chunk) in slots.chunks_mut(chunk).enumerate() {
                let make_block = &make_block;
                scope.spawn(move || {
                    for (j, slot) in slot_chunk.iter_mut().enumerate() {
                        *slot = Some(make_block(t * chunk + j));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every block filled")).collect()
    };
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    concat(parts, params.d())
}

fn concat(parts: Vec<Dataset>, d: usize) -> Result<Dataset> {
    if parts.is_empty() {
        return Dataset::new(Array2::zeros((0, d)), Array1::zeros(0), None);
    }
    let keep = parts[0].latents.is_some();
    let xs: Vec<_> = parts.iter().map(|p| p.inputs.view()).collect();
    let ys: Vec<_> = parts.iter().map(|p| p.outputs.view()).collect();
    let inputs = ndarray::concatenate(Axis(0), &xs).expect("consistent widths");
    let outputs = ndarray::concatenate(Axis(0), &ys).expect("1-d");
    let latents = keep.then(|| {
        parts
            .iter()
            .flat_map(|p| p.latents.as_ref().expect("all blocks keep latents").iter().copied())
            .collect()
    });
    Dataset::new(inputs, outputs, latents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ground_truth_paper_instance, init_random};
    use ndarray::array;

    #[test]
    fn uniform_gating_at_zero() {
        let w = Array2::zeros((2, 4));
        let p = gating_probs(w.view(), &[0.3, -1.0, 2.0, 0.1]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_expert_gating_examples() {
        let w = array![[1.0, 0.0]];
        let p = gating_probs(w.view(), &[0.0, 5.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = gating_probs(w.view(), &[50.0, 0.0]);
        assert!(p[0] >= 1.0 - 1e-20);
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let p = gating_probs(w.view(), &[1e4, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn input_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let x = sample_inputs(&InputDistribution::StandardGaussian, n, 5, &mut rng).unwrap();
        for m in x.mean_axis(Axis(0)).unwrap() {
            assert!(m.abs() <= 0.02);
        }
        let mu = vec![1.0, 0.0, 0.0];
        let mix = InputDistribution::SymmetricGaussianMixture { p: 0.5, mu: mu.clone() };
        let x = sample_inputs(&mix, n, 3, &mut rng).unwrap();
        assert!(x.column(0).mean().unwrap().abs() <= 0.03);
        let one = InputDistribution::SymmetricGaussianMixture { p: 1.0, mu: vec![1.0, -2.0, 0.5] };
        let x = sample_inputs(&one, n, 3, &mut rng).unwrap();
        let m = x.mean_axis(Axis(0)).unwrap();
        for (a, b) in m.iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - b).abs() <= 0.02);
        }
        let bad = InputDistribution::SymmetricGaussianMixture { p: 1.5, mu: vec![0.0; 3] };
        assert!(sample_inputs(&bad, 2, 3, &mut rng).is_err());
    }

    #[test]
    fn single_expert_noise_free() {
        let params = MoEParameters::new(array![[0.5, -1.0]], Array2::zeros((0, 2)), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = sample_inputs(&InputDistribution::StandardGaussian, 100, 2, &mut rng).unwrap();
        let data = sample_moe(&params, NonlinearityKind::Relu, x, &mut rng, true).unwrap();
        for i in 0..data.len() {
            let xi = data.x(i);
            assert_eq!(data.y(i), (0.5 * xi[0] - xi[1]).max(0.0));
        }
        assert!(data.latents.unwrap().iter().all(|&z| z == 0));
    }

    #[test]
    fn uniform_latent_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = init_random(3, 4, 1.0, &mut rng).unwrap();
        params.gating.fill(0.0);
        let data = generate_dataset(&params, NonlinearityKind::Identity, &InputDistribution::StandardGaussian, 100_000, 9, true, 1).unwrap();
        let z = data.latents.unwrap();
        for i in 0..3 {
            let f = z.iter().filter(|&&v| v == i).count() as f64 / z.len() as f64;
            assert!((f - 1.0 / 3.0).abs() <= 0.01);
        }
    }

    #[test]
    fn conditional_noise_variance() {
        let params = ground_truth_paper_instance(3, 10).unwrap();
        let data = generate_dataset(&params, NonlinearityKind::Identity, &InputDistribution::StandardGaussian, 100_000, 4, true, 1).unwrap();
        let z = data.latents.as_ref().unwrap();
        for i in 0..3 {
            let res: Vec<f64> = (0..data.len())
                .filter(|&j| z[j] == i)
                .map(|j| data.y(j) - data.x(j)[i])
                .collect();
            let var = res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64;
            assert!((0.002..=0.003).contains(&var), "expert {i}: {var}");
        }
    }

    #[test]
    fn independent_of_thread_count() {
        let params = ground_truth_paper_instance(2, 5).unwrap();
        let a = generate_dataset(&params, NonlinearityKind::Identity, &InputDistribution::StandardGaussian, 10_000, 77, true, 1).unwrap();
        let b = generate_dataset(&params, NonlinearityKind::Identity, &InputDistribution::StandardGaussian, 10_000, 77, true, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&params, NonlinearityKind::Identity, &InputDistribution::StandardGaussian, 10_000, 78, true, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn categorical_inverse_cdf() {
        let p = [0.2, 0.5, 0.3];
        assert_eq!(sample_categorical(&p, 0.0), 0);
        assert_eq!(sample_categorical(&p, 0.19), 0);
        assert_eq!(sample_categorical(&p, 0.2), 1);
        assert_eq!(sample_categorical(&p, 0.9999), 2);
    }
}
