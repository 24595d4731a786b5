use ndarray::Array2;

use crate::error::{MoeError, Result};

/// Dense fourth-order tensors are only built up to this dimension.
pub const MAX_DENSE_S4_DIM: usize = 8;

/// Dense `d^4` tensor, last index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    d: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            data: vec![0.0; d * d * d * d],
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    fn idx(&self, a: usize, b: usize, c: usize, e: usize) -> usize {
        ((a * self.d + b) * self.d + c) * self.d + e
    }

    pub fn get(&self, a: usize, b: usize, c: usize, e: usize) -> f64 {
        self.data[self.idx(a, b, c, e)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Multilinear form `T(u, v, w, z)`.
    pub fn contract(&self, u: &[f64], v: &[f64], w: &[f64], z: &[f64]) -> f64 {
        let d = self.d;
        let mut total = 0.0;
        for a in 0..d {
            for b in 0..d {
                let uv = u[a] * v[b];
                if uv == 0.0 {
                    continue;
                }
                for c in 0..d {
                    let uvw = uv * w[c];
                    let base = self.idx(a, b, c, 0);
                    let row = &self.data[base..base + d];
                    total += uvw * row.iter().zip(z).map(|(t, zz)| t * zz).sum::<f64>();
                }
            }
        }
        total
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Tensor4, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// `self += scale * u (x) u (x) u (x) u`.
    pub fn add_rank_one(&mut self, u: &[f64], scale: f64) {
        let d = self.d;
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    let s = scale * u[a] * u[b] * u[c];
                    let base = self.idx(a, b, c, 0);
                    for (e, slot) in self.data[base..base + d].iter_mut().enumerate() {
                        *slot += s * u[e];
                    }
                }
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Second-order Gaussian score `x x^T - I`.
pub fn score_s2(x: &[f64]) -> Array2<f64> {
    let d = x.len();
    Array2::from_shape_fn((d, d), |(i, j)| x[i] * x[j] - if i == j { 1.0 } else { 0.0 })
}

/// Fourth-order Gaussian score (multivariate Hermite tensor):
/// `x^4 - sum over the 6 placements of x x I + sum over the 3 pairings of I I`.
pub fn score_s4(x: &[f64]) -> Result<Tensor4> {
    let d = x.len();
    if d > MAX_DENSE_S4_DIM {
        return Err(MoeError::InvalidArgument(format!(
            "dense S4 limited to d <= {MAX_DENSE_S4_DIM}, got {d}"
        )));
    }
    let kd = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    let mut t = Tensor4::zeros(d);
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for e in 0..d {
                    let quartic = x[a] * x[b] * x[c] * x[e];
                    let pairs = x[a] * x[b] * kd(c, e)
                        + x[a] * x[c] * kd(b, e)
                        + x[a] * x[e] * kd(b, c)
                        + x[b] * x[c] * kd(a, e)
                        + x[b] * x[e] * kd(a, c)
                        + x[c] * x[e] * kd(a, b);
                    let deltas = kd(a, b) * kd(c, e) + kd(a, c) * kd(b, e) + kd(a, e) * kd(b, c);
                    let i = t.idx(a, b, c, e);
                    t.data[i] = quartic - pairs + deltas;
                }
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::{t1_numerator, t2_numerator};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn s2_at_origin() {
        let s = score_s2(&[0.0, 0.0, 0.0]);
        assert_eq!(s, -Array2::<f64>::eye(3));
    }

    #[test]
    fn s4_one_dimensional_is_he4() {
        for t in [-2.0, -0.3, 0.0, 1.0, 2.5] {
            let s = score_s4(&[t]).unwrap();
            let he4 = t * t * t * t - 6.0 * t * t + 3.0;
            assert!((s.get(0, 0, 0, 0) - he4).abs() < 1e-12);
        }
    }

    #[test]
    fn s4_dimension_guard() {
        assert!(score_s4(&[0.0; 9]).is_err());
    }

    #[test]
    fn s4_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s = score_s4(&x).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for e in 0..4 {
                        let v = s.get(a, b, c, e);
                        for w in [s.get(b, a, c, e), s.get(c, b, a, e), s.get(e, b, c, a)] {
                            assert!((v - w).abs() <= 1e-14 * v.abs().max(1.0));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn s4_contractions_match_transform_numerators() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let d = rng.random_range(1..=6);
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.random_range(-2.0..2.0)).collect() };
            let (u, v, x) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let s = score_s4(&x).unwrap();
            let uuuu = s.contract(&u, &u, &u, &u);
            assert!((uuuu - t2_numerator(&u, &x)).abs() <= 1e-12 * uuuu.abs().max(1.0));
            let uuvv = s.contract(&u, &u, &v, &v);
            assert!((uuvv - t1_numerator(&u, &v, &x)).abs() <= 1e-12 * uuvv.abs().max(1.0));
        }
    }

    #[test]
    fn rank_one_contraction() {
        let u = [0.5, -1.0, 2.0];
        let mut t = Tensor4::zeros(3);
        t.add_rank_one(&u, 2.0);
        let v = [1.0, 1.0, 0.0];
        let uv: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((t.contract(&v, &v, &v, &v) - 2.0 * uv.powi(4)).abs() < 1e-12);
    }
}
