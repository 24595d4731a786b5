use super::coefficients::OutputCoefficients;
use crate::model::dot;

/// Quartic output transform (no constant term).
#[inline]
pub fn q4(y: f64, c: &OutputCoefficients) -> f64 {
    y * (c.gamma + y * (c.beta + y * (c.alpha + y)))
}

/// Quadratic output transform (no constant term).
#[inline]
pub fn q2(y: f64, c: &OutputCoefficients) -> f64 {
    y * (c.delta_q + y)
}

/// `((u.x)^2 - |u|^2) / c2`.
#[inline]
pub fn t3(u: &[f64], x: &[f64], c2: f64) -> f64 {
    let s = dot(u, x);
    (s * s - dot(u, u)) / c2
}

/// Fourth Hermite projection along `u`, before dividing by `c4`.
#[inline]
pub fn t2_numerator(u: &[f64], x: &[f64]) -> f64 {
    let s = dot(u, x);
    let n = dot(u, u);
    let s2 = s * s;
    s2 * s2 - 6.0 * n * s2 + 3.0 * n * n
}

#[inline]
pub fn t2(u: &[f64], x: &[f64], c4: f64) -> f64 {
    t2_numerator(u, x) / c4
}

/// Mixed fourth Hermite projection along `(u, u, v, v)`, before dividing by `c4`.
#[inline]
pub fn t1_numerator(u: &[f64], v: &[f64], x: &[f64]) -> f64 {
    let su = dot(u, x);
    let sv = dot(v, x);
    let nu = dot(u, u);
    let nv = dot(v, v);
    let uv = dot(u, v);
    su * su * sv * sv - nu * sv * sv - 4.0 * su * sv * uv - nv * su * su + nu * nv + 2.0 * uv * uv
}

#[inline]
pub fn t1(u: &[f64], v: &[f64], x: &[f64], c4: f64) -> f64 {
    t1_numerator(u, v, x) / c4
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity_coeffs(sigma: f64) -> OutputCoefficients {
        OutputCoefficients {
            alpha: 0.0,
            beta: -6.0 * (1.0 + sigma * sigma),
            gamma: 0.0,
            delta_q: 0.0,
        }
    }

    #[test]
    fn quartic_examples() {
        let c = identity_coeffs(0.0);
        assert_eq!(q4(1.0, &c), -5.0);
        assert_eq!(q4(2.0, &c), -8.0);
        let any = OutputCoefficients {
            alpha: 1.3,
            beta: -2.0,
            gamma: 0.7,
            delta_q: -0.4,
        };
        assert_eq!(q4(0.0, &any), 0.0);
        assert_eq!(q2(0.0, &any), 0.0);
    }

    #[test]
    fn input_transform_examples() {
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        assert_eq!(t3(&e1, &e1, 2.0), 0.0);
        assert!((t2(&e1, &e1, 24.0) + 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(t1(&e1, &e2, &[1.0, 1.0], 24.0), 0.0);
    }

    fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, d)
    }

    proptest! {
        #[test]
        fn t1_is_symmetric((u, v, x) in (1usize..7).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d), vec_strategy(d)))) {
            let a = t1(&u, &v, &x, 24.0);
            let b = t1(&v, &u, &x, 24.0);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn t1_collapses_to_t2((u, x) in (1usize..7).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d)))) {
            let a = t1(&u, &u, &x, 24.0);
            let b = t2(&u, &x, 24.0);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
