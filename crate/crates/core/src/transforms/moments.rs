use std::sync::OnceLock;

use crate::error::{MoeError, Result};
use crate::model::NonlinearityKind;

/// Gauss-Hermite rule for the weight `exp(-t^2)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes by Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "need at least one node");
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Self { nodes, weights }
    }

    /// `E[f(Z)]` for `Z ~ N(0,1)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let scale = std::f64::consts::SQRT_2;
        let total: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(scale * t))
            .sum();
        total / std::f64::consts::PI.sqrt()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn default_rule() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(64))
}

fn double_factorial(n: i64) -> f64 {
    let mut acc = 1.0;
    let mut m = n;
    while m > 1 {
        acc *= m as f64;
        m -= 2;
    }
    acc
}

/// `E[Z^m]`.
fn gaussian_power(m: u32) -> f64 {
    if m % 2 == 1 {
        0.0
    } else {
        double_factorial(m as i64 - 1)
    }
}

/// `E[|Z|^m]`.
fn gaussian_abs_power(m: u32) -> f64 {
    let base = double_factorial(m as i64 - 1);
    if m % 2 == 1 {
        base * (2.0 / std::f64::consts::PI).sqrt()
    } else {
        base
    }
}

/// `E[g(Z)^p Z^q]` for `Z ~ N(0,1)`, `p <= 4`, `q <= 8`. Closed forms for the
/// piecewise-linear activations, 64-node Gauss-Hermite for the sigmoid.
pub fn gaussian_activation_moment(kind: NonlinearityKind, p: u32, q: u32) -> Result<f64> {
    gaussian_activation_moment_with(kind, p, q, default_rule())
}

pub fn gaussian_activation_moment_with(
    kind: NonlinearityKind,
    p: u32,
    q: u32,
    rule: &GaussHermite,
) -> Result<f64> {
    if p > 4 || q > 8 {
        return Err(MoeError::Unsupported(format!(
            "moment order (p={p}, q={q}) outside p<=4, q<=8"
        )));
    }
    if p == 0 {
        return Ok(gaussian_power(q));
    }
    let m = p + q;
    Ok(match kind {
        NonlinearityKind::Identity => gaussian_power(m),
        NonlinearityKind::Relu => 0.5 * gaussian_abs_power(m),
        NonlinearityKind::LeakyRelu(s) => {
            // negative half-line contributes s^p (-1)^m times the positive one
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            0.5 * gaussian_abs_power(m) * (1.0 + s.powi(p as i32) * sign)
        }
        NonlinearityKind::Sigmoid => {
            rule.expect(|z| kind.eval(z).powi(p as i32) * z.powi(q as i32))
        }
    })
}
