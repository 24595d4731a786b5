//! A GRU step with hard threshold gates, written both directly and as a
//! two-level tree of two-expert mixtures over the input `(x_t, h_{t-1})`.

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MoeError, Result};
use crate::model::{dot, NonlinearityKind};

/// GRU weights. `u_*` are `m x d_x`, `w_*` are `m x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub u_z: Array2<f64>,
    pub w_z: Array2<f64>,
    pub u_r: Array2<f64>,
    pub w_r: Array2<f64>,
    pub u_h: Array2<f64>,
    pub w_h: Array2<f64>,
    pub activation: NonlinearityKind,
}

impl GruParams {
    /// Standard Gaussian weights.
    pub fn random<R: Rng + ?Sized>(m: usize, d_x: usize, activation: NonlinearityKind, rng: &mut R) -> Self {
        let mut draw = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal));
        Self {
            u_z: draw(m, d_x),
            w_z: draw(m, m),
            u_r: draw(m, d_x),
            w_r: draw(m, m),
            u_h: draw(m, d_x),
            w_h: draw(m, m),
            activation,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u_h.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.hidden();
        let dx = self.input_dim();
        let ok = [&self.u_z, &self.u_r, &self.u_h].iter().all(|u| u.dim() == (m, dx))
            && [&self.w_z, &self.w_r, &self.w_h].iter().all(|w| w.dim() == (m, m));
        if ok {
            self.activation.validate()
        } else {
            Err(MoeError::DimensionMismatch(format!("GRU weights do not agree on m={m}, d_x={dx}")))
        }
    }

    fn check_inputs(&self, x: &[f64], h: &[f64]) -> Result<()> {
        self.validate()?;
        if x.len() != self.input_dim() || h.len() != self.hidden() {
            return Err(MoeError::DimensionMismatch(format!(
                "got x of length {} and h of length {}, expected {} and {}",
                x.len(),
                h.len(),
                self.input_dim(),
                self.hidden()
            )));
        }
        Ok(())
    }
}

#[inline]
fn indicator(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `row . (x, h)` accumulated over `x` first, then `h`; the one routine
/// through which every gate and expert pre-activation is computed.
#[inline]
fn affine(row: &[f64], x: &[f64], h: &[f64]) -> f64 {
    let (rx, rh) = row.split_at(x.len());
    let mut acc = 0.0;
    for (a, b) in rx.iter().zip(x) {
        acc += a * b;
    }
    for (a, b) in rh.iter().zip(h) {
        acc += a * b;
    }
    acc
}

/// Two-expert blend `(1 - s) * off + s * on`.
#[inline]
fn blend(s: f64, off: f64, on: f64) -> f64 {
    (1.0 - s) * off + s * on
}

fn joined(u: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[u.view(), w.view()]).expect("row counts agree").as_standard_layout().into_owned()
}

/// One step with gates `1{U x + W h >= 0}`:
/// `h_t = (1 - z) h + z ((1 - r) g(U_h x) + r g(U_h x + W_h h))`.
pub fn gru_step_binary(x: &[f64], h_prev: &[f64], p: &GruParams) -> Result<Vec<f64>> {
    p.check_inputs(x, h_prev)?;
    let g = p.activation;
    let (uz, ur, uh) = (joined(&p.u_z, &p.w_z), joined(&p.u_r, &p.w_r), joined(&p.u_h, &p.w_h));
    let uh_x = joined(&p.u_h, &Array2::zeros(p.w_h.dim()));
    let row = |m: &Array2<f64>, j: usize| m.row(j).to_slice().expect("standard layout").to_vec();
    Ok((0..p.hidden())
        .map(|j| {
            let z = indicator(affine(&row(&uz, j), x, h_prev));
            let r = indicator(affine(&row(&ur, j), x, h_prev));
            let reset = g.eval(affine(&row(&uh_x, j), x, h_prev));
            let full = g.eval(affine(&row(&uh, j), x, h_prev));
            blend(z, h_prev[j], blend(r, reset, full))
        })
        .collect())
}

/// A node of a mixture tree acting on the joint input `(x, h)`.
#[derive(Debug, Clone)]
pub enum Node {
    /// Returns the `h` part of the joint input.
    Carry,
    /// `g(B (x, h))` row by row.
    Expert { weights: Array2<f64>, activation: NonlinearityKind },
    /// Per-coordinate binary gate `1{G (x, h) >= 0}` choosing `on` over `off`.
    Mixture { gate: Array2<f64>, off: Box<Node>, on: Box<Node> },
}

impl Node {
    pub fn eval(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        match self {
            Node::Carry => h.to_vec(),
            Node::Expert { weights, activation } => weights
                .rows()
                .into_iter()
                .map(|r| activation.eval(affine(r.as_slice().expect("standard layout"), x, h)))
                .collect(),
            Node::Mixture { gate, off, on } => {
                let a = off.eval(x, h);
                let b = on.eval(x, h);
                gate.rows()
                    .into_iter()
                    .zip(a.iter().zip(&b))
                    .map(|(r, (&u, &v))| blend(indicator(affine(r.as_slice().expect("standard layout"), x, h)), u, v))
                    .collect()
            }
        }
    }
}

/// The depth-two mixture equivalent to a GRU step: the update gate picks
/// between carrying `h` and an inner mixture whose reset gate picks between
/// `g(U_h x)` and `g(U_h x + W_h h)`.
pub fn hmoe_tree(p: &GruParams) -> Node {
    let g = p.activation;
    let inner = Node::Mixture {
        gate: joined(&p.u_r, &p.w_r),
        off: Box::new(Node::Expert { weights: joined(&p.u_h, &Array2::zeros(p.w_h.dim())), activation: g }),
        on: Box::new(Node::Expert { weights: joined(&p.u_h, &p.w_h), activation: g }),
    };
    Node::Mixture { gate: joined(&p.u_z, &p.w_z), off: Box::new(Node::Carry), on: Box::new(inner) }
}

pub fn hmoe_step(x: &[f64], h_prev: &[f64], p: &GruParams) -> Result<Vec<f64>> {
    p.check_inputs(x, h_prev)?;
    Ok(hmoe_tree(p).eval(x, h_prev))
}

/// `E[y | x]` of a two-expert model: `s(w.x) g(a1.x) + (1 - s(w.x)) g(a2.x)`
/// with logistic `s`.
pub fn moe2_conditional_mean(x: &[f64], a1: &[f64], a2: &[f64], w: &[f64], g: NonlinearityKind) -> f64 {
    let s = 1.0 / (1.0 + (-dot(w, x)).exp());
    s * g.eval(dot(a1, x)) + (1.0 - s) * g.eval(dot(a2, x))
}

/// Largest absolute difference between the two step implementations over
/// `trials` random draws of weights and inputs.
pub fn max_equivalence_gap<R: Rng + ?Sized>(trials: usize, m: usize, d_x: usize, activation: NonlinearityKind, rng: &mut R) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let p = GruParams::random(m, d_x, activation, rng);
        let x: Vec<f64> = (0..d_x).map(|_| rng.sample(StandardNormal)).collect();
        let h: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let a = gru_step_binary(&x, &h, &p)?;
        let b = hmoe_step(&x, &h, &p)?;
        for (u, v) in a.iter().zip(&b) {
            worst = worst.max((u - v).abs());
        }
    }
    Ok(worst)
}
