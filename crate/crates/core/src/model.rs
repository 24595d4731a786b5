//! Core domain types: the activation, the parameter bundle and datasets.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MoeError, Result};

/// Expert activation `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NonlinearityKind {
    Identity,
    Relu,
    Sigmoid,
    /// Slope on the negative half-line, in (0, 1).
    LeakyRelu(f64),
}

impl NonlinearityKind {
    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Self::Identity => z,
            Self::Relu => z.max(0.0),
            Self::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Self::LeakyRelu(s) => {
                if z >= 0.0 {
                    z
                } else {
                    s * z
                }
            }
        }
    }

    /// Derivative; at the kink of (leaky) ReLU the right derivative is used.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Relu => {
                if z >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Self::LeakyRelu(s) => {
                if z >= 0.0 {
                    1.0
                } else {
                    s
                }
            }
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Self::LeakyRelu(s) if !(s > 0.0 && s < 1.0) => Err(MoeError::InvalidArgument(
                format!("leaky-ReLU slope {s} outside (0,1)"),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for NonlinearityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "id"),
            Self::Relu => write!(f, "relu"),
            Self::Sigmoid => write!(f, "sigmoid"),
            Self::LeakyRelu(s) => write!(f, "leaky:{s}"),
        }
    }
}

impl FromStr for NonlinearityKind {
    type Err = MoeError;

    /// Accepts `id`, `relu`, `sigmoid` and `leaky:<slope>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let kind = match lower.as_str() {
            "id" | "identity" | "linear" => Self::Identity,
            "relu" => Self::Relu,
            "sigmoid" => Self::Sigmoid,
            other => match other.strip_prefix("leaky:").or(other.strip_prefix("leakyrelu:")) {
                Some(slope) => Self::LeakyRelu(
                    slope
                        .parse()
                        .map_err(|_| MoeError::Parse(format!("bad leaky slope '{slope}'")))?,
                ),
                None => return Err(MoeError::Parse(format!("unknown nonlinearity '{s}'"))),
            },
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Regressors `A` (k x d), gating `W` ((k-1) x d, the k-th row is the implicit
/// zero vector) and the observation noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct MoEParameters {
    pub regressors: Array2<f64>,
    pub gating: Array2<f64>,
    pub noise_sigma: f64,
}

impl MoEParameters {
    pub fn new(regressors: Array2<f64>, gating: Array2<f64>, noise_sigma: f64) -> Result<Self> {
        let p = Self {
            regressors,
            gating,
            noise_sigma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn k(&self) -> usize {
        self.regressors.nrows()
    }

    pub fn d(&self) -> usize {
        self.regressors.ncols()
    }

    /// Checks shapes, finiteness and the sign of the noise level.
    pub fn validate(&self) -> Result<()> {
        let (k, d) = self.regressors.dim();
        if k < 1 || d < 1 {
            return Err(MoeError::DimensionMismatch(format!(
                "regressors must be non-empty, got {k}x{d}"
            )));
        }
        if self.gating.nrows() + 1 != k {
            return Err(MoeError::DimensionMismatch(format!(
                "gating must have k-1 = {} rows, got {}",
                k - 1,
                self.gating.nrows()
            )));
        }
        if self.gating.nrows() > 0 && self.gating.ncols() != d {
            return Err(MoeError::DimensionMismatch(format!(
                "gating rows have length {}, expected {d}",
                self.gating.ncols()
            )));
        }
        if self.regressors.iter().any(|v| !v.is_finite()) {
            return Err(MoeError::NonFinite("regressors"));
        }
        if self.gating.iter().any(|v| !v.is_finite()) {
            return Err(MoeError::NonFinite("gating"));
        }
        if !self.noise_sigma.is_finite() {
            return Err(MoeError::NonFinite("noise_sigma"));
        }
        if self.noise_sigma < 0.0 {
            return Err(MoeError::NegativeNoise(self.noise_sigma));
        }
        Ok(())
    }

    /// True when every regressor row has unit Euclidean norm to within 1e-12.
    pub fn is_normalized(&self) -> bool {
        self.regressors
            .rows()
            .into_iter()
            .all(|r| (r.dot(&r).sqrt() - 1.0).abs() <= 1e-12)
    }

    /// Plain-text matrix format: header `k d sigma`, then the k rows of A and
    /// the k-1 rows of W, whitespace separated with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {:.16e}\n", self.k(), self.d(), self.noise_sigma);
        for row in self.regressors.rows().into_iter().chain(self.gating.rows()) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let mut next = |what: &str| {
            tokens
                .next()
                .ok_or_else(|| MoeError::Parse(format!("unexpected end of input reading {what}")))
        };
        let k: usize = next("k")?
            .parse()
            .map_err(|e| MoeError::Parse(format!("k: {e}")))?;
        let d: usize = next("d")?
            .parse()
            .map_err(|e| MoeError::Parse(format!("d: {e}")))?;
        let sigma: f64 = next("sigma")?
            .parse()
            .map_err(|e| MoeError::Parse(format!("sigma: {e}")))?;
        if k < 1 {
            return Err(MoeError::Parse("k must be at least 1".into()));
        }
        let mut read_matrix = |rows: usize| -> Result<Array2<f64>> {
            let mut m = Array2::zeros((rows, d));
            for v in m.iter_mut() {
                let tok = next("matrix entry")?;
                *v = tok
                    .parse()
                    .map_err(|e| MoeError::Parse(format!("entry '{tok}': {e}")))?;
            }
            Ok(m)
        };
        let regressors = read_matrix(k)?;
        let gating = read_matrix(k - 1)?;
        Self::new(regressors, gating, sigma)
    }
}

/// Paired samples `(x, y)`; `latents` holds 0-based expert indices when the
/// generator was asked to keep them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub outputs: Array1<f64>,
    pub latents: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, outputs: Array1<f64>, latents: Option<Vec<usize>>) -> Result<Self> {
        if inputs.nrows() != outputs.len() {
            return Err(MoeError::DimensionMismatch(format!(
                "{} input rows but {} outputs",
                inputs.nrows(),
                outputs.len()
            )));
        }
        if let Some(z) = &latents {
            if z.len() != outputs.len() {
                return Err(MoeError::DimensionMismatch(format!(
                    "{} latents for {} samples",
                    z.len(),
                    outputs.len()
                )));
            }
        }
        Ok(Self {
            inputs: inputs.as_standard_layout().into_owned(),
            outputs,
            latents,
        })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        self.inputs
            .row(i)
            .to_slice()
            .expect("dataset inputs are stored row-major")
    }

    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        self.outputs[i]
    }

    /// Copies the given rows into a new dataset.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let inputs = self.inputs.select(ndarray::Axis(0), rows);
        let outputs = self.outputs.select(ndarray::Axis(0), rows);
        let latents = self
            .latents
            .as_ref()
            .map(|z| rows.iter().map(|&i| z[i]).collect());
        Dataset {
            inputs,
            outputs,
            latents,
        }
    }

    /// Checks latents (when present) index one of `k` experts.
    pub fn validate_latents(&self, k: usize) -> Result<()> {
        match &self.latents {
            Some(z) if z.iter().any(|&i| i >= k) => Err(MoeError::InvalidArgument(format!(
                "latent index outside 0..{k}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Regularization constants of the regressor loss plus the radius of the
/// gating domain. `delta_reg` is the Frobenius penalty weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationConfig {
    pub mu: f64,
    pub lambda: f64,
    pub delta_reg: f64,
    pub radius_r: f64,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self {
            mu: 0.01,
            lambda: 10.0,
            delta_reg: 1e-3,
            radius_r: 1.0,
        }
    }
}

impl RegularizationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu.is_finite()
            && self.mu > 0.0
            && self.lambda.is_finite()
            && self.lambda > 0.0
            && self.delta_reg.is_finite()
            && self.delta_reg >= 0.0
            && self.radius_r.is_finite()
            && self.radius_r > 0.0;
        if ok {
            Ok(())
        } else {
            Err(MoeError::InvalidArgument(format!(
                "bad regularization config {self:?}"
            )))
        }
    }
}

pub(crate) fn unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.dot(&v).sqrt();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Random parameters: regressor rows uniform on the unit sphere, gating rows
/// uniform in the ball of radius `radius_r`. Noise level is left at zero.
pub fn init_random<R: Rng + ?Sized>(k: usize, d: usize, radius_r: f64, rng: &mut R) -> Result<MoEParameters> {
    if k < 2 || d < 1 {
        return Err(MoeError::InvalidArgument(format!(
            "need k >= 2 and d >= 1, got k={k}, d={d}"
        )));
    }
    if !(radius_r > 0.0) {
        return Err(MoeError::InvalidArgument(format!("radius {radius_r} must be positive")));
    }
    let mut regressors = Array2::zeros((k, d));
    for mut row in regressors.rows_mut() {
        row.assign(&unit_vector(d, rng));
    }
    let mut gating = Array2::zeros((k - 1, d));
    for mut row in gating.rows_mut() {
        let u: f64 = rng.random();
        let r = radius_r * u.powf(1.0 / d as f64);
        row.assign(&(unit_vector(d, rng) * r));
    }
    MoEParameters::new(regressors, gating, 0.0)
}

/// Orthonormal benchmark instance: `a_i = e_i`, `w_i = e_{k+i}`, sigma = 0.05.
pub fn ground_truth_paper_instance(k: usize, d: usize) -> Result<MoEParameters> {
    if k < 2 {
        return Err(MoeError::InvalidArgument(format!("k={k} must be at least 2")));
    }
    if 2 * k - 1 >= d {
        return Err(MoeError::InvalidArgument(format!(
            "need 2k-1 < d, got k={k}, d={d}"
        )));
    }
    let mut regressors = Array2::zeros((k, d));
    for i in 0..k {
        regressors[[i, i]] = 1.0;
    }
    let mut gating = Array2::zeros((k - 1, d));
    for i in 0..k - 1 {
        gating[[i, k + i]] = 1.0;
    }
    MoEParameters::new(regressors, gating, 0.05)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
