use nalgebra::{Matrix3, Vector3};

use super::moments::gaussian_activation_moment;
use crate::error::{MoeError, Result};
use crate::model::NonlinearityKind;

/// Largest accepted residual of the 3x3 Stein system.
pub const SOLVER_TOLERANCE: f64 = 1e-10;
/// Condition number above which the system is declared singular.
pub const CONDITION_GUARD: f64 = 1e12;
/// Smallest magnitude accepted for the tensor constants.
const MIN_CONSTANT: f64 = 1e-8;
/// Largest Stein residual tolerated by `compute_tensor_constants`.
const VALIDITY_TOLERANCE: f64 = 1e-8;

/// Coefficients of `q4(y) = y^4 + alpha y^3 + beta y^2 + gamma y` and
/// `q2(y) = y^2 + delta_q y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta_q: f64,
}

/// Fourth (`c4`) and second (`c2`) order Hermite inner products of the
/// conditional output transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorConstants {
    pub c4: f64,
    pub c2: f64,
}

/// Everything the regressor loss needs to know about `g` at noise level sigma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearityProfile {
    pub kind: NonlinearityKind,
    pub sigma: f64,
    pub coeffs: OutputCoefficients,
    pub constants: TensorConstants,
}

impl NonlinearityProfile {
    pub fn new(kind: NonlinearityKind, sigma: f64) -> Result<Self> {
        let coeffs = solve_output_coefficients(kind, sigma)?;
        let constants = compute_tensor_constants(kind, sigma, &coeffs)?;
        Ok(Self {
            kind,
            sigma,
            coeffs,
            constants,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityReport {
    /// `E[S4(Z) He_j(Z)]` for j = 1, 2, 3.
    pub cond1_residuals: [f64; 3],
    /// `E[S2(Z) Z]`.
    pub cond2_residual: f64,
    pub c4: f64,
    pub c2: f64,
    pub valid: bool,
}

/// Probabilists' Hermite polynomials as coefficient lists in powers of Z.
const HE: [&[f64]; 5] = [
    &[1.0],
    &[0.0, 1.0],
    &[-1.0, 0.0, 1.0],
    &[0.0, -3.0, 0.0, 1.0],
    &[3.0, 0.0, -6.0, 0.0, 1.0],
];

struct Moments {
    kind: NonlinearityKind,
}

impl Moments {
    /// `E[g(Z)^p He_j(Z)]`.
    fn g_he(&self, p: u32, j: usize) -> Result<f64> {
        let mut acc = 0.0;
        for (q, &c) in HE[j].iter().enumerate() {
            if c != 0.0 {
                acc += c * gaussian_activation_moment(self.kind, p, q as u32)?;
            }
        }
        Ok(acc)
    }

    /// `E[S4(Z) He_j(Z)]` split into the columns multiplying (alpha, beta,
    /// gamma) and the coefficient-free part, where
    /// `S4(Z) = E[Y^4 + alpha Y^3 + beta Y^2 + gamma Y | Z]`, `Y = g(Z) + sigma xi`.
    fn s4_row(&self, sigma: f64, j: usize) -> Result<([f64; 3], f64)> {
        let s2 = sigma * sigma;
        let s4 = s2 * s2;
        let cubic = self.g_he(3, j)? + 3.0 * s2 * self.g_he(1, j)?;
        let square = self.g_he(2, j)? + s2 * self.g_he(0, j)?;
        let linear = self.g_he(1, j)?;
        let quartic = self.g_he(4, j)? + 6.0 * s2 * self.g_he(2, j)? + 3.0 * s4 * self.g_he(0, j)?;
        Ok(([cubic, square, linear], quartic))
    }

    /// `E[S2(Z) He_j(Z)]` with `S2(Z) = E[Y^2 + delta Y | Z]`, as (delta column, rest).
    fn s2_row(&self, sigma: f64, j: usize) -> Result<(f64, f64)> {
        let rest = self.g_he(2, j)? + sigma * sigma * self.g_he(0, j)?;
        Ok((self.g_he(1, j)?, rest))
    }
}

/// Solves the three Stein conditions on the quartic transform and the single
/// condition on the quadratic one.
pub fn solve_output_coefficients(kind: NonlinearityKind, sigma: f64) -> Result<OutputCoefficients> {
    kind.validate()?;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(MoeError::InvalidArgument(format!("sigma {sigma} must be finite and >= 0")));
    }
    let m = Moments { kind };
    let mut mat = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for r in 0..3 {
        let (cols, constant) = m.s4_row(sigma, r + 1)?;
        for c in 0..3 {
            mat[(r, c)] = cols[c];
        }
        rhs[r] = -constant;
    }
    let sv = mat.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smin == 0.0 || smax / smin > CONDITION_GUARD {
        return Err(MoeError::Singular(format!(
            "quartic system for {kind} at sigma={sigma} has condition number {:.3e}",
            smax / smin
        )));
    }
    let sol = mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| MoeError::Singular(format!("quartic system for {kind} at sigma={sigma}")))?;
    let residual = (mat * sol - rhs).amax();
    if residual > SOLVER_TOLERANCE {
        return Err(MoeError::Singular(format!(
            "quartic system residual {residual:.3e} exceeds tolerance"
        )));
    }
    let (delta_col, delta_rest) = m.s2_row(sigma, 1)?;
    if delta_col.abs() < 1.0 / CONDITION_GUARD {
        return Err(MoeError::Singular(format!(
            "quadratic condition for {kind} has vanishing coefficient"
        )));
    }
    Ok(OutputCoefficients {
        alpha: sol[0],
        beta: sol[1],
        gamma: sol[2],
        delta_q: -delta_rest / delta_col,
    })
}

/// Stein residuals of the given coefficients together with `c4`, `c2`.
pub fn check_validity(profile: &NonlinearityProfile) -> ValidityReport {
    residual_report(profile.kind, profile.sigma, &profile.coeffs)
        .unwrap_or(ValidityReport {
            cond1_residuals: [f64::NAN; 3],
            cond2_residual: f64::NAN,
            c4: f64::NAN,
            c2: f64::NAN,
            valid: false,
        })
}

fn residual_report(kind: NonlinearityKind, sigma: f64, coeffs: &OutputCoefficients) -> Result<ValidityReport> {
    let m = Moments { kind };
    let abc = [coeffs.alpha, coeffs.beta, coeffs.gamma];
    let s4_inner = |j: usize| -> Result<f64> {
        let (cols, constant) = m.s4_row(sigma, j)?;
        Ok(constant + cols.iter().zip(&abc).map(|(c, v)| c * v).sum::<f64>())
    };
    let s2_inner = |j: usize| -> Result<f64> {
        let (col, rest) = m.s2_row(sigma, j)?;
        Ok(rest + coeffs.delta_q * col)
    };
    let cond1 = [s4_inner(1)?, s4_inner(2)?, s4_inner(3)?];
    let cond2 = s2_inner(1)?;
    let c4 = s4_inner(4)?;
    let c2 = s2_inner(2)?;
    let valid = cond1.iter().all(|r| r.abs() <= VALIDITY_TOLERANCE)
        && cond2.abs() <= VALIDITY_TOLERANCE
        && c4.abs() >= MIN_CONSTANT
        && c2.abs() >= MIN_CONSTANT;
    Ok(ValidityReport {
        cond1_residuals: cond1,
        cond2_residual: cond2,
        c4,
        c2,
        valid,
    })
}

/// `c4 = E[S4(Z) He_4(Z)]`, `c2 = E[S2(Z) He_2(Z)]`; errors unless the
/// coefficients satisfy the Stein conditions and both constants are non-zero.
pub fn compute_tensor_constants(
    kind: NonlinearityKind,
    sigma: f64,
    coeffs: &OutputCoefficients,
) -> Result<TensorConstants> {
    let report = residual_report(kind, sigma, coeffs)?;
    if !report.valid {
        return Err(MoeError::InvalidNonlinearity(format!(
            "{kind} at sigma={sigma}: residuals {:?}/{:.3e}, c4={:.3e}, c2={:.3e}",
            report.cond1_residuals, report.cond2_residual, report.c4, report.c2
        )));
    }
    Ok(TensorConstants {
        c4: report.c4,
        c2: report.c2,
    })
}
