//! Output transforms (quartic/quadratic), input transforms, Gaussian score
//! tensors and the coefficient solver that makes a nonlinearity usable.

mod coefficients;
mod moments;
mod poly;
mod score;

pub use coefficients::{
    check_validity, compute_tensor_constants, solve_output_coefficients, NonlinearityProfile,
    OutputCoefficients, TensorConstants, ValidityReport, CONDITION_GUARD, SOLVER_TOLERANCE,
};
pub use moments::{gaussian_activation_moment, gaussian_activation_moment_with, GaussHermite};
pub use poly::{q2, q4, t1, t1_numerator, t2, t2_numerator, t3};
pub use score::{score_s2, score_s4, Tensor4, MAX_DENSE_S4_DIM};
