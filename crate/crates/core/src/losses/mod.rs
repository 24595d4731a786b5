//! Loss functions with hand-derived gradients.
//!
//! * [`l4`]: quartic-moment loss over the regressors.
//! * [`gating`]: negative log-likelihood over the gating parameters with the
//!   regressors held fixed, and the expert posterior.
//! * [`l2`]: squared error of the mixture mean, the classical baseline.
//! * [`population`]: closed-form population value of the quartic loss.

pub mod gating;
pub mod l2;
pub mod l4;
pub mod population;

use std::ops::Range;

pub use gating::{
    llog_gradient_w, llog_gradient_w_on, llog_value, llog_value_on, posterior, GatingContext,
    SIGMA_FLOOR,
};
pub use l2::{l2_gradients, l2_gradients_on, l2_value, l2_value_on};
pub use l4::{
    l4_gradient, l4_gradient_on, l4_value, l4_value_and_gradient_on, l4_value_jackknife,
    l4_value_on, L4Context,
};
pub use population::{expected_gating, l4_population_oracle, l4_population_value};

/// Which samples of a dataset a loss is evaluated on.
#[derive(Debug, Clone)]
pub enum Rows<'a> {
    All,
    Range(Range<usize>),
    Indices(&'a [usize]),
}

impl Rows<'_> {
    pub(crate) fn count(&self, n: usize) -> usize {
        match self {
            Rows::All => n,
            Rows::Range(r) => r.len(),
            Rows::Indices(idx) => idx.len(),
        }
    }

    pub(crate) fn for_each(&self, n: usize, mut f: impl FnMut(usize)) {
        match self {
            Rows::All => (0..n).for_each(f),
            Rows::Range(r) => r.clone().for_each(f),
            Rows::Indices(idx) => idx.iter().for_each(|&i| f(i)),
        }
    }
}
