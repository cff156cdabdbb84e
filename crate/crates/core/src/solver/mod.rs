//! The forward solver: bounded coefficient realization, CFL caps, and forward-Euler rollout.

mod step;
mod terms;

pub use step::{euler_step, solve, Kernel};
pub use terms::{
    cfl_caps, cfl_report, default_specs, realize, realize_value, sigmoid, validate_specs, CflCaps,
    CflReport, CoeffSet, Coefficients, TermKind, TermSpec,
};
