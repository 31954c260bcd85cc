//! Fault detection and isolation for overactuated linear systems with banks of
//! constrained-output-fault-direction unknown input observers, plus control
//! re-allocation once a faulty actuator group has been isolated.
//!
//! The modules follow the data flow of a run: [`plant`] describes the system,
//! [`allocation`] turns commanded effects into inputs, [`observers`] designs
//! the residual generators, [`fdi`] turns residuals into decisions and
//! [`simkit`] closes the loop.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod allocation;
pub mod error;
pub mod fdi;
pub mod matrixlab;
pub mod observers;
pub mod plant;
pub mod simkit;

pub use error::{Error, Result};
