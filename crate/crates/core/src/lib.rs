//! Lyapunov forms and explicit decay envelopes for defective linear ODE systems.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod family;
pub mod field;
pub mod jordan;
pub mod linalg;
pub mod lyapunov;
pub mod models;
pub mod oracle;

pub use error::{Error, Result};
pub use linalg::{CMatrix, C64};
