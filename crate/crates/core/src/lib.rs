// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod auditing;
pub mod calibration;
pub mod configs;
pub mod error;
pub mod pool;
pub mod profiles;
pub mod risk;
pub mod sim;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
