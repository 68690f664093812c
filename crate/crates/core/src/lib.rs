//! Microgrid blackout mitigation: a chance-constrained storage reservation
//! scheduler and a max/min-consensus controller for islanded operation.
//!
//! Power sign convention throughout: consumption is positive, injection is
//! negative. Energies are kWh, powers kW, SoC kWh.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agents;
pub mod cli;
pub mod consensus;
pub mod error;
pub mod forecast;
pub mod grid;
pub mod milp;
pub mod scheduler;
pub mod sim;

pub use error::{Error, Result};
