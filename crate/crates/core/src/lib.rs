//! Semi-implicit weighted-H⁻¹ solver for the 1D periodic crystal surface
//! equation `∂ₜh = Δ e^{−Δ₁h}`, with a primal-dual inner solver.

mod banded;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod grid;
pub mod mobility;
pub mod output;
pub mod pdhg;
pub mod variational;

pub use error::{Error, Result};
