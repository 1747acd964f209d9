//! Layered porous filter simulator: stochastic particle blocking and
//! sediment sealing of apertures in a cubic-cell pressure network.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod design;
pub mod engine;
pub mod hydraulics;
pub mod model;
pub mod roots;
pub mod sediment;

pub use engine::{run, Simulation, SimulationTrace, Snapshot, StopReason};
pub use model::{build_grid, CellGrid, Chemistry, FilterConfig};
