//! Deterministic multi-robot coverage control.
//!
//! The crate simulates a team of robots covering a square grid world under an
//! importance density field. It provides three Lloyd-style CVT baselines and a
//! runtime for a learned perception / GNN communication / MLP action policy
//! whose graph network executes as independent robots passing messages.

pub mod action;
pub mod arch;
pub mod cvt;
pub mod geom;
pub mod gnn_comms;
pub mod harness;
pub mod io;
pub mod perception;
pub mod rng;
pub mod voronoi;
pub mod world;

pub use arch::{Architecture, ShapeError};
pub use geom::Vec2;
pub use world::{ImportanceField, WorldParams, WorldState};
