//! Optimal real-time encoding, decoding and memory-update design for a Markov
//! source sent over a discrete memoryless channel to a finite-memory receiver.
//!
//! The design problem is solved as a deterministic control problem over
//! information states ([`belief`]), either exactly for a finite horizon
//! ([`solver_finite`]) or to a prescribed accuracy for a discounted infinite
//! horizon ([`solver_infinite`]). [`oracle`] brute-forces the original design
//! space on small instances and [`sim`] checks designs by simulation.

pub mod belief;
pub mod design;
pub mod error;
pub mod exec;
pub mod model;
pub mod oracle;
pub mod sim;
pub mod solver_finite;
pub mod solver_infinite;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use model::{load_instance, validate, Horizon, ProblemInstance, ValidatedInstance};
