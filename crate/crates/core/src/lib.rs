//! Two-timescale stability toolkit for power system models.
//!
//! The complete dynamic model couples slow continuous states (governor
//! stages, excitation limiters, recovering loads), slow discrete states
//! (transformer taps), fast machine and regulator dynamics, and the network
//! algebraic constraints. Three views of that model can be simulated side by
//! side:
//!
//! - the transient view (fast + algebraic, slow frozen),
//! - the complete long-term hybrid view,
//! - the quasi steady-state view (fast dynamics replaced by their
//!   equilibrium conditions).
//!
//! On top of the runs, [`checker`] mechanically verifies the sufficient
//! conditions for the quasi steady-state reduction to be trustworthy:
//! singularity freedom, stable-manifold membership along the reduced run,
//! attraction of the handoff point, attraction after every discrete jump,
//! and agreement of trajectories and terminal behavior.

pub mod algebra;
pub mod checker;
pub mod cli;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod layout;
pub mod model;
pub mod net;
pub mod regions;
pub mod scenario;
pub mod sim;

pub use layout::{Layout, PartitionedState, VarClass};
pub use model::{DiscreteEvent, Model, TimerState};
pub use sim::{SimConfig, Termination, Trajectory};
