//! Simulation library for an adaptive piezoelectric energy harvesting chain.
//!
//! The chain couples a hysteretic cantilever transducer to a synchronous
//! charge-extraction rectifier, a switched capacitor array that retunes the
//! electrical resonance from a lookup table, and a buck converter driven by
//! a hybrid maximum power point tracker. Continuous dynamics integrate with
//! an adaptive embedded Runge-Kutta scheme; discrete actions (extraction at
//! displacement extrema, diode switching, controller ticks, retunes, load
//! steps) are located exactly and applied between integration spans.

pub mod config;
pub mod excitation;
pub mod harness;
pub mod integrator;
pub mod mppt;
pub mod params;
pub mod powertrain;
pub mod sca;
pub mod sece;
pub mod sim;
pub mod transducer;

pub use config::{ConfigError, RunConfig};
pub use harness::{HarnessError, RunReport};
pub use params::HarvesterParams;
pub use sim::{run_sim, RunOutput, SimOptions};
