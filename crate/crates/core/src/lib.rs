//! Bus arbitration by wave interference.
//!
//! A home node broadcasts one token per priority rank as a carrier on a shared
//! transmission line. A competing node captures its token by emitting the same
//! carrier shifted by π, which erases the token for every node downstream and
//! sends a backward wave that tells every node upstream who took part.
//!
//! * [`signal`]: carrier synthesis and I/Q correlation demodulation
//! * [`medium`]: the transmission line as two traveling-wave delay buffers
//! * [`protocol`]: broadcast, capture, verdicts and competitor inference
//! * [`statistics`]: history, fairness and priority reallocation
//! * [`harness`]: oracle, equivalence sweeps, latency model
//! * [`scenario`] and [`runner`]: configuration files and batch runs

pub mod error;
pub mod harness;
pub mod medium;
pub mod protocol;
pub mod runner;
pub mod scenario;
pub mod signal;
pub mod statistics;

pub use error::{Error, Result};
pub use medium::{Direction, LineGeometry, NodeId, TransmissionLine, HOME};
pub use protocol::{
    run_round, run_serial_round, Bus, EmissionPhase, Fidelity, NodeConfig, RoundOutcome, RoundPlan,
    Scheme, Timebase, TokenSet,
};
pub use runner::{cmd_compare, cmd_run, cmd_selftest, RunReport};
pub use scenario::{load_config, ScenarioConfig};
pub use signal::{Carrier, DemodResult, Waveform};
pub use statistics::{History, Policy, Priority};
