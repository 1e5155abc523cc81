//! Deterministic simulation and analysis of k-set agreement in asynchronous
//! message-passing systems with crash failures.
//!
//! - [`model`]: processes, messages, steps, traces and failure patterns.
//! - [`sim`]: the executor, adversaries, restriction and run pasting.
//! - [`protocol`]: the two-stage agreement protocol for initially dead
//!   processes.
//! - [`graph`]: strongly connected and source components.
//! - [`detectors`]: Σ_k / Ω_k history checkers and the partition detector.
//! - [`analysis`]: property checkers, indistinguishability, solvability.
//! - [`sweep`]: grid sweeps over `(n, f, k)`.

pub mod analysis;
pub mod detectors;
pub mod graph;
pub mod model;
pub mod par;
pub mod protocol;
pub mod sim;
pub mod sweep;
pub mod verdict;

pub use model::codec::{parse_trace, write_trace, CodecError};
pub use model::{ProcessId, SystemParams, Trace, Value};
pub use protocol::TwoStage;
pub use sim::{run_simulation, Scenario};
pub use verdict::{Outcome, Verdict, Witness};
