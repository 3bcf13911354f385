//! Cycle-level simulator of a speculative multithreading chip multiprocessor
//! whose threads start by running a pre-computation slice.
//!
//! Programs are written in a small assembly language ([`isa`]). A run on the
//! speculative machine ([`sim::run_speculative`]) is always checked against
//! the plain sequential execution of the same program.

pub mod bus;
pub mod corpus;
pub mod error;
pub mod isa;
pub mod memcache;
pub mod regcache;
pub mod sim;
pub mod thread;
pub mod trace;
pub mod verify;

pub use error::SimError;
pub use isa::{parse_program, Program};
pub use sim::{run_sequential, run_speculative, run_speculative_traced, MachineConfig, RunResult, RunStats};
