//! Energy-tank passivation of port-Hamiltonian systems.
//!
//! * [`ph_core`]: plants in input-state-output port-Hamiltonian form.
//! * [`tank`]: the tank, its interconnection with the plant and the valves.
//! * [`closed_loop`]: plant + tank + action + environment as one vector field.
//! * [`sim`]: fixed-step integration into a [`trace::Trace`].
//! * [`audit`]: passivity checks over traces.
//! * [`scenarios`]: built-in reproducible loops.
//! * [`cli`]: the `etank` command-line front end.

pub mod audit;
pub mod cli;
pub mod closed_loop;
pub mod error;
pub mod ph_core;
pub mod scenarios;
pub mod sim;
pub mod tank;
pub mod trace;

pub use error::{Error, Result};
