//! Reference scenarios built on `trajsim-core`:
//!
//! * [`crosshaul`]: fronthaul and backhaul packets crossing tandem packet
//!   forwarding elements under FIFO, strict priority and preemptive priority.
//! * [`pon`]: upstream TDM-PON with an IPACT-like dynamic bandwidth
//!   allocation, shared by residential ONUs and a small cell or a radio head.
//! * [`mm1`]: the M/M/1 queue, for validation.
//! * [`miot`]: NB-IoT smart meters contending for random-access preambles,
//!   with energy accounting per reading.
//!
//! Each module exposes a config type, a builder returning a ready
//! [`trajsim_core::Environment`], a `run_case` helper and a `summarize`
//! function producing a long-format [`SummaryTable`].

pub mod crosshaul;
pub mod miot;
pub mod mm1;
pub mod pon;
mod summary;

pub use summary::{SummaryRow, SummaryTable};

/// Outcome of running one scenario case.
#[derive(Debug)]
pub struct CaseOutput {
    pub monitor: trajsim_core::MonitorStore,
    pub events: u64,
    pub summary: SummaryTable,
}
