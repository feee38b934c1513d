//! Process-oriented discrete-event simulation.
//!
//! Arrivals are created by [`Generator`]s and step through a [`Trajectory`]
//! of activities: timeouts, seizing and releasing [`Resource`]s, attribute
//! updates, branches, rollbacks and signals. Every arrival and resource
//! change is recorded in a [`MonitorStore`] that can be exported to CSV.
//!
//! ```
//! use trajsim_core::{Environment, Generator, ResourceSpec, Trajectory};
//!
//! let mut env = Environment::new("bank", 7);
//! env.add_resource(ResourceSpec::new("clerk", 1)).unwrap();
//! let customer = Trajectory::new("customer")
//!     .seize("clerk", 1)
//!     .timeout(2.0)
//!     .release("clerk", 1);
//! let mut left = 3;
//! env.add_generator(Generator::new("c", customer, move |_| {
//!     left -= 1;
//!     if left >= 0 { 1.0 } else { -1.0 }
//! }))
//! .unwrap();
//! env.run(f64::INFINITY).unwrap();
//! assert_eq!(env.now(), 7.0);
//! ```

pub mod env;
pub mod error;
pub mod monitor;
pub mod oracles;
pub mod resource;
pub mod rng;
pub mod stats;
pub mod trajectory;

pub use env::{ActivityCtx, Environment, EventId, Generator, MonitorLevel, RunReport};
pub use error::{Result, SimError};
pub use monitor::{
    fmt_real, queueing_delay, wait_time, ArrivalRecord, AttributeRecord, MonitorStore, ResourceRecord,
};
pub use oracles::{hol_priority_wq, md1_wq, mean_residual, mg1_wq, mm1_wq, TrafficClass};
pub use resource::{PreemptFate, Resource, ResourceSpec};
pub use rng::{Exponential, RngStream, TrimodalPacket};
pub use stats::{boxplot, percentile, BoxplotSummary};
pub use trajectory::{
    Activity, Repeat, ResourceRef, SelectPolicy, SubTrajectory, Trajectory, Value,
};

/// Simulation time in seconds.
pub type SimTime = f64;

/// Traffic class over `f64`, the precision used by the engine.
pub type TrafficClassF64 = TrafficClass<f64>;
/// Boxplot summary over `f64`.
pub type Boxplot = BoxplotSummary<f64>;
