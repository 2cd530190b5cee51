//! Channel-time allocation in multi-rate, AP-based wireless LANs.
//!
//! The crate has three layers:
//!
//! * [`analytic`] evaluates per-node channel shares and throughputs in closed
//!   form, under throughput-based fairness (what DCF delivers) and under
//!   time-based fairness (equal channel occupancy time per node).
//! * [`sim`] is a deterministic discrete-event simulator of an 802.11b-like
//!   channel. The access point either serves its per-node queues round-robin
//!   ([`SchedulerKind::Dcf`]) or runs the time-based regulator from [`tbr`].
//! * [`metrics`] and [`trace`] turn event logs and packet traces into
//!   fairness and efficiency measures.
//!
//! Times are microseconds and throughputs are Mbps throughout.

pub mod analytic;
pub mod calibrate;
pub mod mac;
pub mod metrics;
pub mod node;
pub mod queue;
pub mod scenario;
pub mod sim;
pub mod tbr;
pub mod trace;
pub mod workload;

pub use analytic::{AllocationReport, BaselineTable, ComparisonReport, Regime};
pub use mac::{Frame, FrameKind, TimingConstants, TransferOutcome};
pub use node::{DataRate, Direction, NodeId, NodeSpec};
pub use scenario::{Scenario, SchedulerKind};
pub use sim::{EventLog, EventRecord, SimOutput, Simulator};
pub use tbr::{TbrConfig, TbrScheduler, TokenState};
pub use workload::SourceSpec;
