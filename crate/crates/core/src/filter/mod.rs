//! Centralized and distributed finite-element Kalman filters.

pub mod central;
pub mod distributed;
pub mod runtime;

pub use central::{correct, kalman_gain, predict, CentralConfig, CentralSchedule, FilterState, Phase, Trajectory};
pub use distributed::{
    consensus_round, covariance_round, gather_global_estimate, local_correct, run_sampling_cycle, DistributedConfig,
    DistributedSchedule, Execution, NodeState,
};
pub use runtime::{BoundaryMessage, InProcessTransport, TraceEntry, Transport};
