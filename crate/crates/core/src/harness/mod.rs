//! Scenario configuration, ground-truth simulation, measurement sampling,
//! Monte Carlo evaluation and CSV output.

mod compare;
mod config;
mod experiment;
mod output;
mod sampling;
mod truth;

pub use compare::{schwarz_check, single_node_oracle, OracleReport, SchwarzPoint};
pub use config::{
    robin_terms, BoundaryEntry, BoundaryKind, DomainSpec, FilterSpec, MonteCarlo, Physics, Sampling, Scenario, Shape,
    PRESETS,
};
pub use experiment::{
    run_experiment, ExperimentOptions, ExperimentResult, Prepared, SweepPoint, TruthSamples, Variant, VariantResult,
    EVAL_SPACING, FREEZE_TOL,
};
pub use output::{write_field_csv, write_outputs};
pub use sampling::{evaluation_lattice, rmse, sample_measurements, sensor_rng, PointProbe};
pub use truth::{simulate_truth, simulate_truth_with_step, truth_mesh, TruthTrajectory};
