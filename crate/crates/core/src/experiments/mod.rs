//! Scenarios, the closed-loop runner, metrics and trace export.

mod metrics;
mod models;
mod runner;
mod scenario;
mod trace;

pub use metrics::{compute_metrics, HoldMetrics, Metrics, SLACK_FRACTION_OF_BIAS, SLACK_TRANSIENT};
pub use models::{builtin_names, builtin_robot, builtin_source};
pub use runner::{
    compare_controllers, compare_with_traces, run_scenario, run_with_plant, run_with_polynomials,
    sample_perturbations, scenario_polynomials, Comparison, ComparisonEntry, RunOutput, TensionRatio, DUMP_ROWS,
};
pub use scenario::{Disturbance, HoldPhase, PerturbationSweep, RobotSource, Scenario, Waypoint};
pub use trace::{export_trace, ScenarioTrace, TraceRow};
