//! Tendon-driven musculoskeletal simulation with antagonist inhibition control.
//!
//! [`model`] holds the geometric model and its polynomial muscle Jacobian,
//! [`plant`] the simulated robot, [`estimator`] the joint-angle EKF,
//! [`controllers`] the tension laws and [`experiments`] the scenario runner.

pub mod controllers;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod model;
pub mod plant;
pub mod units;

pub use controllers::{ControllerKind, ControllerParams};
pub use error::{Error, Result};
pub use estimator::{EkfParams, EkfState};
pub use experiments::{compare_controllers, export_trace, run_scenario, Comparison, Metrics, Scenario, ScenarioTrace};
pub use model::{JointAngles, MuscleLengths, MusculoskeletalModel, PolynomialSet};
pub use plant::{ExternalLoad, PlantConfig, PlantParams, PlantState};
