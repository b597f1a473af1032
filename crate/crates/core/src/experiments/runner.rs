use nalgebra::{DVector, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::{compute_metrics, Metrics};
use super::scenario::Scenario;
use super::trace::{ScenarioTrace, TraceRow};
use crate::controllers::{controller_step, target_lengths, ControlInputs, ControllerKind, ControllerState};
use crate::error::{Error, Result};
use crate::estimator::EkfState;
use crate::model::kinematics::fk_unchecked;
use crate::model::{fit_model_polynomials, JointAngles, MusculoskeletalModel, PolynomialSet};
use crate::plant::{classify_pair_state, measured_lengths, step, ExternalLoad, PlantConfig, PlantState, ViaPointPerturbation};

/// Rows included in a divergence dump.
pub const DUMP_ROWS: usize = 100;

/// Length polynomials for a scenario's model: read from the scenario's cache
/// file when one is named and present, fitted otherwise.
pub fn scenario_polynomials(scenario: &Scenario) -> Result<PolynomialSet> {
    if let Some(path) = &scenario.fit_cache {
        if path.exists() {
            let polys = PolynomialSet::load(path)?;
            if polys.dof != scenario.model.dof() || polys.muscle_count() != scenario.model.muscle_count() {
                return Err(Error::Validation {
                    path: "fit.cache".into(),
                    message: format!("cache {} does not match robot `{}`", path.display(), scenario.model.name),
                });
            }
            return Ok(polys);
        }
    }
    fit_model_polynomials(&scenario.model, &scenario.fit)
}

/// Unit direction, in the point's link frame, that lengthens the route fastest
/// at posture `theta`.
fn lengthening_direction(model: &MusculoskeletalModel, muscle: usize, point: usize, theta: &JointAngles) -> Result<Vector3<f64>> {
    let frames = fk_unchecked(model.tree(), theta.as_slice());
    let route = &model.muscles()[muscle];
    let world: Vec<Point3<f64>> = route.points.iter().map(|p| frames[p.link] * Point3::from(p.offset)).collect();
    let mut grad = Vector3::zeros();
    if point > 0 {
        grad += (world[point] - world[point - 1]).normalize();
    }
    if point + 1 < world.len() {
        grad += (world[point] - world[point + 1]).normalize();
    }
    let norm = grad.norm();
    if !(norm > 1e-9) {
        return Err(Error::InvalidInput(format!(
            "point {point} of `{}` lies on a straight segment; no lengthening direction",
            route.name
        )));
    }
    Ok(frames[route.points[point].link].rotation.inverse() * (grad / norm))
}

/// Fixed perturbations plus the seeded sweep draw.
///
/// Sweep points move along their path-lengthening direction at the initial
/// posture by a magnitude drawn uniformly from the configured range.
pub fn sample_perturbations(scenario: &Scenario, seed: u64) -> Result<Vec<ViaPointPerturbation>> {
    let mut out = scenario.perturbations.clone();
    if let Some(sweep) = &scenario.sweep {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = sweep.magnitude;
        for &(m, p) in &sweep.points {
            let mag = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let dir = lengthening_direction(&scenario.model, m, p, &scenario.initial)?;
            out.push(ViaPointPerturbation {
                muscle: m,
                point: p,
                offset: dir * mag,
            });
        }
    }
    Ok(out)
}

/// Load acting during the tick that starts at `t`.
fn load_at(scenario: &Scenario, t: f64) -> ExternalLoad {
    let mut load = scenario.load.clone();
    if load.torques.is_empty() {
        load.torques = DVector::zeros(scenario.model.dof());
    }
    for d in &scenario.disturbances {
        if t >= d.start && t < d.end {
            load.torques += &d.torques;
        }
    }
    load
}

/// Output of one closed-loop run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub kind: ControllerKind,
    pub seed: u64,
    pub perturbations: Vec<ViaPointPerturbation>,
    pub trace: ScenarioTrace,
    pub metrics: Metrics,
}

/// Runs the scenario's controller with its own seed.
pub fn run_scenario(scenario: &Scenario) -> Result<(ScenarioTrace, Metrics)> {
    let polys = scenario_polynomials(scenario)?;
    let out = run_with_polynomials(scenario, &polys)?;
    Ok((out.trace, out.metrics))
}

/// Runs the scenario against precomputed polynomials.
pub fn run_with_polynomials(scenario: &Scenario, polys: &PolynomialSet) -> Result<RunOutput> {
    let perturbations = sample_perturbations(scenario, scenario.seed)?;
    run_with_plant(scenario, polys, perturbations)
}

/// Runs the scenario on a plant with exactly these perturbations.
pub fn run_with_plant(
    scenario: &Scenario,
    polys: &PolynomialSet,
    perturbations: Vec<ViaPointPerturbation>,
) -> Result<RunOutput> {
    let model = &scenario.model;
    let (n, l) = (model.dof(), model.muscle_count());
    if polys.dof != n || polys.muscle_count() != l {
        return Err(Error::DimensionMismatch {
            what: "polynomial set",
            expected: l,
            got: polys.muscle_count(),
        });
    }
    let params = &scenario.controller;
    params.validate()?;
    let cfg = PlantConfig::new(model, perturbations.clone(), &scenario.plant)?;

    let mut plant = PlantState::at_rest(&cfg, &scenario.initial)?;
    // Wires start pre-tensioned at the bias so the run opens without slack.
    plant.tensions.fill(params.t_bias);
    let mut ekf = EkfState::new(model.tree(), &scenario.initial, l, &scenario.estimator)?;
    let mut ctrl = ControllerState::new(params, l);

    let dt = 1.0 / scenario.control_rate;
    let substeps = (scenario.physics_rate / scenario.control_rate).round().max(1.0) as usize;
    let dt_phys = dt / substeps as f64;
    let ticks = (scenario.duration * scenario.control_rate).round() as usize;
    let needs_jacobian = matches!(params.kind, ControllerKind::Jaic | ControllerKind::Jsc);

    let mut trace = ScenarioTrace::new(model);
    trace.rows.reserve(ticks);
    let diverged = |trace: &ScenarioTrace, t: f64, e: Error| Error::Diverged {
        time: t,
        reason: e.to_string(),
        dump: trace.tail_csv(DUMP_ROWS),
    };

    for k in 0..ticks {
        let t = k as f64 * dt;
        let l_meas = measured_lengths(&cfg, &plant);
        if k > 0 {
            ekf = ekf.predict(dt)?;
        }
        ekf = ekf.update(&l_meas, polys)?.state;

        let theta_target = scenario.target_at(t);
        let (l_target, _) = target_lengths(model, &theta_target)?;
        let jac = if needs_jacobian {
            Some(polys.jacobian(&ekf.theta_hat)?)
        } else {
            None
        };
        let inputs = ControlInputs {
            theta_hat: &ekf.theta_hat,
            l_meas: &l_meas,
            theta_target: &theta_target,
            l_target: &l_target,
            jacobian: jac.as_ref(),
        };
        let (next, out) = controller_step(params, &ctrl, &inputs, dt).map_err(|e| diverged(&trace, t, e))?;
        ctrl = next;

        let settled = plant.theta_dot.iter().all(|v| v.abs() < scenario.thresholds.settle_speed);
        let pair_states = model
            .pairs()
            .iter()
            .map(|&(a, b)| {
                let th = &scenario.thresholds;
                classify_pair_state(
                    th.level(plant.tensions[a], params.t_bias),
                    th.level(plant.tensions[b], params.t_bias),
                    settled,
                )
            })
            .collect();
        trace.rows.push(TraceRow {
            time: t,
            theta: plant.theta.0.clone(),
            theta_dot: plant.theta_dot.clone(),
            theta_hat: ekf.theta_hat.0.clone(),
            theta_target: theta_target.0,
            commands: out.commands.clone(),
            tensions: plant.tensions.clone(),
            lengths: l_meas.0,
            target_lengths: l_target.0,
            stiffness: ctrl.stiffness.clone(),
            agonist: ctrl.flags.agonist.clone(),
            s: ctrl.flags.s.clone(),
            temperatures: plant.temperatures.clone(),
            pair_states,
        });

        let load = load_at(scenario, t);
        for _ in 0..substeps {
            plant = step(&cfg, &plant, &out.commands, &load, dt_phys).map_err(|e| diverged(&trace, t, e))?;
        }
    }

    let metrics = compute_metrics(&trace, &scenario.hold_phases(), params.t_bias);
    Ok(RunOutput {
        kind: params.kind,
        seed: scenario.seed,
        perturbations,
        trace,
        metrics,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonEntry {
    pub kind: ControllerKind,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Serialize)]
pub struct TensionRatio {
    pub numerator: ControllerKind,
    pub denominator: ControllerKind,
    pub max_tension_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub scenario: String,
    pub seed: u64,
    pub entries: Vec<ComparisonEntry>,
    pub ratios: Vec<TensionRatio>,
}

impl Comparison {
    pub fn ratio(&self, numerator: ControllerKind, denominator: ControllerKind) -> Option<f64> {
        self.ratios
            .iter()
            .find(|r| r.numerator == numerator && r.denominator == denominator)
            .map(|r| r.max_tension_ratio)
    }

    pub fn metrics(&self, kind: ControllerKind) -> Option<&Metrics> {
        self.entries.iter().find(|e| e.kind == kind).map(|e| &e.metrics)
    }
}

/// Runs every kind on the same plant and returns the traces alongside the table.
pub fn compare_with_traces(
    scenario: &Scenario,
    polys: &PolynomialSet,
    kinds: &[ControllerKind],
) -> Result<(Comparison, Vec<RunOutput>)> {
    if kinds.len() < 2 || kinds.iter().enumerate().any(|(i, k)| kinds[..i].contains(k)) {
        return Err(Error::InvalidInput("compare needs at least two distinct controller kinds".into()));
    }
    let perturbations = sample_perturbations(scenario, scenario.seed)?;
    let runs = kinds
        .iter()
        .map(|&k| run_with_plant(&scenario.with_controller(k), polys, perturbations.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut ratios = Vec::new();
    for a in &runs {
        for b in &runs {
            if a.kind != b.kind {
                ratios.push(TensionRatio {
                    numerator: a.kind,
                    denominator: b.kind,
                    max_tension_ratio: a.metrics.max_tension / b.metrics.max_tension,
                });
            }
        }
    }
    let table = Comparison {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        entries: runs
            .iter()
            .map(|r| ComparisonEntry {
                kind: r.kind,
                metrics: r.metrics.clone(),
            })
            .collect(),
        ratios,
    };
    Ok((table, runs))
}

pub fn compare_controllers(scenario: &Scenario, kinds: &[ControllerKind]) -> Result<Comparison> {
    if kinds.len() < 2 {
        return Err(Error::InvalidInput("compare needs at least two distinct controller kinds".into()));
    }
    let polys = scenario_polynomials(scenario)?;
    Ok(compare_with_traces(scenario, &polys, kinds)?.0)
}
