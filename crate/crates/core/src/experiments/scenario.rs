//! Scenario files (TOML).
//!
//! ```toml
//! name = "elbow flexion"
//! robot = "builtin:elbow-3"        # or a path relative to this file
//! duration = 12.0                  # s
//! seed = 1
//! initial = [0.0]                  # deg, optional
//!
//! [rates]
//! control = 100.0                  # Hz
//! physics = 1000.0                 # Hz
//!
//! [[waypoint]]                     # targets interpolate linearly from the
//! time = 3.0                       # previous waypoint (or the initial posture)
//! target = [-30.0]                 # deg
//!
//! [controller]                     # every field optional
//! kind = "jaic"
//! t_bias = 2.0                     # kgf
//! k = 10.0                         # kgf/mm
//! c = 0.0                          # m/rad, "inf" allowed
//! t_k = 1000.0                     # ms
//! epsilon_theta = 0.5              # deg
//! jsc = { kp = 20.0, kd = 2.0 }    # N·m/rad, N·m·s/rad
//!
//! [estimator]
//! q = 1.0                          # process noise, (deg/s)² per joint
//! r = 0.5                          # measurement noise std, mm
//! p0 = 10.0                        # initial std, deg
//!
//! [plant]
//! compliance = 2e-4                # m/kgf
//! tau_a = 0.05                     # s
//! damping = 1.5                    # N·m·s/rad
//! inertia = 0.05                   # kg·m²
//! gravity = [0.0, -9.81, 0.0]      # m/s²
//! t_max = 55.0                     # kgf
//! t_heat = 30.0                    # kgf
//! thermal = { heat_rate = 0.05, cool_rate = 0.02, ambient = 25.0 }
//! load = { torques = [0.0], point_mass = { link = "forearm", offset = [0.0, -0.3, 0.0], mass = 3.0 } }
//!
//! [[plant.perturbation]]           # fixed model error
//! muscle = "biceps"
//! point = 1                        # index into the route's points
//! offset_mm = [0.0, -5.0, 0.0]     # link frame
//!
//! [plant.sweep]                    # random model error drawn from the seed
//! magnitude_mm = [0.0, 8.0]
//! points = [{ muscle = "biceps", point = 1 }]
//!
//! [[plant.disturbance]]            # joint torque applied over [start, end)
//! start = 4.0
//! end = 5.0
//! torques = [-3.0]                 # N·m
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use serde::Deserialize;

use crate::controllers::{ControllerKind, ControllerParams, JscGains};
use crate::error::{Error, Result};
use crate::estimator::EkfParams;
use crate::model::{load_robot, FitOptions, JointAngles, LineIndex, MusculoskeletalModel};
use crate::plant::{
    ExternalLoad, PairThresholds, PlantConfig, PlantParams, PointMass, ThermalParams, ViaPointPerturbation,
};

use super::models::builtin_robot;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    robot: String,
    duration: f64,
    #[serde(default)]
    seed: u64,
    initial: Option<Vec<f64>>,
    #[serde(default)]
    rates: RawRates,
    #[serde(default, rename = "waypoint")]
    waypoints: Vec<RawWaypoint>,
    #[serde(default)]
    controller: RawController,
    #[serde(default)]
    estimator: RawEstimator,
    #[serde(default)]
    plant: RawPlant,
    #[serde(default)]
    fit: RawFit,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRates {
    #[serde(default = "default_control_rate")]
    control: f64,
    #[serde(default = "default_physics_rate")]
    physics: f64,
}

fn default_control_rate() -> f64 {
    100.0
}

fn default_physics_rate() -> f64 {
    1000.0
}

impl Default for RawRates {
    fn default() -> Self {
        Self {
            control: default_control_rate(),
            physics: default_physics_rate(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWaypoint {
    time: f64,
    target: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    kind: Option<ControllerKind>,
    t_bias: Option<f64>,
    k: Option<f64>,
    c: Option<f64>,
    t_k: Option<f64>,
    epsilon_theta: Option<f64>,
    jsc: Option<JscGains>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimator {
    q: Option<f64>,
    r: Option<f64>,
    p0: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    compliance: Option<f64>,
    tau_a: Option<f64>,
    damping: Option<f64>,
    inertia: Option<f64>,
    gravity: Option<[f64; 3]>,
    t_max: Option<f64>,
    t_heat: Option<f64>,
    thermal: Option<ThermalParams>,
    load: Option<RawLoad>,
    #[serde(default, rename = "perturbation")]
    perturbations: Vec<RawPerturbation>,
    sweep: Option<RawSweep>,
    #[serde(default, rename = "disturbance")]
    disturbances: Vec<RawDisturbance>,
    pair_thresholds: Option<PairThresholds>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoad {
    #[serde(default)]
    torques: Vec<f64>,
    point_mass: Option<RawPointMass>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPointMass {
    link: String,
    #[serde(default)]
    offset: [f64; 3],
    mass: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerturbation {
    muscle: String,
    point: usize,
    offset_mm: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    magnitude_mm: [f64; 2],
    points: Vec<RawPointRef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPointRef {
    muscle: String,
    point: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDisturbance {
    start: f64,
    end: f64,
    torques: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFit {
    degree: Option<u32>,
    samples_per_joint: Option<usize>,
    cache: Option<String>,
}

/// Where the robot description came from.
#[derive(Clone, Debug, PartialEq)]
pub enum RobotSource {
    Builtin(String),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Waypoint {
    /// s.
    pub time: f64,
    pub target: JointAngles,
}

/// Random path-lengthening displacement of selected attachment points.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSweep {
    /// (muscle, point) pairs.
    pub points: Vec<(usize, usize)>,
    /// Magnitude range, m.
    pub magnitude: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Disturbance {
    pub start: f64,
    pub end: f64,
    /// N·m per joint.
    pub torques: DVector<f64>,
}

/// A validated scenario with the robot model resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub robot: RobotSource,
    pub model: MusculoskeletalModel,
    pub duration: f64,
    pub seed: u64,
    pub initial: JointAngles,
    pub control_rate: f64,
    pub physics_rate: f64,
    pub waypoints: Vec<Waypoint>,
    pub controller: ControllerParams,
    pub estimator: EkfParams,
    pub plant: PlantParams,
    pub load: ExternalLoad,
    pub perturbations: Vec<ViaPointPerturbation>,
    pub sweep: Option<PerturbationSweep>,
    pub disturbances: Vec<Disturbance>,
    pub thresholds: PairThresholds,
    pub fit: FitOptions,
    /// Polynomial cache file to read instead of fitting.
    pub fit_cache: Option<PathBuf>,
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Validation {
        path: path.into(),
        message: message.into(),
    }
}

fn finite(path: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(path, "must be finite"))
    }
}

fn positive(path: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(path, format!("must be > 0, got {v}")))
    }
}

fn angles_deg(path: &str, v: &[f64], n: usize) -> Result<JointAngles> {
    if v.len() != n {
        return Err(invalid(path, format!("expected {n} joint angles, got {}", v.len())));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(invalid(path, "angles must be finite"));
    }
    Ok(JointAngles::from_degrees(v))
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Parses scenario text. Relative robot and cache paths resolve against `base`.
    pub fn parse(text: &str, file: &str, base: &Path) -> Result<Self> {
        let idx = LineIndex::new(text, file);
        let raw: RawScenario = toml::from_str(text).map_err(|e| idx.parse_error(e))?;
        Self::build(raw, base)
    }

    fn build(raw: RawScenario, base: &Path) -> Result<Self> {
        let (robot, model) = if let Some(name) = raw.robot.strip_prefix("builtin:") {
            let model = builtin_robot(name).ok_or_else(|| invalid("robot", format!("no builtin robot `{name}`")))??;
            (RobotSource::Builtin(name.to_string()), model)
        } else {
            let p = base.join(&raw.robot);
            let model = load_robot(&p)?;
            (RobotSource::File(p), model)
        };
        let n = model.dof();
        let tree = model.tree();

        let duration = positive("duration", raw.duration)?;
        let control_rate = raw.rates.control;
        let physics_rate = raw.rates.physics;
        if !(control_rate >= 1.0 && control_rate.is_finite()) {
            return Err(invalid("rates.control", "must be >= 1 Hz"));
        }
        if !(physics_rate >= control_rate && physics_rate.is_finite()) {
            return Err(invalid("rates.physics", "must be >= the control rate"));
        }
        if physics_rate < 100.0 {
            return Err(invalid("rates.physics", "physics steps longer than 10 ms are not supported"));
        }

        let initial = match &raw.initial {
            Some(v) => angles_deg("initial", v, n)?,
            None => JointAngles::zeros(n),
        };
        if !tree.within_limits(initial.as_slice()) {
            return Err(invalid("initial", "posture outside joint limits"));
        }

        let mut waypoints = Vec::with_capacity(raw.waypoints.len());
        let mut last = 0.0;
        for (i, w) in raw.waypoints.iter().enumerate() {
            let path = format!("waypoint[{i}]");
            let t = finite(&format!("{path}.time"), w.time)?;
            if t <= last {
                return Err(invalid(format!("{path}.time"), "waypoint times must be strictly increasing and > 0"));
            }
            last = t;
            let target = angles_deg(&format!("{path}.target"), &w.target, n)?;
            if !tree.within_limits(target.as_slice()) {
                return Err(invalid(format!("{path}.target"), "target outside joint limits"));
            }
            waypoints.push(Waypoint { time: t, target });
        }

        let rc = &raw.controller;
        let mut controller = ControllerParams::new(rc.kind.unwrap_or(ControllerKind::Jaic));
        if let Some(v) = rc.t_bias {
            controller.t_bias = positive("controller.t_bias", v)?;
        }
        if let Some(v) = rc.k {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid("controller.k", "must be finite and >= 0"));
            }
            controller.k = v;
        }
        if let Some(v) = rc.c {
            if v.is_nan() {
                return Err(invalid("controller.c", "must not be NaN"));
            }
            controller.c = v;
        }
        if let Some(v) = rc.t_k {
            controller.t_k = positive("controller.t_k", v)?;
        }
        if let Some(v) = rc.epsilon_theta {
            controller.epsilon_theta = positive("controller.epsilon_theta", v)?.to_radians();
        }
        if let Some(j) = rc.jsc {
            if !(j.kp >= 0.0 && j.kd >= 0.0 && j.kp.is_finite() && j.kd.is_finite()) {
                return Err(invalid("controller.jsc", "gains must be finite and >= 0"));
            }
            controller.jsc = j;
        }

        let re = &raw.estimator;
        let mut estimator = EkfParams::default();
        if let Some(v) = re.q {
            estimator.q = positive("estimator.q", v)? * 1f64.to_radians().powi(2);
        }
        if let Some(v) = re.r {
            estimator.r = (positive("estimator.r", v)? * 1e-3).powi(2);
        }
        if let Some(v) = re.p0 {
            estimator.p0 = positive("estimator.p0", v)?.to_radians().powi(2);
        }

        let rp = &raw.plant;
        let mut plant = PlantParams::default();
        if let Some(v) = rp.compliance {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid("plant.compliance", "must be finite and >= 0"));
            }
            plant.compliance = v;
        }
        if let Some(v) = rp.tau_a {
            plant.tau_a = positive("plant.tau_a", v)?;
        }
        if let Some(v) = rp.damping {
            plant.damping = positive("plant.damping", v)?;
        }
        if let Some(v) = rp.inertia {
            plant.inertia = positive("plant.inertia", v)?;
        }
        if let Some(g) = rp.gravity {
            if !g.iter().all(|x| x.is_finite()) {
                return Err(invalid("plant.gravity", "must be finite"));
            }
            plant.gravity = Vector3::from(g);
        }
        if let Some(v) = rp.t_max {
            plant.t_max = positive("plant.t_max", v)?;
        }
        if let Some(v) = rp.t_heat {
            plant.t_heat = positive("plant.t_heat", v)?;
        }
        if !(plant.t_heat < plant.t_max) {
            return Err(invalid("plant.t_heat", "must be below plant.t_max"));
        }
        if let Some(th) = rp.thermal {
            if !(th.heat_rate >= 0.0 && th.cool_rate >= 0.0 && th.ambient.is_finite() && th.heat_rate.is_finite() && th.cool_rate.is_finite()) {
                return Err(invalid("plant.thermal", "rates must be finite and >= 0"));
            }
            if th.cool_rate / physics_rate >= 1.0 {
                return Err(invalid("plant.thermal.cool_rate", "too fast for the physics rate"));
            }
            plant.thermal = th;
        }

        let muscle = |path: &str, name: &str| {
            model
                .muscle_index(name)
                .ok_or_else(|| invalid(path, format!("unknown muscle `{name}`")))
        };
        let point = |path: &str, m: usize, p: usize| {
            if p < model.muscles()[m].points.len() {
                Ok(p)
            } else {
                Err(invalid(path, format!("muscle has {} points, index {p} out of range", model.muscles()[m].points.len())))
            }
        };

        let mut load = ExternalLoad::none(n);
        if let Some(l) = &rp.load {
            if !l.torques.is_empty() {
                if l.torques.len() != n || !l.torques.iter().all(|t| t.is_finite()) {
                    return Err(invalid("plant.load.torques", format!("expected {n} finite torques")));
                }
                load.torques = DVector::from_column_slice(&l.torques);
            }
            if let Some(pm) = &l.point_mass {
                let link = tree
                    .link_index(&pm.link)
                    .ok_or_else(|| invalid("plant.load.point_mass.link", format!("unknown link `{}`", pm.link)))?;
                if !(pm.mass >= 0.0 && pm.mass.is_finite()) || !pm.offset.iter().all(|v| v.is_finite()) {
                    return Err(invalid("plant.load.point_mass", "mass must be >= 0 and offset finite"));
                }
                load.point_mass = Some(PointMass {
                    link,
                    offset: Vector3::from(pm.offset),
                    mass: pm.mass,
                });
            }
        }

        let mut perturbations = Vec::new();
        for (i, p) in rp.perturbations.iter().enumerate() {
            let path = format!("plant.perturbation[{i}]");
            let m = muscle(&format!("{path}.muscle"), &p.muscle)?;
            let pt = point(&format!("{path}.point"), m, p.point)?;
            if !p.offset_mm.iter().all(|v| v.is_finite()) {
                return Err(invalid(format!("{path}.offset_mm"), "must be finite"));
            }
            perturbations.push(ViaPointPerturbation {
                muscle: m,
                point: pt,
                offset: Vector3::from(p.offset_mm) * 1e-3,
            });
        }

        let sweep = match &rp.sweep {
            None => None,
            Some(s) => {
                let [lo, hi] = s.magnitude_mm;
                if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                    return Err(invalid("plant.sweep.magnitude_mm", "need 0 <= low <= high"));
                }
                let mut points = Vec::new();
                for (i, r) in s.points.iter().enumerate() {
                    let path = format!("plant.sweep.points[{i}]");
                    let m = muscle(&format!("{path}.muscle"), &r.muscle)?;
                    points.push((m, point(&format!("{path}.point"), m, r.point)?));
                }
                if points.is_empty() {
                    return Err(invalid("plant.sweep.points", "must list at least one point"));
                }
                Some(PerturbationSweep {
                    points,
                    magnitude: (lo * 1e-3, hi * 1e-3),
                })
            }
        };

        let mut disturbances = Vec::new();
        for (i, d) in rp.disturbances.iter().enumerate() {
            let path = format!("plant.disturbance[{i}]");
            if !(d.start >= 0.0 && d.end > d.start && d.end.is_finite()) {
                return Err(invalid(format!("{path}.end"), "need 0 <= start < end"));
            }
            if d.torques.len() != n || !d.torques.iter().all(|t| t.is_finite()) {
                return Err(invalid(format!("{path}.torques"), format!("expected {n} finite torques")));
            }
            disturbances.push(Disturbance {
                start: d.start,
                end: d.end,
                torques: DVector::from_column_slice(&d.torques),
            });
        }

        let mut fit = FitOptions::default();
        if let Some(d) = raw.fit.degree {
            if d == 0 {
                return Err(invalid("fit.degree", "must be >= 1"));
            }
            fit.degree = d;
        }
        if let Some(s) = raw.fit.samples_per_joint {
            if s < 2 {
                return Err(invalid("fit.samples_per_joint", "must be >= 2"));
            }
            fit.samples_per_joint = s;
        }

        // Surface geometric problems from fixed perturbations now rather than mid-run.
        PlantConfig::new(&model, perturbations.clone(), &plant)?;

        Ok(Self {
            name: raw.name.unwrap_or_else(|| model.name.clone()),
            robot,
            duration,
            seed: raw.seed,
            initial,
            control_rate,
            physics_rate,
            waypoints,
            controller,
            estimator,
            plant,
            load,
            perturbations,
            sweep,
            disturbances,
            thresholds: rp.pair_thresholds.unwrap_or_default(),
            fit,
            fit_cache: raw.fit.cache.map(|c| base.join(c)),
            model,
        })
    }

    /// Target posture at time `t`: linear between waypoints, held after the last.
    pub fn target_at(&self, t: f64) -> JointAngles {
        let mut prev_t = 0.0;
        let mut prev = &self.initial;
        for w in &self.waypoints {
            if t < w.time {
                let a = ((t - prev_t) / (w.time - prev_t)).clamp(0.0, 1.0);
                return JointAngles(&prev.0 + (&w.target.0 - &prev.0) * a);
            }
            prev_t = w.time;
            prev = &w.target;
        }
        prev.clone()
    }

    /// Intervals over which the target is constant: consecutive equal
    /// waypoints, the tail after the last waypoint, and the whole run when
    /// there are no waypoints.
    pub fn hold_phases(&self) -> Vec<HoldPhase> {
        let mut holds = Vec::new();
        let mut prev_t = 0.0;
        let mut prev = &self.initial;
        for w in &self.waypoints {
            if w.target == *prev && w.time > prev_t {
                holds.push(HoldPhase {
                    start: prev_t,
                    end: w.time,
                    target: w.target.clone(),
                });
            }
            prev_t = w.time;
            prev = &w.target;
        }
        if self.duration > prev_t {
            match holds.last_mut() {
                Some(h) if h.end == prev_t && h.target == *prev => h.end = self.duration,
                _ => holds.push(HoldPhase {
                    start: prev_t,
                    end: self.duration,
                    target: prev.clone(),
                }),
            }
        }
        holds
    }

    pub fn with_controller(&self, kind: ControllerKind) -> Self {
        let mut s = self.clone();
        s.controller.kind = kind;
        s
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seed = seed;
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HoldPhase {
    pub start: f64,
    pub end: f64,
    pub target: JointAngles,
}

impl HoldPhase {
    /// Last half of the hold, where settled metrics are taken.
    pub fn settled_window(&self) -> (f64, f64) {
        (0.5 * (self.start + self.end), self.end)
    }
}
