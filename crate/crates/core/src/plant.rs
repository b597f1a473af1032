//! The simulated "actual robot": a perturbed copy of the nominal geometry
//! driven by lagged tension actuators, with wire stretch and heating.

use nalgebra::{DVector, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::kinematics::{fk_unchecked, geometric_jacobian_unchecked, lengths_unchecked};
use crate::model::{JointAngles, MuscleLengths, MusculoskeletalModel};
use crate::units::KGF;

/// Displacement of one attachment point of the true model, in that point's link frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViaPointPerturbation {
    pub muscle: usize,
    pub point: usize,
    pub offset: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    /// °C/s per kgf of tension above the heating onset.
    pub heat_rate: f64,
    /// 1/s.
    pub cool_rate: f64,
    /// °C.
    pub ambient: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self {
            heat_rate: 0.05,
            cool_rate: 0.02,
            ambient: 25.0,
        }
    }
}

/// Scalar plant constants. Per-joint and per-muscle values are broadcast.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Wire stretch, m/kgf.
    pub compliance: f64,
    /// Actuator time constant, s.
    pub tau_a: f64,
    /// N·m·s/rad.
    pub damping: f64,
    /// kg·m².
    pub inertia: f64,
    /// m/s², world frame.
    pub gravity: Vector3<f64>,
    /// kgf.
    pub t_max: f64,
    /// kgf.
    pub t_heat: f64,
    pub thermal: ThermalParams,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            compliance: 2e-4,
            tau_a: 0.05,
            damping: 1.5,
            inertia: 0.05,
            gravity: Vector3::new(0.0, -9.81, 0.0),
            t_max: 55.0,
            t_heat: 30.0,
            thermal: ThermalParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantConfig {
    pub true_model: MusculoskeletalModel,
    pub perturbations: Vec<ViaPointPerturbation>,
    /// m/kgf, per muscle.
    pub compliance: DVector<f64>,
    pub tau_a: f64,
    /// Per joint.
    pub damping: DVector<f64>,
    /// Per joint.
    pub inertia: DVector<f64>,
    pub gravity: Vector3<f64>,
    pub t_max: f64,
    pub t_heat: f64,
    pub thermal: ThermalParams,
}

impl PlantConfig {
    /// Builds the true model by displacing the nominal model's attachment points.
    pub fn new(
        nominal: &MusculoskeletalModel,
        perturbations: Vec<ViaPointPerturbation>,
        params: &PlantParams,
    ) -> Result<Self> {
        let offsets: Vec<_> = perturbations.iter().map(|p| (p.muscle, p.point, p.offset)).collect();
        let true_model = nominal.perturbed(&offsets)?;
        let cfg = Self {
            compliance: DVector::from_element(nominal.muscle_count(), params.compliance),
            damping: DVector::from_element(nominal.dof(), params.damping),
            inertia: DVector::from_element(nominal.dof(), params.inertia),
            true_model,
            perturbations,
            tau_a: params.tau_a,
            gravity: params.gravity,
            t_max: params.t_max,
            t_heat: params.t_heat,
            thermal: params.thermal,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        let (n, l) = (self.true_model.dof(), self.true_model.muscle_count());
        if self.compliance.len() != l {
            return Err(Error::DimensionMismatch {
                what: "compliance",
                expected: l,
                got: self.compliance.len(),
            });
        }
        if self.damping.len() != n || self.inertia.len() != n {
            return Err(Error::DimensionMismatch {
                what: "joint damping/inertia",
                expected: n,
                got: self.damping.len().min(self.inertia.len()),
            });
        }
        if !self.compliance.iter().all(|c| *c >= 0.0 && c.is_finite()) {
            return bad("wire compliance must be finite and >= 0");
        }
        if !(self.tau_a > 0.0 && self.tau_a.is_finite()) {
            return bad("actuator time constant must be > 0");
        }
        if !self.damping.iter().all(|d| *d > 0.0 && d.is_finite()) {
            return bad("joint damping must be > 0");
        }
        if !self.inertia.iter().all(|i| *i > 0.0 && i.is_finite()) {
            return bad("joint inertia must be > 0");
        }
        if !(self.t_heat > 0.0 && self.t_heat < self.t_max && self.t_max.is_finite()) {
            return bad("need 0 < T_heat < T_max");
        }
        let th = &self.thermal;
        if !(th.heat_rate >= 0.0 && th.cool_rate >= 0.0 && th.ambient.is_finite() && th.heat_rate.is_finite()) {
            return bad("thermal rates must be finite and >= 0");
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return bad("gravity must be finite");
        }
        Ok(())
    }

    pub fn muscle_count(&self) -> usize {
        self.true_model.muscle_count()
    }

    pub fn dof(&self) -> usize {
        self.true_model.dof()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub link: usize,
    /// Link frame, m.
    pub offset: Vector3<f64>,
    /// kg.
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExternalLoad {
    /// N·m per joint. Empty means zero.
    pub torques: DVector<f64>,
    pub point_mass: Option<PointMass>,
}

impl ExternalLoad {
    pub fn none(dof: usize) -> Self {
        Self {
            torques: DVector::zeros(dof),
            point_mass: None,
        }
    }

    fn check(&self, dof: usize, links: usize) -> Result<()> {
        if !self.torques.is_empty() && self.torques.len() != dof {
            return Err(Error::DimensionMismatch {
                what: "external torques",
                expected: dof,
                got: self.torques.len(),
            });
        }
        if !self.torques.iter().all(|t| t.is_finite()) {
            return Err(Error::NonFinite("external torque".into()));
        }
        if let Some(pm) = &self.point_mass {
            if pm.link >= links {
                return Err(Error::InvalidInput(format!("point mass on missing link {}", pm.link)));
            }
            if !(pm.mass.is_finite() && pm.offset.iter().all(|v| v.is_finite())) {
                return Err(Error::NonFinite("point mass".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantState {
    pub theta: JointAngles,
    /// rad/s.
    pub theta_dot: DVector<f64>,
    /// Realized tensions, kgf.
    pub tensions: DVector<f64>,
    /// °C.
    pub temperatures: DVector<f64>,
    /// s.
    pub time: f64,
}

impl PlantState {
    /// At rest at `theta` (clamped to limits), wires unloaded, at ambient temperature.
    pub fn at_rest(config: &PlantConfig, theta: &JointAngles) -> Result<Self> {
        let tree = config.true_model.tree();
        if theta.len() != tree.dof() {
            return Err(Error::DimensionMismatch {
                what: "initial posture",
                expected: tree.dof(),
                got: theta.len(),
            });
        }
        let mut theta = theta.clone();
        tree.clamp_angles(&mut theta);
        let l = config.muscle_count();
        Ok(Self {
            theta,
            theta_dot: DVector::zeros(tree.dof()),
            tensions: DVector::zeros(l),
            temperatures: DVector::from_element(l, config.thermal.ambient),
            time: 0.0,
        })
    }
}

/// Lengths the encoder side reports: true path length minus wire stretch.
///
/// A loaded wire is longer than its wound-off rest length, so for a fixed path
/// the motor has reeled in more and the reading is shorter by `c_w · T`.
pub fn measured_lengths(config: &PlantConfig, state: &PlantState) -> MuscleLengths {
    let mut l = lengths_unchecked(&config.true_model, state.theta.as_slice());
    for i in 0..l.len() {
        l[i] -= config.compliance[i] * state.tensions[i];
    }
    l
}

/// Joint torque from gravity acting on link masses and an optional point mass.
pub fn gravity_torque(config: &PlantConfig, theta: &[f64], load: Option<&PointMass>) -> DVector<f64> {
    let model = &config.true_model;
    let tree = model.tree();
    let frames = fk_unchecked(tree, theta);
    let n = tree.dof();
    let mut tau = DVector::zeros(n);
    let add = |link: usize, local: Vector3<f64>, mass: f64, tau: &mut DVector<f64>| {
        if mass == 0.0 {
            return;
        }
        let p = frames[link] * Point3::from(local);
        let f = config.gravity * mass;
        for j in 0..n {
            if tree.is_moved_by(link, j) {
                let jf = &frames[j + 1];
                let axis = jf.rotation * tree.joints()[j].axis.into_inner();
                let r = p - Point3::from(jf.translation.vector);
                tau[j] += axis.dot(&r.cross(&f));
            }
        }
    };
    for (i, link) in tree.links().iter().enumerate() {
        add(i, link.com, link.mass, &mut tau);
    }
    if let Some(pm) = load {
        add(pm.link, pm.offset, pm.mass, &mut tau);
    }
    tau
}

/// Advances the plant by `dt` seconds under tension commands (kgf).
pub fn step(
    config: &PlantConfig,
    state: &PlantState,
    commands: &DVector<f64>,
    external: &ExternalLoad,
    dt: f64,
) -> Result<PlantState> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(Error::InvalidInput(format!("physics step {dt} s outside (0, 0.01]")));
    }
    let (n, l) = (config.dof(), config.muscle_count());
    if commands.len() != l {
        return Err(Error::DimensionMismatch {
            what: "tension commands",
            expected: l,
            got: commands.len(),
        });
    }
    if !commands.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("tension command".into()));
    }
    external.check(n, config.true_model.tree().links().len())?;

    let alpha = 1.0 - (-dt / config.tau_a).exp();
    let mut tensions = state.tensions.clone();
    for i in 0..l {
        let goal = commands[i].clamp(0.0, config.t_max);
        tensions[i] += (goal - tensions[i]) * alpha;
        tensions[i] = tensions[i].clamp(0.0, config.t_max);
    }

    let theta = state.theta.as_slice();
    let g_true = geometric_jacobian_unchecked(&config.true_model, theta);
    let mut tau = -(g_true.transpose() * &tensions) * KGF;
    tau += gravity_torque(config, theta, external.point_mass.as_ref());
    if !external.torques.is_empty() {
        tau += &external.torques;
    }

    // Damping is applied implicitly so stiff settings stay stable.
    let mut theta_dot = DVector::zeros(n);
    let mut next = state.theta.clone();
    let tree = config.true_model.tree();
    for j in 0..n {
        let (inertia, damping) = (config.inertia[j], config.damping[j]);
        let v = (state.theta_dot[j] + dt * tau[j] / inertia) / (1.0 + dt * damping / inertia);
        let mut q = theta[j] + dt * v;
        let joint = &tree.joints()[j];
        let mut v = v;
        if q <= joint.lower {
            q = joint.lower;
            v = 0.0;
        } else if q >= joint.upper {
            q = joint.upper;
            v = 0.0;
        }
        theta_dot[j] = v;
        next[j] = q;
    }

    let th = &config.thermal;
    let mut temperatures = state.temperatures.clone();
    for i in 0..l {
        let heat = th.heat_rate * (tensions[i] - config.t_heat).max(0.0);
        let cool = th.cool_rate * (temperatures[i] - th.ambient);
        temperatures[i] += (heat - cool) * dt;
    }

    let out = PlantState {
        theta: next,
        theta_dot,
        tensions,
        temperatures,
        time: state.time + dt,
    };
    if !out.theta.iter().chain(out.theta_dot.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("plant state at t = {:.4} s", out.time)));
    }
    Ok(out)
}

/// Kinetic energy `½ Σ I θ̇²`, J.
pub fn kinetic_energy(config: &PlantConfig, state: &PlantState) -> f64 {
    state
        .theta_dot
        .iter()
        .zip(config.inertia.iter())
        .map(|(v, i)| 0.5 * i * v * v)
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensionLevel {
    Right,
    Loose,
    Tight,
}

/// Thresholds for [`TensionLevel`], relative to the bias tension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairThresholds {
    /// Loose below this fraction of T_bias.
    pub loose_fraction: f64,
    /// Tight above this multiple of T_bias.
    pub tight_factor: f64,
    /// Settled when every |θ̇| is below this, rad/s.
    pub settle_speed: f64,
}

impl Default for PairThresholds {
    fn default() -> Self {
        Self {
            loose_fraction: 0.5,
            tight_factor: 3.0,
            settle_speed: 0.05,
        }
    }
}

impl PairThresholds {
    pub fn level(&self, tension: f64, t_bias: f64) -> TensionLevel {
        if tension < self.loose_fraction * t_bias {
            TensionLevel::Loose
        } else if tension > self.tight_factor * t_bias {
            TensionLevel::Tight
        } else {
            TensionLevel::Right
        }
    }
}

/// Antagonistic pair state.
///
/// While moving, 1–9 enumerate (a, b) over right/loose/tight in that order,
/// `1 + 3·a + b`. Settled pairs map to 10 (fine), 11 (a loose), 12 (b loose)
/// or 13 (both tight, pulling each other).
pub fn classify_pair_state(a: TensionLevel, b: TensionLevel, settled: bool) -> u8 {
    use TensionLevel::*;
    let idx = |t: TensionLevel| match t {
        Right => 0u8,
        Loose => 1,
        Tight => 2,
    };
    if !settled {
        return 1 + 3 * idx(a) + idx(b);
    }
    match (a, b) {
        (Tight, Tight) => 13,
        (Loose, _) => 11,
        (_, Loose) => 12,
        _ => 10,
    }
}
