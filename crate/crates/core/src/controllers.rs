//! Tension controllers: muscle stiffness control (MSC), joint-based and
//! muscle-based antagonist inhibition (JAIC, MAIC) and a joint-space torque
//! controller (JSC).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{muscle_lengths, JointAngles, MuscleJacobian, MuscleLengths, MusculoskeletalModel};
use crate::units::{m_to_mm, KGF};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Msc,
    Jaic,
    Maic,
    Jsc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [Self::Msc, Self::Jaic, Self::Maic, Self::Jsc];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Msc => "msc",
            Self::Jaic => "jaic",
            Self::Maic => "maic",
            Self::Jsc => "jsc",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown controller `{s}` (expected msc, jaic, maic or jsc)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JscGains {
    /// N·m/rad.
    pub kp: f64,
    /// N·m·s/rad.
    pub kd: f64,
}

impl Default for JscGains {
    fn default() -> Self {
        Self { kp: 20.0, kd: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub kind: ControllerKind,
    /// kgf.
    pub t_bias: f64,
    /// Agonist stiffness, kgf/mm.
    pub k: f64,
    /// Antagonist threshold on s, m/rad.
    pub c: f64,
    /// Ramp duration, ms.
    pub t_k: f64,
    pub jsc: JscGains,
    /// Minimum |θ_target − θ̂| for reclassification, rad.
    pub epsilon_theta: f64,
}

impl ControllerParams {
    pub fn new(kind: ControllerKind) -> Self {
        Self {
            kind,
            t_bias: 2.0,
            k: 10.0,
            c: 0.0,
            t_k: 1000.0,
            jsc: JscGains::default(),
            epsilon_theta: 0.5f64.to_radians(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.t_bias > 0.0 && self.t_bias.is_finite()) {
            return bad("T_bias must be > 0");
        }
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return bad("k must be finite and >= 0");
        }
        if !(self.t_k > 0.0 && self.t_k.is_finite()) {
            return bad("t_k must be > 0");
        }
        if !(self.epsilon_theta > 0.0) {
            return bad("epsilon_theta must be > 0");
        }
        if self.c.is_nan() {
            return bad("C must not be NaN");
        }
        if !(self.jsc.kp >= 0.0 && self.jsc.kd >= 0.0) {
            return bad("JSC gains must be >= 0");
        }
        Ok(())
    }

    /// Largest allowed |ΔK| per second, kgf/mm/s.
    pub fn ramp_slope(&self) -> f64 {
        self.k / (self.t_k * 1e-3)
    }
}

/// Per-muscle agonist flags with the classification value behind each.
#[derive(Clone, Debug, PartialEq)]
pub struct AgonistFlags {
    pub agonist: Vec<bool>,
    /// m/rad for JAIC, m for MAIC, zero otherwise.
    pub s: DVector<f64>,
}

impl AgonistFlags {
    pub fn all(muscles: usize, agonist: bool) -> Self {
        Self {
            agonist: vec![agonist; muscles],
            s: DVector::zeros(muscles),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Classification {
    Flags(AgonistFlags),
    /// |Δθ| below epsilon_theta: keep the previous flags.
    AtTarget,
}

/// Nominal lengths at the target posture, from exact geometry.
///
/// Out-of-limit targets are clamped; the flag reports whether that happened.
pub fn target_lengths(model: &MusculoskeletalModel, theta_target: &JointAngles) -> Result<(MuscleLengths, bool)> {
    let mut t = theta_target.clone();
    let clamped = model.tree().clamp_angles(&mut t);
    Ok((muscle_lengths(model, &t)?, clamped))
}

/// Agonist iff `s_i = G_i · Δθ/|Δθ| < C`, with `Δθ = θ_target − θ̂`.
pub fn classify(
    jacobian: &MuscleJacobian,
    theta_hat: &JointAngles,
    theta_target: &JointAngles,
    c: f64,
    epsilon_theta: f64,
) -> Result<Classification> {
    let n = jacobian.joints();
    if theta_hat.len() != n || theta_target.len() != n {
        return Err(Error::DimensionMismatch {
            what: "classification posture",
            expected: n,
            got: theta_hat.len().min(theta_target.len()),
        });
    }
    let delta = &theta_target.0 - &theta_hat.0;
    let norm = delta.norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite("classification posture".into()));
    }
    if norm < epsilon_theta {
        return Ok(Classification::AtTarget);
    }
    let s = &jacobian.g * (delta / norm);
    Ok(Classification::Flags(AgonistFlags {
        agonist: s.iter().map(|v| *v < c).collect(),
        s,
    }))
}

const RAMP_SNAP: f64 = 1e-12;

/// Moves each K_i toward `k` (agonist) or 0 at slope `k/t_k`, saturating.
pub fn ramp_stiffness(current: &DVector<f64>, flags: &AgonistFlags, params: &ControllerParams, dt: f64) -> Result<DVector<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("ramp step {dt} must be > 0")));
    }
    if current.len() != flags.agonist.len() {
        return Err(Error::DimensionMismatch {
            what: "stiffness ramp",
            expected: flags.agonist.len(),
            got: current.len(),
        });
    }
    let max_step = params.ramp_slope() * dt;
    Ok(DVector::from_fn(current.len(), |i, _| {
        let target = if flags.agonist[i] { params.k } else { 0.0 };
        let k = current[i];
        let next = if target > k {
            (k + max_step).min(target)
        } else {
            (k - max_step).max(target)
        };
        // Absorb rounding so a full ramp lands exactly on the target.
        if (next - target).abs() <= RAMP_SNAP {
            target
        } else {
            next
        }
    }))
}

/// `T_i = T_bias + max(0, K_i (l_i − l_target,i))` with lengths in mm and K in kgf/mm.
pub fn msc_tension(l_meas: &MuscleLengths, l_target: &MuscleLengths, k: &DVector<f64>, t_bias: f64) -> Result<DVector<f64>> {
    let l = l_meas.len();
    if l_target.len() != l || k.len() != l {
        return Err(Error::DimensionMismatch {
            what: "muscle stiffness inputs",
            expected: l,
            got: l_target.len().min(k.len()),
        });
    }
    Ok(DVector::from_fn(l, |i, _| {
        t_bias + (k[i] * m_to_mm(l_meas[i] - l_target[i])).max(0.0)
    }))
}

/// Nonnegative least squares `min |A x − b|, x ≥ 0` (Lawson–Hanson active set).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::DimensionMismatch {
            what: "nnls right-hand side",
            expected: m,
            got: b.len(),
        });
    }
    let tol = 1e-12 * a.abs().max().max(1.0) * b.abs().max().max(1.0) * (m.max(n) as f64);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = DMatrix::from_fn(m, idx.len(), |r, c| a[(r, idx[c])]);
        let z = sub.svd(true, true).solve(b, 1e-12).unwrap_or_else(|_| DVector::zeros(idx.len()));
        let mut full = DVector::zeros(n);
        for (c, &j) in idx.iter().enumerate() {
            full[j] = z[c];
        }
        full
    };
    for _ in 0..(3 * n + 10) {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&p, &q| w[p].total_cmp(&w[q]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let z = solve_passive(&passive);
            if (0..n).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in (0..n).filter(|&i| passive[i] && z[i] <= 0.0) {
                alpha = alpha.min(x[i] / (x[i] - z[i]));
            }
            x += (z - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= 1e-15 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    Ok(x)
}

/// Controller memory between ticks.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerState {
    /// Current stiffness per muscle, kgf/mm.
    pub stiffness: DVector<f64>,
    pub flags: AgonistFlags,
    /// Previous estimate, for the JSC velocity term.
    pub previous_theta: Option<JointAngles>,
}

impl ControllerState {
    /// All muscles inhibited, K = 0.
    pub fn new(params: &ControllerParams, muscles: usize) -> Self {
        let agonist = matches!(params.kind, ControllerKind::Msc | ControllerKind::Jsc);
        Self {
            stiffness: DVector::zeros(muscles),
            flags: AgonistFlags::all(muscles, agonist),
            previous_theta: None,
        }
    }
}

/// Per-tick inputs. Which fields are required depends on the kind.
#[derive(Clone, Copy, Debug)]
pub struct ControlInputs<'a> {
    pub theta_hat: &'a JointAngles,
    pub l_meas: &'a MuscleLengths,
    pub theta_target: &'a JointAngles,
    pub l_target: &'a MuscleLengths,
    /// G at θ̂ (JAIC, JSC).
    pub jacobian: Option<&'a MuscleJacobian>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlOutput {
    /// kgf.
    pub commands: DVector<f64>,
    pub at_target: bool,
    /// JSC desired joint torque, N·m; zero for the others.
    pub torque: DVector<f64>,
}

pub fn controller_step(
    params: &ControllerParams,
    state: &ControllerState,
    inputs: &ControlInputs<'_>,
    dt: f64,
) -> Result<(ControllerState, ControlOutput)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("control step {dt} must be > 0")));
    }
    let l = inputs.l_meas.len();
    let n = inputs.theta_hat.len();
    let mut next = state.clone();
    let mut at_target = false;
    let mut torque = DVector::zeros(n);
    let commands = match params.kind {
        ControllerKind::Msc => {
            next.stiffness = DVector::from_element(l, params.k);
            next.flags = AgonistFlags::all(l, true);
            msc_tension(inputs.l_meas, inputs.l_target, &next.stiffness, params.t_bias)?
        }
        ControllerKind::Jaic => {
            let jac = inputs
                .jacobian
                .ok_or_else(|| Error::InvalidInput("JAIC needs the muscle Jacobian at the estimate".into()))?;
            match classify(jac, inputs.theta_hat, inputs.theta_target, params.c, params.epsilon_theta)? {
                Classification::Flags(f) => next.flags = f,
                Classification::AtTarget => at_target = true,
            }
            next.stiffness = ramp_stiffness(&state.stiffness, &next.flags, params, dt)?;
            msc_tension(inputs.l_meas, inputs.l_target, &next.stiffness, params.t_bias)?
        }
        ControllerKind::Maic => {
            if inputs.l_target.len() != l {
                return Err(Error::DimensionMismatch {
                    what: "MAIC target lengths",
                    expected: l,
                    got: inputs.l_target.len(),
                });
            }
            let s = &inputs.l_target.0 - &inputs.l_meas.0;
            next.flags = AgonistFlags {
                agonist: s.iter().map(|v| *v < 0.0).collect(),
                s,
            };
            next.stiffness = ramp_stiffness(&state.stiffness, &next.flags, params, dt)?;
            msc_tension(inputs.l_meas, inputs.l_target, &next.stiffness, params.t_bias)?
        }
        ControllerKind::Jsc => {
            let jac = inputs
                .jacobian
                .ok_or_else(|| Error::InvalidInput("JSC needs the muscle Jacobian at the estimate".into()))?;
            if jac.muscles() != l || jac.joints() != n {
                return Err(Error::DimensionMismatch {
                    what: "JSC Jacobian",
                    expected: l * n,
                    got: jac.muscles() * jac.joints(),
                });
            }
            let velocity = match &state.previous_theta {
                Some(prev) => (&inputs.theta_hat.0 - &prev.0) / dt,
                None => DVector::zeros(n),
            };
            torque = (&inputs.theta_target.0 - &inputs.theta_hat.0) * params.jsc.kp - velocity * params.jsc.kd;
            let a = -jac.g.transpose() * KGF;
            let extra = nnls(&a, &torque)?;
            next.flags = AgonistFlags::all(l, true);
            extra.map(|t| params.t_bias + t.max(0.0))
        }
    };
    next.previous_theta = Some(inputs.theta_hat.clone());
    if !commands.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("tension command".into()));
    }
    Ok((
        next,
        ControlOutput {
            commands,
            at_target,
            torque,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_models::*;
    use crate::model::{geometric_jacobian, FitOptions};
    use proptest::prelude::*;

    fn jac(g: &[f64], rows: usize, cols: usize) -> MuscleJacobian {
        MuscleJacobian {
            g: DMatrix::from_row_slice(rows, cols, g),
            theta: DVector::zeros(cols),
            extrapolated: false,
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("JAIC".parse::<ControllerKind>().unwrap(), ControllerKind::Jaic);
        assert_eq!(" msc ".parse::<ControllerKind>().unwrap(), ControllerKind::Msc);
        assert!("pid".parse::<ControllerKind>().is_err());
        for k in ControllerKind::ALL {
            assert_eq!(k.to_string().parse::<ControllerKind>().unwrap(), k);
        }
    }

    #[test]
    fn defaults_and_validation() {
        let p = ControllerParams::new(ControllerKind::Jaic);
        assert_eq!((p.t_bias, p.k, p.c, p.t_k), (2.0, 10.0, 0.0, 1000.0));
        p.validate().unwrap();
        for bad in [
            ControllerParams { t_bias: 0.0, ..p },
            ControllerParams { k: -1.0, ..p },
            ControllerParams { t_k: 0.0, ..p },
            ControllerParams { epsilon_theta: 0.0, ..p },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn target_lengths_use_exact_geometry() {
        let m = triangle_elbow();
        let (l, clamped) = target_lengths(&m, &JointAngles::from_degrees(&[90.0])).unwrap();
        assert!(!clamped);
        assert!((l[0] - 0.070711).abs() < 1e-6);
        let (l2, _) = target_lengths(&m, &JointAngles::from_degrees(&[10.0])).unwrap();
        assert_eq!(l[1], l2[1]);
        let (_, clamped) = target_lengths(&m, &JointAngles::from_degrees(&[170.0])).unwrap();
        assert!(clamped);
    }

    #[test]
    fn classification_sign_convention() {
        // Flexor shortens with positive θ; extensor lengthens.
        let g = jac(&[-0.03, 0.03], 2, 1);
        let here = JointAngles::from_degrees(&[0.0]);
        let there = JointAngles::from_degrees(&[30.0]);
        let Classification::Flags(f) = classify(&g, &here, &there, 0.0, 0.01).unwrap() else {
            panic!()
        };
        assert_eq!(f.agonist, vec![true, false]);
        let Classification::Flags(r) = classify(&g, &there, &here, 0.0, 0.01).unwrap() else {
            panic!()
        };
        assert_eq!(r.agonist, vec![false, true]);
    }

    #[test]
    fn weak_agonist_inhibited_by_negative_threshold() {
        let g = jac(&[-0.005], 1, 1);
        let from = JointAngles::zeros(1);
        let to = JointAngles::from_slice(&[0.5]);
        let Classification::Flags(f) = classify(&g, &from, &to, -0.01, 0.01).unwrap() else {
            panic!()
        };
        assert!((f.s[0] + 0.005).abs() < 1e-15);
        assert!(!f.agonist[0]);
        let Classification::Flags(f) = classify(&g, &from, &to, 0.0, 0.01).unwrap() else {
            panic!()
        };
        assert!(f.agonist[0]);
    }

    #[test]
    fn at_target_signal() {
        let g = jac(&[-0.03, 0.03], 2, 1);
        let a = JointAngles::from_degrees(&[30.0]);
        let b = JointAngles::from_degrees(&[30.3]);
        assert_eq!(classify(&g, &a, &b, 0.0, 0.5f64.to_radians()).unwrap(), Classification::AtTarget);
    }

    #[test]
    fn ramp_reaches_k_after_t_k() {
        let p = ControllerParams::new(ControllerKind::Jaic);
        let flags = AgonistFlags::all(1, true);
        let mut k = DVector::zeros(1);
        for _ in 0..100 {
            k = ramp_stiffness(&k, &flags, &p, 0.01).unwrap();
        }
        assert_eq!(k[0], 10.0);
        let held = ramp_stiffness(&k, &flags, &p, 0.01).unwrap();
        assert_eq!(held, k);
    }

    #[test]
    fn ramp_from_half_takes_half_the_time() {
        let p = ControllerParams::new(ControllerKind::Jaic);
        let flags = AgonistFlags::all(1, false);
        let mut k = DVector::from_element(1, 5.0);
        for step in 1..=60 {
            k = ramp_stiffness(&k, &flags, &p, 0.01).unwrap();
            if step == 49 {
                assert!(k[0] > 0.0);
            }
        }
        assert_eq!(k[0], 0.0);
        assert!(ramp_stiffness(&k, &flags, &p, 0.0).is_err());
    }

    #[test]
    fn msc_examples() {
        let l = MuscleLengths::from_slice(&[0.100, 0.050]);
        let lt = MuscleLengths::from_slice(&[0.097, 0.050]);
        let t = msc_tension(&l, &lt, &DVector::from_element(2, 10.0), 2.0).unwrap();
        assert!((t[0] - 32.0).abs() < 1e-9);
        assert_eq!(t[1], 2.0);
        let t = msc_tension(&l, &lt, &DVector::zeros(2), 2.0).unwrap();
        assert_eq!(t.as_slice(), &[2.0, 2.0]);
        // Shorter than target never drops below bias.
        let t = msc_tension(&lt, &l, &DVector::from_element(2, 10.0), 2.0).unwrap();
        assert_eq!(t[0], 2.0);
    }

    #[test]
    fn nnls_matches_brute_force() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.5, 0.2, 0.3, -1.0]);
        let b = DVector::from_vec(vec![1.0, -0.4]);
        let x = nnls(&a, &b).unwrap();
        assert!(x.iter().all(|v| *v >= 0.0));
        let best = (&a * &x - &b).norm();
        // Enumerate supports: unconstrained solves on each subset, keep feasible ones.
        let mut oracle = b.norm();
        for mask in 1u32..8 {
            let idx: Vec<usize> = (0..3).filter(|j| mask & (1 << j) != 0).collect();
            let sub = DMatrix::from_fn(2, idx.len(), |r, c| a[(r, idx[c])]);
            let z = sub.clone().svd(true, true).solve(&b, 1e-14).unwrap();
            if z.iter().all(|v| *v >= 0.0) {
                oracle = oracle.min((&sub * &z - &b).norm());
            }
        }
        assert!((best - oracle).abs() < 1e-10, "{best} vs {oracle}");
    }

    fn elbow_inputs(m: &MusculoskeletalModel, here: f64, there: f64) -> (JointAngles, MuscleLengths, JointAngles, MuscleLengths, MuscleJacobian) {
        let th = JointAngles::from_degrees(&[here]);
        let tt = JointAngles::from_degrees(&[there]);
        let l = muscle_lengths(m, &th).unwrap();
        let lt = muscle_lengths(m, &tt).unwrap();
        let g = MuscleJacobian {
            g: geometric_jacobian(m, &th).unwrap(),
            theta: th.0.clone(),
            extrapolated: false,
        };
        (th, l, tt, lt, g)
    }

    #[test]
    fn jsc_at_rest_on_target_commands_bias() {
        let m = mirrored_pair();
        let p = ControllerParams::new(ControllerKind::Jsc);
        let (th, l, _, _, g) = elbow_inputs(&m, 20.0, 20.0);
        let mut s = ControllerState::new(&p, 2);
        s.previous_theta = Some(th.clone());
        let inputs = ControlInputs {
            theta_hat: &th,
            l_meas: &l,
            theta_target: &th,
            l_target: &l,
            jacobian: Some(&g),
        };
        let (_, out) = controller_step(&p, &s, &inputs, 0.01).unwrap();
        assert_eq!(out.commands.as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn jsc_realizes_desired_torque() {
        let m = mirrored_pair();
        let p = ControllerParams::new(ControllerKind::Jsc);
        let (th, l, tt, lt, g) = elbow_inputs(&m, 0.0, 20.0);
        let s = ControllerState::new(&p, 2);
        let inputs = ControlInputs {
            theta_hat: &th,
            l_meas: &l,
            theta_target: &tt,
            l_target: &lt,
            jacobian: Some(&g),
        };
        let (_, out) = controller_step(&p, &s, &inputs, 0.01).unwrap();
        let extra = out.commands.map(|c| c - 2.0);
        let realized = -g.g.transpose() * extra * KGF;
        assert!((realized[0] - out.torque[0]).abs() < 1e-9);
        assert!(out.commands.iter().all(|c| *c >= 2.0));
    }

    #[test]
    fn jaic_requires_jacobian() {
        let m = mirrored_pair();
        let p = ControllerParams::new(ControllerKind::Jaic);
        let (th, l, tt, lt, _) = elbow_inputs(&m, 0.0, 20.0);
        let inputs = ControlInputs {
            theta_hat: &th,
            l_meas: &l,
            theta_target: &tt,
            l_target: &lt,
            jacobian: None,
        };
        assert!(controller_step(&p, &ControllerState::new(&p, 2), &inputs, 0.01).is_err());
    }

    #[test]
    fn maic_flags_follow_length_error() {
        let m = mirrored_pair();
        let p = ControllerParams::new(ControllerKind::Maic);
        let (th, l, tt, lt, _) = elbow_inputs(&m, 0.0, 20.0);
        let inputs = ControlInputs {
            theta_hat: &th,
            l_meas: &l,
            theta_target: &tt,
            l_target: &lt,
            jacobian: None,
        };
        let (s, _) = controller_step(&p, &ControllerState::new(&p, 2), &inputs, 0.01).unwrap();
        for i in 0..2 {
            assert_eq!(s.flags.agonist[i], lt[i] < l[i]);
        }
    }

    #[test]
    fn jaic_with_infinite_threshold_matches_msc_after_ramp() {
        let m = mirrored_pair();
        let mut pj = ControllerParams::new(ControllerKind::Jaic);
        pj.c = f64::INFINITY;
        let pm = ControllerParams::new(ControllerKind::Msc);
        let (th, l, tt, lt, g) = elbow_inputs(&m, 5.0, 35.0);
        let inputs = ControlInputs {
            theta_hat: &th,
            l_meas: &l,
            theta_target: &tt,
            l_target: &lt,
            jacobian: Some(&g),
        };
        let mut sj = ControllerState::new(&pj, 2);
        let mut last = None;
        for _ in 0..101 {
            let (n, out) = controller_step(&pj, &sj, &inputs, 0.01).unwrap();
            sj = n;
            last = Some(out);
        }
        let (_, msc) = controller_step(&pm, &ControllerState::new(&pm, 2), &inputs, 0.01).unwrap();
        let jaic = last.unwrap();
        for (a, b) in jaic.commands.iter().zip(msc.commands.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    proptest! {
        #[test]
        fn commands_never_below_bias(
            l in proptest::collection::vec(0.05f64..0.3, 3),
            lt in proptest::collection::vec(0.05f64..0.3, 3),
            k in proptest::collection::vec(0.0f64..10.0, 3),
        ) {
            let t = msc_tension(&MuscleLengths::from_slice(&l), &MuscleLengths::from_slice(&lt), &DVector::from_vec(k), 2.0).unwrap();
            prop_assert!(t.iter().all(|v| *v >= 2.0));
        }

        #[test]
        fn reversal_complements_flags(g in proptest::collection::vec(-0.05f64..0.05, 6), d in proptest::collection::vec(-1.0f64..1.0, 2)) {
            let j = jac(&g, 3, 2);
            let here = JointAngles::zeros(2);
            let there = JointAngles::from_slice(&d);
            let back = JointAngles::from_slice(&[-d[0], -d[1]]);
            if let (Classification::Flags(a), Classification::Flags(b)) = (
                classify(&j, &here, &there, 0.0, 1e-3).unwrap(),
                classify(&j, &here, &back, 0.0, 1e-3).unwrap(),
            ) {
                for i in 0..3 {
                    if a.s[i] != 0.0 {
                        prop_assert_eq!(a.agonist[i], !b.agonist[i]);
                    }
                }
            }
        }

        #[test]
        fn ramp_slope_bounded(k0 in proptest::collection::vec(0.0f64..10.0, 4), flags in proptest::collection::vec(any::<bool>(), 4), dt in 1e-4f64..0.05) {
            let p = ControllerParams::new(ControllerKind::Jaic);
            let f = AgonistFlags { agonist: flags, s: DVector::zeros(4) };
            let k0 = DVector::from_vec(k0);
            let k1 = ramp_stiffness(&k0, &f, &p, dt).unwrap();
            for i in 0..4 {
                prop_assert!((k1[i] - k0[i]).abs() <= p.k * dt / (p.t_k * 1e-3) + 1e-12);
                prop_assert!((0.0..=p.k).contains(&k1[i]));
            }
        }
    }

    #[test]
    fn polynomial_jacobian_classifies_like_exact_geometry() {
        let m = mirrored_pair();
        let polys = crate::model::fit_model_polynomials(&m, &FitOptions::default()).unwrap();
        let th = JointAngles::from_degrees(&[10.0]);
        let g = polys.jacobian(&th).unwrap();
        let Classification::Flags(f) = classify(&g, &th, &JointAngles::from_degrees(&[40.0]), 0.0, 0.01).unwrap() else {
            panic!()
        };
        let exact = geometric_jacobian(&m, &th).unwrap() * DVector::from_element(1, 1.0);
        for i in 0..2 {
            assert_eq!(f.agonist[i], exact[i] < 0.0);
        }
    }
}
