use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kinematics::lengths_unchecked;
use super::poly::{fit_domain, LengthPolynomial};
use super::{JointAngles, MusculoskeletalModel};
use crate::error::{Error, Result};

/// Default joint perturbation used to probe which joints a muscle crosses, radians.
pub const DEFAULT_PROBE_STEP: f64 = 0.05;
/// Length change below which a probed joint counts as not involved, meters.
pub const DEFAULT_INVOLVEMENT_TOLERANCE: f64 = 1e-7;
const PROBE_POSTURES: usize = 3;

/// `dl/dθ` (muscles × joints, m/rad) at a posture.
#[derive(Clone, Debug, PartialEq)]
pub struct MuscleJacobian {
    pub g: DMatrix<f64>,
    pub theta: DVector<f64>,
    /// Set when some polynomial was evaluated at a clamped posture.
    pub extrapolated: bool,
}

impl MuscleJacobian {
    pub fn muscles(&self) -> usize {
        self.g.nrows()
    }

    pub fn joints(&self) -> usize {
        self.g.ncols()
    }
}

/// Joints whose motion changes muscle `muscle`'s length.
///
/// A joint counts when a ±`probe_step` move from any of three random base
/// postures changes the length by more than `tolerance`. Base postures are
/// drawn from a fixed seed so the result is reproducible.
pub fn detect_involved_joints(
    model: &MusculoskeletalModel,
    muscle: usize,
    probe_step: f64,
    tolerance: f64,
) -> Result<Vec<usize>> {
    if !(probe_step > 0.0) {
        return Err(Error::InvalidInput("probe step must be positive".into()));
    }
    if muscle >= model.muscle_count() {
        return Err(Error::InvalidInput(format!("no muscle {muscle}")));
    }
    let n = model.dof();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 ^ muscle as u64);
    let bases: Vec<Vec<f64>> = (0..PROBE_POSTURES)
        .map(|_| {
            (0..n)
                .map(|j| {
                    let (lo, hi) = fit_domain(model, j, 0.02);
                    if hi > lo {
                        rng.random_range(lo..=hi)
                    } else {
                        lo
                    }
                })
                .collect()
        })
        .collect();

    let joints = model.tree().joints();
    let mut involved = Vec::new();
    for j in 0..n {
        let hit = bases.iter().any(|base| {
            let l0 = lengths_unchecked(model, base)[muscle];
            [-probe_step, probe_step].iter().any(|d| {
                let mut probe = base.clone();
                probe[j] = joints[j].clamp(base[j] + d);
                probe[j] != base[j] && (lengths_unchecked(model, &probe)[muscle] - l0).abs() > tolerance
            })
        });
        if hit {
            involved.push(j);
        }
    }
    Ok(involved)
}

/// Muscle Jacobian by analytic differentiation of the fitted length polynomials.
///
/// Rows come from each polynomial's gradient; joints a muscle does not cross
/// stay exactly zero. A posture outside a polynomial's fit domain is clamped
/// into it and the result is flagged `extrapolated`.
pub fn jacobian_from_polynomials(polys: &[LengthPolynomial], theta: &JointAngles) -> Result<MuscleJacobian> {
    let n = theta.len();
    if !theta.iter().all(|t| t.is_finite()) {
        return Err(Error::NonFinite("joint angles".into()));
    }
    let mut g = DMatrix::zeros(polys.len(), n);
    let mut extrapolated = false;
    for (i, p) in polys.iter().enumerate() {
        if let Some(&j) = p.joints.iter().find(|&&j| j >= n) {
            return Err(Error::DimensionMismatch {
                what: "joint angles for polynomial",
                expected: j + 1,
                got: n,
            });
        }
        let grad = if p.in_domain(theta.as_slice()) {
            p.gradient(theta.as_slice())
        } else {
            extrapolated = true;
            let mut clamped = theta.as_slice().to_vec();
            p.clamp_to_domain(&mut clamped);
            p.gradient(&clamped)
        };
        for (&j, d) in p.joints.iter().zip(grad) {
            g[(i, j)] = d;
        }
    }
    Ok(MuscleJacobian {
        g,
        theta: theta.0.clone(),
        extrapolated,
    })
}

/// Central-difference Jacobian of the exact path lengths, column by column.
pub fn jacobian_finite_difference(model: &MusculoskeletalModel, theta: &JointAngles, h: f64) -> Result<MuscleJacobian> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput("finite-difference step must be positive".into()));
    }
    if theta.len() != model.dof() {
        return Err(Error::DimensionMismatch {
            what: "joint angles",
            expected: model.dof(),
            got: theta.len(),
        });
    }
    let n = model.dof();
    let mut g = DMatrix::zeros(model.muscle_count(), n);
    let mut t = theta.as_slice().to_vec();
    for j in 0..n {
        let orig = t[j];
        t[j] = orig + h;
        let plus = lengths_unchecked(model, &t);
        t[j] = orig - h;
        let minus = lengths_unchecked(model, &t);
        t[j] = orig;
        g.set_column(j, &((plus.0 - minus.0) / (2.0 * h)));
    }
    Ok(MuscleJacobian {
        g,
        theta: theta.0.clone(),
        extrapolated: false,
    })
}
