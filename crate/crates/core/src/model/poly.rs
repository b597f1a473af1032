//! Least-squares polynomial models of muscle length over the joints a muscle
//! crosses. Differentiating these gives the muscle Jacobian used by the
//! estimator and the controllers.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::jacobian::{detect_involved_joints, MuscleJacobian};
use super::kinematics::lengths_unchecked;
use super::{JointAngles, MuscleLengths, MusculoskeletalModel};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    /// Maximum total degree of the polynomial.
    pub degree: u32,
    /// Regular grid samples along each involved joint.
    pub samples_per_joint: usize,
    /// Cap on total grid points. Muscles crossing many joints get fewer
    /// samples per joint so the grid stays within this budget.
    pub max_grid_points: usize,
    /// Fraction of each joint range trimmed from both ends to form the fit domain.
    pub domain_shrink: f64,
    pub probe_step: f64,
    pub involvement_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            degree: 10,
            samples_per_joint: 15,
            max_grid_points: 20_000,
            domain_shrink: 0.02,
            probe_step: super::DEFAULT_PROBE_STEP,
            involvement_tolerance: super::DEFAULT_INVOLVEMENT_TOLERANCE,
        }
    }
}

/// All exponent tuples over `vars` variables with total degree `<= degree`,
/// ordered by total degree, then lexicographically descending.
pub fn monomial_exponents(vars: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(prefix: &mut Vec<u32>, vars: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == vars {
            if remaining == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            rec(prefix, vars, remaining - e, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=degree {
        rec(&mut Vec::with_capacity(vars), vars, total, &mut out);
    }
    out
}

/// Muscle length as a polynomial of the joints it crosses.
///
/// Coefficients are stored against normalized coordinates
/// `x_k = (θ_k − center_k) / half_width_k`, so `x ∈ [−1, 1]` spans the fit
/// domain. `domain` is kept in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthPolynomial {
    pub muscle: usize,
    pub joints: Vec<usize>,
    pub degree: u32,
    pub exponents: Vec<Vec<u32>>,
    pub coefficients: Vec<f64>,
    /// Per involved joint `(lower, upper)` in radians.
    pub domain: Vec<(f64, f64)>,
    /// RMS residual over the fit grid, meters.
    pub residual_rms: f64,
    pub samples: usize,
}

impl LengthPolynomial {
    fn normalized(&self, theta: &[f64]) -> Vec<f64> {
        self.joints
            .iter()
            .zip(&self.domain)
            .map(|(&j, &(lo, hi))| normalize(theta[j], lo, hi))
            .collect()
    }

    /// Length at a full joint-angle vector.
    pub fn eval(&self, theta: &[f64]) -> f64 {
        let x = self.normalized(theta);
        let pw = powers(&x, self.degree);
        self.exponents
            .iter()
            .zip(&self.coefficients)
            .map(|(e, c)| c * monomial(&pw, e))
            .sum()
    }

    /// `∂l/∂θ_j` for each involved joint, in the order of `self.joints`.
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let x = self.normalized(theta);
        let pw = powers(&x, self.degree);
        let mut grad = vec![0.0; self.joints.len()];
        for (e, c) in self.exponents.iter().zip(&self.coefficients) {
            for k in 0..self.joints.len() {
                if e[k] == 0 {
                    continue;
                }
                let mut term = c * f64::from(e[k]) * pw[k][(e[k] - 1) as usize];
                for (m, &em) in e.iter().enumerate() {
                    if m != k {
                        term *= pw[m][em as usize];
                    }
                }
                grad[k] += term;
            }
        }
        for (g, &(lo, hi)) in grad.iter_mut().zip(&self.domain) {
            *g /= half_width(lo, hi);
        }
        grad
    }

    pub fn in_domain(&self, theta: &[f64]) -> bool {
        self.joints
            .iter()
            .zip(&self.domain)
            .all(|(&j, &(lo, hi))| theta[j] >= lo && theta[j] <= hi)
    }

    /// Copy of `theta` with involved joints clamped into the fit domain.
    pub fn clamp_to_domain(&self, theta: &mut [f64]) {
        for (&j, &(lo, hi)) in self.joints.iter().zip(&self.domain) {
            theta[j] = theta[j].clamp(lo, hi);
        }
    }
}

fn half_width(lo: f64, hi: f64) -> f64 {
    let h = 0.5 * (hi - lo);
    if h > 0.0 {
        h
    } else {
        1.0
    }
}

fn normalize(t: f64, lo: f64, hi: f64) -> f64 {
    (t - 0.5 * (lo + hi)) / half_width(lo, hi)
}

fn powers(x: &[f64], degree: u32) -> Vec<Vec<f64>> {
    x.iter()
        .map(|&v| {
            let mut p = Vec::with_capacity(degree as usize + 1);
            let mut acc = 1.0;
            for _ in 0..=degree {
                p.push(acc);
                acc *= v;
            }
            p
        })
        .collect()
}

fn monomial(pw: &[Vec<f64>], e: &[u32]) -> f64 {
    e.iter().enumerate().map(|(k, &ek)| pw[k][ek as usize]).product()
}

/// Result of a generic polynomial least-squares fit.
#[derive(Clone, Debug)]
pub struct PolynomialFit {
    pub exponents: Vec<Vec<u32>>,
    pub coefficients: Vec<f64>,
    pub residual_rms: f64,
    pub samples: usize,
    pub rank: usize,
}

/// Fits `f` over a regular grid spanning `domain` (one interval per variable).
///
/// `f` receives the sample in original (unnormalized) coordinates. Returns
/// the achieved fit even when it is rank deficient; callers check `rank`.
pub fn fit_polynomial(
    domain: &[(f64, f64)],
    degree: u32,
    samples_per_var: usize,
    mut f: impl FnMut(&[f64]) -> f64,
) -> PolynomialFit {
    let k = domain.len();
    let exponents = monomial_exponents(k, degree);
    let axes: Vec<Vec<f64>> = domain
        .iter()
        .map(|&(lo, hi)| {
            if samples_per_var <= 1 || hi <= lo {
                vec![0.5 * (lo + hi)]
            } else {
                (0..samples_per_var)
                    .map(|i| lo + (hi - lo) * i as f64 / (samples_per_var - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();

    let mut a = DMatrix::zeros(total, exponents.len());
    let mut b = DVector::zeros(total);
    let mut idx = vec![0usize; k];
    let mut point = vec![0.0; k];
    for row in 0..total {
        for v in 0..k {
            point[v] = axes[v][idx[v]];
        }
        let x: Vec<f64> = point
            .iter()
            .zip(domain)
            .map(|(&t, &(lo, hi))| normalize(t, lo, hi))
            .collect();
        let pw = powers(&x, degree);
        for (c, e) in exponents.iter().enumerate() {
            a[(row, c)] = monomial(&pw, e);
        }
        b[row] = f(&point);
        // Odometer increment over the grid.
        for v in (0..k).rev() {
            idx[v] += 1;
            if idx[v] < axes[v].len() {
                break;
            }
            idx[v] = 0;
        }
    }

    // A = QR, then SVD of the small triangular factor; R shares A's singular values.
    let qr = a.clone().qr();
    let mut qtb = b.clone();
    qr.q_tr_mul(&mut qtb);
    let r = qr.r();
    let head = qtb.rows(0, r.nrows()).into_owned();
    let svd = r.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * total.max(exponents.len()) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let coef = svd
        .solve(&head, tol)
        .unwrap_or_else(|_| DVector::zeros(exponents.len()));
    let resid = &a * &coef - &b;
    let residual_rms = (resid.norm_squared() / total as f64).sqrt();
    PolynomialFit {
        exponents,
        coefficients: coef.iter().copied().collect(),
        residual_rms,
        samples: total,
        rank,
    }
}

/// Fit domain for joint `j`: its limits shrunk inward by `shrink` of the range on each side.
pub(crate) fn fit_domain(model: &MusculoskeletalModel, j: usize, shrink: f64) -> (f64, f64) {
    let joint = &model.tree().joints()[j];
    let span = joint.upper - joint.lower;
    (joint.lower + shrink * span, joint.upper - shrink * span)
}

/// Fits one muscle's length over a grid of its involved joints.
pub fn fit_length_polynomial(
    model: &MusculoskeletalModel,
    muscle: usize,
    opts: &FitOptions,
) -> Result<LengthPolynomial> {
    if muscle >= model.muscle_count() {
        return Err(Error::InvalidInput(format!("no muscle {muscle}")));
    }
    if opts.degree < 1 {
        return Err(Error::InvalidInput("polynomial degree must be at least 1".into()));
    }
    if !(opts.domain_shrink >= 0.0 && opts.domain_shrink < 0.5) {
        return Err(Error::InvalidInput("domain shrink must lie in [0, 0.5)".into()));
    }
    let joints = detect_involved_joints(model, muscle, opts.probe_step, opts.involvement_tolerance)?;
    let domain: Vec<(f64, f64)> = joints
        .iter()
        .map(|&j| fit_domain(model, j, opts.domain_shrink))
        .collect();

    let mut samples = opts.samples_per_joint;
    if !joints.is_empty() {
        let per_axis = (opts.max_grid_points as f64).powf(1.0 / joints.len() as f64).floor() as usize;
        samples = samples.min(per_axis.max(1));
    }

    let mut base: Vec<f64> = (0..model.dof())
        .map(|j| {
            let (lo, hi) = fit_domain(model, j, opts.domain_shrink);
            0.5 * (lo + hi)
        })
        .collect();
    let fit = fit_polynomial(&domain, opts.degree, samples, |pt| {
        for (&j, &v) in joints.iter().zip(pt) {
            base[j] = v;
        }
        lengths_unchecked(model, &base)[muscle]
    });
    if fit.rank < fit.exponents.len() {
        return Err(Error::RankDeficient {
            muscle,
            rank: fit.rank,
            monomials: fit.exponents.len(),
            samples: fit.samples,
        });
    }
    log::debug!(
        "muscle {} ({}): {} joints, {} samples, rms {:.3e} m",
        muscle,
        model.muscles()[muscle].name,
        joints.len(),
        fit.samples,
        fit.residual_rms
    );
    Ok(LengthPolynomial {
        muscle,
        joints,
        degree: opts.degree,
        exponents: fit.exponents,
        coefficients: fit.coefficients,
        domain,
        residual_rms: fit.residual_rms,
        samples: fit.samples,
    })
}

/// Fitted polynomials for every muscle of a model. Serializes to the
/// polynomial cache file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialSet {
    pub model: String,
    pub dof: usize,
    pub polynomials: Vec<LengthPolynomial>,
}

impl PolynomialSet {
    pub fn muscle_count(&self) -> usize {
        self.polynomials.len()
    }

    pub fn lengths(&self, theta: &JointAngles) -> MuscleLengths {
        MuscleLengths(DVector::from_iterator(
            self.polynomials.len(),
            self.polynomials.iter().map(|p| p.eval(theta.as_slice())),
        ))
    }

    pub fn jacobian(&self, theta: &JointAngles) -> Result<MuscleJacobian> {
        super::jacobian_from_polynomials(&self.polynomials, theta)
    }

    pub fn max_residual_rms(&self) -> f64 {
        self.polynomials.iter().map(|p| p.residual_rms).fold(0.0, f64::max)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn fit_model_polynomials(model: &MusculoskeletalModel, opts: &FitOptions) -> Result<PolynomialSet> {
    let polynomials = (0..model.muscle_count())
        .map(|i| fit_length_polynomial(model, i, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(PolynomialSet {
        model: model.name.clone(),
        dof: model.dof(),
        polynomials,
    })
}
