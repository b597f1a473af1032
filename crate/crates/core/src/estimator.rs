//! Extended Kalman filter for joint angles from measured muscle lengths.
//!
//! The process model is a random walk on θ. The measurement model is the
//! fitted length polynomial set, whose gradient is the muscle Jacobian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{JointAngles, KinematicTree, MuscleLengths, PolynomialSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EkfParams {
    /// Process noise rate per joint, rad²/s.
    pub q: f64,
    /// Measurement noise per muscle, m².
    pub r: f64,
    /// Initial variance per joint, rad².
    pub p0: f64,
}

impl Default for EkfParams {
    fn default() -> Self {
        Self {
            q: 1f64.to_radians().powi(2),
            r: 0.5e-3f64.powi(2),
            p0: 10f64.to_radians().powi(2),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EkfState {
    pub theta_hat: JointAngles,
    pub covariance: DMatrix<f64>,
    /// Per joint, rad²/s.
    pub q: DVector<f64>,
    /// Per muscle, m².
    pub r: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

/// Result of one measurement update.
#[derive(Clone, Debug, PartialEq)]
pub struct Update {
    pub state: EkfState,
    /// True when the innovation was non-finite and the update was skipped.
    pub skipped: bool,
    /// True when some polynomial was evaluated outside its fit domain.
    pub extrapolated: bool,
}

impl EkfState {
    pub fn new(tree: &KinematicTree, theta0: &JointAngles, muscles: usize, params: &EkfParams) -> Result<Self> {
        let n = tree.dof();
        if theta0.len() != n {
            return Err(Error::DimensionMismatch {
                what: "initial estimate",
                expected: n,
                got: theta0.len(),
            });
        }
        let mut theta_hat = theta0.clone();
        tree.clamp_angles(&mut theta_hat);
        let s = Self {
            theta_hat,
            covariance: DMatrix::from_diagonal_element(n, n, params.p0),
            q: DVector::from_element(n, params.q),
            r: DVector::from_element(muscles, params.r),
            lower: tree.lower_limits(),
            upper: tree.upper_limits(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.q.iter().all(|v| *v > 0.0 && v.is_finite()) || !self.r.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput("EKF noise variances must be positive".into()));
        }
        if !is_spd(&self.covariance) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(())
    }

    /// Random-walk prediction: θ̂ unchanged, `P += diag(q)·dt`.
    pub fn predict(&self, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("prediction step {dt} must be > 0")));
        }
        let mut out = self.clone();
        for j in 0..self.q.len() {
            out.covariance[(j, j)] += self.q[j] * dt;
        }
        Ok(out)
    }

    /// Measurement update against the polynomial length model (Joseph form).
    pub fn update(&self, measured: &MuscleLengths, polys: &PolynomialSet) -> Result<Update> {
        let l = self.r.len();
        if measured.len() != l || polys.muscle_count() != l {
            return Err(Error::DimensionMismatch {
                what: "muscle length measurement",
                expected: l,
                got: measured.len().min(polys.muscle_count()),
            });
        }
        let predicted = polys.lengths(&self.theta_hat);
        let innovation = &measured.0 - &predicted.0;
        let jac = polys.jacobian(&self.theta_hat)?;
        if !innovation.iter().all(|v| v.is_finite()) {
            log::warn!("non-finite innovation, EKF update skipped");
            return Ok(Update {
                state: self.clone(),
                skipped: true,
                extrapolated: jac.extrapolated,
            });
        }
        let h = &jac.g;
        let p = &self.covariance;
        let r = DMatrix::from_diagonal(&self.r);
        let s = h * p * h.transpose() + &r;
        let s_inv = s.cholesky().ok_or(Error::NotPositiveDefinite)?.inverse();
        let k = p * h.transpose() * s_inv;
        let mut theta = &self.theta_hat.0 + &k * innovation;
        for j in 0..theta.len() {
            theta[j] = theta[j].clamp(self.lower[j], self.upper[j]);
        }
        let ikh = DMatrix::identity(p.nrows(), p.ncols()) - &k * h;
        let joseph = &ikh * p * ikh.transpose() + &k * r * k.transpose();
        let covariance = (&joseph + joseph.transpose()) * 0.5;
        Ok(Update {
            state: Self {
                theta_hat: JointAngles(theta),
                covariance,
                ..self.clone()
            },
            skipped: false,
            extrapolated: jac.extrapolated,
        })
    }
}

fn is_spd(p: &DMatrix<f64>) -> bool {
    p.is_square()
        && (p - p.transpose()).abs().max() <= 1e-12 * p.abs().max().max(1.0)
        && p.clone().cholesky().is_some()
}
