//! Unit conversions used at the external interfaces.
//!
//! Internally everything is SI (radians, meters, seconds) except tension,
//! which stays in kgf end to end because every controller constant is
//! expressed in kgf.

/// Standard gravity, N per kgf.
pub const KGF: f64 = 9.80665;

#[inline]
pub fn deg(rad: f64) -> f64 {
    rad.to_degrees()
}

#[inline]
pub fn rad(deg: f64) -> f64 {
    deg.to_radians()
}

#[inline]
pub fn kgf_to_newton(kgf: f64) -> f64 {
    kgf * KGF
}

#[inline]
pub fn m_to_mm(m: f64) -> f64 {
    m * 1e3
}

#[inline]
pub fn mm_to_m(mm: f64) -> f64 {
    mm * 1e-3
}
