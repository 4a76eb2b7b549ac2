//! Direction conventions.
//!
//! `mu` is the cosine of the polar angle measured from the upward normal:
//! `mu > 0` travels up (toward optical depth 0), `mu < 0` travels down.
//! Azimuths are radians in `[0, 2π)`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::ValidationError;

/// Smallest |mu| a stored direction may carry.
pub const MU_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub mu: f64,
    pub phi: f64,
}

pub fn reduce_azimuth(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Clamps a requested grid cosine away from the grazing singularity,
/// preserving its sign (`+0.0` maps to `+MU_FLOOR`).
pub fn clamp_mu(mu: f64) -> f64 {
    if mu.abs() < MU_FLOOR {
        MU_FLOOR.copysign(mu)
    } else {
        mu
    }
}

impl Direction {
    pub fn new(mu: f64, phi: f64) -> Result<Self, ValidationError> {
        if !(mu.is_finite() && mu != 0.0 && mu.abs() <= 1.0) {
            return Err(ValidationError::new(
                "direction",
                format!("mu must satisfy 0 < |mu| <= 1, got {mu}"),
            ));
        }
        if !phi.is_finite() {
            return Err(ValidationError::new("direction", "azimuth is not finite"));
        }
        Ok(Self {
            mu,
            phi: reduce_azimuth(phi),
        })
    }

    /// Cartesian unit vector, `z` pointing up.
    pub fn to_vector(&self) -> [f64; 3] {
        let s = (1.0 - self.mu * self.mu).max(0.0).sqrt();
        [s * self.phi.cos(), s * self.phi.sin(), self.mu]
    }

    /// Meridian-plane Stokes reference frame `(e_par, e_perp)`.
    ///
    /// `e_par` is the polar-angle tangent (lies in the meridian plane),
    /// `e_perp` the azimuthal tangent; `e_par × e_perp` is the propagation
    /// direction. At the poles the frame is the limit taken along `phi`.
    pub fn meridian_frame(&self) -> ([f64; 3], [f64; 3]) {
        // polar angle from +z: cos(theta) = mu
        let st = (1.0 - self.mu * self.mu).max(0.0).sqrt();
        let (sp, cp) = self.phi.sin_cos();
        ([self.mu * cp, self.mu * sp, -st], [-sp, cp, 0.0])
    }
}

/// Cosine of the scattering angle between two directions,
/// `μμ′ + √(1−μ²)√(1−μ′²)cos(φ−φ′)`, clamped to `[-1, 1]`.
pub fn cos_scattering_angle(d1: &Direction, d2: &Direction) -> f64 {
    let s1 = (1.0 - d1.mu * d1.mu).max(0.0).sqrt();
    let s2 = (1.0 - d2.mu * d2.mu).max(0.0).sqrt();
    (d1.mu * d2.mu + s1 * s2 * (d1.phi - d2.phi).cos()).clamp(-1.0, 1.0)
}

pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn dir(mu: f64, phi: f64) -> Direction {
        Direction { mu, phi }
    }

    #[test]
    fn scattering_angle_examples() {
        assert_eq!(cos_scattering_angle(&dir(1.0, 0.3), &dir(1.0, 2.0)), 1.0);
        assert!(cos_scattering_angle(&dir(0.0, 0.0), &dir(0.0, FRAC_PI_2)).abs() < 1e-15);
        let c = cos_scattering_angle(&dir(0.6, 0.0), &dir(-0.6, 0.0));
        assert!((c - 0.28).abs() < 1e-15);
    }

    #[test]
    fn direction_validation() {
        assert!(Direction::new(0.0, 0.0).is_err());
        assert!(Direction::new(1.2, 0.0).is_err());
        assert!(Direction::new(-1.0, 0.0).is_ok());
        let d = Direction::new(0.5, -PI / 2.0).unwrap();
        assert!((d.phi - 1.5 * PI).abs() < 1e-15);
    }

    #[test]
    fn grid_cosine_clamp() {
        assert_eq!(clamp_mu(0.0), MU_FLOOR);
        assert_eq!(clamp_mu(-0.0), -MU_FLOOR);
        assert_eq!(clamp_mu(0.3), 0.3);
    }

    #[test]
    fn meridian_frame_is_right_handed() {
        for &(mu, phi) in &[(0.3, 1.0), (-0.7, 4.0), (1.0, 0.2), (-1.0, 2.5)] {
            let d = dir(mu, phi);
            let (a, b) = d.meridian_frame();
            let n = cross(&a, &b);
            let v = d.to_vector();
            for k in 0..3 {
                assert!((n[k] - v[k]).abs() < 1e-14);
            }
            assert!(dot(&a, &v).abs() < 1e-14 && dot(&b, &v).abs() < 1e-14);
        }
    }
}
