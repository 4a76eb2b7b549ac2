//! Phase matrix evaluated directly in the scattering plane and rotated into
//! meridian frames, independent of the Fourier machinery.
//!
//! ```text
//!        | a1  b1   0   0 |
//! F(Θ) = | b1  a2   0   0 |      Z(out, in) = L(ψ_out) F(Θ) L(ψ_in)
//!        |  0   0  a3  b2 |
//!        |  0   0 -b2  a4 |
//! ```

use super::gsf::WignerRecurrence;
use crate::geometry::{cross, dot, Direction};
use crate::stokes::MuellerMatrix;

/// `F(Θ)` referred to the scattering plane, from the `B_l` expansion.
pub fn scattering_matrix(coeffs: &[MuellerMatrix], cos_theta: f64) -> MuellerMatrix {
    let mut d00 = WignerRecurrence::new(0, 0, cos_theta);
    let mut d22 = WignerRecurrence::new(2, 2, cos_theta);
    let mut d2m2 = WignerRecurrence::new(2, -2, cos_theta);
    let mut d02 = WignerRecurrence::new(0, 2, cos_theta);
    let (mut a1, mut a4, mut sum23, mut dif23, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for b in coeffs {
        let (beta, alpha, gamma) = (b[(0, 0)], b[(1, 1)], b[(0, 1)]);
        let (delta, epsilon, zeta) = (b[(3, 3)], b[(3, 2)], b[(2, 2)]);
        let (p00, p22, p2m2, p02) = (d00.next().unwrap(), d22.next().unwrap(), d2m2.next().unwrap(), d02.next().unwrap());
        a1 += beta * p00;
        a4 += delta * p00;
        sum23 += (alpha + zeta) * p22;
        dif23 += (alpha - zeta) * p2m2;
        b1 -= gamma * p02;
        b2 += epsilon * p02;
    }
    let a2 = 0.5 * (sum23 + dif23);
    let a3 = 0.5 * (sum23 - dif23);
    MuellerMatrix::new([
        [a1, b1, 0.0, 0.0],
        [b1, a2, 0.0, 0.0],
        [0.0, 0.0, a3, b2],
        [0.0, 0.0, -b2, a4],
    ])
}

/// Stokes rotation into a frame turned by `psi` from the current one:
/// `Q' = cos2ψ Q + sin2ψ U`, `U' = -sin2ψ Q + cos2ψ U`.
pub fn rotation(psi: f64) -> MuellerMatrix {
    let (s, c) = (2.0 * psi).sin_cos();
    MuellerMatrix::new([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, c, s, 0.0],
        [0.0, -s, c, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(&v, &v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Angle taking frame `(a1, b1)` to a frame whose first axis is `a2`.
fn frame_angle(a1: &[f64; 3], b1: &[f64; 3], a2: &[f64; 3]) -> f64 {
    dot(a2, b1).atan2(dot(a2, a1))
}

/// Normal of the scattering plane; any vector perpendicular to `n_in` when
/// the directions are (anti)parallel.
pub fn scattering_plane_normal(d_in: &Direction, d_out: &Direction) -> [f64; 3] {
    let (ni, no) = (d_in.to_vector(), d_out.to_vector());
    let k = cross(&ni, &no);
    if dot(&k, &k).sqrt() > 1e-12 {
        normalize(k)
    } else {
        d_in.meridian_frame().1
    }
}

/// Phase matrix mapping Stokes of `d_in` (its meridian frame) to Stokes of
/// `d_out` (its meridian frame).
pub fn direct_phase_matrix(coeffs: &[MuellerMatrix], d_in: &Direction, d_out: &Direction) -> MuellerMatrix {
    let (ni, no) = (d_in.to_vector(), d_out.to_vector());
    let k = scattering_plane_normal(d_in, d_out);
    let (ai, bi) = d_in.meridian_frame();
    let psi_in = frame_angle(&ai, &bi, &cross(&k, &ni));
    let (ao, _) = d_out.meridian_frame();
    let a_sc = cross(&k, &no);
    let psi_out = frame_angle(&a_sc, &k, &ao);
    let cos_theta = dot(&ni, &no).clamp(-1.0, 1.0);
    rotation(psi_out) * scattering_matrix(coeffs, cos_theta) * rotation(psi_in)
}
