//! Generalized-spherical-function matrices
//!
//! ```text
//!            | P   0   0   0 |
//! Π_l^m(μ) = | 0   R  -T   0 |
//!            | 0  -T   R   0 |
//!            | 0   0   0   P |
//! ```
//!
//! with `P_l^m = (-1)^m d^l_{m0}`, `R_l^m = -(-1)^m (d^l_{m2} + d^l_{m,-2}) / 2`
//! and `T_l^m = -(-1)^m (d^l_{m2} - d^l_{m,-2}) / 2`, all at `θ = arccos μ`.
//! `P_l^m` is then the associated Legendre function normalized by
//! `√((l-m)!/(l+m)!)`, without the Condon–Shortley phase. The sign of `R`
//! and `T` relative to `P` matches Stokes parameters referred to the
//! meridian plane with `Q > 0` for polarization along `e_θ`.

use super::gsf::wigner_d_sequence;
use crate::stokes::MuellerMatrix;

/// `P, R, T` for `l = 0..len` at a fixed `m` and `μ`.
#[derive(Debug, Clone)]
pub struct GsfRow {
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub t: Vec<f64>,
}

pub fn gsf_row(m: usize, len: usize, mu: f64) -> GsfRow {
    let mi = m as i64;
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    let d0 = wigner_d_sequence(mi, 0, len, mu);
    let dp = wigner_d_sequence(mi, 2, len, mu);
    let dm = wigner_d_sequence(mi, -2, len, mu);
    GsfRow {
        p: d0.iter().map(|v| sign * v).collect(),
        r: dp.iter().zip(&dm).map(|(a, b)| -0.5 * sign * (a + b)).collect(),
        t: dp.iter().zip(&dm).map(|(a, b)| -0.5 * sign * (a - b)).collect(),
    }
}

pub(crate) fn pi_matrix(p: f64, r: f64, t: f64) -> MuellerMatrix {
    MuellerMatrix::new([
        [p, 0.0, 0.0, 0.0],
        [0.0, r, -t, 0.0],
        [0.0, -t, r, 0.0],
        [0.0, 0.0, 0.0, p],
    ])
}

impl GsfRow {
    pub fn matrix(&self, l: usize) -> MuellerMatrix {
        pi_matrix(self.p[l], self.r[l], self.t[l])
    }
}

/// `Π_l^m(μ)`; the zero matrix when `m > l`.
pub fn legendre_matrix(l: usize, m: usize, mu: f64) -> MuellerMatrix {
    if m > l {
        return MuellerMatrix::ZERO;
    }
    gsf_row(m, l + 1, mu).matrix(l)
}

/// `Π_l^m` over a set of cosines, `l = 0..len`.
#[derive(Debug, Clone)]
pub struct LegendreMatrixTable {
    pub m: usize,
    pub len: usize,
    pub mus: Vec<f64>,
    /// Row-major by `(point, l)`.
    pub entries: Vec<MuellerMatrix>,
}

impl LegendreMatrixTable {
    pub fn build(m: usize, len: usize, mus: &[f64]) -> Self {
        let mut entries = Vec::with_capacity(len * mus.len());
        for &mu in mus {
            let row = gsf_row(m, len, mu);
            entries.extend((0..len).map(|l| row.matrix(l)));
        }
        Self {
            m,
            len,
            mus: mus.to_vec(),
            entries,
        }
    }

    pub fn get(&self, point: usize, l: usize) -> &MuellerMatrix {
        &self.entries[point * self.len + l]
    }

    /// `Π_l^m(-μ) = (-1)^{l-m} D Π_l^m(μ) D`.
    pub fn get_reflected(&self, point: usize, l: usize) -> MuellerMatrix {
        let p = self.get(point, l).parity_conjugate();
        if l >= self.m && (l - self.m) % 2 == 1 {
            p.scale(-1.0)
        } else {
            p
        }
    }
}
