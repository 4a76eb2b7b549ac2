//! Azimuthal Fourier basis.
//!
//! `Φ_1^m(φ) = (2-δ_{0m}) diag(cos mφ, cos mφ, sin mφ, sin mφ)`,
//! `Φ_2^m(φ) = (2-δ_{0m}) diag(-sin mφ, -sin mφ, cos mφ, cos mφ)`,
//! `D_1 = diag(1,1,0,0)`, `D_2 = diag(0,0,1,1)`.

use crate::stokes::MuellerMatrix;

pub const D1: MuellerMatrix = MuellerMatrix::SELECT_IQ;
pub const D2: MuellerMatrix = MuellerMatrix::SELECT_UV;

/// `D_k`, `k ∈ {1, 2}`.
pub fn selector(k: usize) -> MuellerMatrix {
    match k {
        1 => D1,
        2 => D2,
        _ => panic!("Fourier mode index must be 1 or 2, got {k}"),
    }
}

/// `2 - δ_{0m}`.
pub fn order_factor(m: usize) -> f64 {
    if m == 0 {
        1.0
    } else {
        2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierBasis {
    pub phi1: MuellerMatrix,
    pub phi2: MuellerMatrix,
}

impl FourierBasis {
    pub fn new(m: usize, phi: f64) -> Self {
        let f = order_factor(m);
        let (s, c) = (m as f64 * phi).sin_cos();
        Self {
            phi1: MuellerMatrix::diag([f * c, f * c, f * s, f * s]),
            phi2: MuellerMatrix::diag([-f * s, -f * s, f * c, f * c]),
        }
    }

    pub fn get(&self, k: usize) -> &MuellerMatrix {
        match k {
            1 => &self.phi1,
            2 => &self.phi2,
            _ => panic!("Fourier mode index must be 1 or 2, got {k}"),
        }
    }

    /// Diagonal of `Φ_k^m` as a plain array (cheap azimuthal assembly).
    pub fn diagonal(&self, k: usize) -> [f64; 4] {
        let m = self.get(k);
        [m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(3, 3)]]
    }
}
