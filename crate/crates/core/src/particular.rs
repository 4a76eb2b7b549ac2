//! Particular solution driven by the attenuated beam.
//!
//! For a source `X(μ) e^{-τ/μ0}` the particular field is `Z(μ) e^{-τ/μ0}`.
//! With `S = M(Z⁺ + Z̃⁻)`, `Ŷ = M(Z⁺ - Z̃⁻)` (where `Z̃⁻ = D Z(-μ)`),
//! `s_x = X⁺ + X̃⁻` and `d_x = X⁺ - X̃⁻`, elimination gives the half-size
//! system
//!
//! ```text
//! (FE - 1/μ0²) S = F s_x - d_x/μ0,     Ŷ = -μ0 (E S - s_x)
//! ```
//!
//! and `Z⁺ = ½M⁻¹(S + Ŷ)`, `Z̃⁻ = ½M⁻¹(S - Ŷ)`.

use std::f64::consts::PI;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;

use crate::error::NumericalError;
use crate::homogeneous::{EigenModeSet, ReducedOperators};
use crate::phase::fourier::selector;
use crate::phase::kernel::kernel_from_rows;
use crate::phase::{gsf_row, AzimuthKernel};
use crate::quadrature::Quadrature;
use crate::stokes::{MuellerMatrix, StokesVector};

/// Relative distance `|1/μ0² - λ_j| / |λ_j|` below which μ0 is dithered.
pub const RESONANCE_GUARD: f64 = 1e-8;
/// Size of one μ0 dithering step.
pub const MU0_DITHER: f64 = 1e-7;
/// Bound on the relative residual of the particular equations.
pub const PARTICULAR_RESIDUAL_TOL: f64 = 1e-9;

/// Beam source on the nodes for one `(m, k)` at unit attenuation:
/// `X(±μ_i) = (ω/4π) A^m(±μ_i, -μ0) D_k I0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSourceTerm {
    pub m: usize,
    pub k: usize,
    pub mu0: f64,
    pub x_plus: Vec<f64>,
    /// `X(-μ_i)` in the physical (un-mirrored) frame.
    pub x_minus: Vec<f64>,
}

impl BeamSourceTerm {
    pub fn is_zero(&self) -> bool {
        self.x_plus.iter().chain(&self.x_minus).all(|&v| v == 0.0)
    }
}

/// `(ω/4π) A^m(μ, -μ0) D_k` for arbitrary `μ`: the Mueller factor applied to `I0`.
pub fn beam_source_matrix(m: usize, k: usize, omega: f64, coeffs: &[MuellerMatrix], mu: f64, mu0: f64) -> MuellerMatrix {
    let len = coeffs.len();
    let a = kernel_from_rows(m, coeffs, &gsf_row(m, len, mu), &gsf_row(m, len, -mu0), false);
    (a * selector(k)).scale(omega / (4.0 * PI))
}

pub fn build_beam_source(
    m: usize,
    k: usize,
    omega: f64,
    coeffs: &[MuellerMatrix],
    quad: &Quadrature,
    mu0: f64,
    i0: StokesVector,
) -> BeamSourceTerm {
    let n = quad.len();
    let mut x_plus = vec![0.0; 4 * n];
    let mut x_minus = vec![0.0; 4 * n];
    if omega != 0.0 && m < coeffs.len() {
        let len = coeffs.len();
        let beam = gsf_row(m, len, -mu0);
        let dk_i0 = selector(k) * i0;
        for i in 0..n {
            let row = gsf_row(m, len, quad.nodes[i]);
            let up = kernel_from_rows(m, coeffs, &row, &beam, false) * dk_i0;
            // A(-μ, -μ0) = D A(μ, μ0) D and the reflected row of -μ0 is +μ0
            let dn = kernel_from_rows(m, coeffs, &row, &beam, true).parity_conjugate() * dk_i0;
            for s in 0..4 {
                x_plus[4 * i + s] = omega / (4.0 * PI) * up[s];
                x_minus[4 * i + s] = omega / (4.0 * PI) * dn[s];
            }
        }
    }
    BeamSourceTerm {
        m,
        k,
        mu0,
        x_plus,
        x_minus,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticularVectors {
    pub z_plus: Vec<f64>,
    /// `Z(-μ_i)` in the physical frame.
    pub z_minus: Vec<f64>,
    /// Solution `S` of the reduced system.
    pub g: Vec<f64>,
    pub residual: f64,
}

impl ParticularVectors {
    pub fn zero(n: usize) -> Self {
        Self {
            z_plus: vec![0.0; 4 * n],
            z_minus: vec![0.0; 4 * n],
            g: vec![0.0; 4 * n],
            residual: 0.0,
        }
    }
}

/// Factorization of `FE - 1/μ0²` for one `(layer, m, μ0)`, shared by all
/// sources with that beam cosine.
pub struct ParticularSolver<'a> {
    ops: &'a ReducedOperators,
    mu0: f64,
    lu: PartialPivLu<f64>,
}

fn parity_vec(v: &[f64]) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(k, &x)| if k % 4 >= 2 { -x } else { x })
        .collect()
}

fn mat_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|k| a[(i, k)] * x[k]).sum())
        .collect()
}

impl<'a> ParticularSolver<'a> {
    pub fn new(ops: &'a ReducedOperators, mu0: f64) -> Self {
        let fe = &ops.f * &ops.e;
        let dim = fe.nrows();
        let shift = 1.0 / (mu0 * mu0);
        let a = Mat::from_fn(dim, dim, |i, j| if i == j { fe[(i, j)] - shift } else { fe[(i, j)] });
        Self {
            ops,
            mu0,
            lu: a.partial_piv_lu(),
        }
    }

    pub fn solve(&self, src: &BeamSourceTerm, kernel: &AzimuthKernel, quad: &Quadrature) -> Result<ParticularVectors, NumericalError> {
        let n = self.ops.n();
        if self.ops.omega == 0.0 || src.is_zero() {
            return Ok(ParticularVectors::zero(n));
        }
        let mu0 = self.mu0;
        let xm = parity_vec(&src.x_minus);
        let sx: Vec<f64> = src.x_plus.iter().zip(&xm).map(|(a, b)| a + b).collect();
        let dx: Vec<f64> = src.x_plus.iter().zip(&xm).map(|(a, b)| a - b).collect();
        let fsx = mat_vec(&self.ops.f, &sx);
        let rhs = Mat::from_fn(4 * n, 1, |i, _| fsx[i] - dx[i] / mu0);
        let sol = self.lu.solve(&rhs);
        let g: Vec<f64> = (0..4 * n).map(|i| sol[(i, 0)]).collect();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NumericalError::Particular {
                order: src.m,
                mu0,
                detail: "singular reduced system".into(),
            });
        }
        let eg = mat_vec(&self.ops.e, &g);
        let y: Vec<f64> = (0..4 * n).map(|i| -mu0 * (eg[i] - sx[i])).collect();
        let mut z_plus = vec![0.0; 4 * n];
        let mut zt = vec![0.0; 4 * n];
        for i in 0..4 * n {
            let inv = 0.5 / self.ops.mu[i / 4];
            z_plus[i] = (g[i] + y[i]) * inv;
            zt[i] = (g[i] - y[i]) * inv;
        }
        let z_minus = parity_vec(&zt);
        let residual = particular_residual(kernel, self.ops.omega, quad, mu0, src, &z_plus, &z_minus);
        if !(residual < PARTICULAR_RESIDUAL_TOL) {
            return Err(NumericalError::Particular {
                order: src.m,
                mu0,
                detail: format!("residual {residual:.3e} exceeds {PARTICULAR_RESIDUAL_TOL:e}"),
            });
        }
        Ok(ParticularVectors {
            z_plus,
            z_minus,
            g,
            residual,
        })
    }
}

/// Convenience wrapper: factor and solve for a single source.
pub fn solve_particular(
    ops: &ReducedOperators,
    src: &BeamSourceTerm,
    kernel: &AzimuthKernel,
    quad: &Quadrature,
) -> Result<ParticularVectors, NumericalError> {
    ParticularSolver::new(ops, src.mu0).solve(src, kernel, quad)
}

/// `max |(1 + μ_s/μ0) Z_s - (ω/2) Σ α A Z - X_s| / max(|Z|, |X|)` over signed nodes.
pub fn particular_residual(
    kernel: &AzimuthKernel,
    omega: f64,
    quad: &Quadrature,
    mu0: f64,
    src: &BeamSourceTerm,
    z_plus: &[f64],
    z_minus: &[f64],
) -> f64 {
    let n = quad.len();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (sign, z, x) in [(1i8, z_plus, &src.x_plus), (-1i8, z_minus, &src.x_minus)] {
        for i in 0..n {
            let mut acc = [0.0; 4];
            for j in 0..n {
                let w = 0.5 * omega * quad.weights[j];
                let up: [f64; 4] = std::array::from_fn(|s| z_plus[4 * j + s]);
                let dn: [f64; 4] = std::array::from_fn(|s| z_minus[4 * j + s]);
                let t1 = kernel.block(i, sign, j, 1).apply_array(&up);
                let t2 = kernel.block(i, sign, j, -1).apply_array(&dn);
                for s in 0..4 {
                    acc[s] += w * (t1[s] + t2[s]);
                }
            }
            let mu_s = sign as f64 * quad.nodes[i];
            for s in 0..4 {
                let zi = z[4 * i + s];
                let r = (1.0 + mu_s / mu0) * zi - acc[s] - x[4 * i + s];
                worst = worst.max(r.abs());
                scale = scale.max(zi.abs()).max(x[4 * i + s].abs());
            }
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

/// Whether `μ0` sits on an eigen separation constant of any mode set.
pub fn is_resonant<'a>(mu0: f64, modes: impl IntoIterator<Item = &'a EigenModeSet>) -> bool {
    let target = 1.0 / (mu0 * mu0);
    modes.into_iter().any(|set| {
        set.lambda
            .iter()
            .any(|l| l.norm() > 0.0 && (l - target).norm() < RESONANCE_GUARD * l.norm())
    })
}

/// `μ0`, dithered by `MU0_DITHER` steps until no mode set is resonant.
pub fn resonance_free_mu0<'a>(mu0: f64, modes: &[&'a EigenModeSet]) -> Result<f64, NumericalError> {
    let mut candidate = mu0;
    for step in 0..16 {
        if !is_resonant(candidate, modes.iter().copied()) {
            if step > 0 {
                log::warn!("beam cosine {mu0} resonates with an eigenmode; dithered to {candidate}");
            }
            return Ok(candidate);
        }
        let k = (step / 2 + 1) as f64;
        candidate = if step % 2 == 0 { mu0 - k * MU0_DITHER } else { mu0 + k * MU0_DITHER };
        candidate = candidate.min(1.0);
    }
    Err(NumericalError::Particular {
        order: 0,
        mu0,
        detail: "beam cosine remains resonant after dithering".into(),
    })
}
