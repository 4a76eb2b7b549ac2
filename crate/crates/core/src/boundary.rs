//! Combination coefficients from boundary and interface conditions.
//!
//! Inside layer `ℓ` (local depth `τ ∈ [0, t]`, beam attenuation `c_ℓ` at its
//! top) the nodal field of one `(m, k)` is
//!
//! ```text
//! I(τ, +μ_i) =   Σ_j A_j a_j e^{-τ/ν_j} + B_j b_j e^{-(t-τ)/ν_j}  + c_ℓ Z⁺ e^{-τ/μ0}
//! I(τ, -μ_i) = D Σ_j A_j b_j e^{-τ/ν_j} + B_j a_j e^{-(t-τ)/ν_j}  + c_ℓ Z⁻ e^{-τ/μ0}
//! ```
//!
//! Every exponential is measured from the nearer layer boundary, so no
//! growing factor is ever formed. Unknowns are `[A; B]` per layer (`8N`
//! each); rows are the `4N` top conditions `I(0, -μ) = 0`, `8N` continuity
//! rows per interface and `4N` bottom rows
//! `I(τ₀, μ_i) - Σ_n α_n μ_n R(μ_i, -μ_n) I(τ₀, -μ_n) = (μ0/2π) R(μ_i, -μ0) D_k I0 e^{-τ₀/μ0}`,
//! the reflection terms entering only at `m = 0` because the base tables
//! carry no azimuth dependence.

use std::f64::consts::PI;
use std::io::Write;

use faer::linalg::solvers::{DenseSolveCore, PartialPivLu, Solve};
use faer::{c64, Mat};

use crate::error::{NumericalError, ValidationError};
use crate::homogeneous::EigenModeSet;
use crate::material::{BaseReflector, MuellerTable};
use crate::particular::ParticularVectors;
use crate::phase::fourier::selector;
use crate::quadrature::Quadrature;
use crate::stokes::{MuellerMatrix, StokesVector};

/// Largest acceptable condition estimate of a boundary system.
pub const MAX_CONDITION: f64 = 1e15;

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };

/// Base reflector prepared for a quadrature.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseReflection {
    Black,
    /// `R₀₀ = 2ρ`, every other entry zero.
    Lambertian { rho: f64 },
    Table { table: MuellerTable, nodes: Vec<f64> },
}

impl BaseReflection {
    pub fn build(base: &BaseReflector, quad: &Quadrature) -> Result<Self, ValidationError> {
        Ok(match base {
            BaseReflector::Black => Self::Black,
            BaseReflector::Lambertian { albedo } if *albedo == 0.0 => Self::Black,
            BaseReflector::Lambertian { albedo } => Self::Lambertian { rho: *albedo },
            BaseReflector::MuellerTable(t) => {
                if t.n != quad.len() {
                    return Err(ValidationError::new(
                        "base.table",
                        format!("table is {0}×{0} but the quadrature has {1} nodes", t.n, quad.len()),
                    ));
                }
                Self::Table {
                    table: t.clone(),
                    nodes: quad.nodes.clone(),
                }
            }
        })
    }

    pub fn is_black(&self) -> bool {
        matches!(self, Self::Black)
    }

    /// `R(μ, -μ′)` for arbitrary cosines; table entries are interpolated.
    pub fn matrix_at(&self, mu: f64, mu_in: f64) -> MuellerMatrix {
        match self {
            Self::Black => MuellerMatrix::ZERO,
            Self::Lambertian { rho } => MuellerMatrix::diag([2.0 * rho, 0.0, 0.0, 0.0]),
            Self::Table { table, nodes } => table.interpolate(nodes, mu, mu_in),
        }
    }

    /// `Σ_n α_n μ_n R(μ_i, -μ_n) v_n` at every node (`v` holds `4N` entries).
    pub fn reflect_nodes(&self, quad: &Quadrature, v: &[c64]) -> Vec<c64> {
        let n = quad.len();
        match self {
            Self::Black => vec![ZERO; 4 * n],
            Self::Lambertian { rho } => {
                // identical for every output node: evaluate once, replicate
                let flux: c64 = (0..n).map(|j| v[4 * j] * (quad.weights[j] * quad.nodes[j])).sum();
                let mut out = vec![ZERO; 4 * n];
                for i in 0..n {
                    out[4 * i] = flux * (2.0 * rho);
                }
                out
            }
            Self::Table { table, .. } => {
                let mut out = vec![ZERO; 4 * n];
                for i in 0..n {
                    for j in 0..n {
                        let w = quad.weights[j] * quad.nodes[j];
                        let vj: [c64; 4] = std::array::from_fn(|s| v[4 * j + s] * w);
                        let r = table.get(i, j).apply_complex(&vj);
                        for s in 0..4 {
                            out[4 * i + s] += r[s];
                        }
                    }
                }
                out
            }
        }
    }

    /// `Σ_n α_n μ_n R(μ, -μ_n) v_n` for one arbitrary output cosine.
    pub fn reflect_at(&self, quad: &Quadrature, mu: f64, v: &[f64]) -> [f64; 4] {
        let mut out = [0.0; 4];
        if self.is_black() {
            return out;
        }
        for j in 0..quad.len() {
            let w = quad.weights[j] * quad.nodes[j];
            let vj: [f64; 4] = std::array::from_fn(|s| v[4 * j + s] * w);
            let r = self.matrix_at(mu, quad.nodes[j]).apply_array(&vj);
            for s in 0..4 {
                out[s] += r[s];
            }
        }
        out
    }
}

/// One layer's ingredients for a given order.
#[derive(Clone, Copy)]
pub struct LayerModes<'a> {
    pub modes: &'a EigenModeSet,
    pub tau: f64,
}

/// Weights `[on a_j, on b_j]` of column `j` for `[up A, down A, up B, down B]`
/// at local depth `tau` (down values mirrored by `D`).
pub fn column_weights(modes: &EigenModeSet, j: usize, t: f64, tau: f64) -> [[c64; 2]; 4] {
    let one = c64::new(1.0, 0.0);
    if modes.is_polynomial(j) {
        let s = c64::new(0.5 * (t - 2.0 * tau), 0.0);
        return [[one, ZERO], [one, ZERO], [s, one], [s, -one]];
    }
    let nu = modes.nu[j];
    let e1 = (-(c64::new(tau, 0.0) / nu)).exp();
    let e2 = (-(c64::new(t - tau, 0.0) / nu)).exp();
    [[e1, ZERO], [ZERO, e1], [ZERO, e2], [e2, ZERO]]
}

/// `K` blocks of one layer evaluated at local depth `tau`: the upward and
/// mirrored-downward node values contributed by each unknown.
#[derive(Debug, Clone)]
pub struct PropagatorBlock {
    /// `4N × 8N`, columns `[A; B]`.
    pub up: Mat<c64>,
    /// `4N × 8N`, `D I(-μ)` rows.
    pub down: Mat<c64>,
}

pub fn build_propagator(modes: &EigenModeSet, t: f64, tau: f64) -> PropagatorBlock {
    let dim = modes.len();
    let mut up = Mat::<c64>::zeros(dim, 2 * dim);
    let mut down = Mat::<c64>::zeros(dim, 2 * dim);
    for j in 0..dim {
        let w = column_weights(modes, j, t, tau);
        for r in 0..dim {
            let (a, b) = (modes.a[(r, j)], modes.b[(r, j)]);
            up[(r, j)] = a * w[0][0] + b * w[0][1];
            down[(r, j)] = a * w[1][0] + b * w[1][1];
            up[(r, dim + j)] = a * w[2][0] + b * w[2][1];
            down[(r, dim + j)] = a * w[3][0] + b * w[3][1];
        }
    }
    PropagatorBlock { up, down }
}

fn parity(k: usize) -> f64 {
    if k % 4 >= 2 {
        -1.0
    } else {
        1.0
    }
}

/// Left-hand side of the global system for order `m`.
pub fn assemble_boundary_lhs(m: usize, layers: &[LayerModes<'_>], base: &BaseReflection, quad: &Quadrature) -> Mat<c64> {
    let dim = 4 * quad.len();
    let nl = layers.len();
    let size = 2 * dim * nl;
    let mut lhs = Mat::<c64>::zeros(size, size);
    let first = build_propagator(layers[0].modes, layers[0].tau, 0.0);
    for r in 0..dim {
        for c in 0..2 * dim {
            lhs[(r, c)] = first.down[(r, c)];
        }
    }
    for l in 0..nl.saturating_sub(1) {
        let above = build_propagator(layers[l].modes, layers[l].tau, layers[l].tau);
        let below = build_propagator(layers[l + 1].modes, layers[l + 1].tau, 0.0);
        let row0 = dim + 2 * dim * l;
        let (ca, cb) = (2 * dim * l, 2 * dim * (l + 1));
        for r in 0..dim {
            for c in 0..2 * dim {
                lhs[(row0 + r, ca + c)] = above.up[(r, c)];
                lhs[(row0 + r, cb + c)] = -below.up[(r, c)];
                lhs[(row0 + dim + r, ca + c)] = above.down[(r, c)];
                lhs[(row0 + dim + r, cb + c)] = -below.down[(r, c)];
            }
        }
    }
    let last = &layers[nl - 1];
    let bottom = build_propagator(last.modes, last.tau, last.tau);
    let row0 = size - dim;
    let c0 = size - 2 * dim;
    let reflect = m == 0 && !base.is_black();
    for c in 0..2 * dim {
        let refl = if reflect {
            let dn: Vec<c64> = (0..dim).map(|r| bottom.down[(r, c)] * parity(r)).collect();
            base.reflect_nodes(quad, &dn)
        } else {
            vec![ZERO; dim]
        };
        for r in 0..dim {
            lhs[(row0 + r, c0 + c)] = bottom.up[(r, c)] - refl[r];
        }
    }
    lhs
}

/// Beam-dependent data for one `(m, k)` right-hand side.
pub struct BeamDrive<'a> {
    pub m: usize,
    pub k: usize,
    pub mu0: f64,
    pub stokes: StokesVector,
    /// Particular vectors per layer at unit attenuation.
    pub particulars: &'a [ParticularVectors],
}

/// `e^{-τ_top/μ0}` for the top of each layer, plus the total at the bottom.
pub fn layer_attenuations(taus: &[f64], mu0: f64) -> (Vec<f64>, f64) {
    let mut acc = 0.0;
    let tops = taus
        .iter()
        .map(|t| {
            let c = (-acc / mu0).exp();
            acc += t;
            c
        })
        .collect();
    (tops, (-acc / mu0).exp())
}

pub fn boundary_rhs(layers: &[LayerModes<'_>], base: &BaseReflection, quad: &Quadrature, drive: &BeamDrive<'_>) -> Vec<c64> {
    let dim = 4 * quad.len();
    let nl = layers.len();
    let taus: Vec<f64> = layers.iter().map(|l| l.tau).collect();
    let (tops, total) = layer_attenuations(&taus, drive.mu0);
    let mut rhs = vec![ZERO; 2 * dim * nl];
    let p0 = &drive.particulars[0];
    for r in 0..dim {
        rhs[r] = c64::new(-parity(r) * p0.z_minus[r] * tops[0], 0.0);
    }
    for l in 0..nl.saturating_sub(1) {
        let (pa, pb) = (&drive.particulars[l], &drive.particulars[l + 1]);
        let c = tops[l + 1];
        let row0 = dim + 2 * dim * l;
        for r in 0..dim {
            rhs[row0 + r] = c64::new((pb.z_plus[r] - pa.z_plus[r]) * c, 0.0);
            rhs[row0 + dim + r] = c64::new(parity(r) * (pb.z_minus[r] - pa.z_minus[r]) * c, 0.0);
        }
    }
    let pl = &drive.particulars[nl - 1];
    let row0 = 2 * dim * nl - dim;
    let mut bottom: Vec<f64> = (0..dim).map(|r| -pl.z_plus[r] * total).collect();
    if drive.m == 0 && !base.is_black() {
        let zdn: Vec<c64> = pl.z_minus.iter().map(|&v| c64::new(v * total, 0.0)).collect();
        let refl = base.reflect_nodes(quad, &zdn);
        let src = selector(drive.k) * drive.stokes;
        for i in 0..quad.len() {
            let beam = base.matrix_at(quad.nodes[i], drive.mu0) * src;
            for s in 0..4 {
                let r = 4 * i + s;
                bottom[r] += refl[r].re + drive.mu0 / (2.0 * PI) * beam[s] * total;
            }
        }
    }
    for r in 0..dim {
        rhs[row0 + r] = c64::new(bottom[r], 0.0);
    }
    rhs
}

fn one_norm(a: &Mat<c64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Factored boundary system of one order, shared by every beam.
pub struct BoundaryOperator {
    pub m: usize,
    pub layers: usize,
    pub lhs: Mat<c64>,
    pub condition: f64,
    norm_inf: f64,
    lu: PartialPivLu<c64>,
}

impl std::fmt::Debug for BoundaryOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundaryOperator")
            .field("m", &self.m)
            .field("size", &self.lhs.nrows())
            .field("condition", &self.condition)
            .finish()
    }
}

impl BoundaryOperator {
    pub fn new(m: usize, layers: &[LayerModes<'_>], base: &BaseReflection, quad: &Quadrature) -> Result<Self, NumericalError> {
        let lhs = assemble_boundary_lhs(m, layers, base, quad);
        let lu = lhs.partial_piv_lu();
        let inv = lu.inverse();
        let condition = one_norm(&lhs) * one_norm(&inv);
        let norm_inf = (0..lhs.nrows())
            .map(|i| (0..lhs.ncols()).map(|j| lhs[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max);
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(NumericalError::Boundary { order: m, condition });
        }
        Ok(Self {
            m,
            layers: layers.len(),
            lhs,
            condition,
            norm_inf,
            lu,
        })
    }

    /// Coefficients `[A; B]` per layer, plus the backward error of the solve.
    pub fn solve(&self, rhs: &[c64]) -> Result<(Vec<Vec<c64>>, f64), NumericalError> {
        let size = rhs.len();
        let b = Mat::from_fn(size, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        let sol: Vec<c64> = (0..size).map(|i| x[(i, 0)]).collect();
        if sol.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(NumericalError::Boundary {
                order: self.m,
                condition: self.condition,
            });
        }
        let ax = &self.lhs * &x;
        // normwise backward error ‖Ax - b‖ / (‖A‖‖x‖ + ‖b‖)
        let inf = |v: &[c64]| v.iter().fold(0.0f64, |s, x| s.max(x.norm()));
        let scale = self.norm_inf * inf(&sol) + inf(rhs);
        let res = (0..size).fold(0.0f64, |s, i| s.max((ax[(i, 0)] - rhs[i]).norm()));
        let residual = if scale > 0.0 { res / scale } else { 0.0 };
        Ok((sol.chunks(size / self.layers).map(<[c64]>::to_vec).collect(), residual))
    }
}

/// Nodal field of one layer at local depth `tau`: `(I(τ, +μ_i), I(τ, -μ_i))`.
pub fn nodal_field(
    modes: &EigenModeSet,
    t: f64,
    coeffs: &[c64],
    particular: &ParticularVectors,
    atten_top: f64,
    mu0: f64,
    tau: f64,
) -> (Vec<c64>, Vec<c64>) {
    let dim = modes.len();
    let beam = atten_top * (-tau / mu0).exp();
    let mut up = vec![ZERO; dim];
    let mut dn = vec![ZERO; dim];
    for j in 0..dim {
        let (ca, cb) = (coeffs[j], coeffs[dim + j]);
        if ca == ZERO && cb == ZERO {
            continue;
        }
        let w = column_weights(modes, j, t, tau);
        let wu = [ca * w[0][0] + cb * w[2][0], ca * w[0][1] + cb * w[2][1]];
        let wd = [ca * w[1][0] + cb * w[3][0], ca * w[1][1] + cb * w[3][1]];
        for r in 0..dim {
            let (a, b) = (modes.a[(r, j)], modes.b[(r, j)]);
            up[r] += a * wu[0] + b * wu[1];
            dn[r] += a * wd[0] + b * wd[1];
        }
    }
    for r in 0..dim {
        up[r] += particular.z_plus[r] * beam;
        dn[r] = dn[r] * parity(r) + particular.z_minus[r] * beam;
    }
    (up, dn)
}

/// CSV rows `m,condition,residual` for the boundary dump.
pub fn write_boundary_row<W: Write>(out: &mut W, m: usize, condition: f64, residual: f64) -> std::io::Result<()> {
    writeln!(out, "{m},{condition:.6e},{residual:.6e}")
}

pub const BOUNDARY_CSV_HEADER: &str = "m,condition,residual";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogeneous::{build_reduced_operators, solve_dense, solve_homogeneous};
    use crate::material::{presets, GreekCoefficients};
    use crate::particular::{build_beam_source, solve_particular};
    use crate::phase::{assemble_azimuth_kernel, AzimuthKernel};
    use crate::quadrature::build_double_gauss_quadrature;

    struct Layer {
        omega: f64,
        tau: f64,
        coeffs: Vec<MuellerMatrix>,
    }

    fn layer(omega: f64, tau: f64, c: &[GreekCoefficients]) -> Layer {
        Layer {
            omega,
            tau,
            coeffs: c.iter().map(|g| g.to_matrix()).collect(),
        }
    }

    struct Solved {
        kernels: Vec<AzimuthKernel>,
        modes: Vec<EigenModeSet>,
        parts: Vec<ParticularVectors>,
        coeffs: Vec<Vec<c64>>,
        op: BoundaryOperator,
    }

    fn solve(layers: &[Layer], base: &BaseReflection, q: &Quadrature, m: usize, k: usize, mu0: f64, i0: StokesVector) -> Solved {
        let mut kernels = Vec::new();
        let mut modes = Vec::new();
        let mut parts = Vec::new();
        for l in layers {
            let kern = assemble_azimuth_kernel(m, &l.coeffs, q);
            let ops = build_reduced_operators(l.omega, q, &kern);
            modes.push(solve_homogeneous(&ops, &kern, q).unwrap());
            let src = build_beam_source(m, k, l.omega, &l.coeffs, q, mu0, i0);
            parts.push(solve_particular(&ops, &src, &kern, q).unwrap());
            kernels.push(kern);
        }
        let lm: Vec<LayerModes> = modes.iter().zip(layers).map(|(md, l)| LayerModes { modes: md, tau: l.tau }).collect();
        let op = BoundaryOperator::new(m, &lm, base, q).unwrap();
        let drive = BeamDrive {
            m,
            k,
            mu0,
            stokes: i0,
            particulars: &parts,
        };
        let rhs = boundary_rhs(&lm, base, q, &drive);
        let (coeffs, residual) = op.solve(&rhs).unwrap();
        assert!(residual < 1e-12, "residual {residual}");
        Solved {
            kernels,
            modes,
            parts,
            coeffs,
            op,
        }
    }

    impl Solved {
        fn field(&self, layers: &[Layer], mu0: f64, l: usize, tau: f64) -> (Vec<f64>, Vec<f64>) {
            let taus: Vec<f64> = layers.iter().map(|x| x.tau).collect();
            let (tops, _) = layer_attenuations(&taus, mu0);
            let (up, dn) = nodal_field(&self.modes[l], layers[l].tau, &self.coeffs[l], &self.parts[l], tops[l], mu0, tau);
            let scale = up.iter().chain(&dn).fold(1e-300f64, |s, v| s.max(v.norm()));
            for v in up.iter().chain(&dn) {
                assert!(v.im.abs() <= 1e-9 * scale, "imaginary part {v}");
            }
            (up.iter().map(|v| v.re).collect(), dn.iter().map(|v| v.re).collect())
        }
    }

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |s, x| s.max(x.abs()))
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0f64, |s, (x, y)| s.max((x - y).abs()))
    }

    fn expm(a: &Mat<f64>) -> Mat<f64> {
        let n = a.nrows();
        let norm = (0..n).map(|i| (0..n).map(|j| a[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max);
        let s = (norm.max(1.0).log2().ceil() as i32 + 2).max(0);
        let scaled = a * faer::Scale(0.5f64.powi(s));
        let mut term = Mat::<f64>::identity(n, n);
        let mut sum = Mat::<f64>::identity(n, n);
        for k in 1..30 {
            term = &term * &scaled * faer::Scale(1.0 / k as f64);
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    /// Single layer by direct integration of the unreduced nodal system
    /// `dΨ/dτ = KΨ + s e^{-τ/μ0}` with `Ψ = [I(+μ); I(-μ)]`, then shooting on
    /// the unknown upward radiance at the top.
    fn oracle(l: &Layer, q: &Quadrature, m: usize, k: usize, mu0: f64, i0: StokesVector, rho: f64) -> Vec<f64> {
        let n = q.len();
        let dim = 8 * n;
        let kern = assemble_azimuth_kernel(m, &l.coeffs, q);
        let src = build_beam_source(m, k, l.omega, &l.coeffs, q, mu0, i0);
        let idx = |sign: i8, i: usize, s: usize| if sign > 0 { 4 * i + s } else { 4 * n + 4 * i + s };
        let mut kmat = Mat::<f64>::zeros(dim, dim);
        let mut s = Mat::<f64>::zeros(dim, 1);
        for si in [1i8, -1] {
            for i in 0..n {
                let mu = si as f64 * q.nodes[i];
                for r in 0..4 {
                    let row = idx(si, i, r);
                    kmat[(row, row)] += 1.0 / mu;
                    let x = if si > 0 { src.x_plus[4 * i + r] } else { src.x_minus[4 * i + r] };
                    s[(row, 0)] = -x / mu;
                    for sj in [1i8, -1] {
                        for j in 0..n {
                            let blk = kern.block(i, si, j, sj);
                            for c in 0..4 {
                                kmat[(row, idx(sj, j, c))] -= 0.5 * l.omega * q.weights[j] * blk[(r, c)] / mu;
                            }
                        }
                    }
                }
            }
        }
        // particular g e^{-τ/μ0}: (K + 1/μ0) g = -s
        let mut shifted = kmat.clone();
        for i in 0..dim {
            shifted[(i, i)] += 1.0 / mu0;
        }
        let g = solve_dense(&shifted, &(&s * faer::Scale(-1.0)));
        let prop = expm(&(&kmat * faer::Scale(l.tau)));
        let att = (-l.tau / mu0).exp();
        // Ψ(t) = P Ψ(0) + g (att - P·1) with Ψ(0) = [u; 0] + ... ; write Ψ(0) = [u; 0]
        // homogeneous part h(τ) = Ψ - g e^{-τ/μ0}, h(0) = [u; 0] - g
        let h0_fixed: Vec<f64> = (0..dim).map(|i| if i < 4 * n { 0.0 } else { -g[(i, 0)] }).collect();
        let mut lhs = Mat::<f64>::zeros(4 * n, 4 * n);
        let mut rhs = Mat::<f64>::zeros(4 * n, 1);
        // bottom: up(t) - 2ρ Σ α μ dn_I(t) e₀ = beam
        let lam_row = |r: usize, v: &dyn Fn(usize) -> f64| -> f64 {
            let mut out = v(r);
            if r % 4 == 0 && m == 0 {
                let flux: f64 = (0..n).map(|j| q.weights[j] * q.nodes[j] * v(4 * n + 4 * j)).sum();
                out -= 2.0 * rho * flux;
            }
            out
        };
        for c in 0..4 * n {
            let col = |r: usize| prop[(r, c)];
            for r in 0..4 * n {
                lhs[(r, c)] = lam_row(r, &col);
            }
        }
        let fixed = |r: usize| (0..dim).map(|c| prop[(r, c)] * (h0_fixed[c] - if c < 4 * n { g[(c, 0)] } else { 0.0 })).sum::<f64>() + g[(r, 0)] * att;
        for r in 0..4 * n {
            let mut b = -lam_row(r, &fixed);
            if m == 0 && r % 4 == 0 {
                let beam = (selector(k) * i0)[0];
                b += mu0 / (2.0 * PI) * 2.0 * rho * beam * att;
            }
            rhs[(r, 0)] = b;
        }
        let u = solve_dense(&lhs, &rhs);
        (0..4 * n).map(|i| u[(i, 0)]).collect()
    }

    #[test]
    fn zero_albedo_black_base_has_no_diffuse_field() {
        let q = build_double_gauss_quadrature(4).unwrap();
        let layers = [layer(0.0, 1.0, &presets::rayleigh())];
        let s = solve(&layers, &BaseReflection::Black, &q, 0, 1, 0.6, StokesVector::UNPOLARIZED);
        assert!(s.coeffs[0].iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn lambertian_matches_equivalent_table() {
        let q = build_double_gauss_quadrature(5).unwrap();
        let table = MuellerTable::uniform(5, MuellerMatrix::diag([1.0, 0.0, 0.0, 0.0]));
        let lam = BaseReflection::build(&BaseReflector::Lambertian { albedo: 0.5 }, &q).unwrap();
        let tab = BaseReflection::build(&BaseReflector::MuellerTable(table), &q).unwrap();
        let c = presets::rayleigh_hg_mixture(0.5, 0.6, 6);
        let l = layer(0.9, 0.7, &c);
        let kern = assemble_azimuth_kernel(0, &l.coeffs, &q);
        let modes = solve_homogeneous(&build_reduced_operators(0.9, &q, &kern), &kern, &q).unwrap();
        let lm = [LayerModes { modes: &modes, tau: 0.7 }];
        let a = assemble_boundary_lhs(0, &lm, &lam, &q);
        let b = assemble_boundary_lhs(0, &lm, &tab, &q);
        let diff = (0..a.nrows())
            .flat_map(|i| (0..a.ncols()).map(move |j| (i, j)))
            .fold(0.0f64, |s, (i, j)| s.max((a[(i, j)] - b[(i, j)]).norm()));
        assert!(diff < 1e-12, "diff {diff}");
        let src = StokesVector::new(1.0, 0.3, 0.0, 0.0);
        let s1 = solve(&[layer(0.9, 0.7, &c)], &lam, &q, 0, 1, 0.55, src);
        let s2 = solve(&[layer(0.9, 0.7, &c)], &tab, &q, 0, 1, 0.55, src);
        let (u1, _) = s1.field(&[layer(0.9, 0.7, &c)], 0.55, 0, 0.0);
        let (u2, _) = s2.field(&[layer(0.9, 0.7, &c)], 0.55, 0, 0.0);
        assert!(max_diff(&u1, &u2) < 1e-12 * max_abs(&u1));
    }

    #[test]
    fn table_size_must_match_quadrature() {
        let q = build_double_gauss_quadrature(4).unwrap();
        let t = MuellerTable::uniform(3, MuellerMatrix::ZERO);
        assert!(BaseReflection::build(&BaseReflector::MuellerTable(t), &q).is_err());
    }

    #[test]
    fn boundary_and_interface_conditions_hold() {
        let q = build_double_gauss_quadrature(6).unwrap();
        let c1 = presets::rayleigh();
        let c2 = presets::henyey_greenstein_depolarizing(0.7, 12);
        let layers = [layer(0.95, 0.4, &c1), layer(1.0, 1.3, &c2), layer(0.6, 0.8, &c1)];
        let base = BaseReflection::Lambertian { rho: 0.3 };
        let mu0 = 0.62;
        let i0 = StokesVector::new(1.0, 0.2, -0.4, 0.1);
        for m in 0..3 {
            for k in 1..=2 {
                let s = solve(&layers, &base, &q, m, k, mu0, i0);
                let (_, dn0) = s.field(&layers, mu0, 0, 0.0);
                let (up0, _) = s.field(&layers, mu0, 0, 0.0);
                let scale = max_abs(&up0).max(1e-300);
                assert!(max_abs(&dn0) < 1e-11 * scale.max(1.0), "top m={m} k={k}");
                for l in 0..2 {
                    let (ua, da) = s.field(&layers, mu0, l, layers[l].tau);
                    let (ub, db) = s.field(&layers, mu0, l + 1, 0.0);
                    assert!(max_diff(&ua, &ub) < 1e-11, "up interface {l} m={m}");
                    assert!(max_diff(&da, &db) < 1e-11, "down interface {l} m={m}");
                }
                let (ub, db) = s.field(&layers, mu0, 2, 0.8);
                let total: f64 = layers.iter().map(|l| l.tau).sum();
                let att = (-total / mu0).exp();
                for i in 0..q.len() {
                    for st in 0..4 {
                        let mut want = 0.0;
                        if m == 0 && st == 0 {
                            let flux: f64 = (0..q.len()).map(|j| q.weights[j] * q.nodes[j] * db[4 * j]).sum();
                            want = 0.6 * (flux + mu0 / (2.0 * PI) * (selector(k) * i0)[0] * att);
                        }
                        assert!((ub[4 * i + st] - want).abs() < 1e-11, "bottom m={m} k={k}");
                    }
                }
                assert!(s.op.condition > 1.0 && s.op.condition < MAX_CONDITION);
                assert_eq!(s.kernels.len(), 3);
            }
        }
    }

    #[test]
    fn splitting_a_layer_changes_nothing() {
        let q = build_double_gauss_quadrature(6).unwrap();
        let c = presets::rayleigh_hg_mixture(0.4, 0.6, 10);
        let mu0 = 0.5;
        let i0 = StokesVector::UNPOLARIZED;
        let base = BaseReflection::Lambertian { rho: 0.2 };
        for m in [0usize, 2] {
            let whole = [layer(0.97, 1.5, &c)];
            let split = [layer(0.97, 0.4, &c), layer(0.97, 0.7, &c), layer(0.97, 0.4, &c)];
            let a = solve(&whole, &base, &q, m, 1, mu0, i0);
            let b = solve(&split, &base, &q, m, 1, mu0, i0);
            let (ua, _) = a.field(&whole, mu0, 0, 0.0);
            let (ub, _) = b.field(&split, mu0, 0, 0.0);
            assert!(max_diff(&ua, &ub) < 1e-10 * max_abs(&ua), "m={m}");
            let (_, da) = a.field(&whole, mu0, 0, 1.1);
            let (_, db) = b.field(&split, mu0, 2, 0.0);
            assert!(max_diff(&da, &db) < 1e-10 * max_abs(&da), "m={m}");
        }
    }

    #[test]
    fn single_layer_matches_matrix_exponential_oracle() {
        let q = build_double_gauss_quadrature(4).unwrap();
        let cases = [
            (layer(0.9, 0.8, &presets::rayleigh()), 0.0),
            (layer(1.0, 0.5, &presets::rayleigh_hg_mixture(0.5, 0.5, 8)), 0.4),
            (layer(0.7, 1.2, &presets::henyey_greenstein_depolarizing(0.6, 10)), 1.0),
        ];
        let i0 = StokesVector::new(1.0, -0.5, 0.3, 0.2);
        for (l, rho) in &cases {
            let base = if *rho == 0.0 { BaseReflection::Black } else { BaseReflection::Lambertian { rho: *rho } };
            for m in 0..4 {
                for k in 1..=2 {
                    let s = solve(std::slice::from_ref(l), &base, &q, m, k, 0.66, i0);
                    let layers = [Layer {
                        omega: l.omega,
                        tau: l.tau,
                        coeffs: l.coeffs.clone(),
                    }];
                    let (up, _) = s.field(&layers, 0.66, 0, 0.0);
                    let want = oracle(l, &q, m, k, 0.66, i0, *rho);
                    let scale = max_abs(&want);
                    if scale == 0.0 {
                        assert!(max_abs(&up) < 1e-14);
                        continue;
                    }
                    assert!(max_diff(&up, &want) < 1e-9 * scale, "m={m} k={k} diff={}", max_diff(&up, &want) / scale);
                }
            }
        }
    }
}
