//! Homogeneous solution of one Fourier order.
//!
//! Writing `I⁺ = I(+μ_i)` and `I⁻ = D I(-μ_i)` on the nodes, the sums
//! `X = M(I⁺ + I⁻)` and `Y = M(I⁺ - I⁻)` obey `dX/dτ = F Y`, `dY/dτ = E X`
//! with
//!
//! ```text
//! E = [I - (ω/2)(𝒜₊₊ + 𝒜₊₋Δ) W] M⁻¹
//! F = [I - (ω/2)(𝒜₊₊ - 𝒜₊₋Δ) W] M⁻¹
//! ```
//!
//! so `FE X = λ X` with `λ = 1/ν²`. A mode decaying downward as `e^{-τ/ν}`
//! has `Y = -ν E X = -(1/ν) F⁻¹ X`, giving `I⁺ = a = ½M⁻¹(X+Y)` and
//! `I⁻ = b = ½M⁻¹(X-Y)`. The mirrored mode decaying upward from the layer
//! bottom as `e^{-(τ₀-τ)/ν}` swaps the roles of `a` and `b`.
//!
//! A zero eigenvalue (conservative scattering, `m = 0`) has `ν = ∞`. Its
//! two solutions are kept in closed form instead of as exponentials: with
//! `p = ½M⁻¹X` and `w = -½M⁻¹F⁻¹X`, the constant `I⁺ = I⁻ = p` and the
//! linear `I^± = p (τ₀ - 2τ)/2 ± w`. They are the `ν → ∞` limits of the
//! sum and the scaled difference of the exponential pair, which would
//! otherwise cancel to `ν·ε` precision. For these columns `a` holds `p`
//! and `b` holds `w`.

use std::io::Write;

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{c64, Mat};

use crate::error::NumericalError;
use crate::phase::{AzimuthKernel, LegendreMatrixTable};
use crate::quadrature::Quadrature;
use crate::stokes::MuellerMatrix;

/// Largest finite separation constant kept.
pub const NU_MAX: f64 = 1e8;
/// `|λ| ≤ LAMBDA_ZERO_REL · max|λ|` is treated as an exact zero.
pub const LAMBDA_ZERO_REL: f64 = 1e-12;
/// Bound on the relative residual of every returned mode.
pub const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ReducedOperators {
    pub m: usize,
    pub omega: f64,
    pub mu: Vec<f64>,
    pub weights: Vec<f64>,
    pub e: Mat<f64>,
    pub f: Mat<f64>,
}

impl ReducedOperators {
    pub fn n(&self) -> usize {
        self.mu.len()
    }
}

fn assemble(
    omega: f64,
    quad: &Quadrature,
    block: impl Fn(usize, usize) -> (MuellerMatrix, MuellerMatrix),
) -> (Mat<f64>, Mat<f64>) {
    let n = quad.len();
    let mut e = Mat::<f64>::zeros(4 * n, 4 * n);
    let mut f = Mat::<f64>::zeros(4 * n, 4 * n);
    for i in 0..n {
        for j in 0..n {
            let (kp, km) = block(i, j);
            let s = 0.5 * omega * quad.weights[j];
            let inv_mu = 1.0 / quad.nodes[j];
            for r in 0..4 {
                for c in 0..4 {
                    let id = if i == j && r == c { 1.0 } else { 0.0 };
                    e[(4 * i + r, 4 * j + c)] = (id - s * kp[(r, c)]) * inv_mu;
                    f[(4 * i + r, 4 * j + c)] = (id - s * km[(r, c)]) * inv_mu;
                }
            }
        }
    }
    (e, f)
}

/// `E`, `F` from the signed kernel blocks.
pub fn build_reduced_operators(omega: f64, quad: &Quadrature, kernel: &AzimuthKernel) -> ReducedOperators {
    let n = quad.len();
    let (e, f) = assemble(omega, quad, |i, j| {
        let pp = kernel.pp[i * n + j];
        let pm_d = kernel.pm[i * n + j].right_parity();
        (pp + pm_d, pp - pm_d)
    });
    ReducedOperators {
        m: kernel.m,
        omega,
        mu: quad.nodes.clone(),
        weights: quad.weights.clone(),
        e,
        f,
    }
}

/// `E`, `F` from `Σ_l Π_l(μ_i) B_l [I ± (-1)^{l-m} D] Π_l(μ_j)`.
pub fn build_reduced_operators_pi_sum(
    m: usize,
    omega: f64,
    coeffs: &[MuellerMatrix],
    quad: &Quadrature,
) -> ReducedOperators {
    let table = LegendreMatrixTable::build(m, coeffs.len(), &quad.nodes);
    let (e, f) = assemble(omega, quad, |i, j| {
        let mut kp = MuellerMatrix::ZERO;
        let mut km = MuellerMatrix::ZERO;
        for (l, bl) in coeffs.iter().enumerate().skip(m) {
            let sign = if (l - m) % 2 == 0 { 1.0 } else { -1.0 };
            let plus = MuellerMatrix::IDENTITY + MuellerMatrix::PARITY.scale(sign);
            let minus = MuellerMatrix::IDENTITY - MuellerMatrix::PARITY.scale(sign);
            let left = *table.get(i, l) * *bl;
            kp += left * plus * *table.get(j, l);
            km += left * minus * *table.get(j, l);
        }
        (kp, km)
    });
    ReducedOperators {
        m,
        omega,
        mu: quad.nodes.clone(),
        weights: quad.weights.clone(),
        e,
        f,
    }
}

/// Eigenmodes of one order; columns of `a`, `b` are indexed by mode.
#[derive(Debug, Clone)]
pub struct EigenModeSet {
    pub m: usize,
    pub lambda: Vec<c64>,
    pub nu: Vec<c64>,
    /// `I⁺` of the downward-decaying mode (length `4N` per column).
    pub a: Mat<c64>,
    /// `D I(-μ)` of the downward-decaying mode.
    pub b: Mat<c64>,
    pub residuals: Vec<f64>,
}

impl EigenModeSet {
    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    /// Mode `j` is the closed-form `ν = ∞` pair.
    pub fn is_polynomial(&self, j: usize) -> bool {
        self.nu[j].re.is_infinite()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |a, &r| a.max(r))
    }

    /// CSV rows `m,lambda_re,lambda_im,nu_re,nu_im,residual`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for j in 0..self.len() {
            writeln!(
                out,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.6e}",
                self.m, self.lambda[j].re, self.lambda[j].im, self.nu[j].re, self.nu[j].im, self.residuals[j]
            )?;
        }
        Ok(())
    }
}

pub const EIGEN_CSV_HEADER: &str = "m,lambda_re,lambda_im,nu_re,nu_im,residual";

/// Streams whose row and column are zero off the diagonal. Each is an exact
/// mode on its own; handing such repeated eigenvalues to the general solver
/// yields nearly parallel eigenvectors.
fn isolated_streams(a: &Mat<f64>) -> Vec<bool> {
    let n = a.nrows();
    (0..n)
        .map(|i| (0..n).all(|j| i == j || (a[(i, j)] == 0.0 && a[(j, i)] == 0.0)))
        .collect()
}

/// Eigenvalues closer than this, relative to their magnitude, form one
/// cluster.
pub const CLUSTER_REL: f64 = 1e-10;

/// Replaces the eigenvectors of every repeated eigenvalue by an orthonormal
/// basis of the null space of `A - λI`, taken from the smallest singular
/// vectors. Back-substituted eigenvectors of exactly repeated eigenvalues
/// can come out parallel or non-finite.
fn repair_clusters(a: &Mat<f64>, lambda: &mut [c64], u: &mut Mat<c64>) {
    let n = lambda.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| lambda[i].re.total_cmp(&lambda[j].re).then(lambda[i].im.total_cmp(&lambda[j].im)));
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && {
            let (p, q) = (lambda[order[end]], lambda[order[end - 1]]);
            (p - q).norm() <= CLUSTER_REL * p.norm().max(q.norm())
        } {
            end += 1;
        }
        let cluster = &order[start..end];
        start = end;
        if cluster.len() < 2 {
            continue;
        }
        let mean = cluster.iter().map(|&j| lambda[j]).sum::<c64>() / cluster.len() as f64;
        let shifted = Mat::<c64>::from_fn(n, n, |i, k| c64::new(a[(i, k)], 0.0) - if i == k { mean } else { c64::new(0.0, 0.0) });
        let Ok(svd) = shifted.svd() else {
            continue;
        };
        let sv = svd.S().column_vector();
        let mut by_size: Vec<usize> = (0..n).collect();
        by_size.sort_by(|&i, &j| sv[i].norm().total_cmp(&sv[j].norm()));
        let v = svd.V();
        for (&col, &k) in cluster.iter().zip(&by_size) {
            lambda[col] = mean;
            for i in 0..n {
                u[(i, col)] = v[(i, k)];
            }
        }
    }
}

fn one_norm(a: &Mat<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// One-norm condition estimate through the explicit inverse.
pub fn condition_estimate(a: &Mat<f64>) -> f64 {
    let inv = a.partial_piv_lu().inverse();
    let c = one_norm(a) * one_norm(&inv);
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

fn complexify(a: &Mat<f64>) -> Mat<c64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| c64::new(a[(i, j)], 0.0))
}

/// Separation constant for an eigenvalue of `FE`, `Re ν > 0`.
pub fn separation_constant(lambda: c64) -> c64 {
    if lambda.norm() == 0.0 {
        return c64::new(f64::INFINITY, 0.0);
    }
    let nu = c64::new(1.0, 0.0) / lambda.sqrt();
    if nu.norm() > NU_MAX {
        c64::new(NU_MAX, 0.0)
    } else {
        nu
    }
}

/// `L Ψ = S(Ψ - (ω/2)𝒜WΨ)` on signed nodes, `S = diag(1/μ_s)`; `up` and
/// `dn` are physical radiances at `+μ_i` and `-μ_i`.
fn transport_operator(kernel: &AzimuthKernel, omega: f64, quad: &Quadrature, up: &[c64], dn: &[c64]) -> (Vec<c64>, Vec<c64>) {
    let n = quad.len();
    let mut out_up = vec![c64::new(0.0, 0.0); 4 * n];
    let mut out_dn = vec![c64::new(0.0, 0.0); 4 * n];
    for (sign, phi, out) in [(1i8, up, &mut out_up), (-1i8, dn, &mut out_dn)] {
        for i in 0..n {
            let mut acc = [c64::new(0.0, 0.0); 4];
            for jn in 0..n {
                let w = 0.5 * omega * quad.weights[jn];
                let u: [c64; 4] = std::array::from_fn(|s| up[4 * jn + s]);
                let d: [c64; 4] = std::array::from_fn(|s| dn[4 * jn + s]);
                let t1 = kernel.block(i, sign, jn, 1).apply_complex(&u);
                let t2 = kernel.block(i, sign, jn, -1).apply_complex(&d);
                for s in 0..4 {
                    acc[s] += (t1[s] + t2[s]) * w;
                }
            }
            let mu_s = sign as f64 * quad.nodes[i];
            for s in 0..4 {
                out[4 * i + s] = (phi[4 * i + s] - acc[s]) / mu_s;
            }
        }
    }
    (out_up, out_dn)
}

fn mirror(v: &[c64]) -> Vec<c64> {
    v.iter()
        .enumerate()
        .map(|(k, &x)| if k % 4 >= 2 { -x } else { x })
        .collect()
}

fn inf_norm<'a>(v: impl IntoIterator<Item = &'a c64>) -> f64 {
    v.into_iter().fold(0.0f64, |s, x| s.max(x.norm()))
}

/// Relative residual of the downward mode `(a, b)` in the unreduced
/// equations, `‖LΦ + Φ/ν‖∞ / ‖Φ‖∞` with `Φ = [a; D b]`.
pub fn mode_residual(kernel: &AzimuthKernel, omega: f64, quad: &Quadrature, nu: c64, a: &[c64], b: &[c64]) -> f64 {
    let db = mirror(b);
    let (lu, ld) = transport_operator(kernel, omega, quad, a, &db);
    let inv_nu = c64::new(1.0, 0.0) / nu;
    let worst = lu
        .iter()
        .zip(a)
        .chain(ld.iter().zip(&db))
        .fold(0.0f64, |s, (r, v)| s.max((r + v * inv_nu).norm()));
    let norm = inf_norm(a.iter().chain(&db));
    if norm == 0.0 {
        0.0
    } else {
        worst / norm
    }
}

/// Residual of the `ν = ∞` pair: `L[p; Dp] = 0` and `L[w; -Dw] = -[p; Dp]`.
pub fn polynomial_mode_residual(kernel: &AzimuthKernel, omega: f64, quad: &Quadrature, p: &[c64], w: &[c64]) -> f64 {
    let dp = mirror(p);
    let dw: Vec<c64> = mirror(w).into_iter().map(|x| -x).collect();
    let (cu, cd) = transport_operator(kernel, omega, quad, p, &dp);
    let (lu, ld) = transport_operator(kernel, omega, quad, w, &dw);
    let norm = inf_norm(p.iter().chain(w));
    if norm == 0.0 {
        return 0.0;
    }
    let r0 = inf_norm(cu.iter().chain(&cd));
    let r1 = lu
        .iter()
        .zip(p)
        .chain(ld.iter().zip(&dp))
        .fold(0.0f64, |s, (r, v)| s.max((r + v).norm()));
    r0.max(r1) / norm
}

fn eigen_error(m: usize, detail: impl Into<String>, ops: &ReducedOperators) -> NumericalError {
    let fe = &ops.f * &ops.e;
    NumericalError::Eigen {
        order: m,
        detail: detail.into(),
        condition: condition_estimate(&fe),
    }
}

/// Solves `FE X = λ X` and expands to the full modes.
pub fn solve_homogeneous(
    ops: &ReducedOperators,
    kernel: &AzimuthKernel,
    quad: &Quadrature,
) -> Result<EigenModeSet, NumericalError> {
    let n = ops.n();
    let dim = 4 * n;
    let m = ops.m;
    let fe = &ops.f * &ops.e;

    let isolated = isolated_streams(&fe);
    let coupled: Vec<usize> = (0..dim).filter(|&k| !isolated[k]).collect();
    let mut lambda: Vec<c64> = (0..dim).map(|k| c64::new(fe[(k, k)], 0.0)).collect();
    let mut x = Mat::<c64>::from_fn(dim, dim, |i, j| c64::new(if i == j && isolated[i] { 1.0 } else { 0.0 }, 0.0));
    if !coupled.is_empty() {
        let sub = Mat::<f64>::from_fn(coupled.len(), coupled.len(), |i, j| fe[(coupled[i], coupled[j])]);
        let evd = sub
            .eigen()
            .map_err(|e| eigen_error(m, format!("eigen decomposition failed: {e:?}"), ops))?;
        let s = evd.S().column_vector();
        let mut sub_lambda: Vec<c64> = (0..coupled.len()).map(|j| s[j]).collect();
        let mut u = evd.U().to_owned();
        repair_clusters(&sub, &mut sub_lambda, &mut u);
        for (j, &col) in coupled.iter().enumerate() {
            lambda[col] = sub_lambda[j];
            for (i, &row) in coupled.iter().enumerate() {
                x[(row, col)] = u[(i, j)];
            }
        }
    }
    if lambda.iter().any(|l| !l.re.is_finite() || !l.im.is_finite()) {
        return Err(eigen_error(m, "non-finite eigenvalue", ops));
    }
    let lmax = lambda.iter().fold(0.0f64, |a, l| a.max(l.norm()));
    let lambda: Vec<c64> = lambda
        .into_iter()
        .map(|l| {
            if l.norm() <= LAMBDA_ZERO_REL * lmax {
                c64::new(0.0, 0.0)
            } else {
                l
            }
        })
        .collect();
    let nu: Vec<c64> = lambda.iter().map(|&l| separation_constant(l)).collect();

    let e_c = complexify(&ops.e);
    let ex = &e_c * &x;
    // F⁻¹X offers a second, algebraically equivalent route to Y; it is the
    // accurate one for small λ and the only one at λ = 0
    let f_inv_x = if condition_estimate(&ops.f) < 1e12 {
        let fi = complexify(&ops.f.partial_piv_lu().inverse());
        Some(&fi * &x)
    } else {
        None
    };

    let expand = |xj: &[c64], y: &dyn Fn(usize) -> c64| -> (Vec<c64>, Vec<c64>) {
        (0..dim)
            .map(|k| {
                let inv_mu = 0.5 / ops.mu[k / 4];
                let yk = y(k);
                ((xj[k] + yk) * inv_mu, (xj[k] - yk) * inv_mu)
            })
            .unzip()
    };
    // expands column xj by both routes and keeps the smaller residual
    let best_expansion = |xj: &[c64], exj: &[c64], fxj: Option<&[c64]>, lam: c64, nuj: c64| {
        let mut best: Option<(f64, Vec<c64>, Vec<c64>)> = None;
        if lam.norm() > 0.0 {
            let (ca, cb) = expand(xj, &|k| -exj[k] * nuj);
            let r = mode_residual(kernel, ops.omega, quad, nuj, &ca, &cb);
            best = Some((r, ca, cb));
        }
        if let Some(fx) = fxj {
            let (ca, cb) = expand(xj, &|k| -fx[k] / nuj);
            let r = mode_residual(kernel, ops.omega, quad, nuj, &ca, &cb);
            if best.as_ref().is_none_or(|(rb, _, _)| r < *rb) {
                best = Some((r, ca, cb));
            }
        }
        best
    };
    let f_inv = f_inv_x.as_ref().map(|_| complexify(&ops.f.partial_piv_lu().inverse()));
    let fe_c = complexify(&fe);

    let mut a = Mat::<c64>::zeros(dim, dim);
    let mut b = Mat::<c64>::zeros(dim, dim);
    let mut residuals = Vec::with_capacity(dim);
    for j in 0..dim {
        let nuj = nu[j];
        let xj: Vec<c64> = (0..dim).map(|k| x[(k, j)]).collect();
        let exj: Vec<c64> = (0..dim).map(|k| ex[(k, j)]).collect();
        let fxj: Option<Vec<c64>> = f_inv_x.as_ref().map(|fx| (0..dim).map(|k| fx[(k, j)]).collect());
        if lambda[j].norm() == 0.0 {
            let Some(fx) = fxj else {
                return Err(eigen_error(m, format!("mode {j} has λ = 0 and F is singular"), ops));
            };
            let p: Vec<c64> = (0..dim).map(|k| xj[k] * (0.5 / ops.mu[k / 4])).collect();
            let w: Vec<c64> = (0..dim).map(|k| -fx[k] * (0.5 / ops.mu[k / 4])).collect();
            let scale = inf_norm(p.iter().chain(&w));
            let r = polynomial_mode_residual(kernel, ops.omega, quad, &p, &w);
            if !(r < RESIDUAL_TOL) || scale == 0.0 {
                return Err(eigen_error(m, format!("conservative mode {j} residual {r:.3e} exceeds {RESIDUAL_TOL:e}"), ops));
            }
            for k in 0..dim {
                a[(k, j)] = p[k] / scale;
                b[(k, j)] = w[k] / scale;
            }
            residuals.push(r);
            continue;
        }
        let mut best = best_expansion(&xj, &exj, fxj.as_deref(), lambda[j], nuj);
        if best.as_ref().is_some_and(|(r, _, _)| *r > 0.25 * RESIDUAL_TOL) {
            if let Some(xr) = inverse_iteration(&fe_c, lambda[j], &xj) {
                let exr = mat_vec(&e_c, &xr);
                let fxr = f_inv.as_ref().map(|fi| mat_vec(fi, &xr));
                let refined = best_expansion(&xr, &exr, fxr.as_deref(), lambda[j], nuj);
                if let (Some(rn), Some(ro)) = (&refined, &best) {
                    if rn.0 < ro.0 {
                        best = refined;
                    }
                }
            }
        }
        let Some((r, col_a, col_b)) = best else {
            return Err(eigen_error(m, format!("mode {j} has λ = 0 and F is singular"), ops));
        };
        let scale = col_a
            .iter()
            .chain(&col_b)
            .fold(0.0f64, |s, v| s.max(v.norm()));
        if scale == 0.0 || !scale.is_finite() {
            return Err(eigen_error(m, format!("degenerate eigenvector for mode {j}"), ops));
        }
        if !(r < RESIDUAL_TOL) {
            return Err(eigen_error(
                m,
                format!("mode {j} (nu = {nuj}) residual {r:.3e} exceeds {RESIDUAL_TOL:e}"),
                ops,
            ));
        }
        for k in 0..dim {
            a[(k, j)] = col_a[k] / scale;
            b[(k, j)] = col_b[k] / scale;
        }
        residuals.push(r);
    }
    Ok(EigenModeSet {
        m,
        lambda,
        nu,
        a,
        b,
        residuals,
    })
}

fn mat_vec(a: &Mat<c64>, x: &[c64]) -> Vec<c64> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|k| a[(i, k)] * x[k]).sum())
        .collect()
}

/// One step of shifted inverse iteration on `FE`.
fn inverse_iteration(fe: &Mat<c64>, lambda: c64, x: &[c64]) -> Option<Vec<c64>> {
    let dim = fe.nrows();
    let shift = lambda + c64::new(1e-13 * lambda.norm().max(1e-300), 0.0);
    let shifted = Mat::from_fn(dim, dim, |i, k| if i == k { fe[(i, k)] - shift } else { fe[(i, k)] });
    let rhs = Mat::from_fn(dim, 1, |i, _| x[i]);
    let z = shifted.partial_piv_lu().solve(&rhs);
    let norm = (0..dim).fold(0.0f64, |s, i| s.max(z[(i, 0)].norm()));
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    Some((0..dim).map(|i| z[(i, 0)] / norm).collect())
}

/// Solves a dense real system (used by tests and oracles).
pub fn solve_dense(a: &Mat<f64>, rhs: &Mat<f64>) -> Mat<f64> {
    a.partial_piv_lu().solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::presets;
    use crate::phase::assemble_azimuth_kernel;
    use crate::quadrature::build_double_gauss_quadrature;

    fn mats(c: &[crate::material::GreekCoefficients]) -> Vec<MuellerMatrix> {
        c.iter().map(|g| g.to_matrix()).collect()
    }

    fn setup(omega: f64, coeffs: &[MuellerMatrix], n: usize, m: usize) -> (Quadrature, AzimuthKernel, ReducedOperators) {
        let q = build_double_gauss_quadrature(n).unwrap();
        let k = assemble_azimuth_kernel(m, coeffs, &q);
        let ops = build_reduced_operators(omega, &q, &k);
        (q, k, ops)
    }

    fn max_diff(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                d = d.max((a[(i, j)] - b[(i, j)]).abs());
            }
        }
        d
    }

    #[test]
    fn no_scattering_operators_are_inverse_cosines() {
        let (q, _, ops) = setup(0.0, &mats(&presets::rayleigh()), 3, 0);
        for k in 0..12 {
            for l in 0..12 {
                let want = if k == l { 1.0 / q.nodes[k / 4] } else { 0.0 };
                assert_eq!(ops.e[(k, l)], want);
                assert_eq!(ops.f[(k, l)], want);
            }
        }
    }

    #[test]
    fn conservative_isotropic_single_node_by_hand() {
        // μ = 0.5, α = 1: E = (I - diag(1,0,0,0))·2, F = 2I
        let (_, _, ops) = setup(1.0, &mats(&presets::isotropic()), 1, 0);
        let e_want = [0.0, 2.0, 2.0, 2.0];
        for r in 0..4 {
            for c in 0..4 {
                let we = if r == c { e_want[r] } else { 0.0 };
                let wf = if r == c { 2.0 } else { 0.0 };
                assert!((ops.e[(r, c)] - we).abs() < 1e-15);
                assert!((ops.f[(r, c)] - wf).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn kernel_and_pi_sum_routes_agree() {
        for m in 0..8 {
            let b = mats(&presets::rayleigh_hg_mixture(0.6, 0.7, 8));
            let (q, _, ops) = setup(0.93, &b, 6, m);
            let alt = build_reduced_operators_pi_sum(m, 0.93, &b, &q);
            assert!(max_diff(&ops.e, &alt.e) < 1e-12);
            assert!(max_diff(&ops.f, &alt.f) < 1e-12);
        }
    }

    #[test]
    fn no_scattering_spectrum() {
        let (q, k, ops) = setup(0.0, &mats(&presets::isotropic()), 4, 0);
        let modes = solve_homogeneous(&ops, &k, &q).unwrap();
        assert_eq!(modes.len(), 16);
        for j in 0..16 {
            let mu = q.nodes[j / 4];
            assert!((modes.lambda[j].re - 1.0 / (mu * mu)).abs() < 1e-12);
            assert!((modes.nu[j].re - mu).abs() < 1e-14);
        }
    }

    #[test]
    fn residuals_for_polarizing_orders() {
        let b = mats(&presets::rayleigh_hg_mixture(0.5, 0.6, 12));
        for &omega in &[0.3, 0.9, 1.0] {
            for m in [0, 1, 2, 5, 11] {
                let (q, k, ops) = setup(omega, &b, 12, m);
                let modes = solve_homogeneous(&ops, &k, &q).unwrap();
                assert_eq!(modes.len(), 48);
                assert!(modes.max_residual() < RESIDUAL_TOL);
                assert!(modes.nu.iter().all(|v| v.re > 0.0));
            }
        }
    }

    #[test]
    fn repeated_eigenvalues_give_independent_modes() {
        // isotropic: Q, U, V never scatter; Rayleigh m = 2: low-rank kernel
        for (coeffs, omega, m) in [(presets::isotropic(), 0.5, 0), (presets::rayleigh(), 0.9, 2), (presets::rayleigh(), 0.9, 1)] {
            let (q, k, ops) = setup(omega, &mats(&coeffs), 16, m);
            let modes = solve_homogeneous(&ops, &k, &q).unwrap();
            assert!(modes.max_residual() < RESIDUAL_TOL);
            let a = Mat::<c64>::from_fn(64, 64, |i, j| modes.a[(i, j)] + modes.b[(i, j)]);
            let sv = a.svd().unwrap();
            let s = sv.S().column_vector();
            let (lo, hi) = (0..64).fold((f64::MAX, 0.0f64), |(l, h), i| (l.min(s[i].norm()), h.max(s[i].norm())));
            assert!(lo > 1e-8 * hi, "m={m} modes nearly dependent: {lo:e} / {hi:e}");
        }
    }

    #[test]
    fn residuals_at_production_sizes() {
        let b = mats(&presets::rayleigh_hg_mixture(0.5, 0.5, 12));
        for (n, omega) in [(30, 1.0), (40, 0.999), (40, 0.5)] {
            for m in [0, 3, 11] {
                let (q, k, ops) = setup(omega, &b, n, m);
                let modes = solve_homogeneous(&ops, &k, &q).unwrap();
                assert!(modes.max_residual() < RESIDUAL_TOL, "n={n} m={m}: {}", modes.max_residual());
            }
        }
    }

    #[test]
    fn conjugate_pairs() {
        let b = mats(&presets::rayleigh());
        let (q, k, ops) = setup(0.95, &b, 8, 1);
        let modes = solve_homogeneous(&ops, &k, &q).unwrap();
        for l in &modes.lambda {
            if l.im.abs() > 1e-12 * l.norm() {
                assert!(modes
                    .lambda
                    .iter()
                    .any(|o| (o - l.conj()).norm() < 1e-9 * l.norm()));
            }
        }
    }

    #[test]
    fn conservative_isotropic_spectrum_is_real() {
        let (q, k, ops) = setup(1.0, &mats(&presets::isotropic()), 8, 0);
        let modes = solve_homogeneous(&ops, &k, &q).unwrap();
        for l in &modes.lambda {
            assert!(l.re >= -1e-10 && l.im.abs() < 1e-10, "{l}");
        }
        assert_eq!((0..modes.len()).filter(|&j| modes.is_polynomial(j)).count(), 1);
    }

    #[test]
    fn sum_of_half_modes_is_scaled_eigenvector() {
        // ½M⁻¹(X+Y) + ½M⁻¹(X-Y) = M⁻¹X: a + b is proportional to M⁻¹X
        let b = mats(&presets::rayleigh());
        let (q, k, ops) = setup(0.8, &b, 5, 0);
        let modes = solve_homogeneous(&ops, &k, &q).unwrap();
        let fe = &ops.f * &ops.e;
        let fe = complexify(&fe);
        for j in 0..modes.len() {
            let x: Vec<c64> = (0..20).map(|r| (modes.a[(r, j)] + modes.b[(r, j)]) * q.nodes[r / 4]).collect();
            for r in 0..20 {
                let fx: c64 = (0..20).map(|c| fe[(r, c)] * x[c]).sum();
                assert!((fx - x[r] * modes.lambda[j]).norm() < 1e-9 * (1.0 + modes.lambda[j].norm()));
            }
        }
    }

    /// ν of the slowest isotropic mode by bisection on the characteristic
    /// equation `ω Σ α_n / (1 - μ_n²/ν²) = 1`.
    fn diffusion_nu_oracle(omega: f64, q: &Quadrature) -> f64 {
        let g = |nu: f64| {
            q.nodes
                .iter()
                .zip(&q.weights)
                .map(|(&mu, &w)| omega * w / (1.0 - mu * mu / (nu * nu)))
                .sum::<f64>()
                - 1.0
        };
        let (mut lo, mut hi) = (q.nodes[q.len() - 1] * (1.0 + 1e-12), 1e6);
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if g(lo) * g(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn diffusion_mode_matches_characteristic_equation() {
        let (q, k, ops) = setup(0.99, &mats(&presets::isotropic()), 8, 0);
        let modes = solve_homogeneous(&ops, &k, &q).unwrap();
        let nu_max = modes.nu.iter().map(|v| v.re).fold(0.0, f64::max);
        assert!(nu_max > q.nodes[7]);
        let want = diffusion_nu_oracle(0.99, &q);
        assert!((nu_max - want).abs() < 1e-9 * want, "{nu_max} vs {want}");
    }
}
