//! Radiance at arbitrary directions by source-function integration.
//!
//! In each layer the source `J(s, μ) = (ω/2) Σ_n α_n A(μ, ±μ_n) I(s, ±μ_n) + Q(μ) e^{-s/μ0}`
//! is a finite sum of exponentials (plus a constant and a linear term for
//! conservative `ν = ∞` modes), so the formal solution along `μ` integrates
//! in closed form. Upward radiance is accumulated from the base, downward
//! radiance from the top.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use faer::{c64, Mat};

use crate::boundary::{nodal_field, BaseReflection};
use crate::error::NumericalError;
use crate::homogeneous::EigenModeSet;
use crate::material::LayerSpec;
use crate::particular::{beam_source_matrix, ParticularVectors};
use crate::phase::fourier::{selector, FourierBasis};
use crate::phase::gsf_row;
use crate::phase::kernel::kernel_from_rows;
use crate::quadrature::Quadrature;
use crate::stokes::{MuellerMatrix, StokesVector};

/// Bound on `|Im| / max|I|` of a combined field.
pub const IMAGINARY_TOL: f64 = 1e-9;
/// Below this `|(p - q) x|` the exponential difference quotient uses its series.
pub const SERIES_THRESHOLD: f64 = 1e-4;

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };

/// One solved layer of one `(m, k)` and beam.
#[derive(Clone, Copy)]
pub struct LayerSolution<'a> {
    pub layer: &'a LayerSpec,
    pub modes: &'a EigenModeSet,
    /// `[A; B]`, `8N` entries.
    pub coeffs: &'a [c64],
    pub particular: &'a ParticularVectors,
    /// `e^{-τ_top/μ0}` at the layer top.
    pub atten_top: f64,
}

/// Everything needed to evaluate `I_k^m` anywhere in the stack.
pub struct OrderSolution<'a> {
    pub m: usize,
    pub k: usize,
    pub mu0: f64,
    pub stokes: StokesVector,
    pub quad: &'a Quadrature,
    pub base: &'a BaseReflection,
    pub layers: Vec<LayerSolution<'a>>,
}

impl OrderSolution<'_> {
    fn atten_bottom(&self) -> f64 {
        let last = self.layers.last().expect("at least one layer");
        last.atten_top * (-last.layer.tau / self.mu0).exp()
    }

    /// Layer index and local depth for a global depth.
    fn locate(&self, tau: f64) -> (usize, f64) {
        let mut top = 0.0;
        for (l, ls) in self.layers.iter().enumerate() {
            if tau <= top + ls.layer.tau || l + 1 == self.layers.len() {
                return (l, (tau - top).clamp(0.0, ls.layer.tau));
            }
            top += ls.layer.tau;
        }
        unreachable!()
    }

    /// Nodal field `(I(τ, +μ_i), I(τ, -μ_i))` at a global depth.
    pub fn nodal(&self, tau: f64) -> (Vec<c64>, Vec<c64>) {
        let (l, t) = self.locate(tau);
        let ls = &self.layers[l];
        nodal_field(ls.modes, ls.layer.tau, ls.coeffs, ls.particular, ls.atten_top, self.mu0, t)
    }
}

/// Source projections of the eigenvectors of one layer and order for a
/// fixed output cosine; independent of the beam.
#[derive(Debug, Clone)]
pub struct ProjectedModes {
    pub mu: f64,
    /// `(ω/2) Σ_n α_n A(μ, μ_n)` acting on `4N` upward node values.
    pub r_plus: Mat<f64>,
    /// `(ω/2) Σ_n α_n A(μ, -μ_n)` acting on `4N` physical downward values.
    pub r_minus: Mat<f64>,
    pub pa: Mat<c64>,
    pub pb: Mat<c64>,
    pub ma: Mat<c64>,
    pub mb: Mat<c64>,
}

pub fn project_modes(m: usize, layer: &LayerSpec, quad: &Quadrature, modes: &EigenModeSet, mu: f64) -> ProjectedModes {
    let n = quad.len();
    let len = layer.coeffs.len();
    let row = gsf_row(m, len, mu);
    let mut r_plus = Mat::<f64>::zeros(4, 4 * n);
    let mut r_minus = Mat::<f64>::zeros(4, 4 * n);
    if layer.omega > 0.0 {
        for j in 0..n {
            let node = gsf_row(m, len, quad.nodes[j]);
            let w = 0.5 * layer.omega * quad.weights[j];
            let kp = kernel_from_rows(m, &layer.coeffs, &row, &node, false);
            let km = kernel_from_rows(m, &layer.coeffs, &row, &node, true);
            for s in 0..4 {
                for c in 0..4 {
                    r_plus[(s, 4 * j + c)] = w * kp[(s, c)];
                    r_minus[(s, 4 * j + c)] = w * km[(s, c)];
                }
            }
        }
    }
    let dim = modes.len();
    let rp = Mat::from_fn(4, dim, |i, j| c64::new(r_plus[(i, j)], 0.0));
    // mode vectors store the downward half mirrored; fold D into the operator
    let rm = Mat::from_fn(4, dim, |i, j| c64::new(if j % 4 >= 2 { -r_minus[(i, j)] } else { r_minus[(i, j)] }, 0.0));
    ProjectedModes {
        mu,
        pa: &rp * &modes.a,
        pb: &rp * &modes.b,
        ma: &rm * &modes.a,
        mb: &rm * &modes.b,
        r_plus,
        r_minus,
    }
}

/// `φ(z) = (1 - e^{-z}) / z`.
fn phi1(z: c64) -> c64 {
    if z.norm() < SERIES_THRESHOLD {
        c64::new(1.0, 0.0) - z * (0.5 - z * (1.0 / 6.0 - z * (1.0 / 24.0 - z / 120.0)))
    } else {
        (c64::new(1.0, 0.0) - (-z).exp()) / z
    }
}

/// `∫₀ˣ e^{-p u} e^{-q (x-u)} du` for `Re p, Re q ≥ 0`, stable as `p → q`.
pub fn exp_convolution(p: c64, q: c64, x: f64) -> c64 {
    let z = (p - q) * x;
    if z.norm() < SERIES_THRESHOLD {
        (-(q * x)).exp() * x * phi1(z)
    } else {
        ((-(q * x)).exp() - (-(p * x)).exp()) / (p - q)
    }
}

/// `∫₀ˣ e^{-p u} du`.
fn exp_integral(p: c64, x: f64) -> c64 {
    phi1(p * x) * x
}

/// Depth profiles a layer source term can have.
#[derive(Debug, Clone, Copy)]
enum Profile {
    /// `e^{-s p}`
    FromTop(c64),
    /// `e^{-(t-s) p}`
    FromBottom(c64),
    Constant,
    /// `(t - 2s) / 2`
    Linear,
}

/// `(1/|μ|) ∫ f(s) e^{-|s-τ|/|μ|} ds` over `[τ, t]` for `μ > 0`, `[0, τ]` for `μ < 0`.
fn profile_integral(profile: Profile, mu: f64, t: f64, tau: f64) -> c64 {
    let a = mu.abs();
    let r = c64::new(1.0 / a, 0.0);
    let one = c64::new(1.0, 0.0);
    if mu > 0.0 {
        let x = t - tau;
        let ex = (-x / a).exp();
        match profile {
            Profile::FromTop(p) => (-(p * tau)).exp() * exp_integral(p + r, x) / a,
            Profile::FromBottom(p) => exp_convolution(r, p, x) / a,
            Profile::Constant => one * (1.0 - ex),
            Profile::Linear => {
                // (1/a)∫_τ^t s e^{-(s-τ)/a} ds = τ(1 - e^{-x/a}) + a(1 - e^{-x/a}) - x e^{-x/a}
                let first = tau * (1.0 - ex) + a * (1.0 - ex) - x * ex;
                one * (0.5 * t * (1.0 - ex) - first)
            }
        }
    } else {
        let ex = (-tau / a).exp();
        match profile {
            Profile::FromTop(p) => exp_convolution(p, r, tau) / a,
            Profile::FromBottom(p) => (-(p * (t - tau))).exp() * exp_integral(p + r, tau) / a,
            Profile::Constant => one * (1.0 - ex),
            Profile::Linear => {
                // (1/a)∫_0^τ s e^{-(τ-s)/a} ds = τ - a(1 - e^{-τ/a})
                let first = tau - a * (1.0 - ex);
                one * (0.5 * t * (1.0 - ex) - first)
            }
        }
    }
}

/// Closed-form decomposition of the source of one layer along one `μ`.
#[derive(Debug, Clone)]
pub struct SourceFunctionCoefficients {
    terms: Vec<(Profile, [c64; 4])>,
    t: f64,
}

impl SourceFunctionCoefficients {
    pub fn build(ls: &LayerSolution<'_>, proj: &ProjectedModes, q_mu: [f64; 4], mu0: f64) -> Self {
        let modes = ls.modes;
        let dim = modes.len();
        let t = ls.layer.tau;
        let mut terms = Vec::with_capacity(2 * dim + 1);
        let col = |m: &Mat<c64>, j: usize| -> [c64; 4] { std::array::from_fn(|s| m[(s, j)]) };
        let comb = |x: [c64; 4], y: [c64; 4], sy: f64, c: c64| -> [c64; 4] { std::array::from_fn(|s| (x[s] + y[s] * sy) * c) };
        for j in 0..dim {
            let (ca, cb) = (ls.coeffs[j], ls.coeffs[dim + j]);
            let (pa, pb, ma, mb) = (col(&proj.pa, j), col(&proj.pb, j), col(&proj.ma, j), col(&proj.mb, j));
            if modes.is_polynomial(j) {
                if ca != ZERO {
                    terms.push((Profile::Constant, comb(pa, ma, 1.0, ca)));
                }
                if cb != ZERO {
                    terms.push((Profile::Linear, comb(pa, ma, 1.0, cb)));
                    terms.push((Profile::Constant, comb(pb, mb, -1.0, cb)));
                }
            } else {
                let p = c64::new(1.0, 0.0) / modes.nu[j];
                if ca != ZERO {
                    terms.push((Profile::FromTop(p), comb(pa, mb, 1.0, ca)));
                }
                if cb != ZERO {
                    terms.push((Profile::FromBottom(p), comb(pb, ma, 1.0, cb)));
                }
            }
        }
        let zp = &ls.particular.z_plus;
        let zm = &ls.particular.z_minus;
        let mut sp = [ZERO; 4];
        for s in 0..4 {
            let v: f64 = (0..zp.len())
                .map(|c| proj.r_plus[(s, c)] * zp[c] + proj.r_minus[(s, c)] * zm[c])
                .sum();
            sp[s] = c64::new((v + q_mu[s]) * ls.atten_top, 0.0);
        }
        if sp.iter().any(|v| *v != ZERO) {
            terms.push((Profile::FromTop(c64::new(1.0 / mu0, 0.0)), sp));
        }
        Self { terms, t }
    }

    /// `J(s, μ)` at local depth `s`.
    pub fn evaluate(&self, s: f64) -> [c64; 4] {
        let mut out = [ZERO; 4];
        for (profile, v) in &self.terms {
            let f = match *profile {
                Profile::FromTop(p) => (-(p * s)).exp(),
                Profile::FromBottom(p) => (-(p * (self.t - s))).exp(),
                Profile::Constant => c64::new(1.0, 0.0),
                Profile::Linear => c64::new(0.5 * (self.t - 2.0 * s), 0.0),
            };
            for k in 0..4 {
                out[k] += v[k] * f;
            }
        }
        out
    }

    /// Path integral of the source from the layer edge to `tau`.
    pub fn integrate(&self, mu: f64, tau: f64) -> [c64; 4] {
        let mut out = [ZERO; 4];
        for (profile, v) in &self.terms {
            let f = profile_integral(*profile, mu, self.t, tau);
            for k in 0..4 {
                out[k] += v[k] * f;
            }
        }
        out
    }
}

/// `I_k^m(τ, μ)` at the requested global depths for one signed `μ`.
///
/// `proj` holds one projection per layer for this `μ` and order.
pub fn integrate_source(sol: &OrderSolution<'_>, proj: &[ProjectedModes], mu: f64, taus: &[f64]) -> Vec<[c64; 4]> {
    let nl = sol.layers.len();
    let src = selector(sol.k) * sol.stokes;
    let sources: Vec<SourceFunctionCoefficients> = sol
        .layers
        .iter()
        .zip(proj)
        .map(|(ls, p)| {
            let q = (beam_source_matrix(sol.m, sol.k, ls.layer.omega, &ls.layer.coeffs, mu, sol.mu0) * src).to_array();
            SourceFunctionCoefficients::build(ls, p, q, sol.mu0)
        })
        .collect();
    // radiance entering each layer along μ: bottom edge for μ > 0, top edge for μ < 0
    let mut entering = vec![[ZERO; 4]; nl];
    let a = mu.abs();
    if mu > 0.0 {
        let mut edge = [ZERO; 4];
        if sol.m == 0 && !sol.base.is_black() {
            let last = &sol.layers[nl - 1];
            let (_, dn) = nodal_field(last.modes, last.layer.tau, last.coeffs, last.particular, last.atten_top, sol.mu0, last.layer.tau);
            let dn_re: Vec<f64> = dn.iter().map(|v| v.re).collect();
            let dn_im: Vec<f64> = dn.iter().map(|v| v.im).collect();
            let re = sol.base.reflect_at(sol.quad, mu, &dn_re);
            let im = sol.base.reflect_at(sol.quad, mu, &dn_im);
            let beam = (sol.base.matrix_at(mu, sol.mu0) * src).to_array();
            let scale = sol.mu0 / (2.0 * PI) * sol.atten_bottom();
            edge = std::array::from_fn(|s| c64::new(re[s] + beam[s] * scale, im[s]));
        }
        for l in (0..nl).rev() {
            entering[l] = edge;
            let t = sol.layers[l].layer.tau;
            let j = sources[l].integrate(mu, 0.0);
            let att = (-t / a).exp();
            edge = std::array::from_fn(|s| edge[s] * att + j[s]);
        }
    } else {
        let mut edge = [ZERO; 4];
        for l in 0..nl {
            entering[l] = edge;
            let t = sol.layers[l].layer.tau;
            let j = sources[l].integrate(mu, t);
            let att = (-t / a).exp();
            edge = std::array::from_fn(|s| edge[s] * att + j[s]);
        }
    }
    taus.iter()
        .map(|&tau| {
            let (l, t) = sol.locate(tau);
            let path = if mu > 0.0 { sol.layers[l].layer.tau - t } else { t };
            let att = (-path / a).exp();
            let j = sources[l].integrate(mu, t);
            std::array::from_fn(|s| entering[l][s] * att + j[s])
        })
        .collect()
}

/// Drops the imaginary residue of a combined field after checking it.
pub fn take_real(order: usize, values: &[[c64; 4]], scale: f64) -> Result<Vec<[f64; 4]>, NumericalError> {
    let worst = values.iter().flatten().fold(0.0f64, |s, v| s.max(v.im.abs()));
    if worst > IMAGINARY_TOL * scale.max(f64::MIN_POSITIVE) && worst > 1e-300 {
        return Err(NumericalError::ImaginaryResidue {
            order,
            residue: worst / scale.max(f64::MIN_POSITIVE),
        });
    }
    Ok(values.iter().map(|v| std::array::from_fn(|s| v[s].re)).collect())
}

/// `Σ_m Σ_k Φ_k^m(φ - φ0) I_k^m`; `orders[m][k-1]` holds `I_k^m`.
pub fn azimuthal_assemble(orders: &[[[f64; 4]; 2]], phi: f64, phi0: f64) -> StokesVector {
    let mut out = StokesVector::ZERO;
    for (m, per_k) in orders.iter().enumerate() {
        let basis = FourierBasis::new(m, phi - phi0);
        for k in 1..=2 {
            let d = basis.diagonal(k);
            let v = &per_k[k - 1];
            for s in 0..4 {
                out[s] += d[s] * v[s];
            }
        }
    }
    out
}

/// Diffuse Stokes field over `(τ, signed μ, φ)`, `φ` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceField {
    pub taus: Vec<f64>,
    pub mus: Vec<f64>,
    pub phis: Vec<f64>,
    pub values: Vec<StokesVector>,
    pub order_count: usize,
    pub quadrature_size: usize,
}

pub const RADIANCE_CSV_HEADER: &str = "tau,mu,phi,I,Q,U,V";

impl RadianceField {
    pub fn index(&self, t: usize, u: usize, p: usize) -> usize {
        (t * self.mus.len() + u) * self.phis.len() + p
    }

    pub fn get(&self, t: usize, u: usize, p: usize) -> StokesVector {
        self.values[self.index(t, u, p)]
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{RADIANCE_CSV_HEADER}")?;
        for (t, &tau) in self.taus.iter().enumerate() {
            for (u, &mu) in self.mus.iter().enumerate() {
                for (p, &phi) in self.phis.iter().enumerate() {
                    let v = self.get(t, u, p);
                    writeln!(
                        out,
                        "{tau:.16e},{mu:.16e},{phi:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                        v.i, v.q, v.u, v.v
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Parses the CSV written by [`RadianceField::write_csv`]; the grid is
    /// recovered from the row order.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, String> {
        let mut rows: Vec<[f64; 7]> = Vec::new();
        for (ln, line) in input.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if ln == 0 || line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", ln + 1))?;
            if vals.len() != 7 {
                return Err(format!("line {}: expected 7 columns", ln + 1));
            }
            rows.push(std::array::from_fn(|k| vals[k]));
        }
        let mut taus: Vec<f64> = Vec::new();
        let mut mus: Vec<f64> = Vec::new();
        let mut phis: Vec<f64> = Vec::new();
        for r in &rows {
            if taus.last() != Some(&r[0]) {
                taus.push(r[0]);
            }
        }
        let per_tau = rows.len() / taus.len().max(1);
        for r in rows.iter().take(per_tau) {
            if mus.last() != Some(&r[1]) {
                mus.push(r[1]);
            }
        }
        for r in rows.iter().take(per_tau / mus.len().max(1)) {
            phis.push(r[2]);
        }
        if taus.len() * mus.len() * phis.len() != rows.len() {
            return Err("rows do not form a (tau, mu, phi) grid".into());
        }
        Ok(Self {
            taus,
            mus,
            phis,
            values: rows.iter().map(|r| StokesVector::new(r[3], r[4], r[5], r[6])).collect(),
            order_count: 0,
            quadrature_size: 0,
        })
    }
}

/// `(ω/4π) P(μ, φ; -μ0, φ0) I0 · μ0/(μ+μ0) · (1 - e^{-τ0(1/μ+1/μ0)})`: the
/// once-scattered upward radiance at the top of a single thin layer.
pub fn single_scattering_top(
    omega: f64,
    tau0: f64,
    phase: MuellerMatrix,
    mu: f64,
    mu0: f64,
    i0: StokesVector,
) -> StokesVector {
    let f = omega / (4.0 * PI) * mu0 / (mu + mu0) * (1.0 - (-tau0 * (1.0 / mu + 1.0 / mu0)).exp());
    (phase * i0).scale(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{presets, BaseReflector, BeamSource, MaterialSpec};
    use crate::phase::kernel_entry;
    use crate::quadrature::gauss_legendre;
    use crate::solver::{solve_incidence, solve_vrte, BeamSolution, Executor, HomogeneousState, StepTimings};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn material(layers: Vec<LayerSpec>, base: BaseReflector, mu0: f64, i0: StokesVector) -> MaterialSpec {
        crate::material::validate_material(&MaterialSpec {
            layers,
            base,
            source: BeamSource::new(mu0, 0.3, i0),
        })
        .unwrap()
    }

    fn solved(spec: &MaterialSpec, n: usize) -> (HomogeneousState, BeamSolution) {
        let exec = Executor::new(2).unwrap();
        let mut t = StepTimings::default();
        let state = solve_vrte(spec, n, None, &exec, &mut t).unwrap();
        let beam = solve_incidence(&state, spec.source.mu0, spec.source.phi0, &[spec.source.stokes], &exec, &mut t)
            .unwrap()
            .remove(0);
        (state, beam)
    }

    fn projections(state: &HomogeneousState, m: usize, mu: f64) -> Vec<ProjectedModes> {
        state
            .spec
            .layers
            .iter()
            .zip(&state.orders[m].modes)
            .map(|(l, md)| project_modes(m, l, &state.quad, md, mu))
            .collect()
    }

    fn random_spec(rng: &mut ChaCha8Rng) -> MaterialSpec {
        let nl = rng.random_range(1..=3);
        let layers = (0..nl)
            .map(|_| {
                let omega = if rng.random_bool(0.3) { 1.0 } else { rng.random_range(0.2..0.99) };
                let tau = rng.random_range(0.1..3.0);
                let c = match rng.random_range(0..3) {
                    0 => presets::rayleigh(),
                    1 => presets::henyey_greenstein_depolarizing(rng.random_range(0.1..0.8), 8),
                    _ => presets::rayleigh_hg_mixture(rng.random_range(0.2..0.8), rng.random_range(0.2..0.7), 8),
                };
                LayerSpec::new(omega, tau, &c)
            })
            .collect();
        let base = if rng.random_bool(0.5) {
            BaseReflector::Lambertian {
                albedo: rng.random_range(0.0..1.0),
            }
        } else {
            BaseReflector::Black
        };
        let i0 = StokesVector::new(1.0, rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3));
        material(layers, base, rng.random_range(0.2..1.0), i0)
    }

    #[test]
    fn source_integration_reproduces_nodal_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let spec = random_spec(&mut rng);
            let (state, beam) = solved(&spec, 6);
            let total = spec.total_tau();
            let taus = [0.0, 0.37 * total, total];
            for m in 0..state.order_count() {
                for k in 1..=2 {
                    let sol = beam.order_solution(&state, m, k);
                    let nodal: Vec<_> = taus.iter().map(|&t| sol.nodal(t)).collect();
                    let scale = nodal
                        .iter()
                        .flat_map(|(u, d)| u.iter().chain(d))
                        .fold(1e-300f64, |s, v| s.max(v.norm()));
                    for i in 0..state.quad.len() {
                        for sign in [1.0, -1.0] {
                            let mu = sign * state.quad.nodes[i];
                            let got = integrate_source(&sol, &projections(&state, m, mu), mu, &taus);
                            for (t, g) in got.iter().enumerate() {
                                let want = if sign > 0.0 { &nodal[t].0 } else { &nodal[t].1 };
                                for s in 0..4 {
                                    let d = (g[s] - want[4 * i + s]).norm();
                                    assert!(d < 1e-10 * scale, "m={m} k={k} mu={mu} tau={} s={s} diff={d:e}", taus[t]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn source_decomposition_matches_direct_summation() {
        let spec = material(
            vec![
                LayerSpec::new(0.9, 0.7, &presets::rayleigh_hg_mixture(0.5, 0.5, 6)),
                LayerSpec::new(1.0, 1.1, &presets::rayleigh()),
            ],
            BaseReflector::Lambertian { albedo: 0.4 },
            0.55,
            StokesVector::new(1.0, 0.3, -0.2, 0.1),
        );
        let (state, beam) = solved(&spec, 5);
        let q = &state.quad;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in 0..3 {
            for k in 1..=2 {
                let sol = beam.order_solution(&state, m, k);
                for &mu in &[0.33, -0.71] {
                    let proj = projections(&state, m, mu);
                    for (l, ls) in sol.layers.iter().enumerate() {
                        let src = selector(k) * sol.stokes;
                        let qv = (beam_source_matrix(m, k, ls.layer.omega, &ls.layer.coeffs, mu, sol.mu0) * src).to_array();
                        let sf = SourceFunctionCoefficients::build(ls, &proj[l], qv, sol.mu0);
                        for _ in 0..5 {
                            let s = rng.random_range(0.0..ls.layer.tau);
                            let (up, dn) = nodal_field(ls.modes, ls.layer.tau, ls.coeffs, ls.particular, ls.atten_top, sol.mu0, s);
                            let mut want = [c64::new(0.0, 0.0); 4];
                            for n in 0..q.len() {
                                let w = 0.5 * ls.layer.omega * q.weights[n];
                                let u: [c64; 4] = std::array::from_fn(|c| up[4 * n + c]);
                                let d: [c64; 4] = std::array::from_fn(|c| dn[4 * n + c]);
                                let a = kernel_entry(m, &ls.layer.coeffs, mu, q.nodes[n]).apply_complex(&u);
                                let b = kernel_entry(m, &ls.layer.coeffs, mu, -q.nodes[n]).apply_complex(&d);
                                for c in 0..4 {
                                    want[c] += (a[c] + b[c]) * w;
                                }
                            }
                            let beam_att = ls.atten_top * (-s / sol.mu0).exp();
                            let got = sf.evaluate(s);
                            for c in 0..4 {
                                want[c] += qv[c] * beam_att;
                                assert!((got[c] - want[c]).norm() < 1e-10 * (1.0 + want[c].norm()), "m={m} k={k} l={l}");
                            }
                        }
                    }
                }
            }
        }
    }

    /// Composite Gauss–Legendre quadrature of the formal-solution integrand.
    fn numeric_path_integral(sf: &SourceFunctionCoefficients, mu: f64, t: f64, tau: f64) -> [c64; 4] {
        let (x, w) = gauss_legendre(20);
        let (lo, hi) = if mu > 0.0 { (tau, t) } else { (0.0, tau) };
        let panels = 200;
        let h = (hi - lo) / panels as f64;
        let mut out = [c64::new(0.0, 0.0); 4];
        for p in 0..panels {
            let a = lo + p as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                let s = a + 0.5 * h * (xi + 1.0);
                let j = sf.evaluate(s);
                let kern = (-(s - tau).abs() / mu.abs()).exp() / mu.abs() * 0.5 * h * wi;
                for c in 0..4 {
                    out[c] += j[c] * kern;
                }
            }
        }
        out
    }

    #[test]
    fn degenerate_cosine_matches_numeric_integration() {
        let spec = material(
            vec![LayerSpec::new(0.8, 1.5, &presets::rayleigh())],
            BaseReflector::Black,
            0.5,
            StokesVector::new(1.0, 0.2, 0.0, 0.0),
        );
        let (state, beam) = solved(&spec, 4);
        let modes = &state.orders[0].modes[0];
        // a real separation constant inside (0, 1) to hit exactly
        let nu = modes
            .nu
            .iter()
            .find(|v| v.im == 0.0 && v.re > 0.05 && v.re < 0.95)
            .expect("real ν in (0, 1)")
            .re;
        let sol = beam.order_solution(&state, 0, 1);
        for mu in [nu, -nu, spec.source.mu0, -spec.source.mu0] {
            let proj = project_modes(0, &spec.layers[0], &state.quad, modes, mu);
            let q = (beam_source_matrix(0, 1, 0.8, &spec.layers[0].coeffs, mu, sol.mu0) * (selector(1) * sol.stokes)).to_array();
            let sf = SourceFunctionCoefficients::build(&sol.layers[0], &proj, q, sol.mu0);
            for tau in [0.0, 0.4, 1.1, 1.5] {
                let got = sf.integrate(mu, tau);
                let want = numeric_path_integral(&sf, mu, 1.5, tau);
                for c in 0..4 {
                    assert!((got[c] - want[c]).norm() < 1e-8 * (1.0 + want[c].norm()), "mu={mu} tau={tau}");
                }
            }
        }
    }

    #[test]
    fn exp_convolution_is_accurate_across_the_series_switch() {
        // e^{-qx} x Σ (-z)^k/(k+1)! to 14 terms
        let reference = |p: c64, q: c64, x: f64| {
            let z = (p - q) * x;
            let mut term = c64::new(1.0, 0.0);
            let mut sum = term;
            for k in 1..14 {
                term = term * (-z) / (k as f64 + 1.0);
                sum += term;
            }
            (-(q * x)).exp() * x * sum
        };
        let q = c64::new(2.0, 0.3);
        for x in [0.1, 1.0, 7.0] {
            for f in [0.0, 1e-7, 0.5, 0.99, 1.01, 2.0, 30.0, 1e3] {
                let p = q + c64::new(f * SERIES_THRESHOLD / x, 0.2 * f * SERIES_THRESHOLD / x);
                let got = exp_convolution(p, q, x);
                let want = reference(p, q, x);
                assert!((got - want).norm() < 1e-11 * want.norm(), "x={x} f={f}");
            }
        }
    }

    #[test]
    fn isotropic_field_is_azimuth_independent() {
        let spec = material(
            vec![LayerSpec::new(0.9, 1.0, &presets::isotropic())],
            BaseReflector::Lambertian { albedo: 0.2 },
            0.6,
            StokesVector::new(1.0, 0.5, 0.3, 0.2),
        );
        let (state, beam) = solved(&spec, 6);
        let sol = beam.order_solution(&state, 0, 1);
        let proj = projections(&state, 0, 0.45);
        let i1 = take_real(0, &integrate_source(&sol, &proj, 0.45, &[0.0]), 1.0).unwrap()[0];
        let orders = vec![[i1, [0.0; 4]]];
        let first = azimuthal_assemble(&orders, 0.0, 0.3);
        for j in 0..8 {
            let v = azimuthal_assemble(&orders, j as f64 * 0.7, 0.3);
            assert!((v - first).max_abs() < 1e-12);
        }
        // at φ = φ0 the sine entries vanish: no U, V from k = 1 and no I, Q from k = 2
        let orders = vec![[[0.3, 0.1, 0.7, 0.2], [0.5, 0.4, 0.9, 0.8]]; 4];
        let v = azimuthal_assemble(&orders, 0.3, 0.3);
        let want_iq = 0.3 + 2.0 * 3.0 * 0.3;
        assert!((v.i - want_iq).abs() < 1e-15);
        assert!((v.u - (0.9 + 2.0 * 3.0 * 0.9)).abs() < 1e-14);
    }

    #[test]
    fn radiance_csv_round_trips() {
        let f = RadianceField {
            taus: vec![0.0, 0.5],
            mus: vec![-0.3, 0.3, 1.0],
            phis: vec![0.0, 1.0],
            values: (0..12).map(|i| StokesVector::new(1.0 / (i as f64 + 3.0), -0.1 * i as f64, 1e-17, std::f64::consts::PI)).collect(),
            order_count: 0,
            quadrature_size: 0,
        };
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = RadianceField::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, f);
    }
}
