//! Mueller BRDF tables from solutions for several incident Stokes vectors.
//!
//! For incident irradiance vectors `E_s = μ_in S_s` and exiting radiances
//! `I_s`, the BRDF satisfies `[I_1 … I_n] = F [E_1 … E_n]`; with `n ≥ 4`
//! independent vectors `F = I Eᵀ (E Eᵀ)⁻¹`.

use std::io::{BufRead, Read, Write};

use log::warn;

use crate::error::{Error, ValidationError};
use crate::reconstruction::azimuthal_assemble;
use crate::solver::{solve_incidence, Executor, HomogeneousState, StepTimings};
use crate::stokes::{MuellerMatrix, StokesVector};

/// Largest accepted condition number of the incident basis.
pub const MAX_BASIS_CONDITION: f64 = 1e3;

/// Physically realizable default basis.
pub fn default_basis() -> Vec<StokesVector> {
    vec![
        StokesVector::new(1.0, 0.0, 0.0, 0.0),
        StokesVector::new(1.0, 1.0, 0.0, 0.0),
        StokesVector::new(1.0, 0.0, 1.0, 0.0),
        StokesVector::new(1.0, 0.0, 0.0, 1.0),
    ]
}

/// `S Sᵀ` for basis vectors stacked as columns.
fn gram(basis: &[StokesVector]) -> MuellerMatrix {
    let mut g = MuellerMatrix::ZERO;
    for s in basis {
        for i in 0..4 {
            for j in 0..4 {
                g[(i, j)] += s[i] * s[j];
            }
        }
    }
    g
}

/// Condition number of the stacked basis (square root of the Gram one).
pub fn basis_condition(basis: &[StokesVector]) -> f64 {
    if basis.len() < 4 {
        return f64::INFINITY;
    }
    gram(basis).condition_number().map_or(f64::INFINITY, f64::sqrt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrdfRequest {
    pub mu_in: Vec<f64>,
    pub dphi: Vec<f64>,
    pub basis: Vec<StokesVector>,
}

impl BrdfRequest {
    /// `count` azimuth differences evenly covering `[0, π]`.
    pub fn uniform_dphi(count: usize) -> Vec<f64> {
        (0..count)
            .map(|j| if count > 1 { std::f64::consts::PI * j as f64 / (count - 1) as f64 } else { 0.0 })
            .collect()
    }
}

/// `F_r` over `(μ_in, μ_out, Δφ)`, `Δφ` fastest; `μ_out` are quadrature nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BrdfTable {
    pub mu_in: Vec<f64>,
    pub mu_out: Vec<f64>,
    pub dphi: Vec<f64>,
    pub entries: Vec<MuellerMatrix>,
    pub quadrature_size: usize,
    pub order_count: usize,
    pub material_hash: u64,
}

pub const BRDF_CSV_HEADER: &str =
    "mu_in,mu_out,dphi,m00,m01,m02,m03,m10,m11,m12,m13,m20,m21,m22,m23,m30,m31,m32,m33";
const BINARY_MAGIC: &[u8; 8] = b"VRTEBRDF";
const BINARY_VERSION: u32 = 1;

/// FNV-1a over the material's JSON serialization.
pub fn material_hash(state: &HomogeneousState) -> u64 {
    let text = serde_json::to_string(&state.spec).unwrap_or_default();
    text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl BrdfTable {
    pub fn index(&self, i: usize, o: usize, p: usize) -> usize {
        (i * self.mu_out.len() + o) * self.dphi.len() + p
    }

    pub fn get(&self, i: usize, o: usize, p: usize) -> &MuellerMatrix {
        &self.entries[self.index(i, o, p)]
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{BRDF_CSV_HEADER}")?;
        for (i, &mi) in self.mu_in.iter().enumerate() {
            for (o, &mo) in self.mu_out.iter().enumerate() {
                for (p, &dp) in self.dphi.iter().enumerate() {
                    write!(out, "{mi:.16e},{mo:.16e},{dp:.16e}")?;
                    for v in self.get(i, o, p).to_row_major() {
                        write!(out, ",{v:.16e}")?;
                    }
                    writeln!(out)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, String> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
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
            if vals.len() != 19 {
                return Err(format!("line {}: expected 19 columns", ln + 1));
            }
            rows.push(vals);
        }
        let mut mu_in: Vec<f64> = Vec::new();
        for r in &rows {
            if mu_in.last() != Some(&r[0]) {
                mu_in.push(r[0]);
            }
        }
        let per_in = rows.len() / mu_in.len().max(1);
        let mut mu_out: Vec<f64> = Vec::new();
        for r in rows.iter().take(per_in) {
            if mu_out.last() != Some(&r[1]) {
                mu_out.push(r[1]);
            }
        }
        let dphi: Vec<f64> = rows.iter().take(per_in / mu_out.len().max(1)).map(|r| r[2]).collect();
        if mu_in.len() * mu_out.len() * dphi.len() != rows.len() {
            return Err("rows do not form a (mu_in, mu_out, dphi) grid".into());
        }
        Ok(Self {
            quadrature_size: mu_out.len(),
            mu_in,
            mu_out,
            dphi,
            entries: rows.iter().map(|r| MuellerMatrix::from_row_major(&r[3..])).collect(),
            order_count: 0,
            material_hash: 0,
        })
    }

    /// Little-endian layout: magic `VRTEBRDF`, `u32` version, `u32` counts
    /// `n_in, n_out, n_dphi, N, L`, `u64` material hash, then `f64` arrays
    /// `mu_in`, `mu_out`, `dphi` and the 16 row-major entries per grid point
    /// in `(mu_in, mu_out, dphi)` order.
    pub fn write_binary<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&BINARY_VERSION.to_le_bytes())?;
        for c in [self.mu_in.len(), self.mu_out.len(), self.dphi.len(), self.quadrature_size, self.order_count] {
            out.write_all(&(c as u32).to_le_bytes())?;
        }
        out.write_all(&self.material_hash.to_le_bytes())?;
        for v in self.mu_in.iter().chain(&self.mu_out).chain(&self.dphi) {
            out.write_all(&v.to_le_bytes())?;
        }
        for e in &self.entries {
            for v in e.to_row_major() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(input: &mut R) -> Result<Self, String> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != BINARY_MAGIC {
            return Err("not a BRDF binary table".into());
        }
        let mut u32s = [0u32; 6];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            input.read_exact(&mut b).map_err(|e| e.to_string())?;
            *v = u32::from_le_bytes(b);
        }
        if u32s[0] != BINARY_VERSION {
            return Err(format!("unsupported version {}", u32s[0]));
        }
        let mut h = [0u8; 8];
        input.read_exact(&mut h).map_err(|e| e.to_string())?;
        let mut read_f64s = |n: usize| -> Result<Vec<f64>, String> {
            (0..n)
                .map(|_| {
                    let mut b = [0u8; 8];
                    input.read_exact(&mut b).map_err(|e| e.to_string())?;
                    Ok(f64::from_le_bytes(b))
                })
                .collect()
        };
        let (ni, no, np) = (u32s[1] as usize, u32s[2] as usize, u32s[3] as usize);
        let mu_in = read_f64s(ni)?;
        let mu_out = read_f64s(no)?;
        let dphi = read_f64s(np)?;
        let flat = read_f64s(16 * ni * no * np)?;
        Ok(Self {
            mu_in,
            mu_out,
            dphi,
            entries: flat.chunks(16).map(MuellerMatrix::from_row_major).collect(),
            quadrature_size: u32s[4] as usize,
            order_count: u32s[5] as usize,
            material_hash: u64::from_le_bytes(h),
        })
    }
}

/// Solves every incidence for the basis and inverts the stacked irradiances.
pub fn compute_brdf(state: &HomogeneousState, request: &BrdfRequest, exec: &Executor, timings: &mut StepTimings) -> Result<BrdfTable, Error> {
    let cond = basis_condition(&request.basis);
    if !(cond < MAX_BASIS_CONDITION) {
        return Err(ValidationError::new(
            "basis",
            format!("incident Stokes basis is ill-conditioned (condition {cond:.3e}, need < {MAX_BASIS_CONDITION:e})"),
        )
        .into());
    }
    for (i, &mu) in request.mu_in.iter().enumerate() {
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(ValidationError::new(format!("incident[{i}].mu0"), "must lie in (0, 1]").into());
        }
    }
    let ginv = gram(&request.basis).inverse().expect("conditioned basis has an inverse");
    let n = state.quad.len();
    let np = request.dphi.len();
    let mut entries = Vec::with_capacity(request.mu_in.len() * n * np);
    let mut clamped = 0usize;
    for &mu_in in &request.mu_in {
        let beams = solve_incidence(state, mu_in, 0.0, &request.basis, exec, timings)?;
        let start = std::time::Instant::now();
        let nodal: Vec<_> = beams.iter().map(|b| b.top_nodal(state)).collect::<Result<_, _>>()?;
        for o in 0..n {
            for &dp in &request.dphi {
                // I Sᵀ (S Sᵀ)⁻¹ / μ_in
                let mut isg = MuellerMatrix::ZERO;
                for (s, basis) in request.basis.iter().enumerate() {
                    let exit = azimuthal_assemble(&nodal[s][o], dp, 0.0);
                    for i in 0..4 {
                        for j in 0..4 {
                            isg[(i, j)] += exit[i] * basis[j];
                        }
                    }
                }
                let mut f = (isg * ginv).scale(1.0 / mu_in);
                if f[(0, 0)] < 0.0 {
                    if f[(0, 0)] < -1e-9 {
                        warn!("BRDF m00 = {:.3e} below tolerance at mu_in={mu_in}, mu_out={}", f[(0, 0)], state.quad.nodes[o]);
                    }
                    f[(0, 0)] = 0.0;
                    clamped += 1;
                }
                entries.push(f);
            }
        }
        timings.reconstruction += start.elapsed().as_secs_f64();
        timings.reconstruction_items += n * np;
    }
    if clamped > 0 {
        warn!("clamped {clamped} negative BRDF m00 entries to zero");
    }
    Ok(BrdfTable {
        mu_in: request.mu_in.clone(),
        mu_out: state.quad.nodes.clone(),
        dphi: request.dphi.clone(),
        entries,
        quadrature_size: n,
        order_count: state.order_count(),
        material_hash: material_hash(state),
    })
}

/// `∫∫ F_{0s} μ dμ dφ` for each incident Stokes channel `s`, using the
/// table's `μ_out` nodes with `weights` and a trapezoid rule over the
/// `Δφ ∈ [0, π]` grid doubled by mirror symmetry.
pub fn directional_hemispherical_reflectance(table: &BrdfTable, weights: &[f64], i_in: usize) -> [f64; 4] {
    let np = table.dphi.len();
    let mut out = [0.0; 4];
    for (o, &mu) in table.mu_out.iter().enumerate() {
        let mut az = [0.0; 4];
        for p in 0..np {
            let w = if np == 1 {
                2.0 * std::f64::consts::PI
            } else {
                let h = table.dphi[1] - table.dphi[0];
                let end = p == 0 || p + 1 == np;
                2.0 * h * if end { 0.5 } else { 1.0 }
            };
            let f = table.get(i_in, o, p);
            for s in 0..4 {
                az[s] += w * f[(0, s)];
            }
        }
        for s in 0..4 {
            out[s] += weights[o] * mu * az[s];
        }
    }
    out
}
