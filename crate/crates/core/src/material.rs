//! Layer stacks, base reflectors and the beam source.
//!
//! Expansion coefficients follow the Greek-constant layout for randomly
//! oriented particles. A coefficient line `l β α γ δ ε ζ` maps to
//!
//! ```text
//!        | β   γ   0   0 |
//! B_l =  | γ   α   0   0 |
//!        | 0   0   ζ  -ε |
//!        | 0   0   ε   δ |
//! ```
//!
//! with `β_l` including the `(2l+1)` factor, so `β_0 = 1` normalizes the
//! scalar phase function to `4π`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError};
use crate::stokes::{MuellerMatrix, StokesVector};

/// Tolerance on `B_0[0][0] = 1`.
pub const PHASE_NORMALIZATION_TOL: f64 = 1e-6;

/// One line of a coefficient file.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GreekCoefficients {
    pub beta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub zeta: f64,
}

impl GreekCoefficients {
    pub fn scalar(beta: f64) -> Self {
        Self {
            beta,
            ..Self::default()
        }
    }

    pub fn to_matrix(&self) -> MuellerMatrix {
        MuellerMatrix::new([
            [self.beta, self.gamma, 0.0, 0.0],
            [self.gamma, self.alpha, 0.0, 0.0],
            [0.0, 0.0, self.zeta, -self.epsilon],
            [0.0, 0.0, self.epsilon, self.delta],
        ])
    }

    pub fn from_matrix(b: &MuellerMatrix) -> Self {
        Self {
            beta: b[(0, 0)],
            alpha: b[(1, 1)],
            gamma: b[(0, 1)],
            delta: b[(3, 3)],
            epsilon: b[(3, 2)],
            zeta: b[(2, 2)],
        }
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            beta: self.beta * s,
            alpha: self.alpha * s,
            gamma: self.gamma * s,
            delta: self.delta * s,
            epsilon: self.epsilon * s,
            zeta: self.zeta * s,
        }
    }

    fn plus(&self, o: &Self) -> Self {
        Self {
            beta: self.beta + o.beta,
            alpha: self.alpha + o.alpha,
            gamma: self.gamma + o.gamma,
            delta: self.delta + o.delta,
            epsilon: self.epsilon + o.epsilon,
            zeta: self.zeta + o.zeta,
        }
    }
}

/// Positions that must vanish in every `B_l`.
const OFF_BLOCK: [(usize, usize); 8] = [
    (0, 2),
    (0, 3),
    (1, 2),
    (1, 3),
    (2, 0),
    (3, 0),
    (2, 1),
    (3, 1),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Single-scattering albedo.
    pub omega: f64,
    /// Optical thickness.
    pub tau: f64,
    /// `B_l`, `l = 0..L-1`.
    pub coeffs: Vec<MuellerMatrix>,
}

impl LayerSpec {
    pub fn new(omega: f64, tau: f64, coeffs: &[GreekCoefficients]) -> Self {
        Self {
            omega,
            tau,
            coeffs: coeffs.iter().map(GreekCoefficients::to_matrix).collect(),
        }
    }

    pub fn order_count(&self) -> usize {
        self.coeffs.len()
    }
}

/// Azimuth-independent Mueller reflection table `R(μ_i, -μ_j)` on the
/// quadrature nodes, stored row-major by `(i, j)`.
///
/// `R` is `2π` times the Mueller BRDF, so a Lambertian reflector of albedo
/// `ρ` has `R₀₀ = 2ρ`. Entries must share the 2+2 block structure of the
/// phase matrices so the two Fourier components stay decoupled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuellerTable {
    pub n: usize,
    pub entries: Vec<MuellerMatrix>,
}

impl MuellerTable {
    pub fn new(n: usize, entries: Vec<MuellerMatrix>) -> Result<Self, ValidationError> {
        if entries.len() != n * n {
            return Err(ValidationError::new(
                "base.table",
                format!("expected {} entries for n={n}, got {}", n * n, entries.len()),
            ));
        }
        Ok(Self { n, entries })
    }

    pub fn uniform(n: usize, r: MuellerMatrix) -> Self {
        Self {
            n,
            entries: vec![r; n * n],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> &MuellerMatrix {
        &self.entries[i * self.n + j]
    }

    /// Bilinear interpolation over node cosines, clamped at the ends.
    pub fn interpolate(&self, nodes: &[f64], mu_out: f64, mu_in: f64) -> MuellerMatrix {
        let (i0, i1, ti) = bracket(nodes, mu_out);
        let (j0, j1, tj) = bracket(nodes, mu_in);
        let lerp = |a: MuellerMatrix, b: MuellerMatrix, t: f64| a.scale(1.0 - t) + b.scale(t);
        let top = lerp(*self.get(i0, j0), *self.get(i0, j1), tj);
        let bot = lerp(*self.get(i1, j0), *self.get(i1, j1), tj);
        lerp(top, bot, ti)
    }
}

fn bracket(nodes: &[f64], x: f64) -> (usize, usize, f64) {
    let n = nodes.len();
    if x <= nodes[0] {
        return (0, 0, 0.0);
    }
    if x >= nodes[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let k = nodes.partition_point(|&v| v <= x) - 1;
    if nodes[k] == x {
        return (k, k, 0.0);
    }
    (k, k + 1, (x - nodes[k]) / (nodes[k + 1] - nodes[k]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaseReflector {
    Black,
    Lambertian { albedo: f64 },
    MuellerTable(MuellerTable),
}

/// Collimated beam. `mu0 > 0` is the cosine of the beam's zenith angle; the
/// beam propagates downward along `(-mu0, phi0)`. `stokes` is the Stokes
/// flux through a surface normal to the beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSource {
    pub mu0: f64,
    pub phi0: f64,
    pub stokes: StokesVector,
}

impl BeamSource {
    pub fn new(mu0: f64, phi0: f64, stokes: StokesVector) -> Self {
        Self { mu0, phi0, stokes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    /// Top first.
    pub layers: Vec<LayerSpec>,
    pub base: BaseReflector,
    pub source: BeamSource,
}

impl MaterialSpec {
    /// Number of phase-expansion terms shared by every layer.
    pub fn order_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::order_count).max().unwrap_or(0)
    }

    pub fn total_tau(&self) -> f64 {
        self.layers.iter().map(|l| l.tau).sum()
    }

    /// Global optical depth of the top of each layer.
    pub fn layer_tops(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.layers
            .iter()
            .map(|l| {
                let top = acc;
                acc += l.tau;
                top
            })
            .collect()
    }
}

fn check_block_structure(b: &MuellerMatrix) -> Option<(usize, usize)> {
    OFF_BLOCK.iter().copied().find(|&(r, c)| b[(r, c)] != 0.0)
}

/// Checks every invariant and zero-pads coefficient lists to a common length.
pub fn validate_material(spec: &MaterialSpec) -> Result<MaterialSpec, ValidationError> {
    if spec.layers.is_empty() {
        return Err(ValidationError::new("layers", "at least one layer is required"));
    }
    for (k, layer) in spec.layers.iter().enumerate() {
        let ctx = |field: &str| format!("layer[{k}].{field}");
        if !(0.0..=1.0).contains(&layer.omega) || !layer.omega.is_finite() {
            return Err(ValidationError::new(
                ctx("omega"),
                format!("albedo out of range [0, 1]: {}", layer.omega),
            ));
        }
        if !(layer.tau > 0.0 && layer.tau.is_finite()) {
            return Err(ValidationError::new(
                ctx("tau"),
                format!("optical thickness must be positive, got {}", layer.tau),
            ));
        }
        if layer.coeffs.is_empty() {
            return Err(ValidationError::new(ctx("coeffs"), "no expansion coefficients"));
        }
        for (l, b) in layer.coeffs.iter().enumerate() {
            if !b.is_finite() {
                return Err(ValidationError::new(
                    format!("layer[{k}].coeffs[{l}]"),
                    "non-finite coefficient",
                ));
            }
            if let Some((r, c)) = check_block_structure(b) {
                return Err(ValidationError::new(
                    format!("layer[{k}].coeffs[{l}]"),
                    format!("malformed B_l: entry ({r},{c}) must be zero"),
                ));
            }
            if b[(0, 1)] != b[(1, 0)] || b[(2, 3)] != -b[(3, 2)] {
                return Err(ValidationError::new(
                    format!("layer[{k}].coeffs[{l}]"),
                    "malformed B_l: requires B[0][1] = B[1][0] and B[2][3] = -B[3][2]",
                ));
            }
        }
        let b00 = layer.coeffs[0][(0, 0)];
        if (b00 - 1.0).abs() > PHASE_NORMALIZATION_TOL {
            return Err(ValidationError::new(
                ctx("coeffs[0]"),
                format!("phase function not normalized: beta_0 = {b00}"),
            ));
        }
    }
    match &spec.base {
        BaseReflector::Black => {}
        BaseReflector::Lambertian { albedo } => {
            if !(0.0..=1.0).contains(albedo) {
                return Err(ValidationError::new(
                    "base.albedo",
                    format!("Lambertian albedo out of range [0, 1]: {albedo}"),
                ));
            }
        }
        BaseReflector::MuellerTable(t) => {
            if t.entries.len() != t.n * t.n || t.n == 0 {
                return Err(ValidationError::new("base.table", "table is not square"));
            }
            for (idx, r) in t.entries.iter().enumerate() {
                if !r.is_finite() {
                    return Err(ValidationError::new(
                        format!("base.table[{},{}]", idx / t.n, idx % t.n),
                        "non-finite entry",
                    ));
                }
                if let Some((rr, cc)) = check_block_structure(r) {
                    return Err(ValidationError::new(
                        format!("base.table[{},{}]", idx / t.n, idx % t.n),
                        format!("entry ({rr},{cc}) couples the (I,Q) and (U,V) blocks"),
                    ));
                }
            }
        }
    }
    let src = &spec.source;
    if !(src.mu0 > 0.0 && src.mu0 <= 1.0) {
        return Err(ValidationError::new(
            "source.mu0",
            format!("beam cosine must lie in (0, 1], got {}", src.mu0),
        ));
    }
    if !src.phi0.is_finite() || !src.stokes.is_finite() {
        return Err(ValidationError::new("source", "non-finite beam parameters"));
    }
    let order_count = spec.order_count();
    let mut out = spec.clone();
    for layer in &mut out.layers {
        layer.coeffs.resize(order_count, MuellerMatrix::ZERO);
    }
    out.source.phi0 = crate::geometry::reduce_azimuth(src.phi0);
    Ok(out)
}

/// Parses a coefficient file: one line `l β α γ δ ε ζ` per order; `#` starts
/// a comment. Missing orders are zero.
pub fn parse_coefficients(text: &str) -> Result<Vec<GreekCoefficients>, String> {
    let mut rows: Vec<(usize, GreekCoefficients)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(format!(
                "line {}: expected 7 columns `l beta alpha gamma delta epsilon zeta`, got {}",
                lineno + 1,
                fields.len()
            ));
        }
        let l: usize = fields[0]
            .parse()
            .map_err(|_| format!("line {}: bad order index {:?}", lineno + 1, fields[0]))?;
        let mut v = [0.0; 6];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f
                .parse()
                .map_err(|_| format!("line {}: bad number {f:?}", lineno + 1))?;
        }
        rows.push((
            l,
            GreekCoefficients {
                beta: v[0],
                alpha: v[1],
                gamma: v[2],
                delta: v[3],
                epsilon: v[4],
                zeta: v[5],
            },
        ));
    }
    let len = rows.iter().map(|(l, _)| l + 1).max().unwrap_or(0);
    let mut out = vec![GreekCoefficients::default(); len];
    for (l, c) in rows {
        out[l] = c;
    }
    Ok(out)
}

pub fn format_coefficients(coeffs: &[GreekCoefficients]) -> String {
    let mut s = String::from("# l beta alpha gamma delta epsilon zeta\n");
    for (l, c) in coeffs.iter().enumerate() {
        let _ = writeln!(
            s,
            "{l} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
            c.beta, c.alpha, c.gamma, c.delta, c.epsilon, c.zeta
        );
    }
    s
}

/// Parses a Mueller reflection table: lines `i j m00 … m33` over node indices.
pub fn parse_mueller_table(text: &str) -> Result<MuellerTable, String> {
    let mut rows = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 18 {
            return Err(format!("line {}: expected 18 columns, got {}", lineno + 1, f.len()));
        }
        let i: usize = f[0].parse().map_err(|_| format!("line {}: bad index", lineno + 1))?;
        let j: usize = f[1].parse().map_err(|_| format!("line {}: bad index", lineno + 1))?;
        let vals: Result<Vec<f64>, _> = f[2..].iter().map(|x| x.parse::<f64>()).collect();
        let vals = vals.map_err(|_| format!("line {}: bad number", lineno + 1))?;
        rows.push((i, j, MuellerMatrix::from_row_major(&vals)));
    }
    let n = rows.iter().map(|(i, j, _)| i.max(j) + 1).max().unwrap_or(0);
    if rows.len() != n * n {
        return Err(format!("table covers {} of {} (i, j) pairs", rows.len(), n * n));
    }
    let mut entries = vec![MuellerMatrix::ZERO; n * n];
    let mut seen = vec![false; n * n];
    for (i, j, m) in rows {
        if seen[i * n + j] {
            return Err(format!("duplicate entry ({i}, {j})"));
        }
        seen[i * n + j] = true;
        entries[i * n + j] = m;
    }
    MuellerTable::new(n, entries).map_err(|e| e.to_string())
}

/// Reference coefficient sets used by tests, examples and the CLI.
pub mod presets {
    use super::GreekCoefficients;

    /// Isotropic, non-polarizing scattering.
    pub fn isotropic() -> Vec<GreekCoefficients> {
        vec![GreekCoefficients::scalar(1.0)]
    }

    /// Rayleigh scattering (no depolarization).
    pub fn rayleigh() -> Vec<GreekCoefficients> {
        vec![
            GreekCoefficients::scalar(1.0),
            GreekCoefficients {
                delta: 1.5,
                ..Default::default()
            },
            GreekCoefficients {
                beta: 0.5,
                alpha: 3.0,
                gamma: 6.0f64.sqrt() / 2.0,
                ..Default::default()
            },
        ]
    }

    /// Henyey–Greenstein phase function truncated to `orders` terms, acting
    /// as a perfect depolarizer (only the `β` row).
    pub fn henyey_greenstein_depolarizing(g: f64, orders: usize) -> Vec<GreekCoefficients> {
        (0..orders)
            .map(|l| GreekCoefficients::scalar((2 * l + 1) as f64 * g.powi(l as i32)))
            .collect()
    }

    /// Convex mixture `f·Rayleigh + (1-f)·depolarizing HG(g)`, `orders` terms.
    pub fn rayleigh_hg_mixture(f: f64, g: f64, orders: usize) -> Vec<GreekCoefficients> {
        let ray = rayleigh();
        let hg = henyey_greenstein_depolarizing(g, orders.max(3));
        (0..orders.max(3))
            .map(|l| {
                let r = ray.get(l).copied().unwrap_or_default();
                r.scaled(f).plus(&hg[l].scaled(1.0 - f))
            })
            .take(orders.max(3))
            .collect()
    }
}

/// JSON material document; coefficient and table paths are resolved
/// relative to the document's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialDocument {
    pub layers: Vec<LayerDocument>,
    #[serde(default = "BaseDocument::black")]
    pub base: BaseDocument,
    pub source: SourceDocument,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDocument {
    pub omega: f64,
    pub tau: f64,
    #[serde(default)]
    pub coeff_file: Option<PathBuf>,
    /// Built-in coefficient set (`isotropic` | `rayleigh`) instead of a file.
    #[serde(default)]
    pub preset: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseDocument {
    Black,
    Lambertian { albedo: f64 },
    MuellerTable { table_file: PathBuf },
}

impl BaseDocument {
    fn black() -> Self {
        Self::Black
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDocument {
    pub mu0: f64,
    #[serde(default)]
    pub phi0: f64,
    #[serde(default = "unpolarized")]
    pub stokes: [f64; 4],
}

fn unpolarized() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl MaterialDocument {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Loads referenced files and produces an (unvalidated) [`MaterialSpec`].
    pub fn resolve(&self, base_dir: &Path) -> Result<MaterialSpec> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (k, l) in self.layers.iter().enumerate() {
            let coeffs = match (&l.coeff_file, &l.preset) {
                (Some(file), None) => {
                    let path = base_dir.join(file);
                    parse_coefficients(&read_text(&path)?).map_err(|message| Error::Parse {
                        path: path.clone(),
                        message,
                    })?
                }
                (None, Some(p)) => match p.as_str() {
                    "isotropic" => presets::isotropic(),
                    "rayleigh" => presets::rayleigh(),
                    other => {
                        return Err(ValidationError::new(
                            format!("layer[{k}].preset"),
                            format!("unknown preset {other:?}"),
                        )
                        .into())
                    }
                },
                _ => {
                    return Err(ValidationError::new(
                        format!("layer[{k}]"),
                        "exactly one of coeff_file or preset is required",
                    )
                    .into())
                }
            };
            layers.push(LayerSpec::new(l.omega, l.tau, &coeffs));
        }
        let base = match &self.base {
            BaseDocument::Black => BaseReflector::Black,
            BaseDocument::Lambertian { albedo } => BaseReflector::Lambertian { albedo: *albedo },
            BaseDocument::MuellerTable { table_file } => {
                let path = base_dir.join(table_file);
                let table = parse_mueller_table(&read_text(&path)?).map_err(|message| {
                    Error::Parse {
                        path: path.clone(),
                        message,
                    }
                })?;
                BaseReflector::MuellerTable(table)
            }
        };
        Ok(MaterialSpec {
            layers,
            base,
            source: BeamSource::new(
                self.source.mu0,
                self.source.phi0,
                StokesVector::from_array(self.source.stokes),
            ),
        })
    }
}

/// Reads, resolves and validates a material document.
pub fn load_material(path: &Path) -> Result<MaterialSpec> {
    let text = read_text(path)?;
    let doc = MaterialDocument::parse(&text, path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let spec = doc.resolve(dir)?;
    Ok(validate_material(&spec)?)
}
