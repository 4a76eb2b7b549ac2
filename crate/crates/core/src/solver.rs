//! Pipeline orchestration: homogeneous state once per material, then
//! particular, boundary and reconstruction work per incidence.
//!
//! Each step runs as one parallel map over independent work items whose
//! results are collected in item order, so outputs do not depend on the
//! thread count.

use std::io::Write;
use std::time::Instant;

use faer::c64;
use rayon::prelude::*;

use crate::boundary::{boundary_rhs, layer_attenuations, BaseReflection, BeamDrive, BoundaryOperator, LayerModes};
use crate::error::{Error, NumericalError, ValidationError};
use crate::geometry::{clamp_mu, reduce_azimuth};
use crate::homogeneous::{build_reduced_operators, solve_homogeneous, EigenModeSet, ReducedOperators};
use crate::material::MaterialSpec;
use crate::particular::{build_beam_source, resonance_free_mu0, ParticularSolver, ParticularVectors};
use crate::phase::{assemble_azimuth_kernel, AzimuthKernel};
use crate::quadrature::{build_double_gauss_quadrature, Quadrature};
use crate::reconstruction::{
    azimuthal_assemble, integrate_source, project_modes, take_real, LayerSolution, OrderSolution, ProjectedModes,
    RadianceField,
};
use crate::stokes::StokesVector;

/// Worker pool handed to every parallel step.
pub struct Executor {
    pool: rayon::ThreadPool,
}

impl Executor {
    pub fn new(threads: usize) -> Result<Self, Error> {
        if threads == 0 {
            return Err(ValidationError::new("threads", "thread count must be at least 1").into());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| NumericalError::Other(format!("thread pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

/// Wall time per step (seconds) and work-item counters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepTimings {
    pub homogeneous: f64,
    pub particular: f64,
    pub boundary: f64,
    pub reconstruction: f64,
    pub homogeneous_solves: usize,
    pub particular_solves: usize,
    pub boundary_solves: usize,
    pub reconstruction_items: usize,
}

impl StepTimings {
    pub fn steps(&self) -> [(&'static str, f64); 4] {
        [
            ("homogeneous", self.homogeneous),
            ("particular", self.particular),
            ("boundary", self.boundary),
            ("reconstruction", self.reconstruction),
        ]
    }

    pub fn step_total(&self) -> f64 {
        self.steps().iter().map(|s| s.1).sum()
    }
}

fn timed<R>(slot: &mut f64, f: impl FnOnce() -> R) -> R {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed().as_secs_f64();
    out
}

/// Incident-independent data of one Fourier order.
pub struct OrderState {
    pub m: usize,
    pub kernels: Vec<AzimuthKernel>,
    pub operators: Vec<ReducedOperators>,
    pub modes: Vec<EigenModeSet>,
    pub boundary: BoundaryOperator,
}

/// Homogeneous solutions and factored boundary systems for every order.
pub struct HomogeneousState {
    pub spec: MaterialSpec,
    pub quad: Quadrature,
    pub base: BaseReflection,
    pub orders: Vec<OrderState>,
}

impl HomogeneousState {
    pub fn order_count(&self) -> usize {
        self.orders.len()
    }

    fn layer_modes(&self, m: usize) -> Vec<LayerModes<'_>> {
        self.orders[m]
            .modes
            .iter()
            .zip(&self.spec.layers)
            .map(|(modes, l)| LayerModes { modes, tau: l.tau })
            .collect()
    }

    pub fn write_eigen_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "layer,{}", crate::homogeneous::EIGEN_CSV_HEADER)?;
        for o in &self.orders {
            for (l, modes) in o.modes.iter().enumerate() {
                let mut buf = Vec::new();
                modes.write_csv(&mut buf)?;
                for line in String::from_utf8_lossy(&buf).lines() {
                    writeln!(out, "{l},{line}")?;
                }
            }
        }
        Ok(())
    }

    pub fn max_eigen_residual(&self) -> f64 {
        self.orders
            .iter()
            .flat_map(|o| o.modes.iter())
            .fold(0.0, |a, m| a.max(m.max_residual()))
    }
}

/// Number of Fourier orders actually solved.
pub fn effective_orders(spec: &MaterialSpec, cap: Option<usize>) -> usize {
    let l = spec.order_count().max(1);
    cap.map_or(l, |c| c.clamp(1, l))
}

/// Builds kernels, eigenmodes and the factored boundary system per order.
pub fn solve_vrte(
    spec: &MaterialSpec,
    quad_size: usize,
    orders: Option<usize>,
    exec: &Executor,
    timings: &mut StepTimings,
) -> Result<HomogeneousState, Error> {
    let quad = build_double_gauss_quadrature(quad_size)?;
    let base = BaseReflection::build(&spec.base, &quad)?;
    let count = effective_orders(spec, orders);
    let per_order = timed(&mut timings.homogeneous, || {
        exec.install(|| {
            (0..count)
                .into_par_iter()
                .map(|m| {
                    let mut kernels = Vec::new();
                    let mut operators = Vec::new();
                    let mut modes = Vec::new();
                    for layer in &spec.layers {
                        let k = assemble_azimuth_kernel(m, &layer.coeffs, &quad);
                        let ops = build_reduced_operators(layer.omega, &quad, &k);
                        modes.push(solve_homogeneous(&ops, &k, &quad)?);
                        kernels.push(k);
                        operators.push(ops);
                    }
                    Ok((kernels, operators, modes))
                })
                .collect::<Result<Vec<_>, NumericalError>>()
        })
    })?;
    timings.homogeneous_solves += count * spec.layers.len();
    let boundaries = timed(&mut timings.boundary, || {
        exec.install(|| {
            per_order
                .par_iter()
                .enumerate()
                .map(|(m, (_, _, modes))| {
                    let lm: Vec<LayerModes> = modes
                        .iter()
                        .zip(&spec.layers)
                        .map(|(modes, l)| LayerModes { modes, tau: l.tau })
                        .collect();
                    BoundaryOperator::new(m, &lm, &base, &quad)
                })
                .collect::<Result<Vec<_>, NumericalError>>()
        })
    })?;
    let orders = per_order
        .into_iter()
        .zip(boundaries)
        .enumerate()
        .map(|(m, ((kernels, operators, modes), boundary))| OrderState {
            m,
            kernels,
            operators,
            modes,
            boundary,
        })
        .collect();
    Ok(HomogeneousState {
        spec: spec.clone(),
        quad,
        base,
        orders,
    })
}

/// Particular vectors and coefficients of one `(m, k)`.
#[derive(Debug, Clone)]
pub struct ModeSolution {
    pub particulars: Vec<ParticularVectors>,
    pub coeffs: Vec<Vec<c64>>,
    pub residual: f64,
}

/// Solved beam: `orders[m][k-1]`.
#[derive(Debug, Clone)]
pub struct BeamSolution {
    /// Beam cosine after the resonance guard.
    pub mu0: f64,
    pub phi0: f64,
    pub stokes: StokesVector,
    pub orders: Vec<[ModeSolution; 2]>,
}

impl BeamSolution {
    pub fn max_boundary_residual(&self) -> f64 {
        self.orders.iter().flatten().fold(0.0, |a, s| a.max(s.residual))
    }

    pub fn order_solution<'a>(&'a self, state: &'a HomogeneousState, m: usize, k: usize) -> OrderSolution<'a> {
        let taus: Vec<f64> = state.spec.layers.iter().map(|l| l.tau).collect();
        let (tops, _) = layer_attenuations(&taus, self.mu0);
        let sol = &self.orders[m][k - 1];
        OrderSolution {
            m,
            k,
            mu0: self.mu0,
            stokes: self.stokes,
            quad: &state.quad,
            base: &state.base,
            layers: state
                .spec
                .layers
                .iter()
                .enumerate()
                .map(|(l, layer)| LayerSolution {
                    layer,
                    modes: &state.orders[m].modes[l],
                    coeffs: &sol.coeffs[l],
                    particular: &sol.particulars[l],
                    atten_top: tops[l],
                })
                .collect(),
        }
    }

    /// Upward diffuse Stokes field at the top on the quadrature nodes,
    /// `[node][m][k-1]`.
    pub fn top_nodal(&self, state: &HomogeneousState) -> Result<Vec<Vec<[[f64; 4]; 2]>>, NumericalError> {
        let n = state.quad.len();
        let mut out = vec![vec![[[0.0; 4]; 2]; self.orders.len()]; n];
        let mut raw = Vec::with_capacity(self.orders.len());
        let mut scale = 0.0f64;
        for m in 0..self.orders.len() {
            for k in 1..=2 {
                let (up, _) = self.order_solution(state, m, k).nodal(0.0);
                scale = up.iter().fold(scale, |s, v| s.max(v.re.abs()));
                raw.push((m, k, up));
            }
        }
        for (m, k, up) in raw {
            let vals: Vec<[c64; 4]> = (0..n).map(|i| std::array::from_fn(|s| up[4 * i + s])).collect();
            let real = take_real(m, &vals, scale)?;
            for i in 0..n {
                out[i][m][k - 1] = real[i];
            }
        }
        Ok(out)
    }
}

/// Particular and boundary steps for one incidence and several Stokes
/// vectors; particular factorizations are shared across the vectors.
pub fn solve_incidence(
    state: &HomogeneousState,
    mu0: f64,
    phi0: f64,
    stokes: &[StokesVector],
    exec: &Executor,
    timings: &mut StepTimings,
) -> Result<Vec<BeamSolution>, Error> {
    let quad = &state.quad;
    let all_modes: Vec<&EigenModeSet> = state.orders.iter().flat_map(|o| o.modes.iter()).collect();
    let mu0 = resonance_free_mu0(mu0, &all_modes)?;
    let phi0 = reduce_azimuth(phi0);
    let count = state.order_count();
    let nl = state.spec.layers.len();
    // particulars[m][s][k-1][layer]
    let particulars = timed(&mut timings.particular, || {
        exec.install(|| {
            (0..count)
                .into_par_iter()
                .map(|m| {
                    let o = &state.orders[m];
                    let mut per: Vec<[Vec<ParticularVectors>; 2]> = vec![[Vec::with_capacity(nl), Vec::with_capacity(nl)]; stokes.len()];
                    for (l, layer) in state.spec.layers.iter().enumerate() {
                        let solver = ParticularSolver::new(&o.operators[l], mu0);
                        for (s, i0) in stokes.iter().enumerate() {
                            for k in 1..=2 {
                                let src = build_beam_source(m, k, layer.omega, &layer.coeffs, quad, mu0, *i0);
                                per[s][k - 1].push(solver.solve(&src, &o.kernels[l], quad)?);
                            }
                        }
                    }
                    Ok(per)
                })
                .collect::<Result<Vec<_>, NumericalError>>()
        })
    })?;
    timings.particular_solves += count * nl * 2 * stokes.len();
    let solved = timed(&mut timings.boundary, || {
        exec.install(|| {
            particulars
                .into_par_iter()
                .enumerate()
                .map(|(m, per)| {
                    let lm = state.layer_modes(m);
                    let op = &state.orders[m].boundary;
                    per.into_iter()
                        .enumerate()
                        .map(|(s, ks)| {
                            let mut it = ks.into_iter().enumerate().map(|(ki, parts)| {
                                let drive = BeamDrive {
                                    m,
                                    k: ki + 1,
                                    mu0,
                                    stokes: stokes[s],
                                    particulars: &parts,
                                };
                                let rhs = boundary_rhs(&lm, &state.base, quad, &drive);
                                let (coeffs, residual) = op.solve(&rhs)?;
                                Ok(ModeSolution {
                                    particulars: parts,
                                    coeffs,
                                    residual,
                                })
                            });
                            let k1 = it.next().expect("two modes")?;
                            let k2 = it.next().expect("two modes")?;
                            Ok([k1, k2])
                        })
                        .collect::<Result<Vec<_>, NumericalError>>()
                })
                .collect::<Result<Vec<_>, NumericalError>>()
        })
    })?;
    timings.boundary_solves += count * 2 * stokes.len();
    let mut beams: Vec<BeamSolution> = stokes
        .iter()
        .map(|&s| BeamSolution {
            mu0,
            phi0,
            stokes: s,
            orders: Vec::with_capacity(count),
        })
        .collect();
    for per in solved {
        for (s, pair) in per.into_iter().enumerate() {
            beams[s].orders.push(pair);
        }
    }
    Ok(beams)
}

/// Output grid for radiance mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceRequest {
    pub taus: Vec<f64>,
    /// Signed cosines; zeros are clamped away from the horizon.
    pub mus: Vec<f64>,
    pub phis: Vec<f64>,
}

impl RadianceRequest {
    /// `zenith` cosines per hemisphere at equal zenith-angle steps from the
    /// normal, `azimuth` angles evenly covering `[0, π]`.
    pub fn grid(taus: Vec<f64>, zenith: usize, azimuth: usize) -> Self {
        let half = std::f64::consts::FRAC_PI_2;
        let up: Vec<f64> = (0..zenith).map(|i| (half * i as f64 / zenith as f64).cos()).collect();
        let mut mus: Vec<f64> = up.iter().map(|m| -m).collect();
        mus.extend(up.iter().rev());
        let phis = (0..azimuth)
            .map(|j| if azimuth > 1 { std::f64::consts::PI * j as f64 / (azimuth - 1) as f64 } else { 0.0 })
            .collect();
        Self { taus, mus, phis }
    }
}

/// Source-function-integrated radiance over the requested grid.
pub fn compute_radiance(
    state: &HomogeneousState,
    beam: &BeamSolution,
    request: &RadianceRequest,
    exec: &Executor,
    timings: &mut StepTimings,
) -> Result<RadianceField, Error> {
    let start = Instant::now();
    let total = state.spec.total_tau();
    for &t in &request.taus {
        if !(0.0..=total).contains(&t) {
            return Err(ValidationError::new("tau-levels", format!("depth {t} outside [0, {total}]")).into());
        }
    }
    let mus: Vec<f64> = request.mus.iter().map(|&m| clamp_mu(m)).collect();
    let count = state.order_count();
    let items: Vec<(usize, usize)> = (0..count).flat_map(|m| (0..mus.len()).map(move |u| (m, u))).collect();
    // per item: [k-1][tau] complex Stokes
    let raw = exec.install(|| {
        items
            .par_iter()
            .map(|&(m, u)| {
                let mu = mus[u];
                let proj: Vec<ProjectedModes> = state
                    .spec
                    .layers
                    .iter()
                    .zip(&state.orders[m].modes)
                    .map(|(layer, modes)| project_modes(m, layer, &state.quad, modes, mu))
                    .collect();
                [1usize, 2].map(|k| integrate_source(&beam.order_solution(state, m, k), &proj, mu, &request.taus))
            })
            .collect::<Vec<_>>()
    });
    timings.reconstruction_items += items.len();
    let scale = raw
        .iter()
        .flatten()
        .flatten()
        .flatten()
        .fold(0.0f64, |s, v| s.max(v.re.abs()));
    let nt = request.taus.len();
    // per_point[t][u][m] = [[f64;4];2]
    let mut per_point = vec![vec![vec![[[0.0; 4]; 2]; count]; mus.len()]; nt];
    for (&(m, u), ks) in items.iter().zip(&raw) {
        for (ki, vals) in ks.iter().enumerate() {
            let real = take_real(m, vals, scale)?;
            for t in 0..nt {
                per_point[t][u][m][ki] = real[t];
            }
        }
    }
    let mut values = Vec::with_capacity(nt * mus.len() * request.phis.len());
    for row in &per_point {
        for orders in row {
            for &phi in &request.phis {
                values.push(azimuthal_assemble(orders, phi, beam.phi0));
            }
        }
    }
    timings.reconstruction += start.elapsed().as_secs_f64();
    Ok(RadianceField {
        taus: request.taus.clone(),
        mus,
        phis: request.phis.clone(),
        values,
        order_count: count,
        quadrature_size: state.quad.len(),
    })
}
