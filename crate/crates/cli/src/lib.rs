//! Command-line driver: configuration, mode dispatch, file emission and
//! timing reports.

pub mod config;
pub mod timing;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use vrte_core::boundary::{write_boundary_row, BOUNDARY_CSV_HEADER};
use vrte_core::material::load_material;
use vrte_core::solver::BeamSolution;
use vrte_core::{
    compute_brdf, compute_radiance, default_basis, solve_incidence, solve_vrte, BrdfRequest, Error, Executor,
    HomogeneousState, MaterialSpec, RadianceRequest, Result, StepTimings, ValidationError,
};
use vrte_mc::{agreement, mc_trace, Agreement, BinSampling, TallyBins};

pub use config::{Mode, RunConfig};
pub use timing::TimingReport;

/// Gauss points per bin axis when averaging the deterministic field over
/// Monte Carlo bins.
pub const BIN_SAMPLING_ORDER: usize = 3;
/// Bins agree when every Stokes component is within this many standard errors.
pub const AGREEMENT_SIGMA: f64 = 3.0;

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub timings: TimingReport,
    pub max_eigen_residual: f64,
    pub max_boundary_residual: f64,
    /// Monte Carlo comparison, for `mc-validate`.
    pub agreement: Option<Agreement>,
}

/// Exit status for an error: 2 for rejected input, 3 for numerical failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical(_) => 3,
        Error::Validation(_) | Error::Io { .. } | Error::Parse { .. } => 2,
    }
}

/// Mode-specific outputs (everything except the timing report).
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    timings: StepTimings,
    extra: Vec<(&'static str, f64)>,
    eigen_residual: f64,
    boundary_residual: f64,
    agreement: Option<Agreement>,
}

struct Job<'a> {
    config: &'a RunConfig,
    spec: MaterialSpec,
    incidences: Vec<(f64, f64)>,
    taus: Vec<f64>,
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

/// Serializes into memory and accumulates the time spent doing so.
#[derive(Default)]
struct Emitter {
    files: Vec<(String, Vec<u8>)>,
    seconds: f64,
}

impl Emitter {
    fn emit(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) {
        let start = Instant::now();
        let bytes = csv_bytes(f);
        self.seconds += start.elapsed().as_secs_f64();
        self.files.push((name.into(), bytes));
    }

    fn finish(self, timings: StepTimings, mut extra: Vec<(&'static str, f64)>) -> (Vec<(String, Vec<u8>)>, StepTimings, Vec<(&'static str, f64)>) {
        extra.push(("output", self.seconds));
        (self.files, timings, extra)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn boundary_dump<W: Write>(out: &mut W, state: &HomogeneousState, beams: &[BeamSolution]) -> std::io::Result<()> {
    writeln!(out, "{BOUNDARY_CSV_HEADER}")?;
    for (m, order) in state.orders.iter().enumerate() {
        let residual = beams
            .iter()
            .flat_map(|b| b.orders[m].iter())
            .fold(0.0f64, |a, s| a.max(s.residual));
        write_boundary_row(out, m, order.boundary.condition, residual)?;
    }
    Ok(())
}

fn dumps(job: &Job<'_>, state: &HomogeneousState, beams: &[BeamSolution], em: &mut Emitter) {
    if job.config.dump_eigen {
        em.emit("eigen.csv", |out| state.write_eigen_csv(out));
    }
    if job.config.dump_boundary {
        em.emit("boundary.csv", |out| boundary_dump(out, state, beams));
    }
}

fn run_radiance(job: &Job<'_>, exec: &Executor) -> Result<Outputs> {
    let c = job.config;
    let mut t = StepTimings::default();
    let state = solve_vrte(&job.spec, c.quadrature, c.orders, exec, &mut t)?;
    let total = state.spec.total_tau();
    if let Some(bad) = job.taus.iter().find(|&&x| x > total) {
        return Err(ValidationError::new("tau-levels", format!("depth {bad} outside [0, {total}]")).into());
    }
    let request = RadianceRequest::grid(job.taus.clone(), c.out_zenith, c.out_azimuth);
    let mut em = Emitter::default();
    let mut beams = Vec::new();
    for (k, &(mu0, phi0)) in job.incidences.iter().enumerate() {
        let beam = solve_incidence(&state, mu0, phi0, &[job.spec.source.stokes], exec, &mut t)?.remove(0);
        let field = compute_radiance(&state, &beam, &request, exec, &mut t)?;
        let name = if job.incidences.len() == 1 { "radiance.csv".to_string() } else { format!("radiance_{k}.csv") };
        em.emit(name, |out| field.write_csv(out));
        beams.push(beam);
    }
    dumps(job, &state, &beams, &mut em);
    let (files, timings, extra) = em.finish(t, Vec::new());
    Ok(Outputs {
        files,
        timings,
        extra,
        eigen_residual: state.max_eigen_residual(),
        boundary_residual: beams.iter().fold(0.0, |a, b| a.max(b.max_boundary_residual())),
        agreement: None,
    })
}

fn run_brdf(job: &Job<'_>, exec: &Executor) -> Result<Outputs> {
    let c = job.config;
    let mut t = StepTimings::default();
    let state = solve_vrte(&job.spec, c.quadrature, c.orders, exec, &mut t)?;
    let request = BrdfRequest {
        mu_in: job.incidences.iter().map(|i| i.0).collect(),
        dphi: BrdfRequest::uniform_dphi(c.out_azimuth),
        basis: default_basis(),
    };
    let table = compute_brdf(&state, &request, exec, &mut t)?;
    let mut em = Emitter::default();
    em.emit("brdf.csv", |out| table.write_csv(out));
    em.emit("brdf.bin", |out| table.write_binary(out));
    let mut beams = Vec::new();
    if c.dump_boundary {
        let mut scratch = StepTimings::default();
        for &(mu0, _) in &job.incidences {
            beams.extend(solve_incidence(&state, mu0, 0.0, &request.basis, exec, &mut scratch)?);
        }
    }
    dumps(job, &state, &beams, &mut em);
    let (files, timings, extra) = em.finish(t, Vec::new());
    Ok(Outputs {
        files,
        timings,
        extra,
        eigen_residual: state.max_eigen_residual(),
        boundary_residual: beams.iter().fold(0.0, |a, b| a.max(b.max_boundary_residual())),
        agreement: None,
    })
}

/// Deterministic radiance averaged over every Monte Carlo bin, laid out like
/// the tally (top hemisphere exiting up, bottom exiting down).
pub fn dom_bin_averages(
    state: &HomogeneousState,
    beam: &BeamSolution,
    bins: TallyBins,
    exec: &Executor,
    timings: &mut StepTimings,
) -> Result<Vec<[f64; 4]>> {
    let sampling = BinSampling::new(bins, BIN_SAMPLING_ORDER);
    let n = sampling.mus.len();
    let mut mus = sampling.mus.clone();
    mus.extend(sampling.mus.iter().map(|m| -m));
    let request = RadianceRequest {
        taus: vec![0.0, state.spec.total_tau()],
        mus,
        phis: sampling.phis.clone(),
    };
    let field = compute_radiance(state, beam, &request, exec, timings)?;
    Ok(sampling.average(|h, u, p| if h == 0 { field.get(0, u, p) } else { field.get(1, n + u, p) }.to_array()))
}

fn write_binned<W: Write>(out: &mut W, bins: TallyBins, bottom_tau: f64, values: &[[f64; 4]]) -> std::io::Result<()> {
    writeln!(out, "{}", vrte_core::reconstruction::RADIANCE_CSV_HEADER)?;
    for h in 0..2 {
        let (tau, sign) = if h == 0 { (0.0, 1.0) } else { (bottom_tau, -1.0) };
        for i in 0..bins.mu {
            let (a, b) = bins.mu_edges(i);
            for j in 0..bins.phi {
                let (p, q) = bins.phi_edges(j);
                let v = values[bins.index(h, i, j)];
                writeln!(
                    out,
                    "{tau:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    sign * 0.5 * (a + b),
                    0.5 * (p + q),
                    v[0],
                    v[1],
                    v[2],
                    v[3]
                )?;
            }
        }
    }
    Ok(())
}

fn run_mc(job: &Job<'_>, exec: &Executor) -> Result<Outputs> {
    let c = job.config;
    let mut spec = job.spec.clone();
    if let [(mu0, phi0)] = job.incidences[..] {
        spec.source.mu0 = mu0;
        spec.source.phi0 = phi0;
    } else {
        return Err(ValidationError::new("incident", "mc-validate takes a single incident direction").into());
    }
    let mut t = StepTimings::default();
    let state = solve_vrte(&spec, c.quadrature, c.orders, exec, &mut t)?;
    let beam = solve_incidence(&state, spec.source.mu0, spec.source.phi0, &[spec.source.stokes], exec, &mut t)?.remove(0);
    let bins = TallyBins::new(c.out_zenith, c.out_azimuth);
    let reference = dom_bin_averages(&state, &beam, bins, exec, &mut t)?;
    let start = Instant::now();
    let grid = mc_trace(&spec, c.photons, c.seed, bins, exec);
    let mc_seconds = start.elapsed().as_secs_f64();
    let a = agreement(&grid, &reference, &[0, 1], AGREEMENT_SIGMA, 1e-12);
    info!(
        "{} of {} bins within {AGREEMENT_SIGMA} sigma ({:.1}%), worst {:.2} sigma",
        a.within,
        a.bins,
        100.0 * a.fraction(),
        a.worst_sigma
    );
    let mut em = Emitter::default();
    em.emit("mc.csv", |out| grid.write_csv(out));
    em.emit("dom_binned.csv", |out| write_binned(out, bins, grid.bottom_tau, &reference));
    dumps(job, &state, std::slice::from_ref(&beam), &mut em);
    let (files, timings, extra) = em.finish(t, vec![("monte_carlo", mc_seconds)]);
    Ok(Outputs {
        files,
        timings,
        extra,
        eigen_residual: state.max_eigen_residual(),
        boundary_residual: beam.max_boundary_residual(),
        agreement: Some(a),
    })
}

fn execute(job: &Job<'_>, threads: usize) -> Result<(Outputs, f64)> {
    let exec = Executor::new(threads)?;
    let start = Instant::now();
    let out = match job.config.mode {
        Mode::Radiance => run_radiance(job, &exec),
        Mode::Brdf => run_brdf(job, &exec),
        Mode::McValidate => run_mc(job, &exec),
    }?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// Runs one configuration and writes its outputs into `config.out`.
///
/// Nothing is written unless the whole run succeeds.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let spec = load_material(&config.material)?;
    let incidences = config
        .incidences()?
        .unwrap_or_else(|| vec![(spec.source.mu0, spec.source.phi0)]);
    let job = Job {
        config,
        spec,
        incidences,
        taus: config.taus()?,
    };
    let threads = config.thread_count();
    let (out, total) = execute(&job, threads)?;
    let mut report = TimingReport::from_steps(&out.timings, &out.extra, total, threads);
    if config.compare_serial {
        let (serial, _) = execute(&job, 1)?;
        let s = TimingReport::from_steps(&serial.timings, &serial.extra, 0.0, 1);
        report.serial = Some(s.steps.iter().map(|x| x.1).collect());
    }

    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    let mut files = Vec::new();
    for (name, bytes) in &out.files {
        let path = config.out.join(name);
        write_file(&path, bytes)?;
        files.push(path);
    }
    let path = config.out.join("timing.csv");
    write_file(&path, &csv_bytes(|o| report.write_csv(o)))?;
    files.push(path);
    Ok(RunSummary {
        files,
        timings: report,
        max_eigen_residual: out.eigen_residual,
        max_boundary_residual: out.boundary_residual,
        agreement: out.agreement,
    })
}

/// Human-readable timing table.
pub fn report_timings<W: Write>(report: &TimingReport, out: &mut W) -> std::io::Result<()> {
    report.write_human(out)
}
