//! Command-line configuration.

use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use vrte_core::ValidationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Radiance,
    Brdf,
    McValidate,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "vrte", version, about = "Discrete-ordinate polarized radiative transfer in particulate layers")]
pub struct RunConfig {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Material JSON document.
    #[arg(long)]
    pub material: PathBuf,
    /// Quadrature nodes per hemisphere.
    #[arg(long = "quadrature", default_value_t = 40)]
    pub quadrature: usize,
    /// Cap on the number of Fourier orders solved.
    #[arg(long)]
    pub orders: Option<usize>,
    /// Incident directions `mu0,phi0[;mu0,phi0...]`, azimuth in radians.
    /// Defaults to the material's beam.
    #[arg(long)]
    pub incident: Option<String>,
    /// Comma-separated optical depths for radiance output.
    #[arg(long = "tau-levels", default_value = "0")]
    pub tau_levels: String,
    /// Zenith angles per hemisphere (radiance), or `|mu|` bins (mc-validate).
    #[arg(long = "out-zenith", default_value_t = 11)]
    pub out_zenith: usize,
    /// Azimuths over `[0, π]` (radiance, brdf), or azimuth bins over
    /// `[0, 2π)` (mc-validate).
    #[arg(long = "out-azimuth", default_value_t = 19)]
    pub out_azimuth: usize,
    #[arg(long, env = "VRTE_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    pub photons: u64,
    /// Repeat the run on one thread and report per-step speedup.
    #[arg(long = "compare-serial")]
    pub compare_serial: bool,
    #[arg(long = "dump-eigen")]
    pub dump_eigen: bool,
    #[arg(long = "dump-boundary")]
    pub dump_boundary: bool,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn invalid(context: &str, message: impl Into<String>) -> ValidationError {
    ValidationError::new(context, message)
}

fn parse_list(context: &str, text: &str) -> Result<Vec<f64>, ValidationError> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| invalid(context, format!("{t:?}: {e}"))))
        .collect()
}

impl RunConfig {
    pub fn thread_count(&self) -> usize {
        self.threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn incidences(&self) -> Result<Option<Vec<(f64, f64)>>, ValidationError> {
        let Some(text) = &self.incident else {
            return Ok(None);
        };
        let mut out = Vec::new();
        for part in text.split(';').filter(|p| !p.trim().is_empty()) {
            let v = parse_list("incident", part)?;
            let (mu0, phi0) = match v.as_slice() {
                [mu0] => (*mu0, 0.0),
                [mu0, phi0] => (*mu0, *phi0),
                _ => return Err(invalid("incident", format!("expected mu0,phi0, got {part:?}"))),
            };
            if !(mu0 > 0.0 && mu0 <= 1.0) || !phi0.is_finite() {
                return Err(invalid("incident", format!("need 0 < mu0 <= 1 and finite phi0, got {part:?}")));
            }
            out.push((mu0, phi0));
        }
        if out.is_empty() {
            return Err(invalid("incident", "no directions given"));
        }
        Ok(Some(out))
    }

    pub fn taus(&self) -> Result<Vec<f64>, ValidationError> {
        let t = parse_list("tau-levels", &self.tau_levels)?;
        if t.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(invalid("tau-levels", "depths must be finite and non-negative"));
        }
        Ok(t)
    }

    /// Checks everything that does not need the material file.
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.quadrature == 0 {
            return Err(invalid("quadrature", "N must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "thread count must be at least 1"));
        }
        if self.orders == Some(0) {
            return Err(invalid("orders", "order cap must be at least 1"));
        }
        if self.out_zenith == 0 || self.out_azimuth == 0 {
            return Err(invalid("output grid", "zenith and azimuth counts must be positive"));
        }
        if self.mode == Mode::McValidate && self.photons == 0 {
            return Err(invalid("photons", "photon count must be at least 1"));
        }
        self.incidences()?;
        self.taus()?;
        Ok(())
    }
}
