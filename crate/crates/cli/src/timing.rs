//! Per-step timing report.

use std::io::{self, Write};

use vrte_core::StepTimings;

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    /// `(step, seconds)` in execution order.
    pub steps: Vec<(String, f64)>,
    /// Wall time of the whole run.
    pub total: f64,
    pub threads: usize,
    /// Seconds per step of the single-thread rerun.
    pub serial: Option<Vec<f64>>,
}

impl TimingReport {
    pub fn from_steps(timings: &StepTimings, extra: &[(&str, f64)], total: f64, threads: usize) -> Self {
        let mut steps: Vec<(String, f64)> = timings.steps().iter().map(|(n, s)| (n.to_string(), *s)).collect();
        steps.extend(extra.iter().map(|(n, s)| (n.to_string(), *s)));
        Self {
            steps,
            total,
            threads,
            serial: None,
        }
    }

    pub fn fractions(&self) -> Vec<f64> {
        self.steps
            .iter()
            .map(|(_, s)| if self.total > 0.0 { s / self.total } else { 0.0 })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "step,seconds,fraction,serial_seconds,speedup")?;
        let fr = self.fractions();
        for (k, (name, s)) in self.steps.iter().enumerate() {
            match &self.serial {
                Some(ser) => writeln!(out, "{name},{s:.6},{:.6},{:.6},{:.3}", fr[k], ser[k], ser[k] / s.max(1e-12))?,
                None => writeln!(out, "{name},{s:.6},{:.6},,", fr[k])?,
            }
        }
        writeln!(out, "total,{:.6},1.000000,,", self.total)
    }

    pub fn write_human<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "timing ({} thread{})", self.threads, if self.threads == 1 { "" } else { "s" })?;
        let fr = self.fractions();
        for (k, (name, s)) in self.steps.iter().enumerate() {
            write!(out, "  {name:<16} {s:>10.4} s  {:>6.1}%", 100.0 * fr[k])?;
            if let Some(ser) = &self.serial {
                write!(out, "  serial {:>10.4} s  speedup {:>5.2}x", ser[k], ser[k] / s.max(1e-12))?;
            }
            writeln!(out)?;
        }
        writeln!(out, "  {:<16} {:>10.4} s", "total", self.total)
    }
}
