//! Exiting-radiance tallies with per-bin standard errors.

use std::f64::consts::TAU;
use std::io::{self, BufRead, Write};

/// Angular binning of each hemisphere: uniform in `|μ|` over `(0, 1]` and in
/// azimuth over `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TallyBins {
    pub mu: usize,
    pub phi: usize,
}

impl TallyBins {
    pub fn new(mu: usize, phi: usize) -> Self {
        assert!(mu > 0 && phi > 0, "bin counts must be positive");
        Self { mu, phi }
    }

    pub fn len(&self) -> usize {
        2 * self.mu * self.phi
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mu_edges(&self, i: usize) -> (f64, f64) {
        let w = 1.0 / self.mu as f64;
        (i as f64 * w, (i + 1) as f64 * w)
    }

    pub fn phi_edges(&self, j: usize) -> (f64, f64) {
        let w = TAU / self.phi as f64;
        (j as f64 * w, (j + 1) as f64 * w)
    }

    /// `∫ μ dΩ` over one bin.
    pub fn projected_solid_angle(&self, i: usize) -> f64 {
        let (a, b) = self.mu_edges(i);
        0.5 * (b * b - a * a) * TAU / self.phi as f64
    }

    /// Hemisphere 0 is upward at the top, 1 downward at the bottom.
    pub fn index(&self, hemisphere: usize, i: usize, j: usize) -> usize {
        (hemisphere * self.mu + i) * self.phi + j
    }

    pub fn locate(&self, mu: f64, phi: f64) -> usize {
        let h = usize::from(mu < 0.0);
        let i = ((mu.abs() * self.mu as f64) as usize).min(self.mu - 1);
        let j = ((phi.rem_euclid(TAU) / TAU * self.phi as f64) as usize).min(self.phi - 1);
        self.index(h, i, j)
    }
}

/// Sums and sums of squares of per-photon Stokes contributions, plus the
/// per-photon hemispheric totals used for flux checks.
#[derive(Debug, Clone, PartialEq)]
pub struct TallyGrid {
    pub bins: TallyBins,
    pub photons: u64,
    /// Horizontal incident flux carried by one photon of unit weight.
    pub flux_scale: f64,
    pub bottom_tau: f64,
    pub sum: Vec<[f64; 4]>,
    pub sum_sq: Vec<[f64; 4]>,
    pub flux_sum: [f64; 2],
    pub flux_sum_sq: [f64; 2],
}

impl TallyGrid {
    pub fn new(bins: TallyBins, flux_scale: f64, bottom_tau: f64) -> Self {
        Self {
            bins,
            photons: 0,
            flux_scale,
            bottom_tau,
            sum: vec![[0.0; 4]; bins.len()],
            sum_sq: vec![[0.0; 4]; bins.len()],
            flux_sum: [0.0; 2],
            flux_sum_sq: [0.0; 2],
        }
    }

    /// Adds one photon's history; `hits` may repeat bins.
    pub(crate) fn record(&mut self, hits: &mut Vec<(usize, [f64; 4])>) {
        self.photons += 1;
        if hits.is_empty() {
            return;
        }
        hits.sort_by_key(|h| h.0);
        let mut flux = [0.0; 2];
        let mut k = 0;
        while k < hits.len() {
            let bin = hits[k].0;
            let mut acc = [0.0; 4];
            while k < hits.len() && hits[k].0 == bin {
                for c in 0..4 {
                    acc[c] += hits[k].1[c];
                }
                k += 1;
            }
            for c in 0..4 {
                self.sum[bin][c] += acc[c];
                self.sum_sq[bin][c] += acc[c] * acc[c];
            }
            flux[usize::from(bin >= self.bins.len() / 2)] += acc[0];
        }
        for h in 0..2 {
            self.flux_sum[h] += flux[h];
            self.flux_sum_sq[h] += flux[h] * flux[h];
        }
        hits.clear();
    }

    pub fn merge(&mut self, other: &TallyGrid) {
        assert_eq!(self.bins, other.bins);
        self.photons += other.photons;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            for c in 0..4 {
                a[c] += b[c];
            }
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            for c in 0..4 {
                a[c] += b[c];
            }
        }
        for h in 0..2 {
            self.flux_sum[h] += other.flux_sum[h];
            self.flux_sum_sq[h] += other.flux_sum_sq[h];
        }
    }

    fn mean_and_error(&self, s: f64, s2: f64) -> (f64, f64) {
        let n = self.photons as f64;
        if self.photons < 2 {
            return (s / n.max(1.0), 0.0);
        }
        let mean = s / n;
        let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
        (mean, (var / n).sqrt())
    }

    /// Bin-averaged radiance `∫ I μ dΩ / ∫ μ dΩ` and its standard error.
    pub fn radiance(&self, hemisphere: usize, i: usize, j: usize) -> ([f64; 4], [f64; 4]) {
        let b = self.bins.index(hemisphere, i, j);
        let scale = self.flux_scale / self.bins.projected_solid_angle(i);
        let mut value = [0.0; 4];
        let mut err = [0.0; 4];
        for c in 0..4 {
            let (m, e) = self.mean_and_error(self.sum[b][c], self.sum_sq[b][c]);
            value[c] = m * scale;
            err[c] = e * scale;
        }
        (value, err)
    }

    /// Exiting flux through the top (0) or bottom (1) and its standard error.
    pub fn flux(&self, hemisphere: usize) -> (f64, f64) {
        let (m, e) = self.mean_and_error(self.flux_sum[hemisphere], self.flux_sum_sq[hemisphere]);
        (m * self.flux_scale, e * self.flux_scale)
    }

    /// Radiance rows at bin centers, with one standard-error column per
    /// Stokes component.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "{MC_CSV_HEADER}")?;
        for h in 0..2 {
            let (tau, sign) = if h == 0 { (0.0, 1.0) } else { (self.bottom_tau, -1.0) };
            for i in 0..self.bins.mu {
                let (a, b) = self.bins.mu_edges(i);
                for j in 0..self.bins.phi {
                    let (p, q) = self.bins.phi_edges(j);
                    let (v, e) = self.radiance(h, i, j);
                    writeln!(
                        out,
                        "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                        tau,
                        sign * 0.5 * (a + b),
                        0.5 * (p + q),
                        v[0],
                        v[1],
                        v[2],
                        v[3],
                        e[0],
                        e[1],
                        e[2],
                        e[3]
                    )?;
                }
            }
        }
        Ok(())
    }
}

pub const MC_CSV_HEADER: &str = "tau,mu,phi,I,Q,U,V,stderr_I,stderr_Q,stderr_U,stderr_V";

/// One parsed row of the Monte Carlo CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McRow {
    pub tau: f64,
    pub mu: f64,
    pub phi: f64,
    pub value: [f64; 4],
    pub stderr: [f64; 4],
}

pub fn read_csv<R: BufRead>(input: R) -> io::Result<Vec<McRow>> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != MC_CSV_HEADER {
        return Err(bad("missing Monte Carlo CSV header".into()));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("{e}: {line}")))?;
        if v.len() != 11 {
            return Err(bad(format!("expected 11 fields: {line}")));
        }
        rows.push(McRow {
            tau: v[0],
            mu: v[1],
            phi: v[2],
            value: [v[3], v[4], v[5], v[6]],
            stderr: [v[7], v[8], v[9], v[10]],
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_partition_the_sphere() {
        let b = TallyBins::new(5, 8);
        let total: f64 = (0..5).map(|i| b.projected_solid_angle(i) * 8.0).sum();
        assert!((total - std::f64::consts::PI).abs() < 1e-14);
        let mut seen = vec![false; b.len()];
        for h in [1.0, -1.0] {
            for i in 0..5 {
                for j in 0..8 {
                    let mu = h * (i as f64 + 0.5) / 5.0;
                    let phi = (j as f64 + 0.5) * TAU / 8.0;
                    seen[b.locate(mu, phi)] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(b.locate(1.0, TAU), b.index(0, 4, 0));
    }

    #[test]
    fn repeated_hits_count_once_per_photon() {
        let b = TallyBins::new(1, 1);
        let mut g = TallyGrid::new(b, 1.0, 1.0);
        g.record(&mut vec![(1, [1.0, 0.0, 0.0, 0.0]), (1, [2.0, 0.0, 0.0, 0.0])]);
        g.record(&mut Vec::new());
        assert_eq!(g.sum[1][0], 3.0);
        assert_eq!(g.sum_sq[1][0], 9.0);
        assert_eq!(g.flux_sum, [0.0, 3.0]);
        assert_eq!(g.photons, 2);
    }

    #[test]
    fn csv_round_trip() {
        let b = TallyBins::new(2, 3);
        let mut g = TallyGrid::new(b, 0.6, 2.0);
        g.record(&mut vec![(4, [0.3, 0.1, -0.2, 0.05]), (9, [0.7, 0.0, 0.0, 0.0])]);
        g.record(&mut vec![(4, [0.1, 0.0, 0.0, 0.0])]);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let rows = read_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), b.len());
        let (v, e) = g.radiance(0, 1, 1);
        assert_eq!(rows[4].value, v);
        assert_eq!(rows[4].stderr, e);
        assert!(rows[9].mu < 0.0 && rows[9].tau == 2.0);
    }
}
