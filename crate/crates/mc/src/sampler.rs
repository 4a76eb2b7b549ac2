//! Tabulated inverse-CDF sampling of the scattering-angle cosine.

use vrte_core::phase::direct::scattering_matrix;
use vrte_core::MuellerMatrix;

pub const TABLE_CELLS: usize = 2048;

/// Piecewise-constant density over `cos Θ ∈ [-1, 1]` proportional to the
/// cell-averaged `a1`. The density actually sampled is reported back so the
/// caller can weight by it exactly.
#[derive(Debug, Clone)]
pub struct CosineSampler {
    cdf: Vec<f64>,
    mass: Vec<f64>,
}

impl CosineSampler {
    pub fn new(coeffs: &[MuellerMatrix]) -> Self {
        let h = 2.0 / TABLE_CELLS as f64;
        let a1 = |x: f64| scattering_matrix(coeffs, x)[(0, 0)];
        // Simpson per cell; negative lobes of truncated expansions are floored
        let floor = 1e-12;
        let mass: Vec<f64> = (0..TABLE_CELLS)
            .map(|j| {
                let x0 = -1.0 + j as f64 * h;
                let m = h / 6.0 * (a1(x0) + 4.0 * a1(x0 + 0.5 * h) + a1(x0 + h));
                m.max(floor * h)
            })
            .collect();
        let mut cdf = Vec::with_capacity(TABLE_CELLS + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for m in &mass {
            acc += m;
            cdf.push(acc);
        }
        Self { cdf, mass }
    }

    fn total(&self) -> f64 {
        self.cdf[TABLE_CELLS]
    }

    /// Maps `xi ∈ [0, 1)` to `(cos Θ, pdf)`.
    pub fn sample(&self, xi: f64) -> (f64, f64) {
        let target = xi * self.total();
        let j = (self.cdf.partition_point(|&c| c <= target) - 1).min(TABLE_CELLS - 1);
        let h = 2.0 / TABLE_CELLS as f64;
        let frac = ((target - self.cdf[j]) / self.mass[j]).clamp(0.0, 1.0);
        let x = (-1.0 + (j as f64 + frac) * h).clamp(-1.0, 1.0);
        (x, self.mass[j] / (self.total() * h))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let h = 2.0 / TABLE_CELLS as f64;
        let j = (((x + 1.0) / h) as usize).min(TABLE_CELLS - 1);
        self.mass[j] / (self.total() * h)
    }
}
