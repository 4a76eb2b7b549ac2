//! Comparison of a deterministic radiance field against the tallies.

use vrte_core::quadrature::gauss_legendre;

use crate::tally::{TallyBins, TallyGrid};

/// Gauss points inside every bin, for averaging a smooth field the same way
/// the tally does (`∫ I μ dΩ / ∫ μ dΩ`).
#[derive(Debug, Clone)]
pub struct BinSampling {
    pub bins: TallyBins,
    pub order: usize,
    /// Increasing `|μ|` nodes, `order` per bin.
    pub mus: Vec<f64>,
    /// Azimuth nodes, `order` per bin.
    pub phis: Vec<f64>,
    mu_weights: Vec<f64>,
    phi_weights: Vec<f64>,
}

impl BinSampling {
    pub fn new(bins: TallyBins, order: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let mut mus = Vec::new();
        let mut mu_weights = Vec::new();
        for i in 0..bins.mu {
            let (a, b) = bins.mu_edges(i);
            for (xk, wk) in x.iter().zip(&w) {
                let mu = 0.5 * (a + b) + 0.5 * (b - a) * xk;
                mus.push(mu);
                mu_weights.push(0.5 * (b - a) * wk * mu);
            }
        }
        let mut phis = Vec::new();
        let mut phi_weights = Vec::new();
        for j in 0..bins.phi {
            let (a, b) = bins.phi_edges(j);
            for (xk, wk) in x.iter().zip(&w) {
                phis.push(0.5 * (a + b) + 0.5 * (b - a) * xk);
                phi_weights.push(0.5 * (b - a) * wk);
            }
        }
        Self {
            bins,
            order,
            mus,
            phis,
            mu_weights,
            phi_weights,
        }
    }

    /// Bin averages of `field(hemisphere, mu_node, phi_node)`, laid out like
    /// the tally bins.
    pub fn average(&self, field: impl Fn(usize, usize, usize) -> [f64; 4]) -> Vec<[f64; 4]> {
        let mut out = vec![[0.0; 4]; self.bins.len()];
        for h in 0..2 {
            for i in 0..self.bins.mu {
                for j in 0..self.bins.phi {
                    let mut acc = [0.0; 4];
                    let mut norm = 0.0;
                    for u in i * self.order..(i + 1) * self.order {
                        for p in j * self.order..(j + 1) * self.order {
                            let w = self.mu_weights[u] * self.phi_weights[p];
                            let v = field(h, u, p);
                            for c in 0..4 {
                                acc[c] += w * v[c];
                            }
                            norm += w;
                        }
                    }
                    out[self.bins.index(h, i, j)] = acc.map(|a| a / norm);
                }
            }
        }
        out
    }
}

/// Outcome of a bin-by-bin comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub bins: usize,
    pub within: usize,
    /// Largest `|reference - tally| / σ` over bins and Stokes components.
    pub worst_sigma: f64,
}

impl Agreement {
    pub fn fraction(&self) -> f64 {
        self.within as f64 / self.bins as f64
    }
}

/// Counts bins where every Stokes component of `reference` lies within
/// `k` standard errors of the tally. Components with zero error must agree
/// to `zero_tol` absolute. Only the hemispheres listed are compared.
pub fn agreement(grid: &TallyGrid, reference: &[[f64; 4]], hemispheres: &[usize], k: f64, zero_tol: f64) -> Agreement {
    let b = grid.bins;
    let mut out = Agreement {
        bins: 0,
        within: 0,
        worst_sigma: 0.0,
    };
    for &h in hemispheres {
        for i in 0..b.mu {
            for j in 0..b.phi {
                let (v, e) = grid.radiance(h, i, j);
                let r = reference[b.index(h, i, j)];
                let mut ok = true;
                for c in 0..4 {
                    let d = (r[c] - v[c]).abs();
                    if e[c] > 0.0 {
                        out.worst_sigma = out.worst_sigma.max(d / e[c]);
                        ok &= d <= k * e[c];
                    } else {
                        ok &= d <= zero_tol;
                    }
                }
                out.bins += 1;
                out.within += usize::from(ok);
            }
        }
    }
    out
}
