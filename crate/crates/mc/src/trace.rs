//! Photon transport through the layer stack.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use vrte_core::phase::direct::scattering_matrix;
use vrte_core::{build_double_gauss_quadrature, BaseReflector, Direction, Executor, MaterialSpec, MuellerMatrix};

use crate::sampler::CosineSampler;
use crate::tally::{TallyBins, TallyGrid};

pub const ROULETTE_THRESHOLD: f64 = 1e-4;
pub const ROULETTE_FACTOR: f64 = 10.0;
/// Photons per independently seeded batch. Fixed so tallies do not depend on
/// the worker count.
pub const BATCH_SIZE: u64 = 1 << 15;

/// State of one photon: depth, unit propagation vector (`z` up), Stokes
/// weight in the meridian frame of that vector, and the azimuth `(cos, sin)`
/// that fixes the frame when the packet travels along the vertical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonPacket {
    pub tau: f64,
    pub dir: [f64; 3],
    pub azimuth: [f64; 2],
    pub stokes: [f64; 4],
    pub scattered: bool,
}

impl PhotonPacket {
    pub fn new(dir: &Direction, stokes: [f64; 4]) -> Self {
        let (s, c) = dir.phi.sin_cos();
        Self {
            tau: 0.0,
            dir: dir.to_vector(),
            azimuth: [c, s],
            stokes,
            scattered: false,
        }
    }

    pub fn mu(&self) -> f64 {
        self.dir[2]
    }

    pub fn phi(&self) -> f64 {
        let [x, y, _] = self.dir;
        if x == 0.0 && y == 0.0 {
            self.azimuth[1].atan2(self.azimuth[0])
        } else {
            y.atan2(x)
        }
    }

    fn set_direction(&mut self, v: [f64; 3]) {
        let st = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if st > 0.0 {
            self.azimuth = [v[0] / st, v[1] / st];
        }
        self.dir = v;
    }

    /// Meridian frame `(e_par, e_perp)` of the current direction.
    pub fn frame(&self) -> ([f64; 3], [f64; 3]) {
        let [cp, sp] = self.azimuth;
        let mu = self.dir[2];
        let st = (self.dir[0] * self.dir[0] + self.dir[1] * self.dir[1]).sqrt();
        ([mu * cp, mu * sp, -st], [-sp, cp, 0.0])
    }
}

struct Medium<'a> {
    tops: Vec<f64>,
    bottom: f64,
    layers: Vec<(f64, &'a [MuellerMatrix], CosineSampler)>,
    base: Base<'a>,
}

enum Base<'a> {
    Black,
    Lambertian(f64),
    Table(&'a vrte_core::material::MuellerTable, Vec<f64>),
}

impl<'a> Medium<'a> {
    fn new(spec: &'a MaterialSpec) -> Self {
        let base = match &spec.base {
            BaseReflector::Black => Base::Black,
            BaseReflector::Lambertian { albedo } if *albedo == 0.0 => Base::Black,
            BaseReflector::Lambertian { albedo } => Base::Lambertian(*albedo),
            BaseReflector::MuellerTable(t) => {
                let nodes = build_double_gauss_quadrature(t.n).expect("table size validated").nodes;
                Base::Table(t, nodes)
            }
        };
        Self {
            tops: spec.layer_tops(),
            bottom: spec.total_tau(),
            layers: spec
                .layers
                .iter()
                .map(|l| (l.omega, l.coeffs.as_slice(), CosineSampler::new(&l.coeffs)))
                .collect(),
            base,
        }
    }

    fn layer_at(&self, tau: f64) -> usize {
        self.tops.partition_point(|&t| t <= tau).saturating_sub(1)
    }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>()
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Frame rotation given `(cos 2ψ, sin 2ψ)`:
/// `Q' = cos2ψ Q + sin2ψ U`, `U' = -sin2ψ Q + cos2ψ U`.
fn rotate(s: [f64; 4], c2: f64, s2: f64) -> [f64; 4] {
    [s[0], c2 * s[1] + s2 * s[2], -s2 * s[1] + c2 * s[2], s[3]]
}

/// Scatters a packet through `cos_theta`, turning the scattering plane by
/// `psi` (given as `(sin, cos)`) from the meridian plane. The Stokes vector is rotated into the
/// scattering plane, multiplied by `F`, and rotated into the meridian frame
/// of the new direction.
fn scatter(p: &mut PhotonPacket, f: &MuellerMatrix, cos_theta: f64, (sp, cp): (f64, f64)) {
    let n = p.dir;
    let (a, b) = p.frame();
    let st = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let e = [0, 1, 2].map(|k| cp * a[k] + sp * b[k]);
    let mut v = [0, 1, 2].map(|k| cos_theta * n[k] + st * e[k]);
    let norm = dot(&v, &v).sqrt();
    v = v.map(|x| x / norm);
    let s = f.apply_array(&rotate(p.stokes, cp * cp - sp * sp, 2.0 * sp * cp));
    p.set_direction(v);
    let k = cross(&n, &e);
    let a_sc = cross(&k, &v);
    let (a_out, _) = p.frame();
    let (c, sn) = (dot(&a_out, &a_sc), dot(&a_out, &k));
    let r = (c * c + sn * sn).sqrt();
    let (c, sn) = (c / r, sn / r);
    p.stokes = rotate(s, c * c - sn * sn, 2.0 * sn * c);
}

/// Draws the turn `psi` of the scattering plane from the density
/// `(1 + r (Q cos2ψ + U sin2ψ) / I) / 2π` by rejection; returns
/// `(sin ψ, cos ψ)` and the density relative to uniform. Falls back to
/// uniform when that density could go negative (unphysical input).
fn sample_azimuth(r: f64, s: &[f64; 4], rng: &mut ChaCha8Rng) -> ((f64, f64), f64) {
    let (a, b) = (r * s[1] / s[0], r * s[2] / s[0]);
    let amp = (a * a + b * b).sqrt();
    loop {
        let sc = (TAU * uniform(rng)).sin_cos();
        if amp == 0.0 || !(amp <= 1.0) {
            return (sc, 1.0);
        }
        let (sp, cp) = sc;
        let g = 1.0 + a * (cp * cp - sp * sp) + b * (2.0 * sp * cp);
        if uniform(rng) * (1.0 + amp) < g {
            return (sc, g);
        }
    }
}

fn roulette(p: &mut PhotonPacket, rng: &mut ChaCha8Rng) -> bool {
    if p.stokes[0] >= ROULETTE_THRESHOLD {
        return true;
    }
    if uniform(rng) < 1.0 / ROULETTE_FACTOR {
        p.stokes = p.stokes.map(|s| s * ROULETTE_FACTOR);
        true
    } else {
        false
    }
}

/// Reflects a packet at the base; returns false if it is absorbed.
fn reflect(medium: &Medium, p: &mut PhotonPacket, rng: &mut ChaCha8Rng) -> bool {
    let mu_in = -p.mu();
    // cosine-weighted exit direction; `1 - xi` keeps mu off zero
    let mu = (1.0 - uniform(rng)).sqrt();
    let (sp, cp) = (TAU * uniform(rng)).sin_cos();
    p.stokes = match &medium.base {
        Base::Black => return false,
        Base::Lambertian(rho) => [rho * p.stokes[0], 0.0, 0.0, 0.0],
        Base::Table(t, nodes) => t.interpolate(nodes, mu, mu_in).scale(0.5).apply_array(&p.stokes),
    };
    let st = (1.0 - mu * mu).max(0.0).sqrt();
    p.azimuth = [cp, sp];
    p.set_direction([st * cp, st * sp, mu]);
    p.tau = medium.bottom;
    p.scattered = true;
    p.stokes[0] > 0.0
}

fn tally(p: &PhotonPacket, bins: &TallyBins, hits: &mut Vec<(usize, [f64; 4])>) {
    if p.scattered {
        hits.push((bins.locate(p.mu(), p.phi()), p.stokes));
    }
}

fn trace_photon(medium: &Medium, p: &mut PhotonPacket, rng: &mut ChaCha8Rng, bins: &TallyBins, hits: &mut Vec<(usize, [f64; 4])>) {
    loop {
        let step = -(1.0 - uniform(rng)).ln();
        let tau = p.tau - p.mu() * step;
        if tau <= 0.0 {
            tally(p, bins, hits);
            return;
        }
        if tau >= medium.bottom {
            tally(p, bins, hits);
            if !reflect(medium, p, rng) || !roulette(p, rng) {
                return;
            }
            continue;
        }
        p.tau = tau;
        let (omega, coeffs, sampler) = &medium.layers[medium.layer_at(tau)];
        let (cos_theta, pdf) = sampler.sample(uniform(rng));
        let f = scattering_matrix(coeffs, cos_theta);
        let (psi, density) = sample_azimuth(f[(0, 1)] / f[(0, 0)], &p.stokes, rng);
        scatter(p, &f, cos_theta, psi);
        let w = omega / (2.0 * pdf * density);
        p.stokes = p.stokes.map(|x| x * w);
        p.scattered = true;
        if !(p.stokes[0] > 0.0) || !roulette(p, rng) {
            return;
        }
    }
}

fn run_batch(medium: &Medium, spec: &MaterialSpec, count: u64, seed: u64, batch: u64, bins: TallyBins) -> TallyGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    let src = &spec.source;
    let beam = Direction::new(-src.mu0, src.phi0).expect("validated source");
    let i0 = src.stokes.to_array();
    let start = i0.map(|s| s / i0[0]);
    let mut grid = TallyGrid::new(bins, src.mu0 * i0[0], medium.bottom);
    let mut hits = Vec::new();
    for _ in 0..count {
        let mut p = PhotonPacket::new(&beam, start);
        trace_photon(medium, &mut p, &mut rng, &bins, &mut hits);
        grid.record(&mut hits);
    }
    grid
}

/// Traces `photons` packets of the material's beam and tallies the diffuse
/// radiance leaving the top (upward) and reaching the bottom (downward).
///
/// Batches are seeded from `(seed, batch index)` and merged in index order,
/// so results are bit-identical for any worker count.
pub fn mc_trace(spec: &MaterialSpec, photons: u64, seed: u64, bins: TallyBins, exec: &Executor) -> TallyGrid {
    let medium = Medium::new(spec);
    let batches = photons.div_ceil(BATCH_SIZE);
    let parts: Vec<TallyGrid> = exec.install(|| {
        (0..batches)
            .into_par_iter()
            .map(|b| {
                let count = BATCH_SIZE.min(photons - b * BATCH_SIZE);
                run_batch(&medium, spec, count, seed, b, bins)
            })
            .collect()
    });
    let src = &spec.source;
    let mut total = TallyGrid::new(bins, src.mu0 * src.stokes.i, medium.bottom);
    for part in &parts {
        total.merge(part);
    }
    total
}
