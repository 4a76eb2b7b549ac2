//! Phase-matrix expansion: generalized spherical functions, per-order
//! kernels and the azimuthal Fourier basis.

pub mod direct;
pub mod fourier;
pub mod gsf;
pub mod kernel;
pub mod legendre;

pub use direct::{direct_phase_matrix, scattering_matrix};
pub use fourier::FourierBasis;
pub use kernel::{assemble_azimuth_kernel, kernel_entry, AzimuthKernel};
pub use legendre::{gsf_row, legendre_matrix, LegendreMatrixTable};

use crate::geometry::Direction;
use crate::material::LayerSpec;
use crate::stokes::MuellerMatrix;

/// `Σ_m Σ_k Φ_k^m(φ_out - φ_in) A^m(μ_out, μ_in) D_k`, mapping Stokes of
/// `d_in` to Stokes of `d_out`, each in its meridian frame.
pub fn evaluate_phase_matrix(d_in: &Direction, d_out: &Direction, layer: &LayerSpec) -> MuellerMatrix {
    let mut acc = MuellerMatrix::ZERO;
    let dphi = d_out.phi - d_in.phi;
    for m in 0..layer.coeffs.len() {
        let a = kernel_entry(m, &layer.coeffs, d_out.mu, d_in.mu);
        let basis = FourierBasis::new(m, dphi);
        for k in 1..=2 {
            acc += *basis.get(k) * a * fourier::selector(k);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{presets, GreekCoefficients};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_direction(rng: &mut ChaCha8Rng) -> Direction {
        let mut mu: f64 = rng.random_range(-1.0..1.0);
        if mu.abs() < 1e-3 {
            mu = 0.5;
        }
        Direction::new(mu, rng.random_range(0.0..std::f64::consts::TAU)).unwrap()
    }

    fn random_coeffs(rng: &mut ChaCha8Rng, len: usize) -> Vec<GreekCoefficients> {
        let mut c: Vec<GreekCoefficients> = (0..len)
            .map(|_| GreekCoefficients {
                beta: rng.random_range(-1.0..1.0),
                alpha: rng.random_range(-1.0..1.0),
                gamma: rng.random_range(-1.0..1.0),
                delta: rng.random_range(-1.0..1.0),
                epsilon: rng.random_range(-1.0..1.0),
                zeta: rng.random_range(-1.0..1.0),
            })
            .collect();
        c[0].beta = 1.0;
        c
    }

    #[test]
    fn isotropic_phase_matrix() {
        let layer = LayerSpec::new(1.0, 1.0, &presets::isotropic());
        let p = evaluate_phase_matrix(
            &Direction::new(0.3, 1.0).unwrap(),
            &Direction::new(-0.8, 4.0).unwrap(),
            &layer,
        );
        assert!(p.max_abs_diff(&MuellerMatrix::diag([1.0, 0.0, 0.0, 0.0])) < 1e-15);
    }

    #[test]
    fn fourier_series_matches_direct_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sets = [
            presets::rayleigh(),
            presets::rayleigh_hg_mixture(0.4, 0.6, 12),
            random_coeffs(&mut rng, 9),
        ];
        for c in &sets {
            let layer = LayerSpec::new(1.0, 1.0, c);
            for _ in 0..20 {
                let (di, dout) = (random_direction(&mut rng), random_direction(&mut rng));
                let f = evaluate_phase_matrix(&di, &dout, &layer);
                let d = direct_phase_matrix(&layer.coeffs, &di, &dout);
                let scale = d.max_abs().max(1e-300);
                assert!(
                    f.max_abs_diff(&d) / scale < 1e-8,
                    "in={di:?} out={dout:?}\nfourier={f:?}\ndirect={d:?}"
                );
            }
        }
    }
}
