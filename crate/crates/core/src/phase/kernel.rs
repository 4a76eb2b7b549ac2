//! Per-order kernels `A^m(μ, μ′) = Σ_{l≥m} Π_l^m(μ) B_l Π_l^m(μ′)`.

use std::io::Write;

use rayon::prelude::*;

use super::legendre::{gsf_row, GsfRow, LegendreMatrixTable};
use crate::quadrature::Quadrature;
use crate::stokes::MuellerMatrix;

/// `Σ_{l≥m} Π_l^m(μ) B_l Π_l^m(±μ′)` from precomputed rows.
pub fn kernel_from_rows(m: usize, coeffs: &[MuellerMatrix], a: &GsfRow, b: &GsfRow, reflect_b: bool) -> MuellerMatrix {
    let mut acc = MuellerMatrix::ZERO;
    for (l, bl) in coeffs.iter().enumerate().skip(m) {
        let right = if reflect_b {
            let r = b.matrix(l).parity_conjugate();
            if (l - m) % 2 == 1 {
                r.scale(-1.0)
            } else {
                r
            }
        } else {
            b.matrix(l)
        };
        acc += a.matrix(l) * *bl * right;
    }
    acc
}

/// `A^m(μ, μ′)` for arbitrary signed cosines.
pub fn kernel_entry(m: usize, coeffs: &[MuellerMatrix], mu: f64, mu_prime: f64) -> MuellerMatrix {
    let len = coeffs.len();
    kernel_from_rows(m, coeffs, &gsf_row(m, len, mu), &gsf_row(m, len, mu_prime), false)
}

/// Kernel blocks `A^m(±μ_i, ±μ_j)` over the quadrature nodes.
///
/// Only the `(+,+)` and `(+,-)` blocks are stored; the others follow from
/// `A(-μ,-μ′) = D A(μ,μ′) D` and `A(-μ,μ′) = D A(μ,-μ′) D`.
#[derive(Debug, Clone)]
pub struct AzimuthKernel {
    pub m: usize,
    pub n: usize,
    pub pp: Vec<MuellerMatrix>,
    pub pm: Vec<MuellerMatrix>,
}

impl AzimuthKernel {
    /// `A^m(s_i μ_i, s_j μ_j)`, signs as `±1`.
    pub fn block(&self, i: usize, sign_i: i8, j: usize, sign_j: i8) -> MuellerMatrix {
        let idx = i * self.n + j;
        match (sign_i > 0, sign_j > 0) {
            (true, true) => self.pp[idx],
            (true, false) => self.pm[idx],
            (false, false) => self.pp[idx].parity_conjugate(),
            (false, true) => self.pm[idx].parity_conjugate(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.pp.iter().chain(&self.pm).all(|b| b.max_abs() == 0.0)
    }

    /// CSV rows `m,i,j,sign_i,sign_j,a00..a33` for all four signed blocks.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for i in 0..self.n {
            for j in 0..self.n {
                for (si, sj) in [(1i8, 1i8), (1, -1), (-1, 1), (-1, -1)] {
                    let b = self.block(i, si, j, sj);
                    write!(out, "{},{i},{j},{si},{sj}", self.m)?;
                    for v in b.to_row_major() {
                        write!(out, ",{v:.17e}")?;
                    }
                    writeln!(out)?;
                }
            }
        }
        Ok(())
    }
}

pub const KERNEL_CSV_HEADER: &str = "m,i,j,sign_i,sign_j,a00,a01,a02,a03,a10,a11,a12,a13,a20,a21,a22,a23,a30,a31,a32,a33";

pub fn assemble_azimuth_kernel(m: usize, coeffs: &[MuellerMatrix], quad: &Quadrature) -> AzimuthKernel {
    let n = quad.len();
    let table = LegendreMatrixTable::build(m, coeffs.len(), &quad.nodes);
    let rows: Vec<(Vec<MuellerMatrix>, Vec<MuellerMatrix>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut pp = Vec::with_capacity(n);
            let mut pm = Vec::with_capacity(n);
            for j in 0..n {
                let mut a = MuellerMatrix::ZERO;
                let mut b = MuellerMatrix::ZERO;
                for (l, bl) in coeffs.iter().enumerate().skip(m) {
                    let left = *table.get(i, l) * *bl;
                    a += left * *table.get(j, l);
                    b += left * table.get_reflected(j, l);
                }
                pp.push(a);
                pm.push(b);
            }
            (pp, pm)
        })
        .collect();
    let (mut pp, mut pm) = (Vec::with_capacity(n * n), Vec::with_capacity(n * n));
    for (a, b) in rows {
        pp.extend(a);
        pm.extend(b);
    }
    AzimuthKernel { m, n, pp, pm }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::presets;
    use crate::phase::gsf::oracle::wigner_d;
    use crate::quadrature::build_double_gauss_quadrature;

    fn mats(c: &[crate::material::GreekCoefficients]) -> Vec<MuellerMatrix> {
        c.iter().map(|g| g.to_matrix()).collect()
    }

    /// Π from the explicit Wigner sum.
    fn pi_oracle(l: usize, m: usize, mu: f64) -> MuellerMatrix {
        let (li, mi) = (l as i64, m as i64);
        let s = if m % 2 == 0 { 1.0 } else { -1.0 };
        let p = s * wigner_d(li, mi, 0, mu);
        let dp = wigner_d(li, mi, 2, mu);
        let dm = wigner_d(li, mi, -2, mu);
        crate::phase::legendre::pi_matrix(p, -0.5 * s * (dp + dm), -0.5 * s * (dp - dm))
    }

    #[test]
    fn isotropic_kernel() {
        let q = build_double_gauss_quadrature(5).unwrap();
        let b = mats(&presets::isotropic());
        let k0 = assemble_azimuth_kernel(0, &b, &q);
        let e = MuellerMatrix::diag([1.0, 0.0, 0.0, 0.0]);
        for i in 0..5 {
            for j in 0..5 {
                for (si, sj) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                    assert!(k0.block(i, si, j, sj).max_abs_diff(&e) < 1e-15);
                }
            }
        }
        let b3 = vec![b[0], MuellerMatrix::ZERO, MuellerMatrix::ZERO];
        assert!(assemble_azimuth_kernel(1, &b3, &q).is_zero());
    }

    #[test]
    fn brute_force_double_sum() {
        let q = build_double_gauss_quadrature(6).unwrap();
        let b = mats(&presets::rayleigh());
        for m in 0..3 {
            let k = assemble_azimuth_kernel(m, &b, &q);
            for i in 0..6 {
                for j in 0..6 {
                    for (si, sj) in [(1i8, 1i8), (1, -1), (-1, 1), (-1, -1)] {
                        let (mu, mup) = (si as f64 * q.nodes[i], sj as f64 * q.nodes[j]);
                        let mut o = MuellerMatrix::ZERO;
                        for (l, bl) in b.iter().enumerate().skip(m) {
                            o += pi_oracle(l, m, mu) * *bl * pi_oracle(l, m, mup);
                        }
                        assert!(k.block(i, si, j, sj).max_abs_diff(&o) < 1e-12);
                        assert!(kernel_entry(m, &b, mu, mup).max_abs_diff(&o) < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn parity_symmetry() {
        for n in [1usize, 4, 16] {
            let q = build_double_gauss_quadrature(n).unwrap();
            let b = mats(&presets::rayleigh_hg_mixture(0.5, 0.7, 10));
            for m in 0..10 {
                let k = assemble_azimuth_kernel(m, &b, &q);
                for i in 0..n {
                    for j in 0..n {
                        let mu = q.nodes[i];
                        let mup = q.nodes[j];
                        let direct = kernel_entry(m, &b, -mu, -mup);
                        assert!(k.block(i, -1, j, -1).max_abs_diff(&direct) < 1e-12);
                        let direct = kernel_entry(m, &b, -mu, mup);
                        assert!(k.block(i, -1, j, 1).max_abs_diff(&direct) < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn csv_dump_shape() {
        let q = build_double_gauss_quadrature(2).unwrap();
        let k = assemble_azimuth_kernel(0, &mats(&presets::rayleigh()), &q);
        let mut buf = Vec::new();
        k.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 16);
        assert!(text.lines().all(|l| l.split(',').count() == 21));
        assert_eq!(KERNEL_CSV_HEADER.split(',').count(), 21);
    }
}
