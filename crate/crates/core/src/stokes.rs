//! Stokes vectors and 4×4 Mueller matrices.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use faer::c64;
use serde::{Deserialize, Serialize};

/// Polarized radiance `[I, Q, U, V]`.
///
/// `Q` is referenced to the local meridian plane of the propagation
/// direction (see [`crate::geometry::Direction::meridian_frame`]).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StokesVector {
    pub i: f64,
    pub q: f64,
    pub u: f64,
    pub v: f64,
}

impl StokesVector {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0, 0.0);
    pub const UNPOLARIZED: Self = Self::new(1.0, 0.0, 0.0, 0.0);

    pub const fn new(i: f64, q: f64, u: f64, v: f64) -> Self {
        Self { i, q, u, v }
    }

    pub const fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub const fn to_array(self) -> [f64; 4] {
        [self.i, self.q, self.u, self.v]
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.i * s, self.q * s, self.u * s, self.v * s)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Degree of polarization `sqrt(Q²+U²+V²)/I` (0 for `I = 0`).
    pub fn degree_of_polarization(&self) -> f64 {
        if self.i == 0.0 {
            return 0.0;
        }
        (self.q * self.q + self.u * self.u + self.v * self.v).sqrt() / self.i
    }

    /// `I ≥ 0` and `I² ≥ Q²+U²+V²`, both up to `rel_tol · I²`.
    pub fn is_physical(&self, rel_tol: f64) -> bool {
        let pol2 = self.q * self.q + self.u * self.u + self.v * self.v;
        let i2 = self.i * self.i;
        let slack = rel_tol * i2.max(pol2);
        self.i >= -slack.sqrt() && i2 + slack >= pol2
    }
}

impl Index<usize> for StokesVector {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        match k {
            0 => &self.i,
            1 => &self.q,
            2 => &self.u,
            3 => &self.v,
            _ => panic!("Stokes index {k} out of range"),
        }
    }
}

impl IndexMut<usize> for StokesVector {
    fn index_mut(&mut self, k: usize) -> &mut f64 {
        match k {
            0 => &mut self.i,
            1 => &mut self.q,
            2 => &mut self.u,
            3 => &mut self.v,
            _ => panic!("Stokes index {k} out of range"),
        }
    }
}

impl Add for StokesVector {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.i + o.i, self.q + o.q, self.u + o.u, self.v + o.v)
    }
}

impl AddAssign for StokesVector {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for StokesVector {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.i - o.i, self.q - o.q, self.u - o.u, self.v - o.v)
    }
}

/// Real 4×4 matrix acting on Stokes vectors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MuellerMatrix {
    pub m: [[f64; 4]; 4],
}

impl MuellerMatrix {
    pub const ZERO: Self = Self { m: [[0.0; 4]; 4] };
    pub const IDENTITY: Self = Self::diag([1.0, 1.0, 1.0, 1.0]);
    /// `diag(1, 1, -1, -1)`, the hemisphere parity operator.
    pub const PARITY: Self = Self::diag([1.0, 1.0, -1.0, -1.0]);
    /// Selector of the (I, Q) block.
    pub const SELECT_IQ: Self = Self::diag([1.0, 1.0, 0.0, 0.0]);
    /// Selector of the (U, V) block.
    pub const SELECT_UV: Self = Self::diag([0.0, 0.0, 1.0, 1.0]);

    pub const fn new(m: [[f64; 4]; 4]) -> Self {
        Self { m }
    }

    pub const fn diag(d: [f64; 4]) -> Self {
        Self {
            m: [
                [d[0], 0.0, 0.0, 0.0],
                [0.0, d[1], 0.0, 0.0],
                [0.0, 0.0, d[2], 0.0],
                [0.0, 0.0, 0.0, d[3]],
            ],
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::ZERO;
        for r in 0..4 {
            for c in 0..4 {
                t.m[c][r] = self.m[r][c];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        out.m.iter_mut().flatten().for_each(|x| *x *= s);
        out
    }

    /// `D · self · D` with `D = diag(1,1,-1,-1)`: negates the off-diagonal 2×2 blocks.
    pub fn parity_conjugate(&self) -> Self {
        let mut out = *self;
        for r in 0..4 {
            for c in 0..4 {
                if (r < 2) != (c < 2) {
                    out.m[r][c] = -out.m[r][c];
                }
            }
        }
        out
    }

    /// `self · D`: negates columns 2 and 3.
    pub fn right_parity(&self) -> Self {
        let mut out = *self;
        for row in out.m.iter_mut() {
            row[2] = -row[2];
            row[3] = -row[3];
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().flatten().fold(0.0, |a, x| a.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }

    /// Row-major flattening `m00, m01, …, m33`.
    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            out[4 * r..4 * r + 4].copy_from_slice(&self.m[r]);
        }
        out
    }

    pub fn from_row_major(v: &[f64]) -> Self {
        assert_eq!(v.len(), 16);
        let mut m = Self::ZERO;
        for r in 0..4 {
            m.m[r].copy_from_slice(&v[4 * r..4 * r + 4]);
        }
        m
    }

    /// Matrix–vector product with a complex 4-vector.
    pub fn apply_complex(&self, x: &[c64; 4]) -> [c64; 4] {
        let mut out = [c64::new(0.0, 0.0); 4];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.m[r];
            *o = x[0] * row[0] + x[1] * row[1] + x[2] * row[2] + x[3] * row[3];
        }
        out
    }

    pub fn apply_array(&self, x: &[f64; 4]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.m[r];
            *o = row[0] * x[0] + row[1] * x[1] + row[2] * x[2] + row[3] * x[3];
        }
        out
    }

    /// Inverse by Gauss–Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Option<Self> {
        let mut a = self.m;
        let mut inv = Self::IDENTITY.m;
        for col in 0..4 {
            let pivot = (col..4)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap();
            if a[pivot][col] == 0.0 {
                return None;
            }
            a.swap(col, pivot);
            inv.swap(col, pivot);
            let p = a[col][col];
            for c in 0..4 {
                a[col][c] /= p;
                inv[col][c] /= p;
            }
            for r in 0..4 {
                if r != col {
                    let f = a[r][col];
                    if f != 0.0 {
                        for c in 0..4 {
                            a[r][c] -= f * a[col][c];
                            inv[r][c] -= f * inv[col][c];
                        }
                    }
                }
            }
        }
        Some(Self { m: inv })
    }

    /// Infinity-norm condition number, `None` if singular.
    pub fn condition_number(&self) -> Option<f64> {
        let inv = self.inverse()?;
        let norm = |m: &[[f64; 4]; 4]| {
            m.iter()
                .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        Some(norm(&self.m) * norm(&inv.m))
    }
}

impl Index<(usize, usize)> for MuellerMatrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.m[r][c]
    }
}

impl IndexMut<(usize, usize)> for MuellerMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.m[r][c]
    }
}

impl Mul for MuellerMatrix {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut out = Self::ZERO;
        for r in 0..4 {
            for c in 0..4 {
                out.m[r][c] = (0..4).map(|k| self.m[r][k] * o.m[k][c]).sum();
            }
        }
        out
    }
}

impl Mul<StokesVector> for MuellerMatrix {
    type Output = StokesVector;
    fn mul(self, s: StokesVector) -> StokesVector {
        StokesVector::from_array(self.apply_array(&s.to_array()))
    }
}

impl Add for MuellerMatrix {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut out = self;
        for r in 0..4 {
            for c in 0..4 {
                out.m[r][c] += o.m[r][c];
            }
        }
        out
    }
}

impl AddAssign for MuellerMatrix {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for MuellerMatrix {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + o.scale(-1.0)
    }
}
