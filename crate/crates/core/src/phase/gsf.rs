//! Wigner d-functions `d^l_{mn}(θ)` as sequences in `l`, evaluated at
//! `x = cos θ`.
//!
//! Start value at `l₀ = max(|m|, |n|)` from the closed form
//! `d^j_{j,n} = (-1)^{j-n} √((2j)! / ((j+n)! (j-n)!)) c^{j+n} s^{j-n}`
//! (`c = cos θ/2`, `s = sin θ/2`) plus the index symmetries, then the
//! three-term upward recurrence
//!
//! ```text
//! l √((l+1)²-m²) √((l+1)²-n²) d^{l+1}
//!     = (2l+1) (l(l+1) x - m n) d^l - (l+1) √(l²-m²) √(l²-n²) d^{l-1}
//! ```

fn ln_factorial(k: i64) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

/// `√C(2j, j+n)`; logarithms only where the product could overflow.
fn top_row_norm(j: i64, n: i64) -> f64 {
    if j <= 64 {
        let k = (j + n).min(j - n);
        (1..=k).fold(1.0, |acc, i| acc * (2 * j - k + i) as f64 / i as f64).sqrt()
    } else {
        (0.5 * (ln_factorial(2 * j) - ln_factorial(j + n) - ln_factorial(j - n))).exp()
    }
}

/// `d^j_{j,n}` for `|n| ≤ j`.
fn top_row(j: i64, n: i64, c: f64, s: f64) -> f64 {
    let sign = if (j - n) % 2 == 0 { 1.0 } else { -1.0 };
    sign * top_row_norm(j, n) * c.powi((j + n) as i32) * s.powi((j - n) as i32)
}

fn start_value(m: i64, n: i64, x: f64) -> f64 {
    let c = (0.5 * (1.0 + x)).max(0.0).sqrt();
    let s = (0.5 * (1.0 - x)).max(0.0).sqrt();
    let j = m.abs().max(n.abs());
    let parity = |k: i64| if k % 2 == 0 { 1.0 } else { -1.0 };
    if m == j {
        top_row(j, n, c, s)
    } else if m == -j {
        parity(j + n) * top_row(j, -n, c, s)
    } else if n == j {
        parity(j - m) * top_row(j, m, c, s)
    } else {
        top_row(j, -m, c, s)
    }
}

/// `d^l_{mn}(x)` for `l = 0..len`; entries with `l < max(|m|,|n|)` are zero.
pub fn wigner_d_sequence(m: i64, n: i64, len: usize, x: f64) -> Vec<f64> {
    WignerRecurrence::new(m, n, x).take(len).collect()
}

/// Streams `d^l_{mn}(x)` for `l = 0, 1, ...` keeping only the last two terms.
#[derive(Debug, Clone)]
pub struct WignerRecurrence {
    m: f64,
    n: f64,
    x: f64,
    l0: usize,
    l: usize,
    prev: f64,
    cur: f64,
}

impl WignerRecurrence {
    pub fn new(m: i64, n: i64, x: f64) -> Self {
        let l0 = m.abs().max(n.abs()) as usize;
        Self {
            m: m as f64,
            n: n as f64,
            x,
            l0,
            l: 0,
            prev: 0.0,
            cur: start_value(m, n, x),
        }
    }
}

impl Iterator for WignerRecurrence {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let l = self.l;
        self.l += 1;
        if l < self.l0 {
            return Some(0.0);
        }
        let value = self.cur;
        let next = if l == 0 {
            // m = n = 0: the general recurrence divides by l
            self.x
        } else {
            let (lf, mf, nf) = (l as f64, self.m, self.n);
            let a = lf * ((lf + 1.0).powi(2) - mf * mf).sqrt() * ((lf + 1.0).powi(2) - nf * nf).sqrt();
            let b = (2.0 * lf + 1.0) * (lf * (lf + 1.0) * self.x - mf * nf);
            let c = (lf + 1.0) * (lf * lf - mf * mf).max(0.0).sqrt() * (lf * lf - nf * nf).max(0.0).sqrt();
            (b * self.cur - c * self.prev) / a
        };
        self.prev = value;
        self.cur = next;
        Some(value)
    }
}

#[cfg(test)]
mod norm_tests {
    use super::*;

    #[test]
    fn binomial_norm_matches_log_form() {
        for j in [0, 1, 2, 7, 30, 64] {
            for n in -j..=j {
                let want = (0.5 * (ln_factorial(2 * j) - ln_factorial(j + n) - ln_factorial(j - n))).exp();
                assert!((top_row_norm(j, n) - want).abs() <= 1e-12 * want, "{j} {n}");
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod oracle {
    /// Wigner's explicit sum, used only as an independent reference.
    pub fn wigner_d(l: i64, m: i64, n: i64, x: f64) -> f64 {
        if m.abs() > l || n.abs() > l {
            return 0.0;
        }
        let fact = |k: i64| (1..=k).map(|i| i as f64).product::<f64>();
        let theta = x.clamp(-1.0, 1.0).acos();
        let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
        let pre = (fact(l + m) * fact(l - m) * fact(l + n) * fact(l - n)).sqrt();
        let kmin = 0.max(n - m);
        let kmax = (l + n).min(l - m);
        let mut sum = 0.0;
        for k in kmin..=kmax {
            let sign = if (m - n + k) % 2 == 0 { 1.0 } else { -1.0 };
            let den = fact(l + n - k) * fact(k) * fact(m - n + k) * fact(l - m - k);
            sum += sign / den
                * c.powi((2 * l + n - m - 2 * k) as i32)
                * s.powi((m - n + 2 * k) as i32);
        }
        pre * sum
    }
}
