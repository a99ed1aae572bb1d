//! Banded LU factorization with partial pivoting.

use crate::{Error, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals, factorized in
/// place. Storage follows the LAPACK `gbtrf` convention: `kl` extra rows on
/// top hold the fill-in produced by row interchanges.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    ab: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        Self { n, kl, ku, ld, ab: vec![0.0; ld * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        // Row of A(i, j) inside column j is kl + ku + i - j.
        j * self.ld + self.kl + self.ku + i - j
    }

    /// Adds `v` to `A(i, j)`; panics when outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.n && j < self.n, "index ({i}, {j}) out of range");
        assert!(j <= i + self.ku && i <= j + self.kl, "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i + self.ku || i > j + self.kl {
            0.0
        } else {
            self.ab[self.slot(i, j)]
        }
    }

    /// `y = A x` for the unfactorized matrix.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Non-zero pattern as `(row, col, value)`, row-major.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for j in lo..=hi {
                let v = self.get(i, j);
                if v != 0.0 {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    pub fn factorize(mut self) -> Result<BandLu> {
        let (n, kl, ku, ld) = (self.n, self.kl, self.ku, self.ld);
        let kv = ku + kl;
        let mut piv = vec![0usize; n];
        let scale = self.ab.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let ab = &mut self.ab;
        let idx = |i: usize, j: usize| j * ld + kv + i - j;
        for j in 0..n {
            let last = (j + kl).min(n - 1);
            // Pivot search in column j.
            let mut p = j;
            let mut best = ab[idx(j, j)].abs();
            for i in j + 1..=last {
                let v = ab[idx(i, j)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[j] = p;
            if best <= 1e-300 || best <= scale * 1e-15 {
                return Err(Error::Singular(format!("zero pivot in column {j}")));
            }
            let ucol = (j + kv).min(n - 1);
            if p != j {
                for c in j..=ucol {
                    ab.swap(idx(p, c), idx(j, c));
                }
            }
            let d = ab[idx(j, j)];
            for i in j + 1..=last {
                ab[idx(i, j)] /= d;
            }
            for c in j + 1..=ucol {
                let u = ab[idx(j, c)];
                if u != 0.0 {
                    for i in j + 1..=last {
                        let l = ab[idx(i, j)];
                        ab[idx(i, c)] -= l * u;
                    }
                }
            }
        }
        Ok(BandLu { m: self, piv })
    }
}

/// Factorized band matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn n(&self) -> usize {
        self.m.n
    }

    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku, ld) = (self.m.n, self.m.kl, self.m.ku, self.m.ld);
        let kv = kl + ku;
        let ab = &self.m.ab;
        let idx = |i: usize, j: usize| j * ld + kv + i - j;
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                b.swap(p, j);
            }
            let last = (j + kl).min(n - 1);
            let bj = b[j];
            for i in j + 1..=last {
                b[i] -= ab[idx(i, j)] * bj;
            }
        }
        for j in (0..n).rev() {
            b[j] /= ab[idx(j, j)];
            let first = j.saturating_sub(kv);
            let bj = b[j];
            for i in first..j {
                b[i] -= ab[idx(i, j)] * bj;
            }
        }
    }
}
