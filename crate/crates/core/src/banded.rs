//! Complex banded LU factorisation with partial pivoting.

use thiserror::Error;

use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BandedError {
    #[error("entry ({row}, {col}) lies outside the band (kl = {kl}, ku = {ku})")]
    OutsideBand { row: usize, col: usize, kl: usize, ku: usize },
    #[error("zero pivot in column {0}")]
    Singular(usize),
    #[error("right-hand side has length {got}, expected {expected}")]
    Length { got: usize, expected: usize },
}

/// Square matrix with `kl` sub- and `ku` super-diagonals. Rows keep room
/// for the `kl` extra super-diagonals that pivoting fills in.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<C64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![C64::new(0.0, 0.0); n * width],
        }
    }

    /// Builds from `(row, col, value)` triplets, summing duplicates; the
    /// bandwidths are taken from the triplets.
    pub fn from_triplets(n: usize, entries: &[(usize, usize, C64)]) -> Self {
        let kl = entries.iter().map(|&(r, c, _)| r.saturating_sub(c)).max().unwrap_or(0);
        let ku = entries.iter().map(|&(r, c, _)| c.saturating_sub(r)).max().unwrap_or(0);
        let mut m = Self::zeros(n, kl, ku);
        for &(r, c, v) in entries {
            *m.slot(r, c) += v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn slot(&mut self, row: usize, col: usize) -> &mut C64 {
        &mut self.data[row * self.width + col + self.kl - row]
    }

    fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.width + col + self.kl - row]
    }

    pub fn set(&mut self, row: usize, col: usize, value: C64) -> Result<(), BandedError> {
        if row >= self.n || col >= self.n || row > col + self.kl || col > row + self.ku {
            return Err(BandedError::OutsideBand { row, col, kl: self.kl, ku: self.ku });
        }
        *self.slot(row, col) = value;
        Ok(())
    }

    /// Entry `(row, col)`, zero outside the band.
    pub fn at(&self, row: usize, col: usize) -> C64 {
        if row > col + self.kl || col > row + self.ku {
            C64::new(0.0, 0.0)
        } else {
            self.get(row, col)
        }
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        (0..self.n)
            .map(|r| {
                let lo = r.saturating_sub(self.kl);
                let hi = (r + self.ku).min(self.n - 1);
                (lo..=hi).map(|c| self.get(r, c) * x[c]).sum()
            })
            .collect()
    }

    pub fn factor(mut self) -> Result<BandLu, BandedError> {
        let n = self.n;
        let reach = self.kl + self.ku;
        let mut pivots = Vec::with_capacity(n);
        let scale = self.data.iter().fold(0.0_f64, |a, z| a.max(z.norm()));
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let p = (k..=last)
                .max_by(|&a, &b| self.get(a, k).norm().total_cmp(&self.get(b, k).norm()))
                .unwrap_or(k);
            let pivot = self.get(p, k);
            if pivot.norm() <= f64::EPSILON * scale * n as f64 || !pivot.is_finite() {
                return Err(BandedError::Singular(k));
            }
            let right = (k + reach).min(n - 1);
            if p != k {
                for c in k..=right {
                    let a = self.get(k, c);
                    let b = self.get(p, c);
                    *self.slot(k, c) = b;
                    *self.slot(p, c) = a;
                }
            }
            pivots.push(p);
            let inv = 1.0 / pivot;
            for r in k + 1..=last {
                let factor = self.get(r, k) * inv;
                *self.slot(r, k) = factor;
                if factor == C64::new(0.0, 0.0) {
                    continue;
                }
                for c in k + 1..=right {
                    let u = self.get(k, c);
                    *self.slot(r, c) -= factor * u;
                }
            }
        }
        Ok(BandLu { m: self, pivots })
    }
}

/// Factorisation `P A = L U` of a [`BandMatrix`].
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    pivots: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>, BandedError> {
        let m = &self.m;
        let n = m.n;
        if b.len() != n {
            return Err(BandedError::Length { got: b.len(), expected: n });
        }
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            let xk = x[k];
            for r in k + 1..=(k + m.kl).min(n - 1) {
                x[r] -= m.get(r, k) * xk;
            }
        }
        let reach = m.kl + m.ku;
        for k in (0..n).rev() {
            let mut acc = x[k];
            for c in k + 1..=(k + reach).min(n - 1) {
                acc -= m.get(k, c) * x[c];
            }
            x[k] = acc / m.get(k, k);
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::CMatrix;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> Vec<(usize, usize, C64)> {
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut entries = Vec::new();
        for r in 0..n {
            for c in r.saturating_sub(kl)..=(r + ku).min(n - 1) {
                entries.push((r, c, C64::new(next(), next())));
            }
        }
        entries
    }

    #[test]
    fn matches_dense_solve() {
        let n = 40;
        let entries = random_band(n, 3, 5, 7);
        let band = BandMatrix::from_triplets(n, &entries);
        assert_eq!(band.bandwidths(), (3, 5));
        let mut dense = CMatrix::zeros(n, n);
        for &(r, c, v) in &entries {
            dense[(r, c)] += v;
        }
        let b: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0 - i as f64 * 0.1)).collect();
        let x = band.clone().factor().unwrap().solve(&b).unwrap();
        let expected = dense.lu().solve(&crate::CVector::from_vec(b.clone())).unwrap();
        for i in 0..n {
            assert!((x[i] - expected[i]).norm() < 1e-10 * (1.0 + expected[i].norm()));
        }
        let back = band.mul_vec(&x);
        for i in 0..n {
            assert!((back[i] - b[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn pivots_past_a_zero_diagonal() {
        let entries = vec![
            (0, 1, C64::new(1.0, 0.0)),
            (1, 0, C64::new(2.0, 0.0)),
            (1, 2, C64::new(1.0, 0.0)),
            (2, 1, C64::new(1.0, 0.0)),
            (2, 2, C64::new(3.0, 0.0)),
        ];
        let lu = BandMatrix::from_triplets(3, &entries).factor().unwrap();
        let x = lu.solve(&[C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(4.0, 0.0)]).unwrap();
        assert!((x[0] - 0.5).norm() < 1e-14);
        assert!((x[1] - 1.0).norm() < 1e-14);
        assert!((x[2] - 1.0).norm() < 1e-14);
    }

    #[test]
    fn reports_singular_and_out_of_band() {
        let entries = vec![(0, 0, C64::new(1.0, 0.0)), (1, 0, C64::new(1.0, 0.0))];
        assert!(matches!(BandMatrix::from_triplets(2, &entries).factor(), Err(BandedError::Singular(1))));
        let mut m = BandMatrix::zeros(4, 1, 1);
        assert!(m.set(0, 3, C64::new(1.0, 0.0)).is_err());
        assert_eq!(m.at(0, 3), C64::new(0.0, 0.0));
    }
}
