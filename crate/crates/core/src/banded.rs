//! Symmetric positive-definite banded matrices and their Cholesky factors.

use crate::error::{Error, Result};

/// Symmetric matrix stored by its lower band: `band[i][d] = A[i][i - d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBanded {
    n: usize,
    bandwidth: usize,
    band: Vec<f64>,
}

impl SymBanded {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bandwidth,
            band: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    #[inline]
    fn idx(&self, i: usize, d: usize) -> usize {
        i * (self.bandwidth + 1) + d
    }

    /// Entry `A[i][j]`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d > self.bandwidth {
            0.0
        } else {
            self.band[self.idx(hi, d)]
        }
    }

    /// Adds `v` to `A[i][j]` (and, by symmetry, `A[j][i]`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        assert!(d <= self.bandwidth, "entry ({i},{j}) outside band");
        let k = self.idx(hi, d);
        self.band[k] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bandwidth);
            let hi = (i + self.bandwidth).min(self.n - 1);
            out[i] = (lo..=hi).map(|j| self.get(i, j) * x[j]).sum();
        }
        out
    }

    /// Cholesky factorization `A = L Lᵀ` after symmetric diagonal scaling.
    ///
    /// The matrix is first scaled to `D A D` with `D = diag(A)^{-1/2}`, which
    /// leaves a unit diagonal regardless of how far apart the original
    /// diagonal entries are.
    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let n = self.n;
        let p = self.bandwidth;
        let mut scale = vec![0.0; n];
        for (i, s) in scale.iter_mut().enumerate() {
            let d = self.band[self.idx(i, 0)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-positive or non-finite diagonal entry {d} at row {i}"
                )));
            }
            *s = 1.0 / d.sqrt();
        }
        let mut l = self.clone();
        for i in 0..n {
            for d in 0..=p.min(i) {
                let j = i - d;
                let k = l.idx(i, d);
                l.band[k] *= scale[i] * scale[j];
            }
        }
        for j in 0..n {
            let mut diag = l.band[l.idx(j, 0)];
            for k in j.saturating_sub(p)..j {
                let v = l.band[l.idx(j, j - k)];
                diag -= v * v;
            }
            if !(diag > 0.0) {
                return Err(Error::Numerical(format!(
                    "matrix not positive definite at pivot {j} (pivot {diag:e})"
                )));
            }
            let ljj = diag.sqrt();
            let kj = l.idx(j, 0);
            l.band[kj] = ljj;
            for i in (j + 1)..=(j + p).min(n - 1) {
                let mut v = l.band[l.idx(i, i - j)];
                for k in i.saturating_sub(p)..j {
                    v -= l.band[l.idx(i, i - k)] * l.band[l.idx(j, j - k)];
                }
                let kij = l.idx(i, i - j);
                l.band[kij] = v / ljj;
            }
        }
        Ok(BandedCholesky { factor: l, scale })
    }
}

/// Factor produced by [`SymBanded::cholesky`].
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    factor: SymBanded,
    scale: Vec<f64>,
}

impl BandedCholesky {
    /// Solves `A x = b` for the original (unscaled) matrix.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.factor;
        let n = l.n;
        let p = l.bandwidth;
        assert_eq!(b.len(), n);
        let mut z: Vec<f64> = b.iter().zip(&self.scale).map(|(b, s)| b * s).collect();
        for i in 0..n {
            let mut v = z[i];
            for k in i.saturating_sub(p)..i {
                v -= l.band[l.idx(i, i - k)] * z[k];
            }
            z[i] = v / l.band[l.idx(i, 0)];
        }
        for i in (0..n).rev() {
            let mut v = z[i];
            for k in (i + 1)..=(i + p).min(n.saturating_sub(1)) {
                v -= l.band[l.idx(k, k - i)] * z[k];
            }
            z[i] = v / l.band[l.idx(i, 0)];
        }
        z.iter_mut().zip(&self.scale).for_each(|(z, s)| *z *= s);
        z
    }
}
