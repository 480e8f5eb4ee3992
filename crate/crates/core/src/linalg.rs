//! Dense square-matrix helpers sized for per-arm LinUCB state.
//!
//! Everything here is row-major `Vec<f64>` storage. The bandit only ever needs
//! symmetric positive definite systems, so the direct inverse goes through a
//! Cholesky factorization rather than general LU.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    /// `scale * I`
    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = scale;
        }
        m
    }

    /// Builds a matrix from row-major data. Returns `None` if the length is not `dim * dim`.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == dim * dim).then_some(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.dim + col] = value;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        self.data
            .chunks_exact(self.dim)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `xᵀ M x`
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.data
            .chunks_exact(self.dim)
            .zip(x)
            .map(|(row, xi)| xi * dot(row, x))
            .sum()
    }

    pub fn mul(&self, other: &SquareMatrix) -> SquareMatrix {
        let n = self.dim;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    /// `M += x xᵀ`
    pub fn add_outer(&mut self, x: &[f64]) {
        let n = self.dim;
        for (i, &xi) in x.iter().enumerate().take(n) {
            for (m, &xj) in self.data[i * n..(i + 1) * n].iter_mut().zip(x) {
                *m += xi * xj;
            }
        }
    }

    /// Rank-one inverse update.
    ///
    /// `self` must hold `A⁻¹`; afterwards it holds `(A + x xᵀ)⁻¹`. Only valid for
    /// symmetric `A`, where `A⁻¹ x xᵀ A⁻¹ = u uᵀ` with `u = A⁻¹ x`.
    pub fn sherman_morrison_update(&mut self, x: &[f64]) {
        let u = self.mul_vec(x);
        let denom = 1.0 + dot(x, &u);
        let n = self.dim;
        for (i, &ui) in u.iter().enumerate() {
            let ui = ui / denom;
            for (m, &uj) in self.data[i * n..(i + 1) * n].iter_mut().zip(&u) {
                *m -= ui * uj;
            }
        }
    }

    /// Inverse of a symmetric positive definite matrix via Cholesky.
    ///
    /// Returns `None` when the factorization hits a non-positive pivot.
    pub fn spd_inverse(&self) -> Option<SquareMatrix> {
        let n = self.dim;
        let lower = self.cholesky()?;
        // Solve L Lᵀ X = I column by column.
        let mut inv = SquareMatrix::zeros(n);
        let mut col = vec![0.0; n];
        for c in 0..n {
            for i in 0..n {
                let mut acc = if i == c { 1.0 } else { 0.0 };
                for (k, &ck) in col.iter().enumerate().take(i) {
                    acc -= lower.get(i, k) * ck;
                }
                col[i] = acc / lower.get(i, i);
            }
            for i in (0..n).rev() {
                let mut acc = col[i];
                for k in i + 1..n {
                    acc -= lower.get(k, i) * inv.get(k, c);
                }
                inv.set(i, c, acc / lower.get(i, i));
            }
        }
        inv.symmetrize();
        Some(inv)
    }

    fn cholesky(&self) -> Option<SquareMatrix> {
        let n = self.dim;
        let mut l = SquareMatrix::zeros(n);
        for j in 0..n {
            let mut diag = self.get(j, j);
            for k in 0..j {
                diag -= l.get(j, k) * l.get(j, k);
            }
            if !diag.is_finite() || diag <= 0.0 {
                return None;
            }
            let ljj = libm::sqrt(diag);
            l.set(j, j, ljj);
            for i in j + 1..n {
                let mut acc = self.get(i, j);
                for k in 0..j {
                    acc -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, acc / ljj);
            }
        }
        Some(l)
    }

    fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in i + 1..n {
                let avg = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, avg);
                self.set(j, i, avg);
            }
        }
    }

    /// `max |M_ij - I_ij|`
    pub fn identity_deviation(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max(libm::fabs(self.get(i, j) - target));
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &SquareMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.dim;
        (0..n).all(|i| (i + 1..n).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}
