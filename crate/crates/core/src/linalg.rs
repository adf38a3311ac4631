//! Dense Gaussian elimination for the small systems that show up in exact
//! policy evaluation.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub(crate) fn identity(n: usize) -> Self {
        let mut data = alloc::vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Matrix { n, data }
    }

    #[cfg(test)]
    pub(crate) fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n + c]
    }

    #[inline]
    pub(crate) fn add(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.n + c] += v;
    }

    pub(crate) fn transpose(&self) -> Self {
        let n = self.n;
        let mut data = alloc::vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                data[c * n + r] = self.data[r * n + c];
            }
        }
        Matrix { n, data }
    }

    /// Solves `self * x = rhs` with partial pivoting.
    pub(crate) fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        assert_eq!(rhs.len(), n);
        let mut a = self.data.clone();
        let mut b = rhs.to_vec();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
                .unwrap_or(col);
            if a[pivot * n + col].abs() < 1e-300 {
                return Err(Error::SingularSystem);
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(col * n + k, pivot * n + k);
                }
                b.swap(col, pivot);
            }
            let diag = a[col * n + col];
            for row in col + 1..n {
                let factor = a[row * n + col] / diag;
                if factor == 0.0 {
                    continue;
                }
                for k in col..n {
                    a[row * n + k] -= factor * a[col * n + k];
                }
                b[row] -= factor * b[col];
            }
        }
        let mut x = alloc::vec![0.0; n];
        for row in (0..n).rev() {
            let mut acc = b[row];
            for k in row + 1..n {
                acc -= a[row * n + k] * x[k];
            }
            x[row] = acc / a[row * n + row];
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_pivoting_system() {
        // [[0, 2], [3, 1]] x = [4, 5] -> x = [1, 2]
        let mut m = Matrix::identity(2);
        m.add(0, 0, -1.0);
        m.add(0, 1, 2.0);
        m.add(1, 0, 3.0);
        let x = m.solve(&[4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
        assert_eq!(m.transpose().get(1, 0), 2.0);
    }

    #[test]
    fn singular_is_an_error() {
        let mut m = Matrix::identity(2);
        m.add(0, 0, -1.0);
        m.add(1, 1, -1.0);
        assert_eq!(m.solve(&[1.0, 1.0]), Err(Error::SingularSystem));
    }
}
