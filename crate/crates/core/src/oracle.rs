//! Reference dense solver and matvec.

use faer::Mat;

use crate::geometry::{dist, PointSet};
use crate::kernels::{assemble_dense_capped, Kernel};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct DenseSystem {
    pub matrix: Mat<f64>,
    pub rhs: Vec<f64>,
}

impl DenseSystem {
    pub fn new(matrix: Mat<f64>, rhs: Vec<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() != rhs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix with rhs of length {}",
                matrix.nrows(),
                matrix.ncols(),
                rhs.len()
            )));
        }
        Ok(DenseSystem { matrix, rhs })
    }

    /// Kernel system `A_ii = 1`, `A_ij = K(r_ij)`, refusing `N > cap`.
    pub fn from_kernel(kernel: &Kernel, ps: &PointSet, rhs: Vec<f64>, cap: usize) -> Result<Self> {
        Self::new(assemble_dense_capped(kernel, ps, cap)?, rhs)
    }

    pub fn residual(&self, x: &[f64]) -> f64 {
        let ax = crate::linalg::mat_vec(self.matrix.as_ref(), x);
        let r: Vec<f64> = ax.iter().zip(&self.rhs).map(|(a, b)| a - b).collect();
        crate::linalg::norm2(&r) / crate::linalg::norm2(&self.rhs).max(f64::MIN_POSITIVE)
    }
}

/// LU with complete pivoting, `P A Q = L U`.
#[derive(Clone, Debug)]
pub struct FullPivLu {
    lu: Mat<f64>,
    row_perm: Vec<usize>,
    col_perm: Vec<usize>,
}

impl FullPivLu {
    pub fn new(a: &Mat<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch("LU needs a square matrix".into()));
        }
        // row-major copy keeps the elimination loop contiguous
        let mut m: Vec<f64> = (0..n * n).map(|k| a.read(k / n, k % n)).collect();
        let mut rp: Vec<usize> = (0..n).collect();
        let mut cp: Vec<usize> = (0..n).collect();
        let scale = m.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for k in 0..n {
            let (mut pi, mut pj, mut best) = (k, k, -1.0);
            for i in k..n {
                for j in k..n {
                    let v = m[i * n + j].abs();
                    if v > best {
                        best = v;
                        pi = i;
                        pj = j;
                    }
                }
            }
            if best <= f64::EPSILON * scale * n as f64 || best == 0.0 {
                return Err(Error::Singular);
            }
            if pi != k {
                for j in 0..n {
                    m.swap(k * n + j, pi * n + j);
                }
                rp.swap(k, pi);
            }
            if pj != k {
                for i in 0..n {
                    m.swap(i * n + k, i * n + pj);
                }
                cp.swap(k, pj);
            }
            let piv = m[k * n + k];
            let (head, tail) = m.split_at_mut((k + 1) * n);
            let krow = &head[k * n..];
            for row in tail.chunks_exact_mut(n) {
                let l = row[k] / piv;
                row[k] = l;
                if l != 0.0 {
                    for j in k + 1..n {
                        row[j] -= l * krow[j];
                    }
                }
            }
        }
        Ok(FullPivLu { lu: Mat::from_fn(n, n, |i, j| m[i * n + j]), row_perm: rp, col_perm: cp })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.nrows();
        let mut y: Vec<f64> = self.row_perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lu.read(i, j) * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= self.lu.read(i, j) * y[j];
            }
            y[i] = s / self.lu.read(i, i);
        }
        let mut x = vec![0.0; n];
        for (k, &c) in self.col_perm.iter().enumerate() {
            x[c] = y[k];
        }
        x
    }
}

pub fn dense_solve(sys: &DenseSystem) -> Result<Vec<f64>> {
    Ok(FullPivLu::new(&sys.matrix)?.solve(&sys.rhs))
}

/// `A x` for the kernel system without storing `A`; cost `O(N²)` kernel evaluations.
pub fn kernel_matvec(kernel: &Kernel, ps: &PointSet, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != ps.len() {
        return Err(Error::DimensionMismatch(format!("{} charges for {} points", x.len(), ps.len())));
    }
    let n = ps.len();
    let mut out = x.to_vec();
    for i in 0..n {
        let pi = ps.point(i);
        let mut acc = 0.0;
        for j in i + 1..n {
            let k = kernel.eval(dist(pi, ps.point(j)));
            acc += k * x[j];
            out[j] += k * x[i];
        }
        out[i] += acc;
    }
    Ok(out)
}
