//! Small dense helpers on top of `faer`.

use faer::{Mat, MatMut, MatRef};

/// Number of singular values kept by the relative rule `σ_j / σ_1 >= tol`.
/// `tol <= 0` keeps every strictly positive value.
pub fn truncation_rank(s: &[f64], tol: f64) -> usize {
    if s.is_empty() || s[0] <= 0.0 {
        return 0;
    }
    if tol <= 0.0 {
        return s.iter().filter(|&&v| v > 0.0).count();
    }
    s.iter().take_while(|&&v| v / s[0] >= tol).count()
}

/// Number of singular values strictly above an absolute threshold.
pub fn rank_above(s: &[f64], thresh: f64) -> usize {
    s.iter().take_while(|&&v| v > thresh).count()
}

pub fn singular_values(a: MatRef<'_, f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s = a.singular_values();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    s
}

/// Thin SVD `(U, s)` with singular values in decreasing order.
pub fn left_svd(a: MatRef<'_, f64>) -> (Mat<f64>, Vec<f64>) {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return (Mat::zeros(a.nrows(), 0), Vec::new());
    }
    let svd = a.thin_svd();
    let s: Vec<f64> = (0..k).map(|i| svd.s_diagonal().read(i)).collect();
    (svd.u().to_owned(), s)
}

/// Thin SVD `(U, s, V)`.
pub fn svd(a: MatRef<'_, f64>) -> (Mat<f64>, Vec<f64>, Mat<f64>) {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return (Mat::zeros(a.nrows(), 0), Vec::new(), Mat::zeros(a.ncols(), 0));
    }
    let svd = a.thin_svd();
    let s: Vec<f64> = (0..k).map(|i| svd.s_diagonal().read(i)).collect();
    (svd.u().to_owned(), s, svd.v().to_owned())
}

pub fn first_cols(a: MatRef<'_, f64>, k: usize) -> Mat<f64> {
    a.subcols(0, k).to_owned()
}

pub fn hstack(blocks: &[MatRef<'_, f64>], nrows: usize) -> Mat<f64> {
    let ncols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(nrows, ncols);
    let mut c = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), nrows);
        out.as_mut().subcols_mut(c, b.ncols()).copy_from(b);
        c += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[MatRef<'_, f64>], ncols: usize) -> Mat<f64> {
    let nrows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(nrows, ncols);
    let mut r = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), ncols);
        out.as_mut().subrows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Insert `count` zero rows before row `at`.
pub fn insert_zero_rows(a: &Mat<f64>, at: usize, count: usize) -> Mat<f64> {
    let mut out = Mat::zeros(a.nrows() + count, a.ncols());
    out.as_mut().subrows_mut(0, at).copy_from(a.as_ref().subrows(0, at));
    let rest = a.nrows() - at;
    out.as_mut()
        .subrows_mut(at + count, rest)
        .copy_from(a.as_ref().subrows(at, rest));
    out
}

pub fn pad(a: &Mat<f64>, extra_rows: usize, extra_cols: usize) -> Mat<f64> {
    let mut out = Mat::zeros(a.nrows() + extra_rows, a.ncols() + extra_cols);
    out.as_mut()
        .submatrix_mut(0, 0, a.nrows(), a.ncols())
        .copy_from(a.as_ref());
    out
}

pub fn add_into(dst: &mut Mat<f64>, src: MatRef<'_, f64>) {
    debug_assert_eq!((dst.nrows(), dst.ncols()), (src.nrows(), src.ncols()));
    let mut d = dst.as_mut();
    d += src;
}

/// `dst += alpha * a * b`.
pub fn gemm_acc(dst: MatMut<'_, f64>, a: MatRef<'_, f64>, b: MatRef<'_, f64>, alpha: f64) {
    faer::linalg::matmul::matmul(dst, a, b, Some(1.0), alpha, faer::Parallelism::None);
}

/// Left singular pairs of a wide matrix through a QR of its transpose.
pub fn left_svd_wide(a: MatRef<'_, f64>) -> (Mat<f64>, Vec<f64>) {
    if a.ncols() <= 2 * a.nrows() || a.nrows() == 0 {
        return left_svd(a);
    }
    let r = a.transpose().qr().compute_thin_r();
    left_svd(r.transpose())
}

pub fn frobenius(a: MatRef<'_, f64>) -> f64 {
    a.norm_l2()
}

/// One-norm (max column abs sum).
pub fn norm1(a: MatRef<'_, f64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a.read(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Orthonormal basis of the columns of `a` by thin QR.
pub fn orthonormalize(a: MatRef<'_, f64>) -> Mat<f64> {
    if a.ncols() == 0 {
        return Mat::zeros(a.nrows(), 0);
    }
    a.qr().compute_thin_q()
}

/// `a - u (uᵀ a)`.
pub fn project_out(u: MatRef<'_, f64>, a: MatRef<'_, f64>) -> Mat<f64> {
    if u.ncols() == 0 {
        return a.to_owned();
    }
    let c = u.transpose() * a;
    a - u * &c
}

pub fn mat_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    mat_vec_acc(a, x, &mut y, 1.0);
    y
}

/// `y += alpha * a x`.
pub fn mat_vec_acc(a: MatRef<'_, f64>, x: &[f64], y: &mut [f64], alpha: f64) {
    debug_assert_eq!(a.ncols(), x.len());
    debug_assert_eq!(a.nrows(), y.len());
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let s = alpha * xj;
        let col = a.col(j);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += col.read(i) * s;
        }
    }
}

/// `y += alpha * aᵀ x`.
pub fn mat_t_vec_acc(a: MatRef<'_, f64>, x: &[f64], y: &mut [f64], alpha: f64) {
    debug_assert_eq!(a.nrows(), x.len());
    debug_assert_eq!(a.ncols(), y.len());
    for (j, yj) in y.iter_mut().enumerate() {
        let col = a.col(j);
        let mut s = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            s += col.read(i) * xi;
        }
        *yj += alpha * s;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a - b‖₂ / ‖b‖₂`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nb = norm2(b);
    if nb == 0.0 {
        norm2(&d)
    } else {
        norm2(&d) / nb
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_rule() {
        let s = [1.0, 1e-3, 1e-9, 1e-16];
        assert_eq!(truncation_rank(&s, 1e-15), 3);
        assert_eq!(truncation_rank(&s, 1e-3), 2);
        assert_eq!(truncation_rank(&s, 0.0), 4);
        assert_eq!(truncation_rank(&[0.0, 0.0], 1e-3), 0);
    }

    #[test]
    fn insert_rows_keeps_order() {
        let a = Mat::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        let b = insert_zero_rows(&a, 1, 2);
        assert_eq!(b.nrows(), 5);
        assert_eq!(b.read(0, 1), 1.0);
        assert_eq!(b.read(1, 0), 0.0);
        assert_eq!(b.read(3, 0), 2.0);
        assert_eq!(b.read(4, 1), 5.0);
    }

    #[test]
    fn project_out_is_orthogonal() {
        let a = Mat::from_fn(6, 3, |i, j| ((i + 1) * (j + 2)) as f64 + (i * j) as f64 * 0.3);
        let q = orthonormalize(a.as_ref().subcols(0, 2));
        let r = project_out(q.as_ref(), a.as_ref());
        let c = q.transpose() * &r;
        assert!(c.norm_max() < 1e-12);
    }
}
