//! Chebyshev interpolation, SVD truncation and adaptive cross approximation.

use faer::{Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Cluster, ClusterTree};
use crate::kernels::Kernel;
use crate::linalg;
use crate::{Error, Result};

/// `U Vᵀ` with the relative tolerance it was truncated at.
#[derive(Clone, Debug)]
pub struct LowRank {
    pub left: Mat<f64>,
    pub right: Mat<f64>,
    pub tol: f64,
}

impl LowRank {
    pub fn rank(&self) -> usize {
        self.left.ncols()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        &self.left * self.right.transpose()
    }

    /// `‖A - U Vᵀ‖_F / ‖A‖_F`.
    pub fn rel_error(&self, a: MatRef<'_, f64>) -> f64 {
        let d = a - self.to_dense();
        let na = a.norm_l2();
        if na == 0.0 {
            d.norm_l2()
        } else {
            d.norm_l2() / na
        }
    }
}

/// Tensor Chebyshev interpolation on one box.
#[derive(Clone, Debug)]
pub struct ChebBasis {
    pub order_per_dim: usize,
    pub dim: usize,
    pub center: Vec<f64>,
    pub half_width: f64,
    /// `p^d` nodes, flat, first axis fastest.
    pub nodes: Vec<f64>,
    /// `n_points × p^d`.
    pub interp: Mat<f64>,
}

/// First-kind nodes `cos((2m+1)π/(2p))` on `[-1,1]`.
pub fn cheb_nodes(p: usize) -> Vec<f64> {
    (0..p)
        .map(|m| ((2 * m + 1) as f64 * std::f64::consts::PI / (2 * p) as f64).cos())
        .collect()
}

/// Tensor grid of Chebyshev nodes scaled to a box, flat.
pub fn cheb_grid(center: &[f64], half_width: f64, p: usize) -> Vec<f64> {
    let d = center.len();
    let t = cheb_nodes(p);
    let total = p.pow(d as u32);
    let mut out = Vec::with_capacity(total * d);
    for idx in 0..total {
        let mut rem = idx;
        for c in center {
            out.push(c + half_width * t[rem % p]);
            rem /= p;
        }
    }
    out
}

fn lagrange_1d(u: f64, t: &[f64]) -> Vec<f64> {
    (0..t.len())
        .map(|m| {
            t.iter()
                .enumerate()
                .filter(|&(l, _)| l != m)
                .map(|(_, &tl)| (u - tl) / (t[m] - tl))
                .product()
        })
        .collect()
}

/// Interpolation basis of order `p` on an explicit box.
pub fn cheb_basis_box(center: &[f64], half_width: f64, points: &[f64], p: usize) -> Result<ChebBasis> {
    let d = center.len();
    if p < 2 {
        return Err(Error::InvalidArgument("Chebyshev order must be at least 2".into()));
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty cluster".into()));
    }
    let n = points.len() / d;
    let t = cheb_nodes(p);
    let total = p.pow(d as u32);
    let mut interp = Mat::zeros(n, total);
    for i in 0..n {
        let per_axis: Vec<Vec<f64>> = (0..d)
            .map(|ax| lagrange_1d((points[i * d + ax] - center[ax]) / half_width, &t))
            .collect();
        for idx in 0..total {
            let mut rem = idx;
            let mut v = 1.0;
            for s in &per_axis {
                v *= s[rem % p];
                rem /= p;
            }
            interp.write(i, idx, v);
        }
    }
    Ok(ChebBasis {
        order_per_dim: p,
        dim: d,
        center: center.to_vec(),
        half_width,
        nodes: cheb_grid(center, half_width, p),
        interp,
    })
}

/// Interpolation basis for a leaf cluster.
pub fn cheb_basis(cluster: &Cluster, tree: &ClusterTree, p: usize) -> Result<ChebBasis> {
    let range = cluster
        .point_range
        .clone()
        .ok_or_else(|| Error::InvalidArgument("cheb_basis needs a leaf cluster".into()))?;
    cheb_basis_box(&cluster.center, cluster.half_width, tree.points.slice(range), p)
}

/// Kernel evaluated between the node grids of two separated boxes.
pub fn m2l_kernel_block(kernel: &Kernel, src: &ChebBasis, dst: &ChebBasis) -> Result<Mat<f64>> {
    let gap = src
        .center
        .iter()
        .zip(&dst.center)
        .map(|(a, b)| (a - b).abs() - src.half_width - dst.half_width)
        .fold(f64::NEG_INFINITY, f64::max);
    if gap <= 1e-12 {
        return Err(Error::OverlappingBoxes);
    }
    Ok(kernel.block(dst.dim, &dst.nodes, &src.nodes))
}

/// Keep the leading `r` singular triplets with `σ_j / σ_1 >= tol`.
pub fn svd_truncate(block: MatRef<'_, f64>, tol: f64) -> Result<LowRank> {
    check_tol(tol)?;
    let (u, s, v) = linalg::svd(block);
    let r = linalg::truncation_rank(&s, tol);
    let mut left = u.as_ref().subcols(0, r).to_owned();
    for j in 0..r {
        for i in 0..left.nrows() {
            left.write(i, j, left.read(i, j) * s[j]);
        }
    }
    Ok(LowRank { left, right: v.as_ref().subcols(0, r).to_owned(), tol })
}

fn check_tol(tol: f64) -> Result<()> {
    if (0.0..1.0).contains(&tol) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tolerance {tol} outside [0,1)")))
    }
}

/// Re-orthogonalize a factor pair and truncate again.
pub fn recompress(u: MatRef<'_, f64>, v: MatRef<'_, f64>, tol: f64) -> LowRank {
    let k = u.ncols();
    if k == 0 {
        return LowRank { left: Mat::zeros(u.nrows(), 0), right: Mat::zeros(v.nrows(), 0), tol };
    }
    let qu = u.qr();
    let qv = v.qr();
    let (q1, r1) = (qu.compute_thin_q(), qu.compute_thin_r());
    let (q2, r2) = (qv.compute_thin_q(), qv.compute_thin_r());
    let core = &r1 * r2.transpose();
    let (w, s, z) = linalg::svd(core.as_ref());
    let r = linalg::truncation_rank(&s, tol);
    let mut ws = w.as_ref().subcols(0, r).to_owned();
    for j in 0..r {
        for i in 0..ws.nrows() {
            ws.write(i, j, ws.read(i, j) * s[j]);
        }
    }
    LowRank { left: &q1 * &ws, right: &q2 * z.as_ref().subcols(0, r), tol }
}

#[derive(Clone, Debug)]
pub struct AcaResult {
    pub lowrank: LowRank,
    /// False when the cross count reached `min(m, n)` before the stopping test fired.
    pub converged: bool,
    pub crosses: usize,
}

/// Partially pivoted ACA with recompression.
pub fn aca<R, C>(row: R, col: C, shape: (usize, usize), tol: f64) -> Result<AcaResult>
where
    R: FnMut(usize) -> Vec<f64>,
    C: FnMut(usize) -> Vec<f64>,
{
    aca_seeded(row, col, shape, tol, 0x1fa_2024)
}

pub fn aca_seeded<R, C>(mut row: R, mut col: C, shape: (usize, usize), tol: f64, seed: u64) -> Result<AcaResult>
where
    R: FnMut(usize) -> Vec<f64>,
    C: FnMut(usize) -> Vec<f64>,
{
    check_tol(tol)?;
    let (m, n) = shape;
    let kmax = m.min(n);
    let mut us: Vec<Vec<f64>> = Vec::new();
    let mut vs: Vec<Vec<f64>> = Vec::new();
    if kmax == 0 {
        return Ok(AcaResult { lowrank: recompress(Mat::zeros(m, 0).as_ref(), Mat::zeros(n, 0).as_ref(), tol), converged: true, crosses: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used_row = vec![false; m];

    // probe a few rows, start from the one holding the largest entry
    let probes = m.min(10);
    let mut best = (0usize, -1.0f64, Vec::new());
    for _ in 0..probes {
        let i = rng.gen_range(0..m);
        let r = row(i);
        let mx = r.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if mx > best.1 {
            best = (i, mx, r);
        }
    }
    let mut pivot_row = best.0;
    let mut cached_row = Some(best.2);

    let mut frob2 = 0.0f64;
    let mut strikes = 0;
    let mut converged = false;
    while us.len() < kmax {
        used_row[pivot_row] = true;
        let mut r = cached_row.take().unwrap_or_else(|| row(pivot_row));
        for (u, v) in us.iter().zip(&vs) {
            let c = u[pivot_row];
            if c != 0.0 {
                for (rj, vj) in r.iter_mut().zip(v) {
                    *rj -= c * vj;
                }
            }
        }
        let (jstar, piv) = r
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (j, &x)| if x.abs() > acc.1.abs() { (j, x) } else { acc });
        if piv.abs() <= f64::MIN_POSITIVE {
            strikes += 1;
            if strikes >= 3 || used_row.iter().all(|&u| u) {
                converged = true;
                break;
            }
            let free: Vec<usize> = (0..m).filter(|&i| !used_row[i]).collect();
            pivot_row = free[rng.gen_range(0..free.len())];
            continue;
        }
        let v: Vec<f64> = r.iter().map(|x| x / piv).collect();
        let mut u = col(jstar);
        for (uk, vk) in us.iter().zip(&vs) {
            let c = vk[jstar];
            if c != 0.0 {
                for (ui, uki) in u.iter_mut().zip(uk) {
                    *ui -= c * uki;
                }
            }
        }
        let nu = linalg::norm2(&u);
        let nv = linalg::norm2(&v);
        let mut cross = 0.0;
        for (uk, vk) in us.iter().zip(&vs) {
            cross += dot(uk, &u) * dot(vk, &v);
        }
        frob2 += nu * nu * nv * nv + 2.0 * cross;
        let next = (0..m)
            .filter(|&i| !used_row[i])
            .fold(None, |acc: Option<(usize, f64)>, i| match acc {
                Some((_, b)) if b >= u[i].abs() => acc,
                _ => Some((i, u[i].abs())),
            });
        us.push(u);
        vs.push(v);
        if nu * nv <= tol * frob2.max(0.0).sqrt() {
            converged = true;
            break;
        }
        match next {
            Some((i, _)) => pivot_row = i,
            None => {
                converged = true;
                break;
            }
        }
    }
    let k = us.len();
    let umat = Mat::from_fn(m, k, |i, j| us[j][i]);
    let vmat = Mat::from_fn(n, k, |i, j| vs[j][i]);
    Ok(AcaResult { lowrank: recompress(umat.as_ref(), vmat.as_ref(), tol), converged, crosses: k })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// ACA on an explicit matrix.
pub fn aca_dense(block: MatRef<'_, f64>, tol: f64) -> Result<AcaResult> {
    aca(
        |i| (0..block.ncols()).map(|j| block.read(i, j)).collect(),
        |j| (0..block.nrows()).map(|i| block.read(i, j)).collect(),
        (block.nrows(), block.ncols()),
        tol,
    )
}

/// Numerical rank under `σ_{r+1}/σ_1 < tol`. The SVD runs on the leading rows
/// of a column-pivoted QR, and the dominant triplets are deflated before the
/// small values are counted, since a bidiagonal SVD resolves values only down
/// to a few `eps·σ_1`.
pub fn numerical_rank(block: MatRef<'_, f64>, tol: f64) -> usize {
    let (m, n) = (block.nrows(), block.ncols());
    if m == 0 || n == 0 {
        return 0;
    }
    // pivoted QR of the wider orientation keeps R short
    let a = if m >= n { block.transpose().to_owned() } else { block.to_owned() };
    let qr = a.transpose().col_piv_qr();
    let r = qr.compute_thin_r();
    let k = r.nrows().min(r.ncols());
    let d0 = r.read(0, 0).abs();
    if d0 == 0.0 {
        return 0;
    }
    let keep = (0..k).take_while(|&i| r.read(i, i).abs() >= 0.3 * tol * d0).count().max(1);
    // Deflate the leading triplets so the SVD floor (relative to the largest
    // value) of the remainder sits far below `tol`.
    let rk = r.as_ref().subrows(0, keep);
    let (u, s, v) = linalg::svd(rk);
    let s0 = s[0];
    let m0 = s.iter().take_while(|&&x| x >= 1e-10 * s0).count();
    if m0 == s.len() {
        return linalg::truncation_rank(&s, tol);
    }
    let mut tail = rk.to_owned();
    for j in 0..m0 {
        linalg::gemm_acc(tail.as_mut(), u.as_ref().subcols(j, 1), v.as_ref().subcols(j, 1).transpose(), -s[j]);
    }
    let st = linalg::singular_values(tail.as_ref());
    m0.min(linalg::truncation_rank(&s, tol)) + st.iter().filter(|&&x| x >= tol * s0).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelKind;

    fn log_kernel() -> Kernel {
        Kernel::new(KernelKind::Log, 1e-3).unwrap()
    }

    #[test]
    fn node_rows_are_unit() {
        let c = [0.25, -0.5];
        let h = 0.25;
        let grid = cheb_grid(&c, h, 4);
        let pts = grid[2 * 5..2 * 6].to_vec();
        let b = cheb_basis_box(&c, h, &pts, 4).unwrap();
        assert_eq!(b.interp.ncols(), 16);
        for j in 0..16 {
            let want = if j == 5 { 1.0 } else { 0.0 };
            assert!((b.interp.read(0, j) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn partition_of_unity() {
        let c = [0.0, 0.0];
        let pts = [0.1, 0.2, -0.7, 0.33, 0.99, -0.99];
        let b = cheb_basis_box(&c, 1.0, &pts, 8).unwrap();
        assert_eq!(b.interp.ncols(), 64);
        for i in 0..3 {
            let s: f64 = (0..64).map(|j| b.interp.read(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(b.nodes.iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn m2l_block_direct() {
        let lap = Kernel::new(KernelKind::Laplace3d, 1e-3).unwrap();
        let src = cheb_basis_box(&[0.0], 0.5, &[0.1], 2).unwrap();
        let dst = cheb_basis_box(&[2.0], 0.5, &[2.1], 2).unwrap();
        let m = m2l_kernel_block(&lap, &src, &dst).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (2, 2));
        let t = 0.5 * std::f64::consts::FRAC_PI_4.cos();
        // dst node 2+t vs src node -t
        let want = 1e-3 / (2.0 + 2.0 * t);
        assert!((m.read(0, 1) - want).abs() < 1e-16);
        let mt = m2l_kernel_block(&lap, &dst, &src).unwrap();
        assert!((mt.transpose().to_owned() - &m).norm_max() < 1e-18);
        let near = cheb_basis_box(&[1.0], 0.5, &[1.1], 2).unwrap();
        assert!(matches!(m2l_kernel_block(&lap, &src, &near), Err(Error::OverlappingBoxes)));
    }

    #[test]
    fn truncate_simple() {
        let z = Mat::<f64>::zeros(5, 4);
        assert_eq!(svd_truncate(z.as_ref(), 1e-15).unwrap().rank(), 0);
        let u = Mat::from_fn(6, 1, |i, _| i as f64 + 1.0);
        let v = Mat::from_fn(5, 1, |i, _| 1.0 / (i as f64 + 2.0));
        let a = &u * v.transpose();
        let lr = svd_truncate(a.as_ref(), 1e-15).unwrap();
        assert_eq!(lr.rank(), 1);
        assert!(lr.rel_error(a.as_ref()) < 1e-15);
    }

    #[test]
    fn aca_rank_one() {
        let u = Mat::from_fn(20, 1, |i, _| (i as f64).sin() + 2.0);
        let v = Mat::from_fn(30, 1, |i, _| (i as f64 * 0.3).cos());
        let a = &u * v.transpose();
        let res = aca_dense(a.as_ref(), 1e-12).unwrap();
        assert_eq!(res.lowrank.rank(), 1);
        assert!(res.converged);
        assert!(res.crosses <= 2);
    }

    #[test]
    fn aca_kernel_block_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..-0.5)).collect();
        let ys: Vec<f64> = (0..160).map(|_| rng.gen_range(0.0..0.5)).collect();
        let k = log_kernel();
        let a = k.block(2, &xs, &ys);
        let tol = 1e-14;
        let res = aca_dense(a.as_ref(), tol).unwrap();
        let svd_rank = svd_truncate(a.as_ref(), tol).unwrap().rank();
        assert!(res.lowrank.rank() <= svd_rank + 4);
        assert!(res.lowrank.rel_error(a.as_ref()) <= 10.0 * tol);
    }
}
