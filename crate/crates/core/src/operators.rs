//! FMM operators: nested bases, M2L blocks, the FMM matvec and the dense
//! extended system used as a small-size cross-check.

use std::collections::BTreeMap;
use std::io::Write;

use faer::prelude::*;
use faer::{Mat, MatRef};

use crate::geometry::ClusterTree;
use crate::kernels::Kernel;
use crate::linalg;
use crate::lowrank::cheb_grid;
use crate::{Error, Result};

/// Cap on the extended dimension for dense assembly.
pub const EXTENDED_CAP: usize = 4096;

pub type BlockRow = BTreeMap<usize, Mat<f64>>;

/// Operators of one level. Every map is indexed `[row cluster][column cluster]`.
#[derive(Clone, Debug, Default)]
pub struct LevelOperators {
    /// Leaf: `n_i × r_i` orthonormal basis `U_i`, so `L2P = U_i` and `P2M = U_iᵀ`.
    /// Non-leaf: transfer `W_i` of shape `(Σ_children r_c) × r_i` acting on
    /// stacked child multipoles.
    pub basis: Vec<Mat<f64>>,
    pub m2l: Vec<BlockRow>,
    pub p2p: Vec<BlockRow>,
    pub p2l: Vec<BlockRow>,
    pub m2p: Vec<BlockRow>,
}

impl LevelOperators {
    fn empty(n: usize) -> Self {
        LevelOperators {
            basis: Vec::new(),
            m2l: vec![BTreeMap::new(); n],
            p2p: vec![BTreeMap::new(); n],
            p2l: vec![BTreeMap::new(); n],
            m2p: vec![BTreeMap::new(); n],
        }
    }
}

#[derive(Clone, Debug)]
pub struct OperatorStore {
    pub dim: usize,
    pub depth: usize,
    pub order: usize,
    pub tol: f64,
    /// Indexed by level; levels 0 and 1 carry no operators.
    pub levels: Vec<LevelOperators>,
}

impl OperatorStore {
    /// Multipole (= local) dimension of a cluster.
    pub fn rank(&self, level: usize, i: usize) -> usize {
        self.levels[level].basis[i].ncols()
    }

    pub fn l2p(&self, level: usize, i: usize) -> MatRef<'_, f64> {
        self.levels[level].basis[i].as_ref()
    }

    pub fn p2m(&self, level: usize, i: usize) -> MatRef<'_, f64> {
        self.levels[level].basis[i].as_ref().transpose()
    }

    /// Particle dimension: points for a leaf, stacked child ranks otherwise.
    pub fn particle_dim(&self, level: usize, i: usize) -> usize {
        self.levels[level].basis[i].nrows()
    }

    pub fn max_rank(&self) -> usize {
        self.levels
            .iter()
            .flat_map(|l| l.basis.iter().map(|b| b.ncols()))
            .max()
            .unwrap_or(0)
    }

    pub fn ranks(&self, level: usize) -> Vec<usize> {
        self.levels[level].basis.iter().map(|b| b.ncols()).collect()
    }
}

struct Skeleton {
    points: Vec<f64>,
    /// `G = Bm[s,:]⁻¹`
    g: Mat<f64>,
    /// `Bm[s,:]`
    g_inv: Mat<f64>,
}

/// Left singular pairs of `E K(R, proxies)`, streaming over proxy boxes so the
/// wide matrix is never formed at once.
fn proxy_svd(e: Option<&Mat<f64>>, kernel: &Kernel, dim: usize, rpts: &[f64], proxies: &[Vec<f64>]) -> (Mat<f64>, Vec<f64>) {
    let n = rpts.len() / dim;
    let mut acc: Option<Mat<f64>> = None;
    let chunk_boxes = (4 * n).div_ceil(proxies.first().map_or(1, |p| p.len() / dim).max(1)).max(1);
    for chunk in proxies.chunks(chunk_boxes) {
        let cols: Vec<f64> = chunk.iter().flatten().copied().collect();
        let mut b = kernel.block(dim, rpts, &cols);
        if let Some(e) = e {
            b = e * &b;
        }
        let cat = match acc.take() {
            None => b,
            Some(t) => linalg::hstack(&[t.as_ref(), b.as_ref()], n),
        };
        if cat.ncols() <= n {
            acc = Some(cat);
            continue;
        }
        let (u, s) = linalg::left_svd(cat.as_ref());
        let mut us = u;
        for (j, sj) in s.iter().enumerate() {
            for i in 0..n {
                us.write(i, j, us.read(i, j) * sj);
            }
        }
        acc = Some(us);
    }
    match acc {
        None => (Mat::zeros(n, 0), Vec::new()),
        Some(t) => linalg::left_svd(t.as_ref()),
    }
}

fn block_diag(blocks: &[&Mat<f64>]) -> Mat<f64> {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(r, c);
    let (mut i0, mut j0) = (0, 0);
    for b in blocks {
        out.as_mut().submatrix_mut(i0, j0, b.nrows(), b.ncols()).copy_from(b.as_ref());
        i0 += b.nrows();
        j0 += b.ncols();
    }
    out
}

/// Nested orthonormal bases from Chebyshev proxy points on the interaction
/// list, skeletons by pivoted QR, and `M2L_ij = G_i K(s_i, s_j) G_jᵀ`.
pub fn init_operators(tree: &ClusterTree, kernel: &Kernel, p: usize, tol: f64) -> Result<OperatorStore> {
    if !(0.0..1.0).contains(&tol) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} outside [0,1)")));
    }
    if p < 2 {
        return Err(Error::InvalidArgument("Chebyshev order must be at least 2".into()));
    }
    if tree.depth < 2 {
        return Err(Error::InvalidArgument("operators need depth >= 2".into()));
    }
    let d = tree.dim;
    let depth = tree.depth;
    let mut levels: Vec<LevelOperators> = (0..=depth).map(|k| LevelOperators::empty(if k < 2 { 0 } else { tree.n_clusters(k) })).collect();
    let mut skel: Vec<Vec<Skeleton>> = (0..=depth).map(|_| Vec::new()).collect();

    for k in (2..=depth).rev() {
        let n = tree.n_clusters(k);
        let mut bases = Vec::with_capacity(n);
        let mut sk = Vec::with_capacity(n);
        for i in 0..n {
            let cl = tree.cluster(k, i);
            let (rpts, e, e_inv) = if k == depth {
                (tree.leaf_points(i).to_vec(), None, None)
            } else {
                let ch: Vec<&Skeleton> = cl.children.iter().map(|&c| &skel[k + 1][c]).collect();
                let pts: Vec<f64> = ch.iter().flat_map(|s| s.points.iter().copied()).collect();
                let e = block_diag(&ch.iter().map(|s| &s.g).collect::<Vec<_>>());
                let e_inv = block_diag(&ch.iter().map(|s| &s.g_inv).collect::<Vec<_>>());
                (pts, Some(e), Some(e_inv))
            };
            let nr = rpts.len() / d;
            // the far field of a cluster is its own interaction list plus
            // those of its ancestors; farther boxes get a coarser grid
            let mut proxies: Vec<Vec<f64>> = Vec::new();
            let (mut lk, mut li) = (k, i);
            while lk >= 2 {
                let order = if lk == k { p } else { (p / 2).max(2) };
                for &j in &tree.cluster(lk, li).interaction_list {
                    let c = tree.cluster(lk, j);
                    proxies.push(cheb_grid(&c.center, c.half_width, order));
                }
                lk -= 1;
                li = tree.cluster(lk + 1, li).parent(d);
            }
            let (w_full, s) = if nr == 0 { (Mat::zeros(0, 0), Vec::new()) } else { proxy_svd(e.as_ref(), kernel, d, &rpts, &proxies) };
            let r = linalg::truncation_rank(&s, tol);
            let w = w_full.as_ref().subcols(0, r).to_owned();
            let bm = match &e_inv {
                Some(ei) => ei * &w,
                None => w.clone(),
            };
            let sel = if r == 0 {
                Vec::new()
            } else {
                let qr = bm.transpose().col_piv_qr();
                let (fwd, _) = qr.col_permutation().arrays();
                fwd[..r].to_vec()
            };
            let g_inv = Mat::from_fn(r, r, |a, b| bm.read(sel[a], b));
            let g = if r == 0 { Mat::zeros(0, 0) } else { g_inv.partial_piv_lu().inverse() };
            let points: Vec<f64> = sel.iter().flat_map(|&s| rpts[s * d..(s + 1) * d].iter().copied()).collect();
            bases.push(w);
            sk.push(Skeleton { points, g, g_inv });
        }
        levels[k].basis = bases;
        skel[k] = sk;
    }

    for (k, level) in levels.iter_mut().enumerate().skip(2) {
        let n = tree.n_clusters(k);
        for i in 0..n {
            for &j in &tree.cluster(k, i).interaction_list {
                if j < i {
                    let t = level.m2l[j][&i].transpose().to_owned();
                    level.m2l[i].insert(j, t);
                    continue;
                }
                let (si, sj) = (&skel[k][i], &skel[k][j]);
                let kb = kernel.block(d, &si.points, &sj.points);
                let m = &si.g * &kb * sj.g.transpose();
                level.m2l[i].insert(j, m);
            }
        }
    }

    let leaf = &mut levels[depth];
    for i in 0..tree.n_clusters(depth) {
        let xi = tree.leaf_points(i);
        for &j in &tree.cluster(depth, i).neighbors {
            let blk = if i == j { kernel.self_block(d, xi) } else { kernel.block(d, xi, tree.leaf_points(j)) };
            leaf.p2p[i].insert(j, blk);
        }
    }

    Ok(OperatorStore { dim: d, depth, order: p, tol, levels })
}

/// FMM product with charges and potentials in the caller's point order.
pub fn fmm_matvec(store: &OperatorStore, tree: &ClusterTree, charges: &[f64]) -> Result<Vec<f64>> {
    if charges.len() != tree.n_points() {
        return Err(Error::DimensionMismatch(format!("{} charges for {} points", charges.len(), tree.n_points())));
    }
    let xm = tree.to_morton(charges);
    let out = fmm_matvec_morton(store, tree, &xm)?;
    Ok(tree.from_morton(&out))
}

/// FMM product in Morton order.
pub fn fmm_matvec_morton(store: &OperatorStore, tree: &ClusterTree, x: &[f64]) -> Result<Vec<f64>> {
    let depth = store.depth;
    let leaf = &store.levels[depth];
    if leaf.p2p.iter().all(|r| r.is_empty()) {
        return Err(Error::InvalidArgument("store has been eliminated".into()));
    }
    // upward
    let mut y: Vec<Vec<Vec<f64>>> = vec![Vec::new(); depth + 1];
    y[depth] = (0..tree.n_clusters(depth))
        .map(|i| {
            let r = tree.leaf_range(i);
            let mut v = vec![0.0; store.rank(depth, i)];
            linalg::mat_t_vec_acc(store.l2p(depth, i), &x[r], &mut v, 1.0);
            v
        })
        .collect();
    for k in (2..depth).rev() {
        y[k] = (0..tree.n_clusters(k))
            .map(|i| {
                let stacked: Vec<f64> = tree.children(k, i).flat_map(|c| y[k + 1][c].iter().copied()).collect();
                let mut v = vec![0.0; store.rank(k, i)];
                linalg::mat_t_vec_acc(store.l2p(k, i), &stacked, &mut v, 1.0);
                v
            })
            .collect();
    }
    // far field
    let mut z: Vec<Vec<Vec<f64>>> = vec![Vec::new(); depth + 1];
    for k in 2..=depth {
        z[k] = (0..tree.n_clusters(k))
            .map(|i| {
                let mut v = vec![0.0; store.rank(k, i)];
                for (&j, m) in &store.levels[k].m2l[i] {
                    linalg::mat_vec_acc(m.as_ref(), &y[k][j], &mut v, 1.0);
                }
                v
            })
            .collect();
    }
    // downward
    for k in 2..depth {
        for i in 0..tree.n_clusters(k) {
            let v = linalg::mat_vec(store.l2p(k, i), &z[k][i]);
            let mut off = 0;
            for c in tree.children(k, i) {
                let len = z[k + 1][c].len();
                for (a, b) in z[k + 1][c].iter_mut().zip(&v[off..off + len]) {
                    *a += b;
                }
                off += len;
            }
        }
    }
    let mut out = vec![0.0; x.len()];
    for i in 0..tree.n_clusters(depth) {
        let r = tree.leaf_range(i);
        let o = &mut out[r.clone()];
        linalg::mat_vec_acc(store.l2p(depth, i), &z[depth][i], o, 1.0);
        for (&j, blk) in &leaf.p2p[i] {
            linalg::mat_vec_acc(blk.as_ref(), &x[tree.leaf_range(j)], o, 1.0);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symbol {
    /// Charges.
    X,
    /// Multipoles.
    Y,
    /// Locals.
    Z,
}

/// One block of unknowns (and its paired equation) in the extended system.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtBlock {
    pub symbol: Symbol,
    pub level: usize,
    pub cluster: usize,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug)]
pub struct ExtendedOrdering {
    pub blocks: Vec<ExtBlock>,
    pub dim: usize,
}

impl ExtendedOrdering {
    /// Level-κ `(x_i, z_i)` per leaf, then per coarser level the pairs
    /// `(stacked child y, z_P)`, then the level-2 `y`.
    pub fn new(store: &OperatorStore, tree: &ClusterTree) -> Self {
        let depth = store.depth;
        let mut blocks = Vec::new();
        let mut off = 0;
        let mut push = |symbol, level, cluster, len: usize, blocks: &mut Vec<ExtBlock>| {
            blocks.push(ExtBlock { symbol, level, cluster, offset: off, len });
            off += len;
        };
        for i in 0..tree.n_clusters(depth) {
            push(Symbol::X, depth, i, tree.leaf_range(i).len(), &mut blocks);
            push(Symbol::Z, depth, i, store.rank(depth, i), &mut blocks);
        }
        for k in (2..depth).rev() {
            for pc in 0..tree.n_clusters(k) {
                for c in tree.children(k, pc) {
                    push(Symbol::Y, k + 1, c, store.rank(k + 1, c), &mut blocks);
                }
                push(Symbol::Z, k, pc, store.rank(k, pc), &mut blocks);
            }
        }
        for i in 0..tree.n_clusters(2) {
            push(Symbol::Y, 2, i, store.rank(2, i), &mut blocks);
        }
        ExtendedOrdering { blocks, dim: off }
    }

    pub fn find(&self, symbol: Symbol, level: usize, cluster: usize) -> &ExtBlock {
        self.blocks
            .iter()
            .find(|b| b.symbol == symbol && b.level == level && b.cluster == cluster)
            .expect("block exists")
    }

    /// Leaf charges of an extended vector, Morton order.
    pub fn x_part(&self, v: &[f64]) -> Vec<f64> {
        self.blocks
            .iter()
            .filter(|b| b.symbol == Symbol::X)
            .flat_map(|b| v[b.offset..b.offset + b.len].iter().copied())
            .collect()
    }
}

/// Materialize the extended sparse system densely.
pub fn assemble_extended_dense(store: &OperatorStore, tree: &ClusterTree) -> Result<(Mat<f64>, ExtendedOrdering)> {
    assemble_extended_dense_capped(store, tree, EXTENDED_CAP)
}

pub fn assemble_extended_dense_capped(store: &OperatorStore, tree: &ClusterTree, cap: usize) -> Result<(Mat<f64>, ExtendedOrdering)> {
    let ord = ExtendedOrdering::new(store, tree);
    if ord.dim > cap {
        return Err(Error::SizeCap { size: ord.dim, cap });
    }
    let mut a = Mat::zeros(ord.dim, ord.dim);
    for_each_extended_block(store, tree, &ord, |r, c, blk| {
        a.as_mut().submatrix_mut(r, c, blk.nrows(), blk.ncols()).copy_from(blk);
    });
    Ok((a, ord))
}

/// Visit every structurally nonzero block `(row offset, col offset, block)`.
fn for_each_extended_block(store: &OperatorStore, tree: &ClusterTree, ord: &ExtendedOrdering, mut f: impl FnMut(usize, usize, MatRef<'_, f64>)) {
    let depth = store.depth;
    let ident = |n: usize| -> Mat<f64> { Mat::from_fn(n, n, |i, j| if i == j { -1.0 } else { 0.0 }) };
    for i in 0..tree.n_clusters(depth) {
        let xi = ord.find(Symbol::X, depth, i).offset;
        let zi = ord.find(Symbol::Z, depth, i).offset;
        for (&j, blk) in &store.levels[depth].p2p[i] {
            f(xi, ord.find(Symbol::X, depth, j).offset, blk.as_ref());
        }
        f(xi, zi, store.l2p(depth, i));
        f(zi, xi, store.p2m(depth, i));
    }
    for k in 2..=depth {
        for i in 0..tree.n_clusters(k) {
            let r = store.rank(k, i);
            let yi = ord.find(Symbol::Y, k, i).offset;
            let zi = ord.find(Symbol::Z, k, i).offset;
            let m = ident(r);
            // P2M row: -y_i ; loc row: -z_i
            f(zi, yi, m.as_ref());
            f(yi, zi, m.as_ref());
            for (&j, blk) in &store.levels[k].m2l[i] {
                f(yi, ord.find(Symbol::Y, k, j).offset, blk.as_ref());
            }
            if k < depth {
                let w = store.l2p(k, i);
                let mut off = 0;
                for c in tree.children(k, i) {
                    let rc = store.rank(k + 1, c);
                    let yc = ord.find(Symbol::Y, k + 1, c).offset;
                    let wc = w.subrows(off, rc);
                    f(yc, zi, wc);
                    f(zi, yc, wc.transpose());
                    off += rc;
                }
            }
        }
    }
}

/// Coordinate triplets `row col value`, one nonzero per line.
pub fn write_extended_triplets(store: &OperatorStore, tree: &ClusterTree, mut w: impl Write) -> Result<usize> {
    let ord = ExtendedOrdering::new(store, tree);
    let mut count = 0;
    let mut err = None;
    writeln!(w, "# {} {}", ord.dim, ord.dim)?;
    for_each_extended_block(store, tree, &ord, |r, c, blk| {
        for j in 0..blk.ncols() {
            for i in 0..blk.nrows() {
                let v = blk.read(i, j);
                if v != 0.0 && err.is_none() {
                    if let Err(e) = writeln!(w, "{} {} {:.17e}", r + i, c + j, v) {
                        err = Some(e);
                    }
                    count += 1;
                }
            }
        }
    });
    match err {
        Some(e) => Err(e.into()),
        None => Ok(count),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_tree, generate_balanced_points};
    use crate::kernels::{assemble_dense, KernelKind};

    fn setup(n: usize, dim: usize, depth: usize, tol: f64) -> (ClusterTree, Kernel, OperatorStore) {
        let ps = generate_balanced_points(n, dim, depth, 11).unwrap();
        let tree = build_tree(&ps, depth).unwrap();
        let k = Kernel::new(KernelKind::Log, 1e-3).unwrap();
        let store = init_operators(&tree, &k, 8, tol).unwrap();
        (tree, k, store)
    }

    #[test]
    fn m2l_pattern_1d() {
        let (_, _, store) = setup(100, 1, 2, 1e-14);
        let keys: Vec<(usize, usize)> = store.levels[2]
            .m2l
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.keys().map(move |&j| (i, j)))
            .collect();
        assert_eq!(keys, vec![(0, 2), (0, 3), (1, 3), (2, 0), (3, 0), (3, 1)]);
    }

    #[test]
    fn self_block_diagonal() {
        let (tree, _, store) = setup(300, 2, 2, 1e-14);
        for i in 0..tree.n_clusters(2) {
            let b = &store.levels[2].p2p[i][&i];
            assert!((0..b.nrows()).all(|j| b.read(j, j) == 1.0));
        }
    }

    #[test]
    fn matvec_matches_dense() {
        let (tree, k, store) = setup(512, 2, 3, 1e-14);
        let a = assemble_dense(&k, &tree.points).unwrap();
        let x: Vec<f64> = (0..512).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let want = linalg::mat_vec(a.as_ref(), &x);
        let got = fmm_matvec_morton(&store, &tree, &x).unwrap();
        assert!(linalg::rel_err(&got, &want) < 1e-10, "{}", linalg::rel_err(&got, &want));
        let zero = fmm_matvec_morton(&store, &tree, &vec![0.0; 512]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extended_dimension_count() {
        let (tree, _, store) = setup(256, 2, 3, 1e-10);
        let ord = ExtendedOrdering::new(&store, &tree);
        let ranks: usize = (2..=3).flat_map(|k| store.ranks(k)).sum();
        assert_eq!(ord.dim, 256 + 2 * ranks);
    }

    #[test]
    fn extended_is_symmetric() {
        let (tree, _, store) = setup(128, 1, 3, 1e-12);
        let (a, _) = assemble_extended_dense(&store, &tree).unwrap();
        let d = &a - a.transpose();
        assert!(d.norm_max() < 1e-13 * a.norm_max());
    }
}
