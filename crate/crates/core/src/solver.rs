//! Cluster elimination on the extended system and back substitution.
//!
//! Each level is swept in Morton order. Eliminating a cluster removes its
//! charges and locals; the Schur update lands among its neighbors, and any
//! update that couples two well-separated clusters is pushed into their bases
//! and M2L blocks instead of being stored densely.

use std::collections::BTreeMap;
use std::ops::Range;
use std::time::Instant;

use faer::prelude::*;
use faer::solvers::PartialPivLu;
use faer::{Mat, MatRef};

use crate::geometry::ClusterTree;
use crate::linalg;
use crate::lowrank::aca_dense;
use crate::operators::OperatorStore;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Working tolerance; 0 disables truncation.
    pub tol: f64,
    /// Consolidate a basis once it grows past this factor times its rank at
    /// the start of the level.
    pub consolidation_factor: f64,
    /// Pivot one-norm condition number above which elimination aborts.
    pub cond_threshold: f64,
    /// Measure M2L ranks at the end of every level (for `r_m`).
    pub track_ranks: bool,
}

impl SolverOptions {
    pub fn new(tol: f64) -> Self {
        SolverOptions { tol, consolidation_factor: 1.5, cond_threshold: 1e12, track_ranks: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Coupling {
    /// Charges of an uneliminated cluster.
    Particle,
    /// Multipoles of an eliminated cluster.
    Multipole,
}

#[derive(Clone, Debug)]
struct Record {
    cluster: usize,
    n: usize,
    /// Inverse of `[[P2P_ii, U_i], [U_iᵀ, 0]]`.
    sinv: Mat<f64>,
    /// Column couplings of `x_i`; the row couplings are their transposes.
    cols: Vec<(Coupling, usize, Mat<f64>)>,
}

#[derive(Clone, Debug)]
struct LevelFactor {
    records: Vec<Record>,
    /// Final multipole dimension of every cluster.
    ranks: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LevelStats {
    pub level: usize,
    pub clusters: usize,
    /// Largest numerical rank among the final well-separated M2L blocks.
    pub max_rank: usize,
    pub max_basis: usize,
    pub fillins_compressed: usize,
    pub fillins_dense_kept: usize,
    pub augmentations: usize,
    pub consolidations: usize,
    pub seconds: f64,
}

impl LevelStats {
    /// `level,k_clusters,max_rank,fillins_compressed,fillins_dense_kept`
    pub fn log_line(&self) -> String {
        format!("{},{},{},{},{}", self.level, self.clusters, self.max_rank, self.fillins_compressed, self.fillins_dense_kept)
    }
}

#[derive(Clone, Debug, Default)]
pub struct FactorStats {
    /// Finest level first.
    pub levels: Vec<LevelStats>,
    pub r_m: usize,
    pub max_basis: usize,
    /// Stored particle or multipole couplings between non-neighbors (expected 0).
    pub non_neighbor_couplings: usize,
    /// Seconds spent on rank diagnostics, included in the wall time of `factorize`.
    pub diagnostic_seconds: f64,
    pub max_pivot_cond: f64,
}

/// Eliminated tree, ready for any number of solves.
pub struct IfmmFactorization {
    dim: usize,
    depth: usize,
    tol: f64,
    permutation: Vec<usize>,
    leaf_ranges: Vec<Range<usize>>,
    /// Indexed by level; levels 0 and 1 are empty.
    levels: Vec<LevelFactor>,
    top: PartialPivLu<f64>,
    top_offsets: Vec<usize>,
    pub stats: FactorStats,
}

struct Work<'a> {
    tree: &'a ClusterTree,
    k: usize,
    tol: f64,
    basis: Vec<Mat<f64>>,
    start_rank: Vec<usize>,
    scale: Vec<f64>,
    parent: Option<Vec<Mat<f64>>>,
    p2p: Vec<BTreeMap<usize, Mat<f64>>>,
    m2l: Vec<BTreeMap<usize, Mat<f64>>>,
    p2l: Vec<BTreeMap<usize, Mat<f64>>>,
    m2p: Vec<BTreeMap<usize, Mat<f64>>>,
    eliminated: Vec<bool>,
    stats: LevelStats,
}

fn acc_block(map: &mut BTreeMap<usize, Mat<f64>>, key: usize, blk: MatRef<'_, f64>, alpha: f64) {
    let e = map.entry(key).or_insert_with(|| Mat::zeros(blk.nrows(), blk.ncols()));
    let mut d = e.as_mut();
    if alpha == 1.0 {
        d += blk;
    } else {
        d += faer::scale(alpha) * blk;
    }
}

impl Work<'_> {
    fn is_neighbor(&self, p: usize, q: usize) -> bool {
        self.tree.is_neighbor(self.k, p, q)
    }

    fn sibling_offset(&self, q: usize) -> usize {
        let c = 1 << self.tree.dim;
        (q / c * c..q).map(|s| self.basis[s].ncols()).sum()
    }

    fn eliminate(&mut self, i: usize, opts: &SolverOptions) -> Result<(Record, f64)> {
        let u = &self.basis[i];
        let (n, r) = (u.nrows(), u.ncols());
        let pii = self.p2p[i].remove(&i).unwrap_or_else(|| Mat::zeros(n, n));
        let mut s = Mat::zeros(n + r, n + r);
        s.as_mut().submatrix_mut(0, 0, n, n).copy_from(&pii);
        s.as_mut().submatrix_mut(0, n, n, r).copy_from(u);
        s.as_mut().submatrix_mut(n, 0, r, n).copy_from(u.transpose());
        let sinv = s.partial_piv_lu().inverse();
        let cond = scaled_condition(&s, &sinv, n);
        if !(cond <= opts.cond_threshold) {
            return Err(Error::SingularPivot { level: self.k, index: i, cond });
        }

        let mut cols = Vec::new();
        let mut rows = Vec::new();
        for &q in &self.tree.cluster(self.k, i).neighbors {
            if q == i {
                continue;
            }
            if !self.eliminated[q] {
                if let Some(rq) = self.p2p[i].remove(&q) {
                    let l = self.p2p[q].remove(&i).expect("symmetric P2P pattern");
                    cols.push((Coupling::Particle, q, rq));
                    rows.push(l);
                }
            } else if let Some(rq) = self.m2p[i].remove(&q) {
                let l = self.p2l[q].remove(&i).expect("symmetric P2L/M2P pattern");
                cols.push((Coupling::Multipole, q, rq));
                rows.push(l);
            }
        }
        debug_assert!(self.p2p[i].is_empty() && self.m2p[i].is_empty());

        // T = S⁻¹ [[R, 0], [0, -I]]
        let widths: Vec<usize> = cols.iter().map(|c| c.2.ncols()).collect();
        let c_tot: usize = widths.iter().sum();
        let mut t = Mat::zeros(n + r, c_tot + r);
        let mut off = 0;
        for (_, _, rq) in &cols {
            linalg::gemm_acc(t.as_mut().subcols_mut(off, rq.ncols()), sinv.as_ref().subcols(0, n), rq.as_ref(), 1.0);
            off += rq.ncols();
        }
        t.as_mut().subcols_mut(c_tot, r).copy_from(faer::scale(-1.0) * sinv.as_ref().subcols(n, r));
        let tx = t.as_ref().subrows(0, n);
        let tz = t.as_ref().subrows(n, r);

        let mut col_keys: Vec<(Coupling, usize, usize, usize)> = Vec::with_capacity(cols.len() + 1);
        let mut off = 0;
        for ((kind, q, _), &w) in cols.iter().zip(&widths) {
            col_keys.push((*kind, *q, off, w));
            off += w;
        }
        col_keys.push((Coupling::Multipole, i, c_tot, r));

        for ((kind_p, p, _), l) in cols.iter().zip(&rows) {
            let delta = l * tx;
            for &(kind_q, q, o, w) in &col_keys {
                let blk = delta.as_ref().subcols(o, w);
                let map = match (kind_p, kind_q) {
                    (Coupling::Particle, Coupling::Particle) => &mut self.p2p[*p],
                    (Coupling::Particle, Coupling::Multipole) => &mut self.m2p[*p],
                    (Coupling::Multipole, Coupling::Particle) => &mut self.p2l[*p],
                    (Coupling::Multipole, Coupling::Multipole) => &mut self.m2l[*p],
                };
                acc_block(map, q, blk, -1.0);
            }
        }
        for &(kind_q, q, o, w) in &col_keys {
            let blk = tz.subcols(o, w);
            let map = match kind_q {
                Coupling::Particle => &mut self.p2l[i],
                Coupling::Multipole => &mut self.m2l[i],
            };
            acc_block(map, q, blk, 1.0);
        }
        self.eliminated[i] = true;

        // redirect well-separated fill-ins
        let mut touched = Vec::new();
        let mut row_ids: Vec<(Coupling, usize)> = cols.iter().map(|c| (c.0, c.1)).collect();
        row_ids.push((Coupling::Multipole, i));
        for &(kind_p, p) in &row_ids {
            for &(kind_q, q, _, _) in &col_keys {
                if kind_q != Coupling::Particle || p == q || self.is_neighbor(p, q) {
                    continue;
                }
                match kind_p {
                    Coupling::Particle => {
                        if self.p2p[p].contains_key(&q) {
                            self.compress_p2p(p, q);
                            touched.extend([p, q]);
                        }
                    }
                    Coupling::Multipole => {
                        if self.p2l[p].contains_key(&q) {
                            self.compress_p2l(p, q);
                            touched.push(q);
                        }
                    }
                }
            }
        }
        touched.sort_unstable();
        touched.dedup();
        for q in touched {
            if self.basis[q].ncols() as f64 > opts.consolidation_factor * self.start_rank[q] as f64 {
                self.consolidate(q);
            }
        }

        Ok((Record { cluster: i, n, sinv, cols }, cond))
    }

    /// Both clusters uneliminated: `F ≈ U_p M U_qᵀ`.
    fn compress_p2p(&mut self, p: usize, q: usize) {
        let f = self.p2p[p].remove(&q).unwrap();
        let ft = self.p2p[q].remove(&p).unwrap();
        let thr = self.tol * self.scale[p].max(self.scale[q]);
        let sp = linalg::hstack(&[f.as_ref(), ft.transpose()], f.nrows());
        self.augment(p, sp, thr);
        let sq = linalg::hstack(&[f.transpose(), ft.as_ref()], f.ncols());
        self.augment(q, sq, thr);
        let (up, uq) = (&self.basis[p], &self.basis[q]);
        let mpq = up.transpose() * &f * uq;
        let mqp = uq.transpose() * &ft * up;
        acc_block(&mut self.m2l[p], q, mpq.as_ref(), 1.0);
        acc_block(&mut self.m2l[q], p, mqp.as_ref(), 1.0);
        self.stats.fillins_compressed += 1;
    }

    /// `p` eliminated, `q` not: `P2L_pq ≈ M U_qᵀ`.
    fn compress_p2l(&mut self, p: usize, q: usize) {
        let f = self.p2l[p].remove(&q).unwrap();
        let ft = self.m2p[q].remove(&p).expect("symmetric P2L/M2P pattern");
        let thr = self.tol * self.scale[q];
        let sq = linalg::hstack(&[f.transpose(), ft.as_ref()], f.ncols());
        self.augment(q, sq, thr);
        let uq = &self.basis[q];
        let mpq = &f * uq;
        let mqp = uq.transpose() * &ft;
        acc_block(&mut self.m2l[p], q, mpq.as_ref(), 1.0);
        acc_block(&mut self.m2l[q], p, mqp.as_ref(), 1.0);
        self.stats.fillins_compressed += 1;
    }

    /// Extend `U_q` by the directions of `stack` it misses above `thr`.
    fn augment(&mut self, q: usize, stack: Mat<f64>, thr: f64) {
        let u = &self.basis[q];
        let (n, r) = (u.nrows(), u.ncols());
        if r >= n {
            return;
        }
        let res = linalg::project_out(u.as_ref(), stack.as_ref());
        let nres = linalg::frobenius(res.as_ref());
        if nres == 0.0 || (thr > 0.0 && nres <= thr) {
            return;
        }
        let dirs = new_directions(res.as_ref(), nres, thr);
        let s = dirs.ncols().min(n - r);
        if s == 0 {
            return;
        }
        let dirs = linalg::project_out(u.as_ref(), dirs.as_ref().subcols(0, s));
        let dirs = linalg::orthonormalize(dirs.as_ref());
        self.basis[q] = linalg::hstack(&[u.as_ref(), dirs.as_ref()], n);

        let keys: Vec<usize> = self.m2l[q].keys().copied().collect();
        for j in keys {
            let b = self.m2l[q].remove(&j).unwrap();
            let b = if j == q { linalg::pad(&b, s, s) } else { linalg::pad(&b, s, 0) };
            self.m2l[q].insert(j, b);
            if j != q {
                let c = self.m2l[j].remove(&q).expect("symmetric M2L pattern");
                self.m2l[j].insert(q, linalg::pad(&c, 0, s));
            }
        }
        let off = self.sibling_offset(q);
        if let Some(parent) = &mut self.parent {
            let pi = q >> self.tree.dim;
            parent[pi] = linalg::insert_zero_rows(&parent[pi], off + r, s);
        }
        self.stats.augmentations += 1;
    }

    /// Drop directions of `U_q` that no M2L block or parent transfer uses.
    fn consolidate(&mut self, q: usize) {
        let r = self.basis[q].ncols();
        if r == 0 {
            return;
        }
        let mut blocks: Vec<MatRef<'_, f64>> = Vec::new();
        for (&j, b) in &self.m2l[q] {
            blocks.push(b.as_ref());
            blocks.push(self.m2l[j][&q].transpose());
        }
        let far = linalg::hstack(&blocks, r);
        let off = self.sibling_offset(q);
        let pi = q >> self.tree.dim;
        let stacked = match &self.parent {
            Some(parent) => {
                let wq = parent[pi].as_ref().subrows(off, r);
                let sc = linalg::frobenius(far.as_ref()).max(f64::MIN_POSITIVE);
                let wq = faer::scale(sc) * wq;
                linalg::hstack(&[far.as_ref(), wq.as_ref()], r)
            }
            None => far,
        };
        let (psi, s) = linalg::left_svd_wide(stacked.as_ref());
        let rn = if self.tol > 0.0 { linalg::rank_above(&s, self.tol * self.scale[q]) } else { s.len() };
        if rn >= r {
            return;
        }
        let psi = psi.as_ref().subcols(0, rn);
        self.basis[q] = &self.basis[q] * psi;
        let keys: Vec<usize> = self.m2l[q].keys().copied().collect();
        for j in keys {
            let b = psi.transpose() * &self.m2l[q][&j];
            self.m2l[q].insert(j, b);
            let c = &self.m2l[j][&q] * psi;
            self.m2l[j].insert(q, c);
        }
        if let Some(parent) = &mut self.parent {
            let w = &parent[pi];
            let wq = psi.transpose() * w.as_ref().subrows(off, r);
            let tail = w.nrows() - off - r;
            parent[pi] = linalg::vstack(&[w.as_ref().subrows(0, off), wq.as_ref(), w.as_ref().subrows(off + r, tail)], w.ncols());
        }
        self.stats.consolidations += 1;
    }
}

/// One-norm condition of `D S D` with `D = diag(I, α I)` balancing the kernel
/// block against the unit-scale basis block.
fn scaled_condition(s: &Mat<f64>, sinv: &Mat<f64>, n: usize) -> f64 {
    let m = s.nrows();
    let r = m - n;
    let pn = linalg::norm1(s.as_ref().submatrix(0, 0, n, n));
    let un = linalg::norm1(s.as_ref().submatrix(0, n, n, r));
    let alpha = if r > 0 && pn > 0.0 && un > 0.0 { pn / un } else { 1.0 };
    let d = |i: usize| if i < n { 1.0 } else { alpha };
    let a = Mat::from_fn(m, m, |i, j| s.read(i, j) * d(i) * d(j));
    let b = Mat::from_fn(m, m, |i, j| sinv.read(i, j) / (d(i) * d(j)));
    linalg::norm1(a.as_ref()) * linalg::norm1(b.as_ref())
}

/// Orthogonal directions (columns) carrying the part of `res` above `thr`.
fn new_directions(res: MatRef<'_, f64>, nres: f64, thr: f64) -> Mat<f64> {
    if thr > 0.0 {
        let rel = 0.1 * thr / nres;
        if let Ok(a) = aca_dense(res, rel) {
            if a.converged {
                let lr = a.lowrank;
                let approx = &lr.left * lr.right.transpose();
                let err = linalg::frobenius((res - &approx).as_ref());
                if err <= thr {
                    // recompressed left factor: orthogonal columns scaled by σ
                    let keep: Vec<usize> = (0..lr.left.ncols()).filter(|&j| lr.left.col(j).norm_l2() > thr).collect();
                    return Mat::from_fn(res.nrows(), keep.len(), |i, c| {
                        let j = keep[c];
                        lr.left.read(i, j) / lr.left.col(j).norm_l2()
                    });
                }
            }
        }
    }
    let (u, s) = linalg::left_svd(res);
    let k = linalg::rank_above(&s, thr);
    u.as_ref().subcols(0, k).to_owned()
}

/// Eliminate every level from the leaves up and factorize the remaining
/// level-2 multipole system. The operator store is consumed.
pub fn factorize(mut store: OperatorStore, tree: &ClusterTree, opts: &SolverOptions) -> Result<IfmmFactorization> {
    if !(0.0..1.0).contains(&opts.tol) {
        return Err(Error::InvalidArgument(format!("tolerance {} outside [0,1)", opts.tol)));
    }
    if store.depth != tree.depth || store.dim != tree.dim {
        return Err(Error::DimensionMismatch("operator store does not match tree".into()));
    }
    let depth = tree.depth;
    let d = tree.dim;
    let mut stats = FactorStats::default();
    let mut levels: Vec<LevelFactor> = (0..=depth).map(|_| LevelFactor { records: Vec::new(), ranks: Vec::new() }).collect();

    let leaf = std::mem::take(&mut store.levels[depth]);
    let mut p2p = leaf.p2p;
    let mut basis = leaf.basis;
    let mut m2l = leaf.m2l;
    let mut top = None;

    for k in (2..=depth).rev() {
        let n = tree.n_clusters(k);
        let parent = if k > 2 { Some(std::mem::take(&mut store.levels[k - 1].basis)) } else { None };
        let scale = (0..n).map(|i| p2p[i].get(&i).map_or(0.0, |b| linalg::frobenius(b.as_ref()))).collect();
        let mut w = Work {
            tree,
            k,
            tol: opts.tol,
            start_rank: basis.iter().map(|b| b.ncols()).collect(),
            basis,
            scale,
            parent,
            p2p,
            m2l,
            p2l: vec![BTreeMap::new(); n],
            m2p: vec![BTreeMap::new(); n],
            eliminated: vec![false; n],
            stats: LevelStats { level: k, clusters: n, ..Default::default() },
        };
        let t_level = Instant::now();
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let (rec, cond) = w.eliminate(i, opts)?;
            stats.max_pivot_cond = stats.max_pivot_cond.max(cond);
            records.push(rec);
        }
        w.stats.seconds = t_level.elapsed().as_secs_f64();
        w.stats.max_basis = w.basis.iter().map(|b| b.ncols()).max().unwrap_or(0);
        if opts.track_ranks {
            let t0 = Instant::now();
            let mut mr = 0;
            for p in 0..n {
                for (&q, b) in &w.m2l[p] {
                    if q > p && !w.is_neighbor(p, q) && b.nrows().min(b.ncols()) > mr {
                        let s = linalg::singular_values(b.as_ref());
                        mr = mr.max(linalg::truncation_rank(&s, opts.tol));
                    }
                }
            }
            w.stats.max_rank = mr;
            stats.diagnostic_seconds += t0.elapsed().as_secs_f64();
        }
        stats.non_neighbor_couplings += records
            .iter()
            .map(|r: &Record| r.cols.iter().filter(|c| !tree.is_neighbor(k, r.cluster, c.1)).count())
            .sum::<usize>();
        let ranks: Vec<usize> = w.basis.iter().map(|b| b.ncols()).collect();
        stats.r_m = stats.r_m.max(w.stats.max_rank);
        stats.max_basis = stats.max_basis.max(w.stats.max_basis);
        stats.levels.push(w.stats.clone());
        levels[k] = LevelFactor { records, ranks: ranks.clone() };

        if k > 2 {
            let np = tree.n_clusters(k - 1);
            let c = 1 << d;
            let mut new_p2p = vec![BTreeMap::new(); np];
            for (pi, row) in new_p2p.iter_mut().enumerate() {
                for &qi in &tree.cluster(k - 1, pi).neighbors {
                    let rows: usize = (pi * c..(pi + 1) * c).map(|a| ranks[a]).sum();
                    let cols: usize = (qi * c..(qi + 1) * c).map(|b| ranks[b]).sum();
                    let mut blk = Mat::zeros(rows, cols);
                    let mut ro = 0;
                    for a in pi * c..(pi + 1) * c {
                        let mut co = 0;
                        for b in qi * c..(qi + 1) * c {
                            if let Some(m) = w.m2l[a].get(&b) {
                                blk.as_mut().submatrix_mut(ro, co, ranks[a], ranks[b]).copy_from(m);
                            }
                            co += ranks[b];
                        }
                        ro += ranks[a];
                    }
                    row.insert(qi, blk);
                }
            }
            p2p = new_p2p;
            basis = w.parent.take().unwrap();
            m2l = std::mem::take(&mut store.levels[k - 1].m2l);
        } else {
            let mut offs = vec![0];
            for &r in &ranks {
                offs.push(offs.last().unwrap() + r);
            }
            let dim = *offs.last().unwrap();
            let mut a = Mat::zeros(dim, dim);
            for (p, row) in w.m2l.iter().enumerate() {
                for (&q, b) in row {
                    a.as_mut().submatrix_mut(offs[p], offs[q], b.nrows(), b.ncols()).copy_from(b);
                }
            }
            top = Some((a.partial_piv_lu(), offs));
            p2p = Vec::new();
            basis = Vec::new();
            m2l = Vec::new();
        }
    }
    let _ = (p2p, basis, m2l);
    let (top, top_offsets) = top.expect("depth >= 2");

    Ok(IfmmFactorization {
        dim: d,
        depth,
        tol: opts.tol,
        permutation: tree.point_permutation.clone(),
        leaf_ranges: (0..tree.n_clusters(depth)).map(|i| tree.leaf_range(i)).collect(),
        levels,
        top,
        top_offsets,
        stats,
    })
}

impl IfmmFactorization {
    pub fn n_points(&self) -> usize {
        self.permutation.len()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Elimination order of a level.
    pub fn elimination_order(&self, level: usize) -> Vec<usize> {
        self.levels[level].records.iter().map(|r| r.cluster).collect()
    }

    /// Final multipole dimensions of a level.
    pub fn ranks(&self, level: usize) -> &[usize] {
        &self.levels[level].ranks
    }

    /// Solve `A x = b` with `b` in the caller's point order.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n_points() {
            return Err(Error::DimensionMismatch(format!("rhs of length {} for {} points", b.len(), self.n_points())));
        }
        let bm: Vec<f64> = self.permutation.iter().map(|&p| b[p]).collect();
        let xm = self.solve_morton(&bm)?;
        let mut out = vec![0.0; xm.len()];
        for (m, &p) in self.permutation.iter().enumerate() {
            out[p] = xm[m];
        }
        Ok(out)
    }

    /// Solve with `b` and the result in Morton order.
    pub fn solve_morton(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n_points() {
            return Err(Error::DimensionMismatch(format!("rhs of length {} for {} points", b.len(), self.n_points())));
        }
        let c = 1usize << self.dim;
        let mut rb: Vec<Vec<f64>> = self.leaf_ranges.iter().map(|r| b[r.clone()].to_vec()).collect();
        let mut saved: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.depth + 1];
        let mut y: Vec<Vec<f64>> = Vec::new();

        for k in (2..=self.depth).rev() {
            let lf = &self.levels[k];
            let mut rl: Vec<Vec<f64>> = lf.ranks.iter().map(|&r| vec![0.0; r]).collect();
            let mut sv = vec![Vec::new(); lf.ranks.len()];
            for rec in &lf.records {
                let i = rec.cluster;
                let n = rec.n;
                let t = linalg::mat_vec(rec.sinv.as_ref().subcols(0, n), &rb[i]);
                for (kind, q, rq) in &rec.cols {
                    let target = match kind {
                        Coupling::Particle => &mut rb[*q],
                        Coupling::Multipole => &mut rl[*q],
                    };
                    linalg::mat_t_vec_acc(rq.as_ref(), &t[..n], target, -1.0);
                }
                for (a, v) in rl[i].iter_mut().zip(&t[n..]) {
                    *a += v;
                }
                sv[i] = std::mem::take(&mut rb[i]);
            }
            saved[k] = sv;
            if k > 2 {
                rb = (0..lf.ranks.len() / c).map(|p| (p * c..(p + 1) * c).flat_map(|ch| rl[ch].iter().copied()).collect()).collect();
            } else {
                let rhs: Vec<f64> = rl.concat();
                let sol = self.top.solve(Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]));
                if (0..sol.nrows()).any(|i| !sol.read(i, 0).is_finite()) {
                    return Err(Error::Singular);
                }
                y = (0..lf.ranks.len())
                    .map(|i| (self.top_offsets[i]..self.top_offsets[i + 1]).map(|a| sol.read(a, 0)).collect())
                    .collect();
            }
        }

        let mut x: Vec<Vec<f64>> = Vec::new();
        for k in 2..=self.depth {
            let lf = &self.levels[k];
            x = vec![Vec::new(); lf.ranks.len()];
            for rec in lf.records.iter().rev() {
                let i = rec.cluster;
                let mut r = std::mem::take(&mut saved[k][i]);
                for (kind, q, rq) in &rec.cols {
                    let v = match kind {
                        Coupling::Particle => &x[*q],
                        Coupling::Multipole => &y[*q],
                    };
                    linalg::mat_vec_acc(rq.as_ref(), v, &mut r, -1.0);
                }
                r.extend_from_slice(&y[i]);
                let sol = linalg::mat_vec(rec.sinv.as_ref(), &r);
                x[i] = sol[..rec.n].to_vec();
            }
            if k < self.depth {
                let child = &self.levels[k + 1].ranks;
                let mut ny = vec![Vec::new(); child.len()];
                for (p, xp) in x.iter().enumerate() {
                    let mut off = 0;
                    for ch in p * c..(p + 1) * c {
                        ny[ch] = xp[off..off + child[ch]].to_vec();
                        off += child[ch];
                    }
                }
                y = ny;
            }
        }
        Ok(x.concat())
    }
}
