//! Point sets, the uniform 2^d tree in Morton order, neighbor and interaction lists.

use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

const DUP_TOL: f64 = 1e-14;

/// Points in `[-1,1]^dim`, stored flat (`dim` coordinates per point).
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    /// Validates the box and rejects coincident points.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        if coords.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates do not split into {}-vectors",
                coords.len(),
                dim
            )));
        }
        let ps = PointSet { dim, coords };
        for i in 0..ps.len() {
            if ps.point(i).iter().any(|c| !c.is_finite() || c.abs() > 1.0) {
                return Err(Error::OutOfBox { index: i });
            }
        }
        ps.check_duplicates()?;
        Ok(ps)
    }

    pub fn from_points(dim: usize, pts: &[Vec<f64>]) -> Result<Self> {
        let mut coords = Vec::with_capacity(pts.len() * dim);
        for p in pts {
            if p.len() != dim {
                return Err(Error::DimensionMismatch(format!("point of length {}", p.len())));
            }
            coords.extend_from_slice(p);
        }
        Self::new(dim, coords)
    }

    fn check_duplicates(&self) -> Result<()> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.point(a)[0].partial_cmp(&self.point(b)[0]).unwrap());
        for (k, &i) in idx.iter().enumerate() {
            for &j in &idx[k + 1..] {
                if self.point(j)[0] - self.point(i)[0] > DUP_TOL {
                    break;
                }
                if dist(self.point(i), self.point(j)) <= DUP_TOL {
                    return Err(Error::DuplicatePoints(i.min(j), i.max(j)));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Flat coordinates of points `range`.
    pub fn slice(&self, range: Range<usize>) -> &[f64] {
        &self.coords[range.start * self.dim..range.end * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// One point per line, 17 significant digits.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for i in 0..self.len() {
            let line: Vec<String> = self.point(i).iter().map(|c| format!("{:.16e}", c)).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_from(dim: usize, r: impl BufRead) -> Result<Self> {
        let mut coords = Vec::new();
        for line in r.lines() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = t
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != dim {
                return Err(Error::Parse(format!("expected {dim} values, got `{t}`")));
            }
            coords.extend(vals);
        }
        Self::new(dim, coords)
    }

    pub fn load(dim: usize, path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(dim, std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_dim(dim: usize) -> Result<()> {
    if (1..=3).contains(&dim) {
        Ok(())
    } else {
        Err(Error::InvalidDimension(dim))
    }
}

/// Interleave cell coordinates, x bit least significant.
pub fn morton_encode(cell: &[usize], level: usize) -> usize {
    let d = cell.len();
    let mut code = 0;
    for b in 0..level {
        for (ax, &c) in cell.iter().enumerate() {
            code |= ((c >> b) & 1) << (b * d + ax);
        }
    }
    code
}

pub fn morton_decode(code: usize, dim: usize, level: usize) -> Vec<usize> {
    let mut cell = vec![0; dim];
    for b in 0..level {
        for (ax, c) in cell.iter_mut().enumerate() {
            *c |= ((code >> (b * dim + ax)) & 1) << b;
        }
    }
    cell
}

/// Uniform points per leaf cell, counts differing by at most one.
pub fn generate_balanced_points(n_total: usize, dim: usize, depth: usize, seed: u64) -> Result<PointSet> {
    check_dim(dim)?;
    let cells = 1usize << (dim * depth);
    if n_total < cells {
        return Err(Error::EmptyCells { n: n_total, depth, cells });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = n_total / cells;
    let extra = n_total % cells;
    let h = 2.0 / (1usize << depth) as f64;
    let mut coords = Vec::with_capacity(n_total * dim);
    for c in 0..cells {
        let cell = morton_decode(c, dim, depth);
        let count = base + usize::from(c < extra);
        for _ in 0..count {
            for &ci in &cell {
                let lo = -1.0 + h * ci as f64;
                // keep a margin so the point lands in this cell after rounding
                let u: f64 = rng.gen_range(1e-12..1.0 - 1e-12);
                coords.push(lo + h * u);
            }
        }
    }
    Ok(PointSet { dim, coords })
}

/// Uniform random points in `[-1,1]^dim` (no balancing).
pub fn generate_uniform_points(n: usize, dim: usize, seed: u64) -> Result<PointSet> {
    check_dim(dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    PointSet::new(dim, coords)
}

#[derive(Clone, Debug)]
pub struct Cluster {
    pub level: usize,
    pub index: usize,
    pub center: Vec<f64>,
    pub half_width: f64,
    pub children: Vec<usize>,
    /// Leaf only.
    pub point_range: Option<Range<usize>>,
    pub neighbors: Vec<usize>,
    pub interaction_list: Vec<usize>,
    pub eliminated: bool,
}

impl Cluster {
    pub fn parent(&self, dim: usize) -> usize {
        self.index >> dim
    }
}

#[derive(Clone, Debug)]
pub struct ClusterTree {
    pub depth: usize,
    pub dim: usize,
    /// `levels[k]` holds the `2^(d k)` clusters of level `k`, Morton order.
    pub levels: Vec<Vec<Cluster>>,
    /// `point_permutation[m]` is the input index of the `m`-th sorted point.
    pub point_permutation: Vec<usize>,
    /// Points in Morton order.
    pub points: PointSet,
}

impl ClusterTree {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn n_clusters(&self, level: usize) -> usize {
        1 << (self.dim * level)
    }

    pub fn cluster(&self, level: usize, i: usize) -> &Cluster {
        &self.levels[level][i]
    }

    pub fn leaves(&self) -> &[Cluster] {
        &self.levels[self.depth]
    }

    pub fn leaf_range(&self, i: usize) -> Range<usize> {
        self.levels[self.depth][i].point_range.clone().unwrap()
    }

    pub fn leaf_points(&self, i: usize) -> &[f64] {
        self.points.slice(self.leaf_range(i))
    }

    pub fn children(&self, level: usize, i: usize) -> Range<usize> {
        let c = 1 << self.dim;
        let _ = level;
        i * c..(i + 1) * c
    }

    pub fn is_neighbor(&self, level: usize, i: usize, j: usize) -> bool {
        self.levels[level][i].neighbors.binary_search(&j).is_ok()
    }

    /// Reorder a vector given in input order into Morton order.
    pub fn to_morton(&self, v: &[f64]) -> Vec<f64> {
        self.point_permutation.iter().map(|&p| v[p]).collect()
    }

    /// Inverse of [`ClusterTree::to_morton`].
    pub fn from_morton(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (m, &p) in self.point_permutation.iter().enumerate() {
            out[p] = v[m];
        }
        out
    }
}

/// Sort points into Morton order and build every level down to `depth`.
pub fn build_tree(ps: &PointSet, depth: usize) -> Result<ClusterTree> {
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be at least 1".into()));
    }
    let dim = ps.dim();
    if dim * depth >= usize::BITS as usize - 1 {
        return Err(Error::InvalidArgument(format!("depth {depth} too large")));
    }
    let m = 1usize << depth;
    let codes: Vec<usize> = (0..ps.len())
        .map(|i| {
            let cell: Vec<usize> = ps
                .point(i)
                .iter()
                .map(|&c| (((c + 1.0) / 2.0 * m as f64) as usize).min(m - 1))
                .collect();
            morton_encode(&cell, depth)
        })
        .collect();
    let mut perm: Vec<usize> = (0..ps.len()).collect();
    perm.sort_by_key(|&i| codes[i]);
    let mut sorted = Vec::with_capacity(ps.coords().len());
    for &i in &perm {
        sorted.extend_from_slice(ps.point(i));
    }
    let points = PointSet { dim, coords: sorted };

    let nleaf = 1usize << (dim * depth);
    let mut starts = vec![0usize; nleaf + 1];
    for &i in &perm {
        starts[codes[i] + 1] += 1;
    }
    for c in 0..nleaf {
        starts[c + 1] += starts[c];
    }

    let mut levels = Vec::with_capacity(depth + 1);
    for k in 0..=depth {
        let n = 1usize << (dim * k);
        let h = 1.0 / (1usize << k) as f64;
        let clusters = (0..n)
            .map(|i| {
                let cell = morton_decode(i, dim, k);
                Cluster {
                    level: k,
                    index: i,
                    center: cell.iter().map(|&c| -1.0 + h * (2 * c + 1) as f64).collect(),
                    half_width: h,
                    children: if k < depth { ((i << dim)..((i + 1) << dim)).collect() } else { Vec::new() },
                    point_range: if k == depth { Some(starts[i]..starts[i + 1]) } else { None },
                    neighbors: Vec::new(),
                    interaction_list: Vec::new(),
                    eliminated: false,
                }
            })
            .collect();
        levels.push(clusters);
    }
    let mut tree = ClusterTree { depth, dim, levels, point_permutation: perm, points };
    compute_lists(&mut tree);
    Ok(tree)
}

/// Same-level clusters whose closed boxes touch, self included.
pub fn neighbor_indices(dim: usize, level: usize, i: usize) -> Vec<usize> {
    let cell = morton_decode(i, dim, level);
    let m = 1i64 << level;
    let mut out = Vec::with_capacity(3usize.pow(dim as u32));
    let total = 3usize.pow(dim as u32);
    for t in 0..total {
        let mut q = Vec::with_capacity(dim);
        let mut rem = t;
        let mut ok = true;
        for &c in &cell {
            let off = (rem % 3) as i64 - 1;
            rem /= 3;
            let v = c as i64 + off;
            if v < 0 || v >= m {
                ok = false;
                break;
            }
            q.push(v as usize);
        }
        if ok {
            out.push(morton_encode(&q, level));
        }
    }
    out.sort_unstable();
    out
}

/// Fill neighbor and interaction lists at every level.
pub fn compute_lists(tree: &mut ClusterTree) {
    let d = tree.dim;
    for k in 0..=tree.depth {
        for i in 0..tree.levels[k].len() {
            let nb = neighbor_indices(d, k, i);
            let il = if k < 2 {
                Vec::new()
            } else {
                let mut v: Vec<usize> = neighbor_indices(d, k - 1, i >> d)
                    .into_iter()
                    .flat_map(|p| (p << d)..((p + 1) << d))
                    .filter(|j| nb.binary_search(j).is_err())
                    .collect();
                v.sort_unstable();
                v
            };
            let c = &mut tree.levels[k][i];
            c.neighbors = nb;
            c.interaction_list = il;
        }
    }
}

/// `max(2, ceil(log_{2^d}(N/100)))`.
pub fn auto_depth(n: usize, dim: usize) -> usize {
    let per = (1usize << dim) as f64;
    let x = (n as f64 / 100.0).ln() / per.ln();
    (x.ceil().max(2.0)) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrant_order() {
        let ps = PointSet::from_points(
            2,
            &[vec![0.5, 0.5], vec![-0.5, 0.5], vec![0.5, -0.5], vec![-0.5, -0.5]],
        )
        .unwrap();
        let t = build_tree(&ps, 1).unwrap();
        let got: Vec<&[f64]> = (0..4).map(|i| t.points.point(i)).collect();
        assert_eq!(got, vec![&[-0.5, -0.5][..], &[0.5, -0.5], &[-0.5, 0.5], &[0.5, 0.5]]);
        assert_eq!(t.point_permutation, vec![3, 2, 1, 0]);
    }

    #[test]
    fn level_counts() {
        let ps = generate_balanced_points(64, 2, 2, 1).unwrap();
        let t = build_tree(&ps, 2).unwrap();
        assert_eq!(t.levels[2].len(), 16);
        assert_eq!(t.levels[1].len(), 4);
        assert_eq!(t.levels[1][0].neighbors, vec![0, 1, 2, 3]);
        assert!(t.levels[1][0].interaction_list.is_empty());
    }

    #[test]
    fn interior_and_corner_lists() {
        let ps = generate_balanced_points(64, 2, 3, 1).unwrap();
        let t = build_tree(&ps, 3).unwrap();
        let interior = morton_encode(&[3, 4], 3);
        assert_eq!(t.levels[3][interior].neighbors.len(), 9);
        assert_eq!(t.levels[3][interior].interaction_list.len(), 27);
        assert_eq!(t.levels[2][0].neighbors.len(), 4);
    }

    #[test]
    fn one_d_interaction() {
        let ps = generate_balanced_points(8, 1, 2, 0).unwrap();
        let t = build_tree(&ps, 2).unwrap();
        // 1-based clusters 1..4 are 0..3 here
        assert_eq!(t.levels[2][0].interaction_list, vec![2, 3]);
        assert_eq!(t.levels[2][1].interaction_list, vec![3]);
    }

    #[test]
    fn balanced_counts() {
        let ps = generate_balanced_points(1000, 2, 4, 7).unwrap();
        let t = build_tree(&ps, 4).unwrap();
        for c in t.leaves() {
            let n = c.point_range.as_ref().unwrap().len();
            assert!(n == 3 || n == 4, "{n}");
        }
        let again = generate_balanced_points(1000, 2, 4, 7).unwrap();
        assert_eq!(ps, again);
    }

    #[test]
    fn one_point_per_cell() {
        let ps = generate_balanced_points(16, 2, 2, 0).unwrap();
        let t = build_tree(&ps, 2).unwrap();
        assert!(t.leaves().iter().all(|c| c.point_range.as_ref().unwrap().len() == 1));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(PointSet::new(2, vec![0.0, 1.5]), Err(Error::OutOfBox { .. })));
        assert!(matches!(
            PointSet::new(1, vec![0.25, 0.25 + 1e-16]),
            Err(Error::DuplicatePoints(0, 1))
        ));
        assert!(matches!(PointSet::new(4, vec![0.0; 4]), Err(Error::InvalidDimension(4))));
        assert!(generate_balanced_points(10, 2, 2, 0).is_err());
    }

    #[test]
    fn depth_rule() {
        assert_eq!(auto_depth(1000, 2), 2);
        assert_eq!(auto_depth(2000, 2), 3);
        assert_eq!(auto_depth(8000, 2), 4);
        assert_eq!(auto_depth(32000, 2), 5);
        assert_eq!(auto_depth(64000, 2), 5);
        assert_eq!(auto_depth(50, 2), 2);
    }

    #[test]
    fn file_roundtrip() {
        let ps = generate_balanced_points(20, 3, 1, 3).unwrap();
        let mut buf = Vec::new();
        ps.write_to(&mut buf).unwrap();
        let text = format!("# header\n{}", String::from_utf8(buf).unwrap());
        let back = PointSet::read_from(3, text.as_bytes()).unwrap();
        assert_eq!(back, ps);
    }
}
