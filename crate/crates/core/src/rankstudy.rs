//! Ranks of neighbor, well-separated and Schur-complement blocks for three
//! adjacent clusters on a line (1D) or a 1×3 strip of squares (2D).

use std::io::Write;

use faer::prelude::*;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernels::{Kernel, KernelKind};
use crate::lowrank::numerical_rank;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    /// Uniform random points in each cluster.
    Random(u64),
    /// Cell-centred grid; in 2D `n` must be a perfect square.
    Grid,
}

#[derive(Clone, Debug)]
pub struct RankStudyConfig {
    pub kernel: KernelKind,
    pub dim: usize,
    pub n: usize,
    pub placement: Placement,
    pub precision: f64,
    /// Cluster side length.
    pub side: f64,
    /// Regularization radius as a fraction of the side.
    pub a_fraction: f64,
}

impl RankStudyConfig {
    pub fn new(kernel: KernelKind, dim: usize, n: usize, placement: Placement) -> Self {
        RankStudyConfig { kernel, dim, n, placement, precision: 1e-15, side: 1.0, a_fraction: 0.005 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub kernel: String,
    pub dim: usize,
    pub n: usize,
    pub neighbor_rank: usize,
    pub interaction_rank: usize,
    /// `None` when the middle block could not be inverted.
    pub schur_rank: Option<usize>,
    pub precision: f64,
}

pub const CSV_HEADER: &str = "kernel,dim,n,neighbor_rank,interaction_rank,schur_rank,precision";

impl RankReport {
    pub fn csv_row(&self) -> String {
        let s = self.schur_rank.map_or_else(|| "NA".to_string(), |r| r.to_string());
        format!("{},{},{},{},{},{},{:e}", self.kernel, self.dim, self.n, self.neighbor_rank, self.interaction_rank, s, self.precision)
    }

    pub fn ranks(&self) -> (usize, usize, Option<usize>) {
        (self.neighbor_rank, self.interaction_rank, self.schur_rank)
    }
}

/// Points of the `c`-th cluster, shifted by `c` sides along the first axis.
fn cluster_points(cfg: &RankStudyConfig, c: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let (n, d, h) = (cfg.n, cfg.dim, cfg.side);
    let shift = c as f64 * h;
    let mut pts = Vec::with_capacity(n * d);
    match cfg.placement {
        Placement::Random(_) => {
            for _ in 0..n {
                pts.push(shift + h * rng.gen::<f64>());
                for _ in 1..d {
                    pts.push(h * rng.gen::<f64>());
                }
            }
        }
        Placement::Grid => {
            let m = if d == 1 { n } else { (n as f64).sqrt().round() as usize };
            if m.pow(d as u32) != n {
                return Err(Error::InvalidArgument(format!("grid placement needs a perfect square, got {n}")));
            }
            let g = |i: usize| (i as f64 + 0.5) / m as f64 * h;
            for k in 0..n {
                pts.push(shift + g(k % m));
                if d == 2 {
                    pts.push(g(k / m));
                }
            }
        }
    }
    Ok(pts)
}

pub fn run_rank_study(cfg: &RankStudyConfig) -> Result<RankReport> {
    if !(cfg.dim == 1 || cfg.dim == 2) {
        return Err(Error::InvalidDimension(cfg.dim));
    }
    if cfg.n < 8 {
        return Err(Error::InvalidArgument(format!("need at least 8 points per cluster, got {}", cfg.n)));
    }
    let kernel = Kernel::new(cfg.kernel, cfg.a_fraction * cfg.side)?;
    let seed = match cfg.placement {
        Placement::Random(s) => s,
        Placement::Grid => 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..3).map(|c| cluster_points(cfg, c, &mut rng)).collect::<Result<_>>()?;
    let d = cfg.dim;
    let g12 = kernel.block(d, &x[0], &x[1]);
    let g13 = kernel.block(d, &x[0], &x[2]);
    let g23 = kernel.block(d, &x[1], &x[2]);
    let g22 = kernel.self_block(d, &x[1]);

    let lu = g22.partial_piv_lu();
    let z = lu.solve(&g23);
    let schur_rank = if (0..z.ncols()).all(|j| (0..z.nrows()).all(|i| z.read(i, j).is_finite())) {
        let s: Mat<f64> = &g13 - &g12 * &z;
        Some(numerical_rank(s.as_ref(), cfg.precision))
    } else {
        None
    };
    Ok(RankReport {
        kernel: cfg.kernel.id().to_string(),
        dim: d,
        n: cfg.n,
        neighbor_rank: numerical_rank(g12.as_ref(), cfg.precision),
        interaction_rank: numerical_rank(g13.as_ref(), cfg.precision),
        schur_rank,
        precision: cfg.precision,
    })
}

/// Random placement with the given seed, precision `1e-15`, `a = 0.005·side`.
pub fn schur_rank_experiment(kernel: KernelKind, dim: usize, n: usize, seed: u64) -> Result<RankReport> {
    run_rank_study(&RankStudyConfig::new(kernel, dim, n, Placement::Random(seed)))
}

pub fn write_csv(reports: &[RankReport], mut w: impl Write) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_log_line() {
        let r = schur_rank_experiment(KernelKind::Log, 1, 32, 0).unwrap();
        assert!(r.neighbor_rank <= 32 && r.interaction_rank <= r.neighbor_rank);
        let s = r.schur_rank.unwrap();
        assert!(s <= r.interaction_rank + r.neighbor_rank);
    }

    #[test]
    fn grid_needs_square() {
        let cfg = RankStudyConfig::new(KernelKind::Log, 2, 50, Placement::Grid);
        assert!(run_rank_study(&cfg).is_err());
        let cfg = RankStudyConfig::new(KernelKind::Log, 2, 49, Placement::Grid);
        assert!(run_rank_study(&cfg).is_ok());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(schur_rank_experiment(KernelKind::Log, 3, 32, 0).is_err());
        assert!(schur_rank_experiment(KernelKind::Log, 1, 4, 0).is_err());
    }

    #[test]
    fn csv_row_shape() {
        let r = schur_rank_experiment(KernelKind::Log, 1, 16, 1).unwrap();
        assert_eq!(r.csv_row().split(',').count(), CSV_HEADER.split(',').count());
    }
}
