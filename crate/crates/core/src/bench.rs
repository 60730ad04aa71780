//! Benchmark protocol: build, factorize, solve against a known solution.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{auto_depth, build_tree, generate_balanced_points};
use crate::kernels::{Kernel, KernelKind};
use crate::operators::{fmm_matvec, init_operators};
use crate::oracle::kernel_matvec;
use crate::solver::{factorize, FactorStats, SolverOptions};
use crate::{linalg, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepthRule {
    /// `max(2, ⌈log_{2^d}(N/100)⌉)`
    Auto,
    Fixed(usize),
}

impl DepthRule {
    pub fn depth(self, n: usize, dim: usize) -> usize {
        match self {
            DepthRule::Auto => auto_depth(n, dim),
            DepthRule::Fixed(d) => d,
        }
    }
}

impl FromStr for DepthRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(DepthRule::Auto);
        }
        s.parse().map(DepthRule::Fixed).map_err(|_| Error::Parse(format!("depth must be `auto` or an integer, got `{s}`")))
    }
}

impl fmt::Display for DepthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepthRule::Auto => f.write_str("auto"),
            DepthRule::Fixed(d) => write!(f, "{d}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub kernel: KernelKind,
    pub sizes: Vec<usize>,
    pub tol: f64,
    pub a: f64,
    pub seed: u64,
    pub depth: DepthRule,
    pub dim: usize,
    /// Chebyshev proxy order.
    pub order: usize,
    /// Largest `N` whose right-hand side is formed by the exact `O(N²)` product.
    pub oracle_cap: usize,
    pub solve_repeats: usize,
    pub options: SolverOptions,
}

impl BenchConfig {
    pub fn new(kernel: KernelKind, sizes: Vec<usize>) -> Self {
        BenchConfig {
            kernel,
            sizes,
            tol: 1e-14,
            a: 1e-3,
            seed: 0,
            depth: DepthRule::Auto,
            dim: 2,
            order: 8,
            oracle_cap: 20_000,
            solve_repeats: 3,
            options: SolverOptions::new(1e-14),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub kernel: String,
    pub n: usize,
    pub depth: usize,
    pub tol: f64,
    pub t_a: f64,
    pub t_f: f64,
    pub t_s: f64,
    pub r_m: usize,
    pub rel_error: f64,
    pub oracle_used: bool,
}

pub const CSV_HEADER: &str = "kernel,n,depth,tol,t_a,t_f,t_s,r_m,rel_error,oracle_used";

impl BenchmarkResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:e},{:.6},{:.6},{:.6},{},{:.6e},{}",
            self.kernel, self.n, self.depth, self.tol, self.t_a, self.t_f, self.t_s, self.r_m, self.rel_error, self.oracle_used
        )
    }
}

/// One benchmark instance together with the factorization diagnostics.
#[derive(Clone, Debug)]
pub struct BenchRun {
    pub result: BenchmarkResult,
    pub stats: FactorStats,
}

pub fn run_one(cfg: &BenchConfig, n: usize) -> Result<BenchRun> {
    let depth = cfg.depth.depth(n, cfg.dim);
    let kernel = Kernel::new(cfg.kernel, cfg.a)?;
    let mut opts = cfg.options.clone();
    opts.tol = cfg.tol;

    let t0 = Instant::now();
    let ps = generate_balanced_points(n, cfg.dim, depth, cfg.seed)?;
    let tree = build_tree(&ps, depth)?;
    let store = init_operators(&tree, &kernel, cfg.order, cfg.tol)?;
    let t_a = t0.elapsed().as_secs_f64();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let x_exact: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let oracle_used = n <= cfg.oracle_cap;
    let b = if oracle_used { kernel_matvec(&kernel, &ps, &x_exact)? } else { fmm_matvec(&store, &tree, &x_exact)? };

    let t1 = Instant::now();
    let fact = factorize(store, &tree, &opts).map_err(|e| Error::InvalidArgument(format!("N = {n}: {e}")))?;
    let t_f = (t1.elapsed().as_secs_f64() - fact.stats.diagnostic_seconds).max(0.0);

    let mut times = Vec::new();
    let mut x = Vec::new();
    for _ in 0..cfg.solve_repeats.max(1) {
        let t2 = Instant::now();
        x = fact.solve(&b)?;
        times.push(t2.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t_s = times[times.len() / 2];

    Ok(BenchRun {
        result: BenchmarkResult {
            kernel: cfg.kernel.id().to_string(),
            n,
            depth,
            tol: cfg.tol,
            t_a,
            t_f,
            t_s,
            r_m: fact.stats.r_m,
            rel_error: linalg::rel_err(&x, &x_exact),
            oracle_used,
        },
        stats: fact.stats,
    })
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchmarkResult>> {
    if cfg.sizes.is_empty() {
        return Err(Error::InvalidArgument("empty size list".into()));
    }
    cfg.sizes.iter().map(|&n| run_one(cfg, n).map(|r| r.result)).collect()
}

/// Like [`run_benchmark`] but keeps diagnostics and runs up to `instances`
/// sizes at once. Concurrent instances share the CPU, so their wall times
/// are not comparable with sequential runs.
pub fn run_parallel(cfg: &BenchConfig, instances: usize) -> Result<Vec<BenchRun>> {
    if cfg.sizes.is_empty() {
        return Err(Error::InvalidArgument("empty size list".into()));
    }
    let mut out = Vec::with_capacity(cfg.sizes.len());
    for chunk in cfg.sizes.chunks(instances.max(1)) {
        let batch: Vec<Result<BenchRun>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&n| s.spawn(move || run_one(cfg, n))).collect();
            handles.into_iter().map(|h| h.join().expect("benchmark thread panicked")).collect()
        });
        for r in batch {
            out.push(r?);
        }
    }
    Ok(out)
}

pub fn write_csv(results: &[BenchmarkResult], mut w: impl Write) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in results {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn write_json(results: &[BenchmarkResult], w: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(w, results).map_err(|e| Error::Parse(e.to_string()))
}

/// Median of the successive ratios `t[i+1] / t[i]`.
pub fn median_doubling_ratio(times: &[f64]) -> Option<f64> {
    let mut r: Vec<f64> = times.windows(2).map(|w| w[1] / w[0]).collect();
    if r.is_empty() {
        return None;
    }
    r.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(r[r.len() / 2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_rule_parse() {
        assert_eq!("auto".parse::<DepthRule>().unwrap(), DepthRule::Auto);
        assert_eq!("4".parse::<DepthRule>().unwrap(), DepthRule::Fixed(4));
        assert!("deep".parse::<DepthRule>().is_err());
        assert_eq!(DepthRule::Auto.depth(16_000, 2), 4);
    }

    #[test]
    fn csv_schema() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), CSV_HEADER);
    }

    #[test]
    fn doubling_ratio() {
        assert_eq!(median_doubling_ratio(&[1.0, 2.0, 5.0, 10.0]), Some(2.0));
        assert_eq!(median_doubling_ratio(&[1.0]), None);
    }

    #[test]
    fn small_run() {
        let mut cfg = BenchConfig::new(KernelKind::Log, vec![400]);
        cfg.depth = DepthRule::Fixed(2);
        let r = run_benchmark(&cfg).unwrap();
        assert!(r[0].oracle_used);
        assert!(r[0].rel_error < 1e-8, "{}", r[0].rel_error);
    }
}
