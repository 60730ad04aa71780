//! Factorize once, solve several right-hand sides.
//!
//! `cargo run --release --example solve_kernel_system -- biharmonic 8000`

use std::time::Instant;

use ifmm::geometry::{auto_depth, build_tree, generate_balanced_points};
use ifmm::kernels::{Kernel, KernelKind};
use ifmm::linalg::rel_err;
use ifmm::operators::{fmm_matvec, init_operators};
use ifmm::solver::{factorize, SolverOptions};

fn main() -> ifmm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let kind: KernelKind = args.get(1).map_or("log", |s| s.as_str()).parse()?;
    let n: usize = args.get(2).map_or(Ok(8000), |s| s.parse()).expect("N");
    let depth = auto_depth(n, 2);
    let pts = generate_balanced_points(n, 2, depth, 2)?;
    let tree = build_tree(&pts, depth)?;
    let k = Kernel::new(kind, 1e-3)?;
    let store = init_operators(&tree, &k, 8, 1e-14)?;

    let xs: Vec<Vec<f64>> = (0..4).map(|s| (0..n).map(|i| ((i + 31 * s) as f64 * 0.11).cos()).collect()).collect();
    let bs: Vec<Vec<f64>> = xs.iter().map(|x| fmm_matvec(&store, &tree, x)).collect::<Result<_, _>>()?;

    let t = Instant::now();
    let fact = factorize(store, &tree, &SolverOptions::new(1e-14))?;
    println!("{kind}, N = {n}: factorized in {:.2}s, r_m {}", t.elapsed().as_secs_f64(), fact.stats.r_m);
    for l in &fact.stats.levels {
        println!("  level {}: {} clusters, max rank {}, {} fill-ins compressed", l.level, l.clusters, l.max_rank, l.fillins_compressed);
    }
    for (x, b) in xs.iter().zip(&bs) {
        let t = Instant::now();
        let y = fact.solve(b)?;
        println!("  solve {:.4}s  error {:.2e}", t.elapsed().as_secs_f64(), rel_err(&y, x));
    }
    Ok(())
}
