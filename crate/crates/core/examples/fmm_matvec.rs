//! Fast matvec against the `O(N²)` product.

use std::time::Instant;

use ifmm::geometry::{auto_depth, build_tree, generate_balanced_points};
use ifmm::kernels::{Kernel, KernelKind};
use ifmm::linalg::rel_err;
use ifmm::operators::{fmm_matvec, init_operators};
use ifmm::oracle::kernel_matvec;

fn main() -> ifmm::Result<()> {
    let n = 4096;
    let depth = auto_depth(n, 2);
    let pts = generate_balanced_points(n, 2, depth, 11)?;
    let tree = build_tree(&pts, depth)?;
    let q: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
    for kind in KernelKind::ALL {
        let k = Kernel::new(kind, 1e-3)?;
        let t = Instant::now();
        let store = init_operators(&tree, &k, 8, 1e-14)?;
        let t_init = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let fast = fmm_matvec(&store, &tree, &q)?;
        let t_fast = t.elapsed().as_secs_f64();
        let exact = kernel_matvec(&k, &pts, &q)?;
        println!(
            "{:>22}: max rank {:>3}  deviation {:.2e}  init {t_init:.2}s  apply {t_fast:.3}s",
            kind.id(),
            store.max_rank(),
            rel_err(&fast, &exact)
        );
    }
    Ok(())
}
