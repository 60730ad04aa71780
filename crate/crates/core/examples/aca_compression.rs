//! ACA against truncated SVD on a well-separated log-kernel block.

use ifmm::geometry::generate_uniform_points;
use ifmm::kernels::{Kernel, KernelKind};
use ifmm::lowrank::{aca, numerical_rank, svd_truncate};

fn main() -> ifmm::Result<()> {
    let k = Kernel::new(KernelKind::Log, 1e-3)?;
    let src = generate_uniform_points(300, 2, 3)?;
    // targets in a box three widths to the right
    let tgt: Vec<f64> = generate_uniform_points(250, 2, 4)?
        .coords()
        .chunks(2)
        .flat_map(|p| [0.25 * p[0] + 3.0, 0.25 * p[1]])
        .collect();
    let src: Vec<f64> = src.coords().iter().map(|x| 0.25 * x).collect();
    let block = k.block(2, &tgt, &src);

    for tol in [1e-4, 1e-8, 1e-12] {
        let row = |i: usize| (0..block.ncols()).map(|j| block.read(i, j)).collect();
        let col = |j: usize| (0..block.nrows()).map(|i| block.read(i, j)).collect();
        let r = aca(row, col, (block.nrows(), block.ncols()), tol)?;
        let s = svd_truncate(block.as_ref(), tol)?;
        println!(
            "tol {tol:.0e}: aca rank {:>2} ({} crosses, err {:.2e})  svd rank {:>2} (err {:.2e})  numerical rank {}",
            r.lowrank.rank(),
            r.crosses,
            r.lowrank.rel_error(block.as_ref()),
            s.rank(),
            s.rel_error(block.as_ref()),
            numerical_rank(block.as_ref(), tol),
        );
    }
    Ok(())
}
