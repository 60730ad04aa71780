//! The extended sparse system: size, fill and equivalence with `A x = b`.

use ifmm::geometry::{build_tree, generate_balanced_points};
use ifmm::kernels::{assemble_dense, Kernel, KernelKind};
use ifmm::linalg::rel_err;
use ifmm::operators::{assemble_extended_dense, init_operators, Symbol};
use ifmm::oracle::{dense_solve, DenseSystem};

fn main() -> ifmm::Result<()> {
    let (n, depth) = (256, 2);
    let pts = generate_balanced_points(n, 2, depth, 5)?;
    let tree = build_tree(&pts, depth)?;
    let k = Kernel::new(KernelKind::Log, 1e-3)?;
    let store = init_operators(&tree, &k, 8, 1e-14)?;
    let (ext, ord) = assemble_extended_dense(&store, &tree)?;

    let nnz = (0..ext.ncols()).map(|j| (0..ext.nrows()).filter(|&i| ext.read(i, j) != 0.0).count()).sum::<usize>();
    let count = |s: Symbol| ord.blocks.iter().filter(|b| b.symbol == s).map(|b| b.len).sum::<usize>();
    println!("extended dimension {} (x {}, y {}, z {})", ord.dim, count(Symbol::X), count(Symbol::Y), count(Symbol::Z));
    println!("nonzeros {nnz} of {} ({:.1}%)", ord.dim * ord.dim, 100.0 * nnz as f64 / (ord.dim * ord.dim) as f64);

    // right-hand side lives in the x rows, in Morton order
    let b: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64).collect();
    let bm = tree.to_morton(&b);
    let mut rhs = vec![0.0; ord.dim];
    for blk in ord.blocks.iter().filter(|b| b.symbol == Symbol::X) {
        let r = tree.leaf_range(blk.cluster);
        rhs[blk.offset..blk.offset + blk.len].copy_from_slice(&bm[r]);
    }
    let x_ext = tree.from_morton(&ord.x_part(&dense_solve(&DenseSystem::new(ext, rhs)?)?));
    let x = dense_solve(&DenseSystem::new(assemble_dense(&k, &pts)?, b)?)?;
    println!("x-part vs dense solve: {:.2e}", rel_err(&x_ext, &x));
    Ok(())
}
