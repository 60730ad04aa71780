//! Ranks of the blocks coupling three adjacent clusters, before and after
//! eliminating the middle one.
//!
//! `cargo run --release --example rank_study -- 2`

use ifmm::kernels::KernelKind;
use ifmm::rankstudy::{schur_rank_experiment, CSV_HEADER};

fn main() -> ifmm::Result<()> {
    let dim: usize = std::env::args().nth(1).map_or(1, |s| s.parse().expect("dim"));
    let cases: &[(KernelKind, &[usize])] = if dim == 1 {
        &[(KernelKind::Log, &[32, 256, 2048]), (KernelKind::InverseMultiquadric, &[256])]
    } else {
        &[(KernelKind::Log, &[64, 441]), (KernelKind::Laplace3d, &[225])]
    };
    println!("{CSV_HEADER}");
    for &(kind, sizes) in cases {
        for &n in sizes {
            println!("{}", schur_rank_experiment(kind, dim, n, 0)?.csv_row());
        }
    }
    Ok(())
}
