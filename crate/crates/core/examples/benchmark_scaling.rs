//! Factorization time, rank and error over a size sweep.
//!
//! `cargo run --release --example benchmark_scaling -- log 1000,2000,4000 [consolidation]`

use ifmm::bench::{run_one, BenchConfig, CSV_HEADER};
use ifmm::kernels::KernelKind;

fn main() -> ifmm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let kernel: KernelKind = args.get(1).map_or("log", |s| s.as_str()).parse()?;
    let sizes: Vec<usize> = args
        .get(2)
        .map_or("1000,2000,4000", |s| s.as_str())
        .split(',')
        .map(|s| s.trim().parse().expect("size"))
        .collect();
    let mut cfg = BenchConfig::new(kernel, sizes.clone());
    if let Some(f) = args.get(3) {
        cfg.options.consolidation_factor = f.parse().expect("factor");
    }
    println!("{CSV_HEADER},max_basis");
    for n in sizes {
        let run = run_one(&cfg, n)?;
        println!("{},{}", run.result.csv_row(), run.stats.max_basis);
        for l in &run.stats.levels {
            eprintln!("  {}  basis {} aug {} cons {} {:.2}s", l.log_line(), l.max_basis, l.augmentations, l.consolidations, l.seconds);
        }
    }
    Ok(())
}
