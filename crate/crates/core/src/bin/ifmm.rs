//! `ifmm` command-line front end.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ifmm::bench::{self, BenchConfig, DepthRule};
use ifmm::geometry::{build_tree, generate_balanced_points};
use ifmm::kernels::{Kernel, KernelKind};
use ifmm::operators::{fmm_matvec, init_operators, write_extended_triplets};
use ifmm::oracle::{dense_solve, kernel_matvec, DenseSystem};
use ifmm::rankstudy::{self, Placement, RankStudyConfig};
use ifmm::solver::{factorize, SolverOptions};
use ifmm::{linalg, Result};

#[derive(Parser)]
#[command(name = "ifmm", version, about = "Inverse fast multipole method solver and benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Assemble, factorize and solve over a list of sizes.
    Bench {
        #[arg(long, default_value = "log")]
        kernel: KernelKind,
        #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1e-14)]
        tol: f64,
        #[arg(long, default_value_t = 1e-3)]
        a: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "auto")]
        depth: DepthRule,
        /// `.csv` or `.json`; CSV on stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1.5)]
        consolidation: f64,
        /// Run up to this many sizes concurrently.
        #[arg(long, default_value_t = 1)]
        parallel_instances: usize,
        /// Per-level statistics on stderr.
        #[arg(long, short)]
        verbose: bool,
    },
    /// Neighbor, interaction and Schur-complement ranks of three adjacent clusters.
    Rankstudy {
        #[arg(long, default_value = "log")]
        kernel: KernelKind,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, value_delimiter = ',', default_value = "32,256,2048")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-15)]
        precision: f64,
        /// Regular grid instead of random points.
        #[arg(long)]
        grid: bool,
    },
    /// Compare the solver and the fast matvec against the dense oracle.
    Verify {
        #[arg(long, default_value = "log")]
        kernel: KernelKind,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1e-14)]
        tol: f64,
        #[arg(long, default_value_t = 1e-3)]
        a: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "auto")]
        depth: DepthRule,
    },
    /// Coordinate triplets of the extended sparse matrix.
    DumpExtended {
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value = "log")]
        kernel: KernelKind,
        #[arg(long, default_value = "2")]
        depth: DepthRule,
        #[arg(long, default_value_t = 1e-14)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Bench { kernel, sizes, tol, a, seed, depth, out, consolidation, parallel_instances, verbose } => {
            let mut cfg = BenchConfig::new(kernel, sizes);
            cfg.tol = tol;
            cfg.a = a;
            cfg.seed = seed;
            cfg.depth = depth;
            cfg.options.consolidation_factor = consolidation;
            let runs = bench::run_parallel(&cfg, parallel_instances)?;
            if verbose {
                for r in &runs {
                    eprintln!("N = {} (max basis {})", r.result.n, r.stats.max_basis);
                    for l in &r.stats.levels {
                        eprintln!("  {}", l.log_line());
                    }
                }
            }
            let results: Vec<_> = runs.into_iter().map(|r| r.result).collect();
            let json = out.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "json"));
            let mut w = output(&out)?;
            if json {
                bench::write_json(&results, &mut w)?;
            } else {
                bench::write_csv(&results, &mut w)?;
            }
            w.flush()?;
            Ok(true)
        }
        Cmd::Rankstudy { kernel, dim, sizes, seed, precision, grid } => {
            let mut reports = Vec::new();
            for n in sizes {
                let placement = if grid { Placement::Grid } else { Placement::Random(seed) };
                let mut cfg = RankStudyConfig::new(kernel, dim, n, placement);
                cfg.precision = precision;
                reports.push(rankstudy::run_rank_study(&cfg)?);
            }
            rankstudy::write_csv(&reports, io::stdout().lock())?;
            Ok(true)
        }
        Cmd::Verify { kernel, n, tol, a, seed, depth } => {
            let depth = depth.depth(n, 2);
            let k = Kernel::new(kernel, a)?;
            let ps = generate_balanced_points(n, 2, depth, seed)?;
            let tree = build_tree(&ps, depth)?;
            let store = init_operators(&tree, &k, 8, tol)?;
            let b: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
            let mv = linalg::rel_err(&fmm_matvec(&store, &tree, &b)?, &kernel_matvec(&k, &ps, &b)?);
            let fact = factorize(store, &tree, &SolverOptions::new(tol))?;
            let x = fact.solve(&b)?;
            let x_ref = dense_solve(&DenseSystem::from_kernel(&k, &ps, b, 8000)?)?;
            let sol = linalg::rel_err(&x, &x_ref);
            println!("kernel {kernel}, N = {n}, depth {depth}, tol {tol:e}");
            println!("matvec deviation {mv:.3e}");
            println!("solve deviation  {sol:.3e}");
            println!("r_m {}", fact.stats.r_m);
            Ok(mv <= 1e-10 && sol <= 1e-8)
        }
        Cmd::DumpExtended { n, kernel, depth, tol, out } => {
            let depth = depth.depth(n, 2);
            let ps = generate_balanced_points(n, 2, depth, 0)?;
            let tree = build_tree(&ps, depth)?;
            let store = init_operators(&tree, &Kernel::new(kernel, 1e-3)?, 8, tol)?;
            let mut w = output(&out)?;
            let nnz = write_extended_triplets(&store, &tree, &mut w)?;
            w.flush()?;
            eprintln!("{nnz} nonzeros");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
