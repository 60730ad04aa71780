//! Inverse fast multipole method.
//!
//! A dense kernel system `A x = b` whose far-field blocks have nested low-rank
//! structure is rewritten as a larger sparse system in charges, multipoles and
//! locals. Eliminating that system cluster by cluster, while pushing every
//! fill-in between well-separated clusters back into the multipole-to-local
//! channel, gives a direct solver whose cost grows almost linearly with `N`.
//!
//! ```no_run
//! use ifmm::{geometry, kernels::{Kernel, KernelKind}, operators, solver};
//!
//! let pts = geometry::generate_balanced_points(2000, 2, 3, 7).unwrap();
//! let tree = geometry::build_tree(&pts, 3).unwrap();
//! let kernel = Kernel::new(KernelKind::Log, 1e-3).unwrap();
//! let store = operators::init_operators(&tree, &kernel, 8, 1e-14).unwrap();
//! let b = vec![1.0; 2000];
//! let fact = solver::factorize(store, &tree, &solver::SolverOptions::new(1e-14)).unwrap();
//! let x = fact.solve(&b).unwrap();
//! assert_eq!(x.len(), 2000);
//! ```

pub mod bench;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod linalg;
pub mod lowrank;
pub mod operators;
pub mod oracle;
pub mod rankstudy;
pub mod solver;

pub use error::{Error, Result};
