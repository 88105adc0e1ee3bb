//! All-pairs multicommodity network flow with concave pairwise utilities.
//!
//! The problem: on a directed graph with edge capacities `c`, choose
//! destination-aggregated flows `F` (one row per destination node) to
//! maximize `sum_ij u_ij(T_ij)` where `T = -F A^T` is the induced traffic
//! matrix and `A` is the node-edge incidence matrix. Feasible flows are
//! nonnegative and respect per-edge capacity column sums.
//!
//! The solver is an over-relaxed primal-dual hybrid gradient iteration with
//! adaptive primal weight. The incidence matrix is never materialized; all
//! products with `A` and `A^T` are edge-indexed gather/scatter kernels.
//!
//! Modules:
//! - [`graph`]: topology, incidence kernels, degrees, shortest-path flows
//! - [`utilities`]: utility families, derivatives, conjugate prox operators
//! - [`projection`]: capped-simplex projection of flow columns
//! - [`residual`]: optimality residual and feasibility diagnostics
//! - [`solver`]: the iteration, adaptive step sizes, warm starts
//! - [`generator`]: random geometric instances
//! - [`io`]: file formats for instances, solutions, warm starts, traces
//! - [`reference`]: slow independent oracles used by the test suite

#![forbid(unsafe_code)]

pub mod error;
pub mod generator;
pub mod graph;
pub mod instance;
pub mod io;
pub mod mat;
pub mod projection;
pub mod reference;
pub mod residual;
pub mod solver;
pub mod utilities;

pub use error::{Error, Result};
pub use graph::Topology;
pub use instance::ProblemInstance;
pub use mat::Mat;
pub use residual::ResidualReport;
pub use solver::{Solution, SolverConfig, SolverState, TraceRecord, WarmStart};
pub use utilities::{UtilityFamily, UtilitySpec};
