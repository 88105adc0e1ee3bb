//! Optimality residual for the projected problem.
//!
//! For a candidate pre-projection point `Q`, let `F = project(Q)` and
//! `T = -F A^T`. With `G` the gradient of the negated total utility as a
//! function of `F`, the residual is the squared distance from `G` to the
//! ray spanned by `F - Q`:
//!
//! - infinity when `T` has a nonpositive off-diagonal entry (utility and
//!   gradient are undefined there),
//! - `|G|_F^2` when `F = Q` or when the ray multiplier would be negative,
//! - `|G|_F^2 - tr(G^T (F - Q))^2 / |F - Q|_F^2` otherwise.
//!
//! The residual vanishes exactly at optimal points, which makes
//! `r < n m epsilon` a scale-aware stopping rule.

use crate::error::Result;
use crate::graph::{dual_times_incidence, flows_to_traffic, Topology};
use crate::mat::Mat;
use crate::projection::project_flows;
use crate::utilities::{utility_derivative, UtilitySpec};

/// Below this squared distance the projection is treated as a fixed point
/// and the ray term is dropped.
const FIXED_POINT_DIST_SQ: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    /// False when the projected point's traffic leaves the utility domain;
    /// `value` is infinite in that case.
    pub finite: bool,
    pub value: f64,
    /// Fraction of ordered off-diagonal pairs with nonpositive traffic.
    pub infeasible_fraction: f64,
    /// Minimizing ray multiplier; zero when the ray term is inactive.
    pub gamma: f64,
}

/// Gradient of `-U(-F A^T)` with respect to `F`. With `D` the entrywise
/// utility derivative at `T = -F A^T` (zero diagonal), the chain rule gives
/// `G[i][l] = D[i][head(l)] - D[i][tail(l)]`, the same gather kernel the
/// dual step uses. The sign is pinned by the finite-difference test below.
pub fn flow_gradient(flow: &Mat, topo: &Topology, spec: &UtilitySpec) -> Result<Mat> {
    let traffic = flows_to_traffic(flow, topo)?;
    let deriv = utility_derivative(&traffic, spec)?;
    dual_times_incidence(&deriv, topo)
}

/// Projects `Q` and evaluates the residual there.
pub fn optimality_residual(q: &Mat, topo: &Topology, spec: &UtilitySpec) -> Result<ResidualReport> {
    let f = project_flows(q, topo)?;
    residual_at_projection(q, &f, topo, spec)
}

/// Residual when the projection `f = project(q)` is already available, as
/// it is inside the solver loop. Callers must pass a genuine projection
/// output, otherwise the report is meaningless.
pub fn residual_at_projection(
    q: &Mat,
    f: &Mat,
    topo: &Topology,
    spec: &UtilitySpec,
) -> Result<ResidualReport> {
    let n = topo.node_count();
    let traffic = flows_to_traffic(f, topo)?;
    let mut bad = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && !(traffic[(i, j)] > 0.0) {
                bad += 1;
            }
        }
    }
    if bad > 0 {
        return Ok(ResidualReport {
            finite: false,
            value: f64::INFINITY,
            infeasible_fraction: bad as f64 / (n * (n - 1)) as f64,
            gamma: 0.0,
        });
    }
    let deriv = utility_derivative(&traffic, spec)?;
    let g = dual_times_incidence(&deriv, topo)?;
    let gsq = g.norm_sq();
    let mut inner = 0.0;
    let mut dist_sq = 0.0;
    for ((gi, fi), qi) in g.as_slice().iter().zip(f.as_slice()).zip(q.as_slice()) {
        let d = fi - qi;
        inner += gi * d;
        dist_sq += d * d;
    }
    let (value, gamma) = if dist_sq <= FIXED_POINT_DIST_SQ || inner < 0.0 {
        (gsq, 0.0)
    } else {
        ((gsq - inner * inner / dist_sq).max(0.0), inner / dist_sq)
    };
    Ok(ResidualReport { finite: true, value, infeasible_fraction: 0.0, gamma })
}
