//! Euclidean projection of flow columns onto the capped simplex
//! `{ x >= 0, sum(x) <= cap }`, one independent problem per edge.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::mat::Mat;

/// Projects one column. Returns the projected vector and the shift `mu`:
/// zero when clipping negatives already fits under the cap, otherwise the
/// positive shift with `sum((f - mu)_+) = cap`.
///
/// The shift comes from sorting the entries in decreasing order and taking
/// the largest prefix `t` with `f_sorted[t] - (prefix_sum_t - cap) / t > 0`.
pub fn project_simplex_column(f: &[f64], cap: f64) -> Result<(Vec<f64>, f64)> {
    if f.is_empty() {
        return Err(Error::Parameter("cannot project an empty column".into()));
    }
    if !(cap.is_finite() && cap > 0.0) {
        return Err(Error::Parameter(format!("capacity {cap} must be positive")));
    }
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parameter("column contains non-finite entries".into()));
    }
    let mut out = f.to_vec();
    let mut scratch = Vec::new();
    let mu = project_in_place(&mut out, cap, &mut scratch);
    Ok((out, mu))
}

// Fast path: if the clipped column already fits, the projection is just the
// clip. Otherwise sort the raw entries (negatives included) and shift.
pub(crate) fn project_in_place(col: &mut [f64], cap: f64, scratch: &mut Vec<f64>) -> f64 {
    let mut pos_sum = 0.0;
    for &x in col.iter() {
        if x > 0.0 {
            pos_sum += x;
        }
    }
    if pos_sum <= cap {
        for x in col.iter_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        return 0.0;
    }
    scratch.clear();
    scratch.extend_from_slice(col);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    let mut mu = 0.0;
    for (t, &v) in scratch.iter().enumerate() {
        prefix += v;
        let candidate = (prefix - cap) / (t + 1) as f64;
        if v - candidate > 0.0 {
            mu = candidate;
        }
    }
    for x in col.iter_mut() {
        *x = (*x - mu).max(0.0);
    }
    mu
}

/// Projects every column of an `n x m` matrix onto its edge's capped
/// simplex. Columns are independent, so the work is parallel and the result
/// does not depend on thread count.
pub fn project_flows(q: &Mat, topo: &Topology) -> Result<Mat> {
    let (n, m) = (topo.node_count(), topo.edge_count());
    if q.dims() != (n, m) {
        return Err(Error::Shape(format!("input is {:?}, want ({n}, {m})", q.dims())));
    }
    let mut out = Mat::zeros(n, m);
    project_flows_into(q, topo, &mut out);
    Ok(out)
}

// Works on a transposed copy so each column is contiguous for the sort.
pub(crate) fn project_flows_into(q: &Mat, topo: &Topology, out: &mut Mat) {
    let (n, m) = (topo.node_count(), topo.edge_count());
    debug_assert_eq!(q.dims(), (n, m));
    debug_assert_eq!(out.dims(), (n, m));
    let mut qt = vec![0.0; m * n];
    let qs = q.as_slice();
    for i in 0..n {
        let row = &qs[i * m..(i + 1) * m];
        for (l, &v) in row.iter().enumerate() {
            qt[l * n + i] = v;
        }
    }
    let caps = topo.capacities();
    qt.par_chunks_mut(n).enumerate().for_each_init(Vec::new, |scratch, (l, col)| {
        project_in_place(col, caps[l], scratch);
    });
    let os = out.as_mut_slice();
    for l in 0..m {
        let col = &qt[l * n..(l + 1) * n];
        for (i, &v) in col.iter().enumerate() {
            os[i * m + l] = v;
        }
    }
}
