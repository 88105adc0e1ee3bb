//! Directed topology and edge-indexed incidence kernels.
//!
//! The node-edge incidence matrix `A` has `A[head(l)][l] = +1` and
//! `A[tail(l)][l] = -1`. It is never materialized here; products with `A`
//! and `A^T` are gather/scatter loops over the edge list. The dense form
//! exists only in [`crate::reference`] for cross-checking.

use rayon::prelude::*;
use std::collections::HashSet;
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::mat::Mat;

/// A directed multigraph without self-loops or duplicate directed edges,
/// with a positive capacity per edge. Edge ids are positions in the edge
/// list and are stable; adjacency lists are kept in ascending edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    tails: Vec<usize>,
    heads: Vec<usize>,
    capacities: Vec<f64>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl Topology {
    /// Validates and indexes an edge list. Rejects self-loops, out-of-range
    /// endpoints, duplicate directed edges, and nonpositive or non-finite
    /// capacities. Connectivity is deliberately not checked here; instance
    /// construction does that.
    pub fn new(n: usize, edges: &[(usize, usize)], capacities: &[f64]) -> Result<Self> {
        if n < 2 {
            return Err(Error::Topology(format!("need at least 2 nodes, got {n}")));
        }
        if edges.is_empty() {
            return Err(Error::Topology("edge list is empty".into()));
        }
        if edges.len() != capacities.len() {
            return Err(Error::Topology(format!(
                "{} edges but {} capacities",
                edges.len(),
                capacities.len()
            )));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        for (l, &(tail, head)) in edges.iter().enumerate() {
            if tail >= n || head >= n {
                return Err(Error::Topology(format!(
                    "edge {l} endpoints ({tail}, {head}) out of range for {n} nodes"
                )));
            }
            if tail == head {
                return Err(Error::Topology(format!("edge {l} is a self-loop at {tail}")));
            }
            if !seen.insert((tail, head)) {
                return Err(Error::Topology(format!(
                    "duplicate directed edge ({tail}, {head}) at position {l}"
                )));
            }
            let c = capacities[l];
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Topology(format!("edge {l} capacity {c} must be positive")));
            }
        }
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        for (l, &(tail, head)) in edges.iter().enumerate() {
            out_edges[tail].push(l);
            in_edges[head].push(l);
        }
        Ok(Topology {
            n,
            tails: edges.iter().map(|e| e.0).collect(),
            heads: edges.iter().map(|e| e.1).collect(),
            capacities: capacities.to_vec(),
            out_edges,
            in_edges,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.tails.len()
    }

    pub fn tail(&self, l: usize) -> usize {
        self.tails[l]
    }

    pub fn head(&self, l: usize) -> usize {
        self.heads[l]
    }

    pub fn capacity(&self, l: usize) -> f64 {
        self.capacities[l]
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.tails.iter().copied().zip(self.heads.iter().copied())
    }

    /// Maximum over nodes of in-degree plus out-degree. This equals the
    /// largest diagonal entry of `A A^T`.
    pub fn max_degree(&self) -> usize {
        (0..self.n)
            .map(|v| self.out_edges[v].len() + self.in_edges[v].len())
            .max()
            .unwrap_or(0)
    }

    /// Base step size `eta = 1 / sqrt(2 d_max)`. Since the largest
    /// eigenvalue of `A A^T` is at most twice the maximum degree, this
    /// guarantees `eta^2 * lambda_max(A A^T) <= 1`.
    pub fn step_size_eta(&self) -> f64 {
        1.0 / (2.0 * self.max_degree() as f64).sqrt()
    }

    fn reachable(&self, start: usize, forward: bool) -> usize {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::new();
        seen[start] = true;
        queue.push_back(start);
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            let (adj, endpoint): (&[usize], &[usize]) = if forward {
                (&self.out_edges[v], &self.heads)
            } else {
                (&self.in_edges[v], &self.tails)
            };
            for &l in adj {
                let w = endpoint[l];
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count
    }

    /// True when every node can reach every other along directed edges.
    pub fn is_strongly_connected(&self) -> bool {
        self.reachable(0, true) == self.n && self.reachable(0, false) == self.n
    }

    /// Feasible starting flow: route one unit along a BFS shortest path for
    /// every ordered (destination, source) pair, then scale the whole matrix
    /// by the largest capacity violation so column loads fit. The result is
    /// in the feasible flow set and every off-diagonal traffic entry equals
    /// the scale factor, hence is strictly positive.
    ///
    /// Deterministic: next hops tie-break on lowest head node id, then
    /// lowest edge id.
    pub fn shortest_path_flow(&self) -> Result<Mat> {
        if !self.is_strongly_connected() {
            return Err(Error::NotStronglyConnected);
        }
        let n = self.n;
        let m = self.edge_count();
        let mut flow = Mat::zeros(n, m);
        let mut dist = vec![usize::MAX; n];
        let mut next_edge = vec![usize::MAX; n];
        for dest in 0..n {
            // BFS distances toward dest, traversing edges backwards.
            dist.fill(usize::MAX);
            dist[dest] = 0;
            let mut queue = VecDeque::new();
            queue.push_back(dest);
            while let Some(v) = queue.pop_front() {
                for &l in &self.in_edges[v] {
                    let u = self.tails[l];
                    if dist[u] == usize::MAX {
                        dist[u] = dist[v] + 1;
                        queue.push_back(u);
                    }
                }
            }
            for u in 0..n {
                if u == dest {
                    continue;
                }
                let mut best: Option<(usize, usize)> = None;
                for &l in &self.out_edges[u] {
                    let h = self.heads[l];
                    if dist[h] + 1 == dist[u] && best.map_or(true, |(bh, _)| h < bh) {
                        best = Some((h, l));
                    }
                }
                next_edge[u] = best.expect("connected graph has a next hop").1;
            }
            let row = flow.row_mut(dest);
            for src in 0..n {
                if src == dest {
                    continue;
                }
                let mut u = src;
                while u != dest {
                    let l = next_edge[u];
                    row[l] += 1.0;
                    u = self.heads[l];
                }
            }
        }
        // Largest load-to-capacity ratio over edges decides the scale.
        let mut worst: f64 = 0.0;
        for l in 0..m {
            let load: f64 = (0..n).map(|i| flow[(i, l)]).sum();
            worst = worst.max(load / self.capacities[l]);
        }
        let alpha = 1.0 / worst;
        for x in flow.as_mut_slice() {
            *x *= alpha;
        }
        Ok(flow)
    }
}

/// Traffic induced by a flow matrix: `T = -F A^T`, computed per destination
/// row by scattering each edge's flow to its tail column (flow leaving the
/// tail) and subtracting it from its head column. Row sums are zero up to
/// roundoff; the diagonal holds the negated total traffic into each
/// destination.
pub fn flows_to_traffic(flow: &Mat, topo: &Topology) -> Result<Mat> {
    let n = topo.node_count();
    if flow.dims() != (n, topo.edge_count()) {
        return Err(Error::Shape(format!(
            "flow is {:?}, want ({n}, {})",
            flow.dims(),
            topo.edge_count()
        )));
    }
    let mut out = Mat::zeros(n, n);
    flows_to_traffic_into(flow, topo, &mut out);
    Ok(out)
}

pub(crate) fn flows_to_traffic_into(flow: &Mat, topo: &Topology, out: &mut Mat) {
    let n = topo.node_count();
    let m = topo.edge_count();
    debug_assert_eq!(flow.dims(), (n, m));
    debug_assert_eq!(out.dims(), (n, n));
    let tails = &topo.tails;
    let heads = &topo.heads;
    out.as_mut_slice()
        .par_chunks_mut(n)
        .zip(flow.as_slice().par_chunks(m))
        .for_each(|(t_row, f_row)| {
            t_row.fill(0.0);
            for l in 0..m {
                let v = f_row[l];
                t_row[tails[l]] += v;
                t_row[heads[l]] -= v;
            }
        });
}

/// Right-multiplication by the incidence matrix: `M = Y A`, so
/// `M[i][l] = Y[i][head(l)] - Y[i][tail(l)]`, a gather over edges.
pub fn dual_times_incidence(dual: &Mat, topo: &Topology) -> Result<Mat> {
    let n = topo.node_count();
    if dual.dims() != (n, n) {
        return Err(Error::Shape(format!("dual is {:?}, want ({n}, {n})", dual.dims())));
    }
    let mut out = Mat::zeros(n, topo.edge_count());
    dual_times_incidence_into(dual, topo, &mut out);
    Ok(out)
}

pub(crate) fn dual_times_incidence_into(dual: &Mat, topo: &Topology, out: &mut Mat) {
    let n = topo.node_count();
    let m = topo.edge_count();
    debug_assert_eq!(dual.dims(), (n, n));
    debug_assert_eq!(out.dims(), (n, m));
    let tails = &topo.tails;
    let heads = &topo.heads;
    out.as_mut_slice()
        .par_chunks_mut(m)
        .zip(dual.as_slice().par_chunks(n))
        .for_each(|(o_row, y_row)| {
            for l in 0..m {
                o_row[l] = y_row[heads[l]] - y_row[tails[l]];
            }
        });
}
