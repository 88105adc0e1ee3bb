//! Random geometric instances: points on the unit square, a symmetric
//! q-nearest-neighbor adjacency, and log-uniform capacities and weights.
//!
//! All randomness comes from ChaCha8 seeded with the caller's value, so an
//! instance is a pure function of (n, q, seed, family) on every platform.
//! Draw order is fixed: points, then capacities in edge order, then
//! weights in row-major order. Disconnected point sets are regenerated on
//! a fresh stream of the same seed, leaving the draw sequence of
//! successful attempts untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::instance::ProblemInstance;
use crate::mat::Mat;
use crate::utilities::{UtilityFamily, UtilitySpec};

const MAX_ATTEMPTS: u32 = 32;
const CAP_RANGE: (f64, f64) = (0.5, 5.0);
const WEIGHT_RANGE: (f64, f64) = (0.3, 3.0);

fn log_uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    let lo = range.0.ln();
    let hi = range.1.ln();
    (lo + rng.random::<f64>() * (hi - lo)).exp()
}

/// Undirected adjacency under the union rule: {i, j} is an edge when
/// either point is among the q nearest neighbors of the other. Distance
/// ties are broken by the smaller point index.
fn neighbor_pairs(points: &[(f64, f64)], q: usize) -> BTreeSet<(usize, usize)> {
    let n = points.len();
    let mut pairs = BTreeSet::new();
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        for j in 0..n {
            if i == j {
                continue;
            }
            let dx = points[i].0 - points[j].0;
            let dy = points[i].1 - points[j].1;
            order.push((dx * dx + dy * dy, j));
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in order.iter().take(q) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    pairs
}

/// Generates a strongly connected instance. Power utilities carry their
/// exponent inside `family`.
pub fn generate_instance(
    n: usize,
    q: usize,
    seed: u64,
    family: UtilityFamily,
) -> Result<ProblemInstance> {
    if n < 2 {
        return Err(Error::Parameter(format!("need at least 2 nodes, got {n}")));
    }
    if q == 0 || q >= n {
        return Err(Error::Parameter(format!(
            "neighbor count must satisfy 1 <= q < n, got q={q} n={n}"
        )));
    }
    family.validate()?;

    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);

        let points: Vec<(f64, f64)> =
            (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        // Both directions of every undirected pair, kept adjacent so edge
        // 2k and 2k+1 are mutual reverses.
        let mut edges = Vec::new();
        for &(u, v) in &neighbor_pairs(&points, q) {
            edges.push((u, v));
            edges.push((v, u));
        }
        let probe = Topology::new(n, &edges, &vec![1.0; edges.len()])?;
        if !probe.is_strongly_connected() {
            continue;
        }

        let capacities: Vec<f64> =
            (0..edges.len()).map(|_| log_uniform(&mut rng, CAP_RANGE)).collect();
        let mut weights = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    weights[(i, j)] = log_uniform(&mut rng, WEIGHT_RANGE);
                }
            }
        }
        let topology = Topology::new(n, &edges, &capacities)?;
        let utility = UtilitySpec::new(family, weights)?;
        return ProblemInstance::new(topology, utility);
    }
    Err(Error::GenerationFailed { attempts: MAX_ATTEMPTS })
}

/// Multiplies each off-diagonal weight by (1 + nu) or (1 - nu), an even
/// coin per entry in row-major order. Used to set up warm-start runs on a
/// nearby problem.
pub fn perturb_weights(spec: &UtilitySpec, nu: f64, seed: u64) -> Result<UtilitySpec> {
    if !(nu.is_finite() && (0.0..1.0).contains(&nu)) {
        return Err(Error::Parameter(format!(
            "perturbation ratio must lie in [0, 1), got {nu}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.weights().rows();
    let mut weights = spec.weights().clone();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let factor = if rng.random::<bool>() { 1.0 + nu } else { 1.0 - nu };
                weights[(i, j)] *= factor;
            }
        }
    }
    UtilitySpec::new(spec.family(), weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_instance(1, 1, 0, UtilityFamily::Log).is_err());
        assert!(generate_instance(10, 0, 0, UtilityFamily::Log).is_err());
        assert!(generate_instance(10, 10, 0, UtilityFamily::Log).is_err());
        assert!(
            generate_instance(10, 3, 0, UtilityFamily::Power { exponent: 1.5 }).is_err()
        );
    }

    #[test]
    fn edges_come_in_adjacent_reverse_pairs() {
        let inst = generate_instance(40, 4, 9, UtilityFamily::Log).unwrap();
        let topo = inst.topology();
        let m = topo.edge_count();
        assert_eq!(m % 2, 0);
        for k in 0..m / 2 {
            assert_eq!(topo.tail(2 * k), topo.head(2 * k + 1));
            assert_eq!(topo.head(2 * k), topo.tail(2 * k + 1));
        }
    }

    #[test]
    fn parameters_land_in_documented_ranges() {
        let inst = generate_instance(30, 3, 4, UtilityFamily::Log).unwrap();
        for l in 0..inst.edge_count() {
            let c = inst.topology().capacity(l);
            assert!((0.5..=5.0).contains(&c));
        }
        let w = inst.utility().weights();
        for i in 0..30 {
            for j in 0..30 {
                if i != j {
                    assert!((0.3..=3.0).contains(&w[(i, j)]));
                }
            }
        }
    }

    #[test]
    fn same_seed_reproduces_every_field() {
        let a = generate_instance(25, 3, 123, UtilityFamily::Log).unwrap();
        let b = generate_instance(25, 3, 123, UtilityFamily::Log).unwrap();
        assert_eq!(a.edge_count(), b.edge_count());
        assert!(a
            .topology()
            .edges()
            .zip(b.topology().edges())
            .all(|(x, y)| x == y));
        assert_eq!(
            a.topology().capacities().iter().map(|c| c.to_bits()).collect::<Vec<_>>(),
            b.topology().capacities().iter().map(|c| c.to_bits()).collect::<Vec<_>>()
        );
        assert!(a.utility().weights().bits_eq(b.utility().weights()));

        let c = generate_instance(25, 3, 124, UtilityFamily::Log).unwrap();
        assert!(!a.utility().weights().bits_eq(c.utility().weights()));
    }

    #[test]
    fn edge_count_matches_expected_scale() {
        // n=100, q=10 produces on the order of 1.2k directed edges; the
        // union rule gives a bit over n*q.
        let inst = generate_instance(100, 10, 0, UtilityFamily::Log).unwrap();
        let m = inst.edge_count() as f64;
        assert!((1001.0..=1355.0).contains(&m), "m = {m}");
    }

    #[test]
    fn generated_graph_is_strongly_connected() {
        for seed in 0..5 {
            let inst = generate_instance(15, 2, seed, UtilityFamily::Log).unwrap();
            assert!(inst.topology().is_strongly_connected());
        }
    }

    #[test]
    fn perturbation_is_an_even_coin_between_two_values() {
        let inst = generate_instance(101, 5, 6, UtilityFamily::Log).unwrap();
        let spec = inst.utility();
        let nu = 0.1;
        let tilde = perturb_weights(spec, nu, 77).unwrap();
        let n = spec.weights().rows();
        let mut ups = 0usize;
        let mut total = 0usize;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = spec.weights()[(i, j)];
                let wt = tilde.weights()[(i, j)];
                let up = (wt - w * (1.0 + nu)).abs() <= 1e-15 * w;
                let down = (wt - w * (1.0 - nu)).abs() <= 1e-15 * w;
                assert!(up || down, "weight {wt} is not ({w} times 1 +/- {nu})");
                total += 1;
                if up {
                    ups += 1;
                }
            }
        }
        assert!(total >= 10_000);
        let fraction = ups as f64 / total as f64;
        assert!((fraction - 0.5).abs() <= 0.02, "up fraction {fraction}");
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let inst = generate_instance(12, 3, 8, UtilityFamily::Log).unwrap();
        let tilde = perturb_weights(inst.utility(), 0.0, 5).unwrap();
        assert!(tilde.weights().bits_eq(inst.utility().weights()));
        assert!(perturb_weights(inst.utility(), 1.0, 5).is_err());
        assert!(perturb_weights(inst.utility(), -0.1, 5).is_err());
    }
}
