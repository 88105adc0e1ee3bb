//! A problem instance: a topology plus a utility specification that agree
//! on the node count.

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::utilities::UtilitySpec;

/// Validated pairing of a network and the utilities over its ordered node
/// pairs. Construction requires strong connectivity: without a directed
/// path for every pair, some traffic entry can never become positive and
/// the utility domain is empty.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    topology: Topology,
    utility: UtilitySpec,
}

impl ProblemInstance {
    pub fn new(topology: Topology, utility: UtilitySpec) -> Result<Self> {
        if utility.weights().rows() != topology.node_count() {
            return Err(Error::Shape(format!(
                "weight matrix is {}x{} but the topology has {} nodes",
                utility.weights().rows(),
                utility.weights().cols(),
                topology.node_count()
            )));
        }
        if !topology.is_strongly_connected() {
            return Err(Error::NotStronglyConnected);
        }
        Ok(ProblemInstance { topology, utility })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn utility(&self) -> &UtilitySpec {
        &self.utility
    }

    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.topology.edge_count()
    }

    /// Stopping threshold used when none is given: 0.01 / (n (n - 1)),
    /// one part in ten thousand per ordered pair.
    pub fn default_epsilon(&self) -> f64 {
        let n = self.node_count() as f64;
        0.01 / (n * (n - 1.0))
    }
}
