//! File formats: instance and warm-start JSON, solution JSON, trace CSV.
//!
//! Writers are deterministic byte for byte: struct fields serialize in
//! declaration order, floats print as the shortest string that parses
//! back to the same bits, and no timestamps or map iteration enter the
//! output. The one run-dependent field is `wall_time_seconds` in solution
//! files, and `SolutionFile::eq_ignoring_wall_time` exists to compare
//! around it.
//!
//! Readers rebuild domain values through the usual constructors, so a
//! hand-edited file that breaks an invariant (disconnected graph, zero
//! weight, capacity count mismatch) fails with the same errors direct
//! construction would raise. JSON cannot carry non-finite numbers, so
//! solution files store `final_residual` and `utility` as nullable, null
//! meaning infinite and undefined respectively.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::instance::ProblemInstance;
use crate::mat::Mat;
use crate::solver::{Solution, TraceRecord, WarmStart};
use crate::utilities::{UtilityFamily, UtilitySpec};

const INSTANCE_VERSION: u32 = 1;
const SOLUTION_VERSION: u32 = 1;
const WARM_START_VERSION: u32 = 1;

/// Flow entries at or below this are left out of the sparse triplet list.
const FLOW_WRITE_THRESHOLD: f64 = 1e-9;

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    version: u32,
    n: usize,
    /// Generation parameter (neighbor count), carried as metadata so a
    /// solve can echo the experimental setup; absent for hand-built files.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    q: Option<usize>,
    edges: Vec<(usize, usize)>,
    capacities: Vec<f64>,
    utility: UtilityFile,
}

#[derive(Serialize, Deserialize)]
struct UtilityFile {
    family: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    gamma: Option<f64>,
    /// Dense row-major n*n block; the diagonal rides along as zeros.
    weights: Vec<f64>,
}

pub fn instance_to_string(inst: &ProblemInstance, q: Option<usize>) -> String {
    let topo = inst.topology();
    let family = inst.utility().family();
    let (family_name, gamma) = match family {
        UtilityFamily::Log => ("log".to_string(), None),
        UtilityFamily::Power { exponent } => ("power".to_string(), Some(exponent)),
    };
    let file = InstanceFile {
        version: INSTANCE_VERSION,
        n: topo.node_count(),
        q,
        edges: topo.edges().collect(),
        capacities: topo.capacities().to_vec(),
        utility: UtilityFile {
            family: family_name,
            gamma,
            weights: inst.utility().weights().as_slice().to_vec(),
        },
    };
    let mut s = serde_json::to_string_pretty(&file).expect("instance serialization cannot fail");
    s.push('\n');
    s
}

pub fn write_instance(path: &Path, inst: &ProblemInstance, q: Option<usize>) -> Result<()> {
    fs::write(path, instance_to_string(inst, q)).map_err(io_err)
}

pub fn instance_from_str(s: &str) -> Result<(ProblemInstance, Option<usize>)> {
    let file: InstanceFile = serde_json::from_str(s).map_err(format_err)?;
    if file.version != INSTANCE_VERSION {
        return Err(Error::Format(format!(
            "instance version {} not supported, want {INSTANCE_VERSION}",
            file.version
        )));
    }
    let family = match (file.utility.family.as_str(), file.utility.gamma) {
        ("log", None) => UtilityFamily::Log,
        ("log", Some(_)) => {
            return Err(Error::Format("log utility takes no gamma".into()));
        }
        ("power", Some(exponent)) => UtilityFamily::Power { exponent },
        ("power", None) => {
            return Err(Error::Format("power utility needs a gamma".into()));
        }
        (other, _) => {
            return Err(Error::Format(format!("unknown utility family {other:?}")));
        }
    };
    let n = file.n;
    if file.utility.weights.len() != n * n {
        return Err(Error::Format(format!(
            "weights hold {} entries, want {}",
            file.utility.weights.len(),
            n * n
        )));
    }
    let topo = Topology::new(n, &file.edges, &file.capacities)?;
    let weights = Mat::from_vec(n, n, file.utility.weights)?;
    let spec = UtilitySpec::new(family, weights)?;
    Ok((ProblemInstance::new(topo, spec)?, file.q))
}

pub fn read_instance(path: &Path) -> Result<(ProblemInstance, Option<usize>)> {
    instance_from_str(&fs::read_to_string(path).map_err(io_err)?)
}

/// Solution file contents, kept verbatim so two files can be compared
/// field by field. Flows are sparse (destination, edge, value) triplets
/// in row-major order; the traffic matrix is dense row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub version: u32,
    pub n: usize,
    pub m: usize,
    pub converged: bool,
    pub iterations: u64,
    /// None stands for an infinite residual, which JSON cannot carry.
    pub final_residual: Option<f64>,
    /// None stands for an undefined utility (infeasible final iterate).
    pub utility: Option<f64>,
    pub wall_time_seconds: f64,
    pub flow_triplets: Vec<(usize, usize, f64)>,
    pub traffic: Vec<f64>,
}

impl SolutionFile {
    pub fn eq_ignoring_wall_time(&self, other: &SolutionFile) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.wall_time_seconds = 0.0;
        b.wall_time_seconds = 0.0;
        a == b
    }
}

pub fn solution_to_file(sol: &Solution, wall_time_seconds: f64) -> SolutionFile {
    let (n, m) = sol.flow.dims();
    let mut flow_triplets = Vec::new();
    for i in 0..n {
        for l in 0..m {
            let v = sol.flow[(i, l)];
            if v > FLOW_WRITE_THRESHOLD {
                flow_triplets.push((i, l, v));
            }
        }
    }
    SolutionFile {
        version: SOLUTION_VERSION,
        n,
        m,
        converged: sol.converged,
        iterations: sol.iterations,
        final_residual: sol.final_residual.is_finite().then_some(sol.final_residual),
        utility: sol.utility.is_finite().then_some(sol.utility),
        wall_time_seconds,
        flow_triplets,
        traffic: sol.traffic.as_slice().to_vec(),
    }
}

pub fn write_solution(path: &Path, file: &SolutionFile) -> Result<()> {
    let mut s = serde_json::to_string_pretty(file).expect("solution serialization cannot fail");
    s.push('\n');
    fs::write(path, s).map_err(io_err)
}

pub fn read_solution(path: &Path) -> Result<SolutionFile> {
    let s = fs::read_to_string(path).map_err(io_err)?;
    let file: SolutionFile = serde_json::from_str(&s).map_err(format_err)?;
    if file.version != SOLUTION_VERSION {
        return Err(Error::Format(format!(
            "solution version {} not supported, want {SOLUTION_VERSION}",
            file.version
        )));
    }
    Ok(file)
}

#[derive(Serialize, Deserialize)]
struct WarmStartFile {
    version: u32,
    n: usize,
    m: usize,
    omega: f64,
    f_half: Vec<f64>,
    dual: Vec<f64>,
}

pub fn write_warm_start(path: &Path, ws: &WarmStart) -> Result<()> {
    let (n, m) = ws.f_half.dims();
    let file = WarmStartFile {
        version: WARM_START_VERSION,
        n,
        m,
        omega: ws.omega,
        f_half: ws.f_half.as_slice().to_vec(),
        dual: ws.dual.as_slice().to_vec(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("warm-start serialization cannot fail");
    s.push('\n');
    fs::write(path, s).map_err(io_err)
}

pub fn read_warm_start(path: &Path) -> Result<WarmStart> {
    let s = fs::read_to_string(path).map_err(io_err)?;
    let file: WarmStartFile = serde_json::from_str(&s).map_err(format_err)?;
    if file.version != WARM_START_VERSION {
        return Err(Error::Format(format!(
            "warm-start version {} not supported, want {WARM_START_VERSION}",
            file.version
        )));
    }
    if file.f_half.len() != file.n * file.m {
        return Err(Error::Format(format!(
            "flow block holds {} entries, want {}",
            file.f_half.len(),
            file.n * file.m
        )));
    }
    if file.dual.len() != file.n * file.n {
        return Err(Error::Format(format!(
            "dual block holds {} entries, want {}",
            file.dual.len(),
            file.n * file.n
        )));
    }
    let f_half = Mat::from_vec(file.n, file.m, file.f_half)?;
    let dual = Mat::from_vec(file.n, file.n, file.dual)?;
    if !f_half.all_finite() || !dual.all_finite() || !file.omega.is_finite() {
        return Err(Error::Format("warm-start file contains non-finite values".into()));
    }
    Ok(WarmStart { f_half, dual, omega: file.omega })
}

/// Residual-checkpoint history as CSV. Non-finite values print as inf,
/// -inf, and nan; everything else uses the shortest round-trip form.
pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut s = String::from("iter,residual,infeasible_fraction,omega,utility\n");
    for rec in trace {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            rec.iter,
            fmt_float(rec.residual),
            fmt_float(rec.infeasible_fraction),
            fmt_float(rec.omega),
            fmt_float(rec.utility)
        ));
    }
    fs::write(path, s).map_err(io_err)
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

fn format_err(e: serde_json::Error) -> Error {
    Error::Format(e.to_string())
}
