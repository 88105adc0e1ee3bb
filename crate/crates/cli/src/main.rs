//! Command-line front end: generate instances, solve them, run the
//! warm-start protocol, and sweep sizes for scaling runs.
//!
//! Exit codes: 0 success, 2 usage error, 3 the solver finished without a
//! convergence certificate (output files are still written), 4 file I/O.
//! Kernel parallelism follows RAYON_NUM_THREADS; results do not depend on
//! the thread count.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pdmcf::error::Error;
use pdmcf::generator::generate_instance;
use pdmcf::io;
use pdmcf::solver::{solve, warm_start_from_perturbed};
use pdmcf::{SolverConfig, UtilityFamily};

#[derive(Parser)]
#[command(name = "pdmcf", version, about = "All-pairs multicommodity flow solver")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a random geometric instance and write it to a file.
    Generate(GenerateArgs),
    /// Solve an instance file; writes a solution file and a trace CSV.
    Solve(SolveArgs),
    /// Run the warm-start protocol and compare against a cold solve.
    Warmstart(WarmstartArgs),
    /// Sweep (n, q) sizes over seeds and record a CSV of runs.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Log,
    Power,
}

#[derive(Args)]
struct GenerateArgs {
    /// Node count.
    #[arg(long)]
    n: usize,
    /// Neighbor count for the q-nearest-neighbor construction.
    #[arg(long)]
    q: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = FamilyArg::Log)]
    family: FamilyArg,
    /// Power-utility exponent in (0, 1); required for --family power.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Solution output path; defaults to the instance path with the
    /// extension replaced by solution.json.
    #[arg(long)]
    solution: Option<PathBuf>,
    /// Trace CSV path; defaults like --solution with trace.csv.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Warm-start file produced by the warmstart command.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// Stopping threshold is n*m*epsilon; default 0.01/(n(n-1)).
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iters: Option<u64>,
}

#[derive(Args)]
struct WarmstartArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Weight perturbation in [0, 1) for the feasibility phase.
    #[arg(long)]
    nu: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated n:q pairs, e.g. 100:10,200:10.
    #[arg(long)]
    pairs: String,
    /// Comma-separated seeds, e.g. 0,1,2,3,4.
    #[arg(long, default_value = "0,1,2,3,4")]
    seeds: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epsilon: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Generate(args) => run_generate(args),
        Cmd::Solve(args) => run_solve(args),
        Cmd::Warmstart(args) => run_warmstart(args),
        Cmd::Bench(args) => run_bench(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Format(_) => 4,
        Error::NonFinite { .. }
        | Error::FeasibilityNotReached { .. }
        | Error::NoConvergence { .. }
        | Error::UtilityDomain { .. } => 3,
        _ => 2,
    }
}

fn family_of(family: FamilyArg, gamma: Option<f64>) -> Result<UtilityFamily, Error> {
    match (family, gamma) {
        (FamilyArg::Log, None) => Ok(UtilityFamily::Log),
        (FamilyArg::Log, Some(_)) => {
            Err(Error::Parameter("--gamma only applies to --family power".into()))
        }
        (FamilyArg::Power, Some(exponent)) => Ok(UtilityFamily::Power { exponent }),
        (FamilyArg::Power, None) => {
            Err(Error::Parameter("--family power needs --gamma".into()))
        }
    }
}

fn run_generate(args: GenerateArgs) -> Result<u8, Error> {
    let family = family_of(args.family, args.gamma)?;
    let inst = generate_instance(args.n, args.q, args.seed, family)?;
    io::write_instance(&args.out, &inst, Some(args.q))?;
    let topo = inst.topology();
    println!(
        "n={} m={} d_max={} eta={}",
        topo.node_count(),
        topo.edge_count(),
        topo.max_degree(),
        topo.step_size_eta()
    );
    println!("wrote {}", args.out.display());
    Ok(0)
}

fn sibling_path(base: &Path, ext: &str) -> PathBuf {
    base.with_extension(ext)
}

fn solver_config(epsilon: Option<f64>, max_iters: Option<u64>) -> SolverConfig {
    let mut config = SolverConfig::default();
    config.epsilon = epsilon;
    if let Some(cap) = max_iters {
        config.max_iters = cap;
    }
    config
}

fn run_solve(args: SolveArgs) -> Result<u8, Error> {
    let (inst, q) = io::read_instance(&args.instance)?;
    let config = solver_config(args.epsilon, args.max_iters);
    let warm = match &args.warm_start {
        Some(path) => Some(io::read_warm_start(path)?),
        None => None,
    };
    let started = Instant::now();
    let sol = solve(&inst, &config, warm.as_ref())?;
    let seconds = started.elapsed().as_secs_f64();

    let solution_path = args
        .solution
        .unwrap_or_else(|| sibling_path(&args.instance, "solution.json"));
    let trace_path = args
        .trace
        .unwrap_or_else(|| sibling_path(&args.instance, "trace.csv"));
    io::write_solution(&solution_path, &io::solution_to_file(&sol, seconds))?;
    io::write_trace_csv(&trace_path, &sol.trace)?;

    let n = inst.node_count();
    let m = inst.edge_count();
    let q_text = q.map_or_else(|| "-".to_string(), |v| v.to_string());
    println!(
        "n={} q={} m={} nm={} iterations={} seconds={:.3} converged={} residual={} utility={}",
        n,
        q_text,
        m,
        n * m,
        sol.iterations,
        seconds,
        sol.converged,
        sol.final_residual,
        sol.utility
    );
    Ok(if sol.converged { 0 } else { 3 })
}

fn run_warmstart(args: WarmstartArgs) -> Result<u8, Error> {
    let (inst, _) = io::read_instance(&args.instance)?;
    let config = solver_config(args.epsilon, None);
    let ws = warm_start_from_perturbed(&inst, args.nu, args.seed, &config)?;
    io::write_warm_start(&args.out, &ws)?;
    println!("wrote {}", args.out.display());

    let cold = solve(&inst, &config, None)?;
    let warm = solve(&inst, &config, Some(&ws))?;
    println!(
        "nu={} omega_feas={} cold_iterations={} warm_iterations={} cold_converged={} warm_converged={}",
        args.nu, ws.omega, cold.iterations, warm.iterations, cold.converged, warm.converged
    );
    Ok(if cold.converged && warm.converged { 0 } else { 3 })
}

fn parse_pairs(text: &str) -> Result<Vec<(usize, usize)>, Error> {
    let mut pairs = Vec::new();
    for part in text.split(',') {
        let (n, q) = part
            .split_once(':')
            .ok_or_else(|| Error::Parameter(format!("pair {part:?} is not n:q")))?;
        let n = n
            .trim()
            .parse()
            .map_err(|_| Error::Parameter(format!("bad n in pair {part:?}")))?;
        let q = q
            .trim()
            .parse()
            .map_err(|_| Error::Parameter(format!("bad q in pair {part:?}")))?;
        pairs.push((n, q));
    }
    Ok(pairs)
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Error> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Parameter(format!("bad seed {s:?}")))
        })
        .collect()
}

fn run_bench(args: BenchArgs) -> Result<u8, Error> {
    let pairs = parse_pairs(&args.pairs)?;
    let seeds = parse_seeds(&args.seeds)?;
    let mut csv = String::from("n,q,seed,m,nm,iterations,seconds,residual,converged,status\n");
    let mut all_ok = true;
    for &(n, q) in &pairs {
        for &seed in &seeds {
            let row = bench_row(n, q, seed, args.epsilon);
            if !row.ends_with(",ok\n") {
                all_ok = false;
            }
            csv.push_str(&row);
            print!("{row}");
        }
    }
    std::fs::write(&args.out, csv).map_err(|e| Error::Io(e.to_string()))?;
    println!("wrote {}", args.out.display());
    Ok(if all_ok { 0 } else { 3 })
}

fn bench_row(n: usize, q: usize, seed: u64, epsilon: Option<f64>) -> String {
    let inst = match generate_instance(n, q, seed, UtilityFamily::Log) {
        Ok(inst) => inst,
        Err(e) => return format!("{n},{q},{seed},,,,,,,{}\n", sanitize(&e.to_string())),
    };
    let m = inst.edge_count();
    let nm = n * m;
    let config = solver_config(epsilon, None);
    let started = Instant::now();
    match solve(&inst, &config, None) {
        Ok(sol) => {
            let seconds = started.elapsed().as_secs_f64();
            let status = if sol.converged { "ok" } else { "iteration-cap" };
            format!(
                "{n},{q},{seed},{m},{nm},{},{seconds:.6},{},{},{status}\n",
                sol.iterations, sol.final_residual, sol.converged
            )
        }
        Err(e) => format!("{n},{q},{seed},{m},{nm},,,,,{}\n", sanitize(&e.to_string())),
    }
}

/// Error text lands in a CSV cell; commas would shift columns.
fn sanitize(message: &str) -> String {
    message.replace(',', ";")
}
