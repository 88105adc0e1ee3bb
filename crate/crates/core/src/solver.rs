//! Over-relaxed primal-dual iterations on the capped flow polytope, with
//! adaptive step-size rebalancing, residual-based stopping, warm starts,
//! and per-checkpoint trace records.
//!
//! With eta fixed by the topology and alpha = eta/omega, beta = eta*omega,
//! one iteration is
//!
//! ```text
//! f_hat  = project(f_half + alpha * Y A)
//! f_next = 2 f_hat - f_half
//! y_hat  = prox of the conjugate at (Y + beta * T(f_next)), diagonal 0
//! f_half = rho * f_hat + (1 - rho) * f_half
//! Y      = rho * y_hat + (1 - rho) * Y
//! ```
//!
//! The prox argument adds beta times the traffic of the reflected flows
//! because T(F) = -F A^T carries the sign flip already.
//!
//! The stopping rule evaluates the optimality residual at the point the
//! half step projects, q = f_half + alpha * Y A, reusing that projection,
//! and accepts once the residual drops below n * m * epsilon. Checks run
//! every `k_check` iterations starting at iteration 0, so a state captured
//! at a passing check converges again instantly when fed back in.

use crate::error::{Error, Result};
use crate::graph::{dual_times_incidence_into, flows_to_traffic, flows_to_traffic_into};
use crate::instance::ProblemInstance;
use crate::mat::Mat;
use crate::projection::project_flows_into;
use crate::residual::residual_at_projection;
use crate::utilities::{prox_conjugate_matrix_into, total_utility};

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Stopping threshold; the residual must drop below n * m * epsilon.
    /// None uses the instance default, 0.01 / (n (n - 1)).
    pub epsilon: Option<f64>,
    /// Over-relaxation factor, in (0, 2).
    pub rho: f64,
    /// Exponent of the rebalancing ratio in the primal-weight update.
    pub theta: f64,
    /// Rebalance cadence in iterations.
    pub k_adapt: u64,
    /// Both state changes must exceed this for a rebalance to fire.
    pub tau: f64,
    /// Residual evaluation cadence in iterations.
    pub k_check: u64,
    /// Safety cap on full iterations.
    pub max_iters: u64,
    /// Initial primal weight.
    pub omega0: f64,
    /// Stop rebalancing once this many iterations have run; None never
    /// freezes, which is how the defaults operate.
    pub freeze_adaptation_after: Option<u64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: None,
            rho: 1.9,
            theta: 0.5,
            k_adapt: 100,
            tau: 1e-5,
            k_check: 25,
            max_iters: 1_000_000,
            omega0: 1.0,
            freeze_adaptation_after: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(eps) = self.epsilon {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::Parameter(format!("epsilon {eps} must be positive")));
            }
        }
        if !(self.rho > 0.0 && self.rho < 2.0) {
            return Err(Error::Parameter(format!(
                "over-relaxation {} must lie in (0, 2)",
                self.rho
            )));
        }
        if !(self.theta.is_finite() && (0.0..=1.0).contains(&self.theta)) {
            return Err(Error::Parameter(format!(
                "rebalance exponent {} must lie in [0, 1]",
                self.theta
            )));
        }
        if self.k_adapt == 0 || self.k_check == 0 {
            return Err(Error::Parameter("cadences must be at least 1".into()));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::Parameter(format!("guard {} must be nonnegative", self.tau)));
        }
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return Err(Error::Parameter(format!(
                "initial primal weight {} must be positive",
                self.omega0
            )));
        }
        Ok(())
    }
}

/// Iterate state. `f_half` is the flow iterate the next half step reads,
/// `dual` the matching dual matrix with zero diagonal. The step sizes keep
/// alpha * beta = eta^2 under every rebalance.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub f_half: Mat,
    pub dual: Mat,
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub iter: u64,
}

impl SolverState {
    /// Cold start: zero flows; dual with zero diagonal and -1 off it.
    pub fn initial(inst: &ProblemInstance, config: &SolverConfig) -> SolverState {
        let n = inst.node_count();
        let m = inst.edge_count();
        let mut dual = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    dual[(i, j)] = -1.0;
                }
            }
        }
        let eta = inst.topology().step_size_eta();
        let omega = config.omega0;
        SolverState {
            f_half: Mat::zeros(n, m),
            dual,
            omega,
            alpha: eta / omega,
            beta: eta * omega,
            eta,
            iter: 0,
        }
    }

    /// Resume from a captured state. Step sizes are rebuilt from the
    /// stored primal weight, which matters as much as the iterates do.
    pub fn from_warm_start(inst: &ProblemInstance, warm: &WarmStart) -> Result<SolverState> {
        let n = inst.node_count();
        let m = inst.edge_count();
        if warm.f_half.dims() != (n, m) {
            return Err(Error::Shape(format!(
                "warm flows are {:?}, instance wants ({n}, {m})",
                warm.f_half.dims()
            )));
        }
        if warm.dual.dims() != (n, n) {
            return Err(Error::Shape(format!(
                "warm dual is {:?}, instance wants ({n}, {n})",
                warm.dual.dims()
            )));
        }
        if !warm.f_half.all_finite() || !warm.dual.all_finite() {
            return Err(Error::Parameter("warm state contains non-finite values".into()));
        }
        for i in 0..n {
            if warm.dual[(i, i)] != 0.0 {
                return Err(Error::Parameter(format!(
                    "warm dual diagonal entry {i} is {}, must be 0",
                    warm.dual[(i, i)]
                )));
            }
        }
        if !(warm.omega.is_finite() && warm.omega > 0.0) {
            return Err(Error::Parameter(format!(
                "warm primal weight {} must be positive",
                warm.omega
            )));
        }
        let eta = inst.topology().step_size_eta();
        Ok(SolverState {
            f_half: warm.f_half.clone(),
            dual: warm.dual.clone(),
            omega: warm.omega,
            alpha: eta / warm.omega,
            beta: eta * warm.omega,
            eta,
            iter: 0,
        })
    }
}

/// State captured to seed a later solve: the flow iterate, the dual, and
/// the primal weight in force when it was taken.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub f_half: Mat,
    pub dual: Mat,
    pub omega: f64,
}

/// One row per residual checkpoint. `residual` is infinite and `utility`
/// NaN while the projected traffic is outside the utility domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: u64,
    pub residual: f64,
    pub infeasible_fraction: f64,
    pub omega: f64,
    pub utility: f64,
}

/// Solver output. When `converged` the flow is the projection certified by
/// the passing checkpoint, its residual is below n * m * epsilon, and the
/// traffic matrix lies inside the utility domain. Otherwise the fields
/// hold the best checkpoint seen before the iteration cap. `warm_state`
/// snapshots the pre-checkpoint state, so feeding it back into `solve`
/// reproduces the same certified flow at iteration 0.
#[derive(Debug, Clone)]
pub struct Solution {
    pub flow: Mat,
    pub traffic: Mat,
    pub dual: Mat,
    pub iterations: u64,
    pub final_residual: f64,
    pub utility: f64,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
    pub warm_state: WarmStart,
}

struct Workspace {
    yta: Mat,
    q: Mat,
    f_hat: Mat,
    f_next: Mat,
    traffic: Mat,
    dual_arg: Mat,
    dual_hat: Mat,
}

impl Workspace {
    fn new(n: usize, m: usize) -> Workspace {
        Workspace {
            yta: Mat::zeros(n, m),
            q: Mat::zeros(n, m),
            f_hat: Mat::zeros(n, m),
            f_next: Mat::zeros(n, m),
            traffic: Mat::zeros(n, n),
            dual_arg: Mat::zeros(n, n),
            dual_hat: Mat::zeros(n, n),
        }
    }
}

/// Fills q = f_half + alpha * Y A and f_hat = project(q).
fn half_step(state: &SolverState, inst: &ProblemInstance, ws: &mut Workspace) {
    dual_times_incidence_into(&state.dual, inst.topology(), &mut ws.yta);
    for ((qv, fv), yv) in ws
        .q
        .as_mut_slice()
        .iter_mut()
        .zip(state.f_half.as_slice())
        .zip(ws.yta.as_slice())
    {
        *qv = fv + state.alpha * yv;
    }
    project_flows_into(&ws.q, inst.topology(), &mut ws.f_hat);
}

/// Reflection, dual prox, and over-relaxation. Returns the Frobenius norms
/// of the two state changes. The elementwise loops run serially so results
/// never depend on the worker-pool size; the heavy kernels above them are
/// parallel over independent rows and columns.
fn finish_step(
    state: &mut SolverState,
    inst: &ProblemInstance,
    config: &SolverConfig,
    ws: &mut Workspace,
) -> Result<(f64, f64)> {
    let rho = config.rho;
    for ((nv, hv), fv) in ws
        .f_next
        .as_mut_slice()
        .iter_mut()
        .zip(ws.f_hat.as_slice())
        .zip(state.f_half.as_slice())
    {
        *nv = 2.0 * hv - fv;
    }
    flows_to_traffic_into(&ws.f_next, inst.topology(), &mut ws.traffic);
    for ((av, yv), tv) in ws
        .dual_arg
        .as_mut_slice()
        .iter_mut()
        .zip(state.dual.as_slice())
        .zip(ws.traffic.as_slice())
    {
        *av = yv + state.beta * tv;
    }
    prox_conjugate_matrix_into(&ws.dual_arg, state.beta, inst.utility(), &mut ws.dual_hat);

    let mut df_sq = 0.0;
    for (fv, hv) in state.f_half.as_mut_slice().iter_mut().zip(ws.f_hat.as_slice()) {
        let new = rho * hv + (1.0 - rho) * *fv;
        let d = new - *fv;
        df_sq += d * d;
        *fv = new;
    }
    let mut dy_sq = 0.0;
    for (yv, hv) in state.dual.as_mut_slice().iter_mut().zip(ws.dual_hat.as_slice()) {
        let new = rho * hv + (1.0 - rho) * *yv;
        let d = new - *yv;
        dy_sq += d * d;
        *yv = new;
    }
    let at = state.iter;
    state.iter += 1;
    // A non-finite entry anywhere poisons the accumulated squares, so this
    // one check covers the whole update.
    if !(df_sq.is_finite() && dy_sq.is_finite()) {
        return Err(Error::NonFinite { iter: at });
    }
    Ok((df_sq.sqrt(), dy_sq.sqrt()))
}

/// One full over-relaxed update in place. Returns (delta_f, delta_y), the
/// Frobenius norms of the flow and dual changes, which drive rebalancing.
pub fn pdhg_iteration(
    state: &mut SolverState,
    inst: &ProblemInstance,
    config: &SolverConfig,
) -> Result<(f64, f64)> {
    let n = inst.node_count();
    let m = inst.edge_count();
    if state.f_half.dims() != (n, m) || state.dual.dims() != (n, n) {
        return Err(Error::Shape(format!(
            "state is {:?}/{:?}, instance wants ({n}, {m})/({n}, {n})",
            state.f_half.dims(),
            state.dual.dims()
        )));
    }
    let mut ws = Workspace::new(n, m);
    half_step(state, inst, &mut ws);
    finish_step(state, inst, config, &mut ws)
}

/// Rebalances the primal weight from the last iteration's state changes:
/// omega' = (delta_y / delta_f)^theta * omega^(1 - theta), then
/// alpha = eta / omega', beta = eta * omega'. Does nothing unless both
/// changes exceed the guard, so runs that have nearly stalled keep their
/// step sizes.
pub fn adapt_step_sizes(
    state: &mut SolverState,
    delta_f: f64,
    delta_y: f64,
    config: &SolverConfig,
) {
    if delta_f > config.tau && delta_y > config.tau {
        state.omega = (delta_y / delta_f).powf(config.theta) * state.omega.powf(1.0 - config.theta);
        state.alpha = state.eta / state.omega;
        state.beta = state.eta * state.omega;
    }
}

struct Checkpoint {
    flow: Mat,
    dual: Mat,
    iterations: u64,
    residual: f64,
    warm: WarmStart,
}

/// Runs the solver until the residual passes or the iteration cap hits.
/// On the cap the best checkpoint seen is returned with converged false.
pub fn solve(
    inst: &ProblemInstance,
    config: &SolverConfig,
    warm: Option<&WarmStart>,
) -> Result<Solution> {
    config.validate()?;
    let topo = inst.topology();
    let spec = inst.utility();
    let n = topo.node_count();
    let m = topo.edge_count();
    let threshold = (n * m) as f64 * config.epsilon.unwrap_or_else(|| inst.default_epsilon());
    let mut state = match warm {
        Some(w) => SolverState::from_warm_start(inst, w)?,
        None => SolverState::initial(inst, config),
    };
    let mut ws = Workspace::new(n, m);
    let mut trace = Vec::new();
    let mut best: Option<Checkpoint> = None;

    loop {
        let k = state.iter;
        let at_cap = k >= config.max_iters;
        let at_check = at_cap || k % config.k_check == 0;
        half_step(&state, inst, &mut ws);
        if at_check {
            let report = residual_at_projection(&ws.q, &ws.f_hat, topo, spec)?;
            let utility = if report.finite {
                flows_to_traffic_into(&ws.f_hat, topo, &mut ws.traffic);
                total_utility(&ws.traffic, spec)?
            } else {
                f64::NAN
            };
            trace.push(TraceRecord {
                iter: k,
                residual: report.value,
                infeasible_fraction: report.infeasible_fraction,
                omega: state.omega,
                utility,
            });
            if report.finite && report.value < threshold {
                return Ok(Solution {
                    flow: ws.f_hat.clone(),
                    traffic: ws.traffic.clone(),
                    dual: state.dual.clone(),
                    iterations: k,
                    final_residual: report.value,
                    utility,
                    trace,
                    converged: true,
                    warm_state: WarmStart {
                        f_half: state.f_half.clone(),
                        dual: state.dual.clone(),
                        omega: state.omega,
                    },
                });
            }
            // Later checkpoints win ties so the cap path reports the
            // freshest of equally good iterates.
            if best.as_ref().map_or(true, |b| report.value <= b.residual) {
                best = Some(Checkpoint {
                    flow: ws.f_hat.clone(),
                    dual: state.dual.clone(),
                    iterations: k,
                    residual: report.value,
                    warm: WarmStart {
                        f_half: state.f_half.clone(),
                        dual: state.dual.clone(),
                        omega: state.omega,
                    },
                });
            }
        }
        if at_cap {
            break;
        }
        let (delta_f, delta_y) = finish_step(&mut state, inst, config, &mut ws)?;
        let adapting = config.freeze_adaptation_after.map_or(true, |limit| k < limit);
        if adapting && k % config.k_adapt == 0 {
            adapt_step_sizes(&mut state, delta_f, delta_y, config);
        }
    }

    let b = best.expect("the cap iteration always records a checkpoint");
    let traffic = flows_to_traffic(&b.flow, topo)?;
    let utility = total_utility(&traffic, spec).unwrap_or(f64::NAN);
    Ok(Solution {
        flow: b.flow,
        traffic,
        dual: b.dual,
        iterations: b.iterations,
        final_residual: b.residual,
        utility,
        trace,
        converged: false,
        warm_state: b.warm,
    })
}

/// Runs the warm-start protocol: perturb the weights, iterate on the
/// perturbed problem until the projected flows yield strictly positive
/// off-diagonal traffic, then capture that projection together with the
/// dual and primal weight after the full iteration. Feasibility is a much
/// weaker target than optimality, so this phase is short; the captured
/// state then seeds a solve of the original problem.
pub fn warm_start_from_perturbed(
    inst: &ProblemInstance,
    nu: f64,
    seed: u64,
    config: &SolverConfig,
) -> Result<WarmStart> {
    config.validate()?;
    let tilde = crate::generator::perturb_weights(inst.utility(), nu, seed)?;
    let perturbed = ProblemInstance::new(inst.topology().clone(), tilde)?;
    let topo = perturbed.topology();
    let n = topo.node_count();
    let m = topo.edge_count();
    let mut state = SolverState::initial(&perturbed, config);
    let mut ws = Workspace::new(n, m);
    let mut traffic = Mat::zeros(n, n);

    loop {
        let k = state.iter;
        if k >= config.max_iters {
            return Err(Error::FeasibilityNotReached { iters: k });
        }
        half_step(&state, &perturbed, &mut ws);
        let (delta_f, delta_y) = finish_step(&mut state, &perturbed, config, &mut ws)?;
        let adapting = config.freeze_adaptation_after.map_or(true, |limit| k < limit);
        if adapting && k % config.k_adapt == 0 {
            adapt_step_sizes(&mut state, delta_f, delta_y, config);
        }
        flows_to_traffic_into(&ws.f_hat, topo, &mut traffic);
        let mut feasible = true;
        'outer: for i in 0..n {
            for j in 0..n {
                if i != j && !(traffic[(i, j)] > 0.0) {
                    feasible = false;
                    break 'outer;
                }
            }
        }
        if feasible {
            return Ok(WarmStart {
                f_half: ws.f_hat.clone(),
                dual: state.dual.clone(),
                omega: state.omega,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::generate_instance;
    use crate::graph::{dual_times_incidence, Topology};
    use crate::projection::project_flows;
    use crate::reference;
    use crate::utilities::{prox_conjugate_matrix, UtilityFamily, UtilitySpec};

    fn two_node_instance() -> ProblemInstance {
        let topo = Topology::new(2, &[(0, 1), (1, 0)], &[1.0, 1.0]).unwrap();
        let mut w = Mat::zeros(2, 2);
        w[(0, 1)] = 1.0;
        w[(1, 0)] = 1.0;
        let spec = UtilitySpec::new(UtilityFamily::Log, w).unwrap();
        ProblemInstance::new(topo, spec).unwrap()
    }

    /// Straight-line dense version of one update. Projection handles only
    /// the clip case, which is all the first cold iteration needs; the log
    /// prox is the textbook closed form.
    fn transliterated_iteration(
        inst: &ProblemInstance,
        f_half: &Mat,
        dual: &Mat,
        alpha: f64,
        beta: f64,
        rho: f64,
    ) -> (Mat, Mat) {
        let topo = inst.topology();
        let n = topo.node_count();
        let m = topo.edge_count();
        let a = reference::dense_incidence(topo);
        let ya = reference::matmul(dual, &a);
        let mut f_hat = Mat::zeros(n, m);
        for i in 0..n {
            for l in 0..m {
                f_hat[(i, l)] = f_half[(i, l)] + alpha * ya[(i, l)];
            }
        }
        for l in 0..m {
            let mut s = 0.0;
            for i in 0..n {
                f_hat[(i, l)] = f_hat[(i, l)].max(0.0);
                s += f_hat[(i, l)];
            }
            assert!(s <= topo.capacity(l), "oracle only covers the clip case");
        }
        let mut f_next = Mat::zeros(n, m);
        for i in 0..n {
            for l in 0..m {
                f_next[(i, l)] = 2.0 * f_hat[(i, l)] - f_half[(i, l)];
            }
        }
        let fat = reference::matmul(&f_next, &reference::transpose(&a));
        let w = inst.utility().weights();
        let mut dual_hat = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let y = dual[(i, j)] - beta * fat[(i, j)];
                dual_hat[(i, j)] = (y - (y * y + 4.0 * beta * w[(i, j)]).sqrt()) / 2.0;
            }
        }
        let mut f_out = Mat::zeros(n, m);
        for (o, (h, f)) in f_out
            .as_mut_slice()
            .iter_mut()
            .zip(f_hat.as_slice().iter().zip(f_half.as_slice()))
        {
            *o = rho * h + (1.0 - rho) * f;
        }
        let mut y_out = Mat::zeros(n, n);
        for (o, (h, y)) in y_out
            .as_mut_slice()
            .iter_mut()
            .zip(dual_hat.as_slice().iter().zip(dual.as_slice()))
        {
            *o = rho * h + (1.0 - rho) * y;
        }
        (f_out, y_out)
    }

    #[test]
    fn first_cold_iteration_matches_transliteration_bitwise() {
        let inst = two_node_instance();
        let config = SolverConfig::default();
        let mut state = SolverState::initial(&inst, &config);
        let (expect_f, expect_y) = transliterated_iteration(
            &inst,
            &state.f_half.clone(),
            &state.dual.clone(),
            state.alpha,
            state.beta,
            config.rho,
        );
        pdhg_iteration(&mut state, &inst, &config).unwrap();
        assert!(state.f_half.bits_eq(&expect_f));
        assert!(state.dual.bits_eq(&expect_y));
        // Worked decimals for the same step: alpha = beta = 1/2, so the
        // half step clips (+-1/2) columns and over-relaxation lands on
        // 1.9 * 0.5.
        assert!((state.f_half[(0, 1)] - 0.95).abs() < 1e-15);
        assert!((state.f_half[(1, 0)] - 0.95).abs() < 1e-15);
        assert_eq!(state.f_half[(0, 0)], 0.0);
        assert_eq!(state.dual[(0, 1)], -1.0);
        assert_eq!(state.dual[(0, 0)], 0.0);
        assert_eq!(state.iter, 1);
    }

    #[test]
    fn saddle_point_is_a_fixed_point() {
        let inst = two_node_instance();
        // Cross-check the hand-derived saddle against the slow solver.
        let (f_ref, u_ref) = reference::reference_solve(&inst).unwrap();
        assert!(u_ref.abs() < 1e-6);
        assert!((f_ref[(0, 1)] - 1.0).abs() < 1e-5);

        let config = SolverConfig::default();
        let mut state = SolverState::initial(&inst, &config);
        state.f_half = Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        state.dual = Mat::from_rows(&[&[0.0, -1.0], &[-1.0, 0.0]]);
        let before_f = state.f_half.clone();
        let before_y = state.dual.clone();
        let (delta_f, delta_y) = pdhg_iteration(&mut state, &inst, &config).unwrap();
        assert!(state.f_half.bits_eq(&before_f));
        assert!(state.dual.bits_eq(&before_y));
        assert_eq!(delta_f, 0.0);
        assert_eq!(delta_y, 0.0);
    }

    #[test]
    fn unit_relaxation_reduces_to_plain_updates() {
        let inst = generate_instance(8, 3, 5, UtilityFamily::Log).unwrap();
        let config = SolverConfig { rho: 1.0, ..SolverConfig::default() };
        let mut state = SolverState::initial(&inst, &config);
        // A couple of warmup iterations so the state is not all zeros.
        pdhg_iteration(&mut state, &inst, &config).unwrap();
        pdhg_iteration(&mut state, &inst, &config).unwrap();

        let f_old = state.f_half.clone();
        let y_old = state.dual.clone();
        let topo = inst.topology();
        let ya = dual_times_incidence(&y_old, topo).unwrap();
        let mut q = f_old.clone();
        for (qv, yv) in q.as_mut_slice().iter_mut().zip(ya.as_slice()) {
            *qv += state.alpha * *yv;
        }
        let f_hat = project_flows(&q, topo).unwrap();
        let mut f_next = Mat::zeros(8, topo.edge_count());
        for ((nv, hv), fv) in f_next
            .as_mut_slice()
            .iter_mut()
            .zip(f_hat.as_slice())
            .zip(f_old.as_slice())
        {
            *nv = 2.0 * hv - fv;
        }
        let t = flows_to_traffic(&f_next, topo).unwrap();
        let mut arg = y_old.clone();
        for (av, tv) in arg.as_mut_slice().iter_mut().zip(t.as_slice()) {
            *av += state.beta * *tv;
        }
        let y_hat = prox_conjugate_matrix(&arg, state.beta, inst.utility()).unwrap();

        pdhg_iteration(&mut state, &inst, &config).unwrap();
        assert!(state.f_half.bits_eq(&f_hat));
        assert!(state.dual.bits_eq(&y_hat));
    }

    #[test]
    fn rebalance_follows_the_ratio_and_respects_the_guard() {
        let inst = two_node_instance();
        let config = SolverConfig::default();
        let mut state = SolverState::initial(&inst, &config);
        let eta = state.eta;

        adapt_step_sizes(&mut state, 1.0, 1.0, &config);
        assert_eq!(state.omega, 1.0);

        adapt_step_sizes(&mut state, 1.0, 4.0, &config);
        assert!((state.omega - 2.0).abs() < 1e-12);
        assert!((state.alpha - eta / state.omega).abs() < 1e-15);
        assert!((state.beta - eta * state.omega).abs() < 1e-15);

        let before = state.omega;
        adapt_step_sizes(&mut state, 1e-6, 4.0, &config);
        assert_eq!(state.omega, before);
        adapt_step_sizes(&mut state, 4.0, 1e-6, &config);
        assert_eq!(state.omega, before);
    }

    #[test]
    fn two_node_solve_saturates_both_pairs() {
        let inst = two_node_instance();
        let sol = solve(&inst, &SolverConfig::default(), None).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations > 0);
        assert!(sol.utility.abs() <= 1e-3, "utility {}", sol.utility);
        for l in 0..2 {
            let col: f64 = (0..2).map(|i| sol.flow[(i, l)]).sum();
            assert!((col - 1.0).abs() <= 1e-3, "column {l} sums to {col}");
        }
        let nm = 4.0;
        assert!(sol.final_residual < nm * inst.default_epsilon());
        assert!(sol.traffic[(0, 1)] > 0.0 && sol.traffic[(1, 0)] > 0.0);
        assert_eq!(sol.trace.first().unwrap().iter, 0);
    }

    #[test]
    fn resolving_from_the_solution_state_is_instant_and_bitwise() {
        let inst = generate_instance(10, 3, 2, UtilityFamily::Log).unwrap();
        let config = SolverConfig::default();
        let cold = solve(&inst, &config, None).unwrap();
        assert!(cold.converged);
        let re = solve(&inst, &config, Some(&cold.warm_state)).unwrap();
        assert!(re.converged);
        assert_eq!(re.iterations, 0);
        assert!(re.flow.bits_eq(&cold.flow));
        assert!(re.dual.bits_eq(&cold.dual));
        assert_eq!(re.utility.to_bits(), cold.utility.to_bits());
        assert_eq!(re.final_residual.to_bits(), cold.final_residual.to_bits());
    }

    #[test]
    fn feasibility_capture_is_feasible_and_seeds_a_solve() {
        let inst = generate_instance(10, 3, 4, UtilityFamily::Log).unwrap();
        let config = SolverConfig::default();
        let ws = warm_start_from_perturbed(&inst, 0.1, 4, &config).unwrap();
        let topo = inst.topology();
        let t = flows_to_traffic(&ws.f_half, topo).unwrap();
        for i in 0..10 {
            assert_eq!(ws.dual[(i, i)], 0.0);
            for j in 0..10 {
                if i != j {
                    assert!(t[(i, j)] > 0.0, "captured traffic ({i},{j}) not positive");
                }
            }
        }
        for l in 0..topo.edge_count() {
            let col: f64 = (0..10).map(|i| ws.f_half[(i, l)]).sum();
            assert!(col <= topo.capacity(l) * (1.0 + 1e-12));
        }
        assert!(ws.omega.is_finite() && ws.omega > 0.0);
        let sol = solve(&inst, &config, Some(&ws)).unwrap();
        assert!(sol.converged);
    }

    #[test]
    fn iteration_cap_reports_partial_progress() {
        let inst = two_node_instance();
        let config = SolverConfig {
            epsilon: Some(1e-300),
            max_iters: 3,
            ..SolverConfig::default()
        };
        let sol = solve(&inst, &config, None).unwrap();
        assert!(!sol.converged);
        assert!(sol.iterations <= 3);
        assert_eq!(sol.trace.last().unwrap().iter, 3);
        for l in 0..2 {
            let col: f64 = (0..2).map(|i| sol.flow[(i, l)]).sum();
            assert!(col <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn frozen_adaptation_keeps_the_initial_weight() {
        let inst = generate_instance(10, 3, 6, UtilityFamily::Log).unwrap();
        let config = SolverConfig {
            freeze_adaptation_after: Some(0),
            ..SolverConfig::default()
        };
        let sol = solve(&inst, &config, None).unwrap();
        for rec in &sol.trace {
            assert_eq!(rec.omega, 1.0);
        }
        assert!(sol.converged);
    }

    #[test]
    fn diverged_state_aborts_with_the_iteration_index() {
        let inst = two_node_instance();
        let config = SolverConfig::default();
        let mut state = SolverState::initial(&inst, &config);
        // One lopsided huge entry: the induced traffic is around -1e200,
        // so the dual prox argument squares past f64 range.
        state.f_half[(0, 0)] = 1e200;
        let err = pdhg_iteration(&mut state, &inst, &config).unwrap_err();
        assert_eq!(err, Error::NonFinite { iter: 0 });
    }

    #[test]
    fn bad_configs_are_rejected() {
        let ok = SolverConfig::default();
        assert!(ok.validate().is_ok());
        assert!(SolverConfig { rho: 2.0, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { rho: 0.0, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { epsilon: Some(0.0), ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { k_check: 0, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { k_adapt: 0, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { omega0: -1.0, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { theta: 1.5, ..ok }.validate().is_err());
    }

    #[test]
    fn warm_start_validation_rejects_bad_states() {
        let inst = two_node_instance();
        let good = WarmStart {
            f_half: Mat::zeros(2, 2),
            dual: Mat::from_rows(&[&[0.0, -1.0], &[-1.0, 0.0]]),
            omega: 1.0,
        };
        assert!(SolverState::from_warm_start(&inst, &good).is_ok());
        let bad_shape = WarmStart { f_half: Mat::zeros(3, 2), ..good.clone() };
        assert!(SolverState::from_warm_start(&inst, &bad_shape).is_err());
        let bad_diag = WarmStart {
            dual: Mat::from_rows(&[&[1.0, -1.0], &[-1.0, 0.0]]),
            ..good.clone()
        };
        assert!(SolverState::from_warm_start(&inst, &bad_diag).is_err());
        let bad_omega = WarmStart { omega: 0.0, ..good };
        assert!(SolverState::from_warm_start(&inst, &bad_omega).is_err());
    }
}
