//! Outer interior-point loop.
//!
//! Each iteration assembles the reduced KKT system, obtains the Newton
//! direction from a pluggable linear-solver backend (classical dense
//! factorization or a variational quantum solve), applies fraction-to-boundary
//! step control, and updates the barrier weight with the classical centering
//! rule, optionally moderated by the objective-history controller that freezes
//! the barrier when the trajectory stalls or jumps.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::caseio::{InnerStats, IterationRecord, RunReport};
use crate::error::{Error, Result};
use crate::noise::{NoiseSpec, NoiseStream};
use crate::powermodel::{condition_number, kkt_assemble, KktSystem, OpfProblem};
use crate::vqsolver::{self, InitPolicy, SolverConfig};

/// Primal-dual iterate.
#[derive(Debug, Clone)]
pub struct IpmState {
    /// Primal variables including slacks.
    pub x: DVector<f64>,
    /// Equality multipliers (balance rows then bound rows).
    pub lambda: DVector<f64>,
    /// Bound duals nu_j = orientation_j * lambda_{bound row j}; kept positive
    /// by the step rule.
    pub nu: DVector<f64>,
    /// Barrier weight.
    pub mu: f64,
    /// Outer iteration counter.
    pub k: usize,
    /// Objective value at the iterate.
    pub objective: f64,
}

impl IpmState {
    fn refresh(&mut self, problem: &OpfProblem) {
        self.objective = problem.objective_dollars(&self.x);
        for (j, b) in problem.bounds.iter().enumerate() {
            self.nu[j] = b.orientation * self.lambda[problem.n_balance + j];
        }
    }
}

/// Objective-history barrier controller configuration.
#[derive(Debug, Clone)]
pub struct MuControllerConfig {
    /// Averaging window n.
    pub window: usize,
    /// Relative-difference threshold.
    pub eps_conv: f64,
    /// Deviation band around the rolling average (0.2 = +-20%).
    pub band: f64,
    /// Re-evaluate the freeze decision every iteration instead of latching
    /// the first trigger.
    pub reevaluate: bool,
}

impl Default for MuControllerConfig {
    fn default() -> Self {
        Self {
            window: 4,
            eps_conv: 1e-3,
            band: 0.2,
            reevaluate: false,
        }
    }
}

/// Rolling-average barrier controller. Records the objective history; once
/// the relative difference drops below the threshold or the next objective
/// leaves the +-band, the barrier weight is frozen (permanently, unless
/// configured to re-evaluate).
#[derive(Debug, Clone)]
pub struct MuController {
    cfg: MuControllerConfig,
    history: VecDeque<f64>,
    frozen: Option<f64>,
}

impl MuController {
    pub fn new(cfg: MuControllerConfig) -> Self {
        Self {
            cfg,
            history: VecDeque::new(),
            frozen: None,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen.is_some()
    }

    pub fn frozen_value(&self) -> Option<f64> {
        self.frozen
    }

    /// Decide the next barrier weight given the upcoming objective value and
    /// the classical candidate. Appends `f_next` to the history.
    pub fn step(&mut self, f_next: f64, mu_candidate: f64, mu_current: f64) -> f64 {
        let result = self.decide(f_next, mu_candidate, mu_current);
        self.history.push_back(f_next);
        while self.history.len() > self.cfg.window {
            self.history.pop_front();
        }
        result
    }

    fn decide(&mut self, f_next: f64, mu_candidate: f64, mu_current: f64) -> f64 {
        if let Some(frozen) = self.frozen {
            if !self.cfg.reevaluate {
                return frozen;
            }
        }
        if self.history.len() < self.cfg.window {
            return mu_candidate;
        }
        let avg: f64 = self.history.iter().sum::<f64>() / self.history.len() as f64;
        // avg of zero makes relDif undefined; treated as a freeze trigger
        let trigger = if avg == 0.0 {
            true
        } else {
            let rel_dif = ((avg - f_next) / avg).abs();
            rel_dif <= self.cfg.eps_conv
                || f_next < (1.0 - self.cfg.band) * avg
                || f_next > (1.0 + self.cfg.band) * avg
        };
        if trigger {
            let frozen = self.frozen.unwrap_or(mu_current);
            if !self.cfg.reevaluate {
                self.frozen = Some(frozen);
            }
            frozen
        } else {
            mu_candidate
        }
    }
}

/// Linear-solver backend family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Classical,
    Vqls,
    Cvqls,
}

impl BackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::Classical => "classical",
            BackendKind::Vqls => "vqls",
            BackendKind::Cvqls => "cvqls",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(BackendKind::Classical),
            "vqls" => Ok(BackendKind::Vqls),
            "cvqls" => Ok(BackendKind::Cvqls),
            other => Err(Error::Domain(format!(
                "unknown backend `{other}` (expected classical, vqls or cvqls)"
            ))),
        }
    }
}

/// Pluggable Newton-direction source.
#[derive(Debug, Clone)]
pub struct LinearBackend {
    pub kind: BackendKind,
    /// Inner-solver configuration (quantum kinds).
    pub solver: SolverConfig,
    /// Perturbation of (M, rhs) before each solve.
    pub noise: Option<NoiseSpec>,
    /// Reuse the previous iteration's final parameters as the next start
    /// (sequential initialization).
    pub warm_start: bool,
    /// A budget-exhausted inner solve still yields a usable direction as long
    /// as its best cost stays at or below this; above it the failure is
    /// propagated.
    pub max_usable_cost: f64,
}

impl LinearBackend {
    pub fn classical() -> Self {
        Self {
            kind: BackendKind::Classical,
            solver: SolverConfig::default(),
            noise: None,
            warm_start: false,
            max_usable_cost: 0.9,
        }
    }

    pub fn classical_noisy(noise: NoiseSpec) -> Self {
        Self {
            noise: Some(noise),
            ..Self::classical()
        }
    }

    /// Coherent variational backend: sequential warm starts on.
    pub fn cvqls(solver: SolverConfig) -> Self {
        Self {
            kind: BackendKind::Cvqls,
            solver,
            noise: None,
            warm_start: true,
            max_usable_cost: 0.9,
        }
    }

    /// Plain variational backend: fixed-value initialization each iteration.
    pub fn vqls(solver: SolverConfig) -> Self {
        Self {
            kind: BackendKind::Vqls,
            solver,
            noise: None,
            warm_start: false,
            max_usable_cost: 0.9,
        }
    }
}

/// Outer-loop configuration.
#[derive(Debug, Clone)]
pub struct IpmConfig {
    /// Convergence threshold on ||r||_inf + ||c||_inf + gap.
    pub eps_ipm: f64,
    /// Outer iteration cap.
    pub k_max: usize,
    /// Initial barrier weight; `None` starts at the initial mean
    /// complementarity gap so the first subproblem is centered at the
    /// starting point.
    pub mu0: Option<f64>,
    /// Centering parameter sigma in the classical update.
    pub sigma: f64,
    /// Optional barrier controller.
    pub controller: Option<MuControllerConfig>,
    /// Record kappa(M) per iteration (full SVD; disable for big systems).
    pub record_kappa: bool,
    /// Called once per completed outer iteration (progress reporting).
    pub progress: Option<fn(&IterationRecord)>,
}

impl Default for IpmConfig {
    fn default() -> Self {
        Self {
            eps_ipm: 1e-6,
            k_max: 200,
            mu0: None,
            sigma: 0.1,
            controller: None,
            record_kappa: true,
            progress: None,
        }
    }
}

/// How the outer loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Residuals and complementarity gap under the threshold.
    Converged,
    /// Barrier frozen by the controller and residuals under the threshold;
    /// the gap is pinned near the frozen weight by construction.
    ConvergedFrozen,
    /// Iteration cap reached.
    IterLimit,
    /// Overflow guard tripped.
    Diverged,
}

impl SolveStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, SolveStatus::Converged | SolveStatus::ConvergedFrozen)
    }
}

/// Outer-loop result: final iterate, per-iteration trace, termination status.
#[derive(Debug, Clone)]
pub struct IpmResult {
    pub state: IpmState,
    pub report: RunReport,
    pub status: SolveStatus,
    /// Optimality residual + gap per recorded iteration (diagnostics).
    pub residual_trace: Vec<f64>,
}

/// Solve a dense symmetric system by pivoted LU with iterative refinement.
pub fn solve_dense(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "matrix is {}x{}, need square",
            m.nrows(),
            m.ncols()
        )));
    }
    if rhs.len() != m.nrows() {
        return Err(Error::Dimension(format!(
            "rhs length {} != dimension {}",
            rhs.len(),
            m.nrows()
        )));
    }
    let lu = m.clone().lu();
    let mut x = lu
        .solve(rhs)
        .ok_or_else(|| Error::Singular("pivoted factorization failed".into()))?;
    let tol = 1e-9 * rhs.amax().max(1.0);
    for _ in 0..2 {
        let resid = rhs - m * &x;
        if resid.amax() <= tol {
            return Ok(x);
        }
        match lu.solve(&resid) {
            Some(dx) => x += dx,
            None => break,
        }
    }
    let resid = (rhs - m * &x).amax();
    if resid <= tol {
        Ok(x)
    } else {
        Err(Error::Singular(format!(
            "solution residual {resid:.3e} above tolerance {tol:.3e}"
        )))
    }
}

/// Newton direction split into primal and multiplier parts.
#[derive(Debug, Clone)]
pub struct KktDirection {
    pub dx: DVector<f64>,
    pub dlambda: DVector<f64>,
}

impl KktDirection {
    pub fn from_flat(problem: &OpfProblem, d: &DVector<f64>) -> Result<Self> {
        let n = problem.n_vars();
        if d.len() != n + problem.n_eq() {
            return Err(Error::Dimension(format!(
                "direction length {} != {}",
                d.len(),
                n + problem.n_eq()
            )));
        }
        Ok(Self {
            dx: d.rows(0, n).into_owned(),
            dlambda: d.rows(n, problem.n_eq()).into_owned(),
        })
    }
}

const FRACTION_TO_BOUNDARY: f64 = 0.99995;

/// Primal fraction-to-boundary step length: keeps slacks strictly positive.
/// Returns 1 when nothing blocks.
pub fn step_length(problem: &OpfProblem, state: &IpmState, dir: &KktDirection) -> f64 {
    let mut alpha = 1.0f64;
    for b in &problem.bounds {
        let s = state.x[b.slack];
        let ds = dir.dx[b.slack];
        if ds < 0.0 {
            alpha = alpha.min(FRACTION_TO_BOUNDARY * (-s / ds));
        }
    }
    alpha.clamp(0.0, 1.0)
}

/// Dual fraction-to-boundary step length, computed analogously over the
/// bound duals nu >= 0. The multiplier update takes its own step so that a
/// dual heading to zero (an inactive bound) cannot stall the primal iterate.
pub fn dual_step_length(problem: &OpfProblem, state: &IpmState, dir: &KktDirection) -> f64 {
    let mut alpha = 1.0f64;
    for (j, b) in problem.bounds.iter().enumerate() {
        let nu = state.nu[j];
        let dnu = b.orientation * dir.dlambda[problem.n_balance + j];
        if dnu < 0.0 {
            alpha = alpha.min(FRACTION_TO_BOUNDARY * (-nu / dnu));
        }
    }
    alpha.clamp(0.0, 1.0)
}

/// Barrier merit Phi(x, mu) + rho * ||c||_1 used to damp the Newton step; the
/// raw fraction-to-boundary step can overshoot the log barrier badly far from
/// the central path.
fn merit(problem: &OpfProblem, x: &DVector<f64>, mu: f64, rho: f64) -> f64 {
    let mut phi = problem.objective(x);
    for b in &problem.bounds {
        phi -= mu * x[b.slack].ln();
    }
    let c = &problem.eq * x - &problem.eq_rhs;
    phi + rho * c.iter().map(|v| v.abs()).sum::<f64>()
}

/// Backtrack from the fraction-to-boundary step until the barrier merit
/// stops increasing. Returns the accepted step length.
fn merit_backtrack(
    problem: &OpfProblem,
    state: &IpmState,
    dir: &KktDirection,
    alpha_max: f64,
) -> f64 {
    let rho = 10.0 * (1.0 + state.lambda.amax());
    let m0 = merit(problem, &state.x, state.mu, rho);
    let mut alpha = alpha_max;
    for _ in 0..40 {
        let xn = &state.x + alpha * &dir.dx;
        if problem.bounds.iter().all(|b| xn[b.slack] > 0.0) {
            let m1 = merit(problem, &xn, state.mu, rho);
            if m1.is_finite() && m1 <= m0 + 1e-12 * m0.abs().max(1.0) {
                return alpha;
            }
        }
        alpha *= 0.5;
    }
    alpha
}

/// Classical centering update: mu+ = sigma * (s' nu) / m. Transiently
/// negative dual estimates contribute zero so the barrier weight stays
/// positive.
pub fn mu_update_classical(problem: &OpfProblem, state: &IpmState, sigma: f64) -> f64 {
    let m = problem.bounds.len();
    if m == 0 {
        return 0.0;
    }
    let gap: f64 = problem
        .bounds
        .iter()
        .enumerate()
        .map(|(j, b)| (state.x[b.slack] * state.nu[j]).max(0.0))
        .sum();
    sigma * gap / m as f64
}

/// Optimality residual for termination: the stationarity rows of the
/// mu = 0 KKT conditions (the slack rows carry the barrier gradient, which by
/// construction sits at (1 - sigma) * nu right after every centering update
/// and only vanishes on the exact central path, so they are excluded; their
/// content is covered by the complementarity gap term instead).
fn optimality_residual(problem: &OpfProblem, kkt: &KktSystem) -> f64 {
    let slack = &problem.layout.slack;
    let mut r_max = 0.0f64;
    for i in 0..problem.n_vars() {
        if !(slack.start <= i && i < slack.end) {
            r_max = r_max.max(kkt.r[i].abs());
        }
    }
    r_max + kkt.c.amax()
}

/// Worst dual-feasibility violation: max(0, -min_j nu_j).
fn dual_infeasibility(state: &IpmState) -> f64 {
    state
        .nu
        .iter()
        .fold(0.0f64, |worst, nu| worst.max(-nu))
}

/// Mean complementarity gap.
fn mean_gap(problem: &OpfProblem, state: &IpmState) -> f64 {
    let m = problem.bounds.len();
    if m == 0 {
        return 0.0;
    }
    problem
        .bounds
        .iter()
        .enumerate()
        .map(|(j, b)| (state.x[b.slack] * state.nu[j]).max(0.0))
        .sum::<f64>()
        / m as f64
}

/// Deterministic strictly-interior starting point: bounded variables at the
/// midpoint of their box (or unit distance from a one-sided bound), states
/// flat, slacks clipped below at 0.1. Multipliers come from a least-squares
/// fit of the stationarity conditions at the start point (bound duals
/// clamped to at least one), which puts the duals on the objective's scale;
/// unit multipliers leave badly scaled problems hopelessly off the central
/// path. The barrier weight defaults to the resulting mean complementarity
/// gap so the first subproblem is centered where the iterate starts.
pub fn initial_state(problem: &OpfProblem, mu0: Option<f64>) -> IpmState {
    let n = problem.n_vars();
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    for b in &problem.bounds {
        if b.orientation < 0.0 {
            lo[b.var] = b.limit;
        } else {
            hi[b.var] = b.limit;
        }
    }
    let mut x = DVector::zeros(n);
    for i in 0..n {
        x[i] = match (lo[i].is_finite(), hi[i].is_finite()) {
            (true, true) => 0.5 * (lo[i] + hi[i]),
            (true, false) => lo[i] + 1.0,
            (false, true) => hi[i] - 1.0,
            (false, false) => 0.0,
        };
    }
    for b in &problem.bounds {
        let gap = if b.orientation < 0.0 {
            x[b.var] - b.limit
        } else {
            b.limit - x[b.var]
        };
        x[b.slack] = gap.max(0.1);
    }

    // lambda0 = argmin ||grad f(x0) + A' lambda||
    let mut lambda = if problem.n_eq() == 0 {
        DVector::zeros(0)
    } else {
        let grad = problem.gradient(&x);
        let a = &problem.eq;
        let normal = a * a.transpose();
        let rhs = -(a * &grad);
        normal
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| DVector::from_element(problem.n_eq(), 1.0))
    };
    for (j, b) in problem.bounds.iter().enumerate() {
        let row = problem.n_balance + j;
        if b.orientation * lambda[row] < 1.0 {
            lambda[row] = b.orientation;
        }
    }

    let mut state = IpmState {
        x,
        lambda,
        nu: DVector::zeros(problem.bounds.len()),
        mu: 1.0,
        k: 0,
        objective: 0.0,
    };
    state.refresh(problem);
    state.mu = mu0.unwrap_or_else(|| mean_gap(problem, &state).max(1e-8));
    state
}

/// Assemble the KKT system at the current iterate (spec-level wrapper).
pub fn assemble(problem: &OpfProblem, state: &IpmState) -> Result<KktSystem> {
    kkt_assemble(problem, &state.x, &state.lambda, state.mu)
}

struct BackendRunner<'a> {
    backend: &'a LinearBackend,
    noise: Option<NoiseStream>,
    last_params: Option<Vec<f64>>,
}

impl<'a> BackendRunner<'a> {
    fn new(backend: &'a LinearBackend) -> Self {
        Self {
            backend,
            noise: backend.noise.as_ref().map(NoiseStream::new),
            last_params: None,
        }
    }

    fn solve(&mut self, kkt: &KktSystem) -> Result<(DVector<f64>, InnerStats)> {
        let (m, rhs) = match &mut self.noise {
            Some(stream) => stream.perturb_system(&kkt.m, &kkt.rhs),
            None => (kkt.m.clone(), kkt.rhs.clone()),
        };
        match self.backend.kind {
            BackendKind::Classical => {
                let x = solve_dense(&m, &rhs)?;
                let resid = (&m * &x - &rhs).amax() / rhs.amax().max(1.0);
                Ok((
                    x,
                    InnerStats {
                        iters: 1,
                        final_cost: resid,
                    },
                ))
            }
            BackendKind::Vqls | BackendKind::Cvqls => {
                let mut cfg = self.backend.solver.clone();
                if self.backend.warm_start {
                    if let Some(prev) = &self.last_params {
                        cfg.init = InitPolicy::WarmStart(prev.clone());
                    }
                }
                match vqsolver::solve_linear_system(&m, &rhs, &cfg) {
                    Ok((x, report)) => {
                        if self.backend.warm_start {
                            self.last_params = Some(report.final_params.clone());
                        }
                        Ok((
                            x,
                            InnerStats {
                                iters: report.iterations,
                                final_cost: report.final_cost,
                            },
                        ))
                    }
                    Err(Error::InnerNonConvergence {
                        final_cost,
                        best_solution,
                        best_params,
                        iterations,
                    }) if final_cost <= self.backend.max_usable_cost => {
                        // First-class outcome: take the best direction found
                        // and report the miss in the trace.
                        if self.backend.warm_start {
                            self.last_params = Some(best_params);
                        }
                        Ok((
                            DVector::from_vec(best_solution),
                            InnerStats {
                                iters: iterations,
                                final_cost,
                            },
                        ))
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }
}

/// Run the outer interior-point loop.
pub fn ipm_solve(
    problem: &OpfProblem,
    backend: &LinearBackend,
    config: &IpmConfig,
) -> Result<IpmResult> {
    let t_total = std::time::Instant::now();
    let mut report = RunReport::new(
        "",
        problem.formulation.as_str(),
        backend.kind.as_str(),
        backend.noise.as_ref().map(|n| n.seed).unwrap_or(0),
    );
    let mut state = initial_state(problem, config.mu0);
    let mut controller = config.controller.clone().map(MuController::new);
    let mut runner = BackendRunner::new(backend);
    let mut t_assemble = 0.0f64;
    let mut t_solve = 0.0f64;
    let mut residual_trace = Vec::new();

    let status;
    loop {
        let t0 = std::time::Instant::now();
        let kkt = assemble(problem, &state)?;
        t_assemble += t0.elapsed().as_secs_f64();

        if !state.objective.is_finite()
            || state.objective.abs() > 1e12
            || state.x.amax() > 1e9
            || !kkt.m.iter().all(|v| v.is_finite())
        {
            status = SolveStatus::Diverged;
            break;
        }
        let gap = mean_gap(problem, &state);
        let dual_infeas = dual_infeasibility(&state);
        let resid = optimality_residual(problem, &kkt) + dual_infeas;
        residual_trace.push(resid + gap);
        let frozen = controller.as_ref().is_some_and(|c| c.is_frozen());
        if resid + gap <= config.eps_ipm {
            status = SolveStatus::Converged;
            break;
        }
        if frozen && resid <= config.eps_ipm {
            status = SolveStatus::ConvergedFrozen;
            break;
        }
        if state.k >= config.k_max {
            status = SolveStatus::IterLimit;
            break;
        }

        let kappa = if config.record_kappa {
            condition_number(&kkt.m)?
        } else {
            0.0
        };

        let t1 = std::time::Instant::now();
        let flat = runner.solve(&kkt).map_err(|e| Error::Backend {
            iteration: state.k,
            source: Box::new(e),
        })?;
        t_solve += t1.elapsed().as_secs_f64();
        let (direction, inner) = flat;
        let dir = KktDirection::from_flat(problem, &direction)?;

        report.iterations.push(IterationRecord {
            k: state.k,
            objective: state.objective,
            mu: state.mu,
            kappa,
            inner,
        });
        if let Some(cb) = config.progress {
            cb(report.iterations.last().expect("just pushed"));
        }

        // Damped primal step, full multiplier step. The multipliers are
        // memoryless outputs of each solve: stepping them fractionally (by a
        // dual fraction-to-boundary or a shared alpha) either injects a
        // (alpha_p - alpha_d) H dx spike through the stiff barrier rows or
        // lets a dual heading to zero pin the whole iterate.
        let alpha_max = step_length(problem, &state, &dir);
        let alpha = merit_backtrack(problem, &state, &dir, alpha_max);
        state.x += alpha * &dir.dx;
        state.lambda += &dir.dlambda;
        state.refresh(problem);

        // Without the controller the barrier weight follows the raw classical
        // schedule: one centering cut per Newton step. The controller adds
        // the reduction-rate guard -- it cuts only once the current barrier
        // subproblem is roughly solved (full residual at the scale of mu),
        // because a premature cut makes the primal-barrier Newton direction
        // overshoot the boundary -- and on top of that freezes the weight
        // when the objective history stalls or jumps.
        state.mu = match &mut controller {
            Some(ctrl) => {
                let next_kkt = assemble(problem, &state)?;
                let centered = next_kkt.r.amax() <= state.mu.max(0.1 * config.eps_ipm);
                let mu_candidate = if centered {
                    mu_update_classical(problem, &state, config.sigma)
                } else {
                    state.mu
                };
                ctrl.step(state.objective, mu_candidate, state.mu)
            }
            None => mu_update_classical(problem, &state, config.sigma),
        };
        state.k += 1;
    }

    report.timing.insert("assemble_s".into(), t_assemble);
    report.timing.insert("solve_s".into(), t_solve);
    report
        .timing
        .insert("total_s".into(), t_total.elapsed().as_secs_f64());
    Ok(IpmResult {
        state,
        report,
        status,
        residual_trace,
    })
}
