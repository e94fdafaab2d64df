//! The greedy training loop: at each outer iteration, freeze the dataset
//! iterates, minimize the mean one-step-ahead objective over the preconditioner
//! parameters with a safeguarded first-order inner solver, and advance every
//! trajectory with the accepted parameters.
//!
//! The safeguard compares the solved parameters against `θ̃` (the embedding of
//! the classical step `τ I`); whenever the inner solver exits above
//! `g_t(θ̃)`, `θ̃` is used instead. This keeps the chain
//! `F(x_{t+1}) = g_t(θ_t) ≤ g_t(θ̃) ≤ F(x_t)`, which is what makes training
//! provably convergent on the training set.

use std::sync::Arc;

use ndarray::Array1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::preconditioners::{self, ParamVector, Parametrization};

/// One training example: an objective and its initial iterate.
pub struct DataPoint {
    pub objective: Arc<dyn Objective>,
    pub start: Array1<f64>,
}

/// Inner solver for the greedy subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerSolver {
    /// Gradient descent with step `1/L_g` (monotone).
    PlainDescent,
    /// Constant-step accelerated gradient method (non-monotone, usually far
    /// fewer iterations).
    Accelerated,
}

/// Where each outer iteration's inner solve starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitPolicy {
    /// Start at `θ̃`; descent can then never end above the safeguard.
    SafeguardStart,
    /// Start at the previous iteration's parameters, relying on the safeguard
    /// fallback for the convergence guarantee.
    WarmStart,
}

/// How the safeguard step `τ` is chosen from the dataset constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauPolicy {
    /// `τ = 1 / max_k L_k`.
    SmoothOnly,
    /// `τ = 2 / (min_k μ_k + max_k L_k)`; requires every objective to carry a
    /// strong-convexity constant.
    StronglyConvex,
}

/// Free-form origin metadata carried into schedules.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub dataset: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainerConfig {
    /// Outer iterations `T`.
    pub outer_iterations: usize,
    /// Inner iteration cap per outer iteration.
    pub inner_cap: usize,
    /// Relative gradient-norm tolerance of the inner stopping criterion.
    pub tolerance: f64,
    pub inner_solver: InnerSolver,
    pub init_policy: InitPolicy,
    pub enforce_safeguard: bool,
    pub tau_policy: TauPolicy,
    pub provenance: Provenance,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            outer_iterations: 100,
            inner_cap: 5000,
            tolerance: 1e-3,
            inner_solver: InnerSolver::PlainDescent,
            init_policy: InitPolicy::SafeguardStart,
            enforce_safeguard: true,
            tau_policy: TauPolicy::SmoothOnly,
            provenance: Provenance::default(),
        }
    }
}

impl TrainerConfig {
    fn validate(&self) -> Result<()> {
        if self.outer_iterations == 0 {
            return Err(Error::InvalidInput(
                "outer iteration count must be at least 1".to_string(),
            ));
        }
        if self.inner_cap == 0 {
            return Err(Error::InvalidInput(
                "inner iteration cap must be at least 1".to_string(),
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput(
                "stopping tolerance must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// The greedy subproblem at one outer iteration: dataset objectives frozen at
/// their current iterates, with gradients cached.
pub struct GreedySubproblem {
    objectives: Vec<Arc<dyn Objective>>,
    iterates: Vec<Array1<f64>>,
    gradients: Vec<Array1<f64>>,
    point_values: Vec<f64>,
    parametrization: Parametrization,
    smoothness: f64,
    tau: f64,
    safeguard: ParamVector,
}

impl GreedySubproblem {
    pub fn new(
        objectives: Vec<Arc<dyn Objective>>,
        iterates: Vec<Array1<f64>>,
        parametrization: Parametrization,
        tau_policy: TauPolicy,
    ) -> Result<Self> {
        if objectives.is_empty() {
            return Err(Error::EmptyDataset("GreedySubproblem"));
        }
        if objectives.len() != iterates.len() {
            return Err(Error::DimensionMismatch {
                context: "GreedySubproblem iterates",
                expected: objectives.len(),
                got: iterates.len(),
            });
        }
        for (obj, x) in objectives.iter().zip(&iterates) {
            if obj.dim() != x.len() {
                return Err(Error::DimensionMismatch {
                    context: "GreedySubproblem iterate dims",
                    expected: obj.dim(),
                    got: x.len(),
                });
            }
            if let Some(n) = parametrization.input_dim() {
                if obj.dim() != n {
                    return Err(Error::DimensionMismatch {
                        context: "GreedySubproblem parametrization dims",
                        expected: n,
                        got: obj.dim(),
                    });
                }
            }
        }

        let evaluated: Vec<(Array1<f64>, f64)> = objectives
            .par_iter()
            .zip(iterates.par_iter())
            .map(|(obj, x)| (obj.grad(x.view()), obj.eval(x.view())))
            .collect();
        let (gradients, point_values): (Vec<_>, Vec<_>) = evaluated.into_iter().unzip();

        let l_list: Vec<f64> = objectives.iter().map(|o| o.smoothness()).collect();
        let l_max = l_list.iter().fold(0.0_f64, |a, &v| a.max(v));
        if !(l_max > 0.0) || !l_max.is_finite() {
            return Err(Error::InvalidInput(format!(
                "dataset smoothness constants must be positive and finite (max {l_max})"
            )));
        }
        let tau = match tau_policy {
            TauPolicy::SmoothOnly => 1.0 / l_max,
            TauPolicy::StronglyConvex => {
                let mut mu_min = f64::INFINITY;
                for o in &objectives {
                    match o.strong_convexity() {
                        Some(mu) if mu > 0.0 => mu_min = mu_min.min(mu),
                        _ => {
                            return Err(Error::InvalidInput(
                                "strongly-convex safeguard policy requires a strong-convexity \
                                 constant on every objective"
                                    .to_string(),
                            ))
                        }
                    }
                }
                2.0 / (mu_min + l_max)
            }
        };
        let smoothness = preconditioners::lipschitz_bound(&parametrization, &gradients, &l_list)?;
        let safeguard = preconditioners::embed_tau(&parametrization, tau)?;

        Ok(Self {
            objectives,
            iterates,
            gradients,
            point_values,
            parametrization,
            smoothness,
            tau,
            safeguard,
        })
    }

    pub fn len(&self) -> usize {
        self.objectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectives.is_empty()
    }

    pub fn parametrization(&self) -> &Parametrization {
        &self.parametrization
    }

    /// Smoothness constant `L_g` of the subproblem gradient.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// The safeguard parameters `θ̃`.
    pub fn safeguard(&self) -> &ParamVector {
        &self.safeguard
    }

    pub fn gradients(&self) -> &[Array1<f64>] {
        &self.gradients
    }

    pub fn iterates(&self) -> &[Array1<f64>] {
        &self.iterates
    }

    /// Mean objective value at the frozen iterates, `F(x_t)`.
    pub fn stacked_value(&self) -> f64 {
        self.point_values.iter().sum::<f64>() / self.len() as f64
    }

    /// Per-point objective values at the frozen iterates.
    pub fn point_values(&self) -> &[f64] {
        &self.point_values
    }

    fn check_theta(&self, theta: &ParamVector) -> Result<()> {
        if theta.parametrization() != &self.parametrization {
            return Err(Error::InvalidInput(
                "parameter vector does not match the subproblem parametrization".to_string(),
            ));
        }
        Ok(())
    }

    /// Mean objective value one preconditioned step ahead:
    /// `g(θ) = (1/N) Σ f_k(x_k - G_θ ∇f_k(x_k))`.
    pub fn eval_g(&self, theta: &ParamVector) -> Result<f64> {
        self.check_theta(theta)?;
        let total: Result<Vec<f64>> = self
            .objectives
            .par_iter()
            .zip(self.iterates.par_iter())
            .zip(self.gradients.par_iter())
            .map(|((obj, x), g)| {
                let step = preconditioners::apply(theta, g.view())?;
                Ok(obj.eval((x - &step).view()))
            })
            .collect();
        Ok(total?.iter().sum::<f64>() / self.len() as f64)
    }

    /// Gradient of `g` with respect to the parameters:
    /// `-(1/N) Σ Bᵀ ∇f_k(x_k - G_θ ∇f_k(x_k))`.
    pub fn grad_g(&self, theta: &ParamVector) -> Result<Array1<f64>> {
        self.check_theta(theta)?;
        let parts: Result<Vec<Array1<f64>>> = self
            .objectives
            .par_iter()
            .zip(self.iterates.par_iter())
            .zip(self.gradients.par_iter())
            .map(|((obj, x), g)| {
                let step = preconditioners::apply(theta, g.view())?;
                let shifted_grad = obj.grad((x - &step).view());
                preconditioners::adjoint_apply(&self.parametrization, g.view(), shifted_grad.view())
            })
            .collect();
        let mut acc = Array1::zeros(self.parametrization.param_dim());
        for p in parts? {
            acc += &p;
        }
        let scale = -1.0 / self.len() as f64;
        acc.mapv_inplace(|v| v * scale);
        Ok(acc)
    }

    fn param_vector(&self, raw: Array1<f64>) -> ParamVector {
        ParamVector::new(self.parametrization.clone(), raw)
            .expect("finiteness checked by the solver loop")
    }
}

/// Exit information from one inner solve.
#[derive(Debug, Clone)]
pub struct InnerDiagnostics {
    /// Number of parameter updates performed.
    pub inner_iterations: usize,
    /// `‖∇g(θ_exit)‖ / ‖∇g(θ̃)‖` at exit (1 after a fallback, 0 when the
    /// safeguard was already stationary).
    pub exit_ratio: f64,
    /// The safeguard replaced the solver output.
    pub fallback: bool,
    /// `∇g(θ̃)` vanished, so `θ̃` was returned immediately.
    pub stationary: bool,
    /// `g(θ_t)` for the returned parameters.
    pub g_at_exit: f64,
    /// `g(θ̃)`.
    pub g_at_safeguard: f64,
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

fn ensure_finite(v: &Array1<f64>, iteration: usize, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalFailure {
            iteration,
            detail: format!("non-finite {what} in inner solve"),
        })
    }
}

/// Minimizes the greedy subproblem with the configured first-order method,
/// starting from `θ̃` (or `warm_start` under the warm-start policy), stopping
/// when `‖∇g(θ^w)‖/‖∇g(θ̃)‖ < tolerance` or the iteration cap is reached.
///
/// With safeguard enforcement on, the result is replaced by `θ̃` whenever the
/// solver exits above `g(θ̃)`.
pub fn inner_solve(
    sub: &GreedySubproblem,
    config: &TrainerConfig,
    warm_start: Option<&ParamVector>,
) -> Result<(ParamVector, InnerDiagnostics)> {
    config.validate()?;
    let safeguard = sub.safeguard().clone();
    let g_at_safeguard = sub.eval_g(&safeguard)?;
    if !g_at_safeguard.is_finite() {
        return Err(Error::NumericalFailure {
            iteration: 0,
            detail: "objective at safeguard parameters is not finite".to_string(),
        });
    }
    let safeguard_grad = sub.grad_g(&safeguard)?;
    let norm0 = norm(&safeguard_grad);

    // A vanishing safeguard gradient (or a zero-smoothness subproblem, which
    // happens only when every dataset gradient is zero) leaves nothing to
    // solve: the stopping ratio would divide by zero.
    if norm0 == 0.0 || sub.smoothness() <= 0.0 {
        let diag = InnerDiagnostics {
            inner_iterations: 0,
            exit_ratio: 0.0,
            fallback: false,
            stationary: true,
            g_at_exit: g_at_safeguard,
            g_at_safeguard,
        };
        return Ok((safeguard, diag));
    }

    let step = 1.0 / sub.smoothness();
    let init = match (config.init_policy, warm_start) {
        (InitPolicy::WarmStart, Some(theta)) => {
            sub.check_theta(theta)?;
            theta.params().clone()
        }
        _ => safeguard.params().clone(),
    };

    let (raw, iterations, exit_ratio) = match config.inner_solver {
        InnerSolver::PlainDescent => {
            let mut theta = init;
            let mut w = 0;
            loop {
                let grad = sub.grad_g(&sub.param_vector(theta.clone()))?;
                ensure_finite(&grad, w, "gradient")?;
                let ratio = norm(&grad) / norm0;
                if ratio < config.tolerance || w >= config.inner_cap {
                    break (theta, w, ratio);
                }
                theta.scaled_add(-step, &grad);
                ensure_finite(&theta, w, "parameters")?;
                w += 1;
            }
        }
        InnerSolver::Accelerated => {
            let mut x = init.clone();
            let mut y = init;
            let mut momentum = 1.0_f64;
            let mut w = 0;
            loop {
                // The gradient is evaluated at the extrapolated point; the
                // stopping ratio uses it as a stationarity surrogate for the
                // iterate, which it approaches as the method converges.
                let grad = sub.grad_g(&sub.param_vector(y.clone()))?;
                ensure_finite(&grad, w, "gradient")?;
                let ratio = norm(&grad) / norm0;
                if ratio < config.tolerance || w >= config.inner_cap {
                    break (x, w, ratio);
                }
                let mut x_next = y;
                x_next.scaled_add(-step, &grad);
                ensure_finite(&x_next, w, "parameters")?;
                let momentum_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
                let beta = (momentum - 1.0) / momentum_next;
                y = &x_next + &((&x_next - &x) * beta);
                x = x_next;
                momentum = momentum_next;
                w += 1;
            }
        }
    };

    let theta = sub.param_vector(raw);
    let g_at_exit = sub.eval_g(&theta)?;
    if !g_at_exit.is_finite() {
        return Err(Error::NumericalFailure {
            iteration: iterations,
            detail: "objective at inner-solve exit is not finite".to_string(),
        });
    }

    if config.enforce_safeguard && g_at_exit > g_at_safeguard {
        let diag = InnerDiagnostics {
            inner_iterations: iterations,
            exit_ratio: 1.0,
            fallback: true,
            stationary: false,
            g_at_exit: g_at_safeguard,
            g_at_safeguard,
        };
        return Ok((safeguard, diag));
    }

    let diag = InnerDiagnostics {
        inner_iterations: iterations,
        exit_ratio,
        fallback: false,
        stationary: false,
        g_at_exit,
        g_at_safeguard,
    };
    Ok((theta, diag))
}

/// One row of the training trace, recorded per outer iteration.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub t: usize,
    /// `F(x_t)`: mean objective value at the frozen iterates.
    pub stacked_value: f64,
    /// Per-point objective values at the frozen iterates.
    pub per_point_values: Vec<f64>,
    /// Per-point gradient norms at the frozen iterates.
    pub per_point_grad_norms: Vec<f64>,
    /// `g_t(θ̃)`: the value after the safeguard step.
    pub safeguard_value: f64,
    /// `g_t(θ_t)`: the value after the accepted step, i.e. `F(x_{t+1})`.
    pub accepted_value: f64,
    pub exit_ratio: f64,
    pub inner_iterations: usize,
    pub fallback: bool,
    pub stationary: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
    /// Dataset iterates after the last trained step, `x_k^T`.
    pub final_iterates: Vec<Array1<f64>>,
}

impl TrainingTrace {
    /// `F(x_t)` for `t` in `0..=T` (the final entry comes from the accepted
    /// value of the last row).
    pub fn stacked_values(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.rows.iter().map(|r| r.stacked_value).collect();
        if let Some(last) = self.rows.last() {
            out.push(last.accepted_value);
        }
        out
    }
}

/// An ordered list of learned parameters with the safeguard step they were
/// trained under.
#[derive(Debug, Clone)]
pub struct PreconditionerSchedule {
    parametrization: Parametrization,
    thetas: Vec<ParamVector>,
    tau: f64,
    provenance: Provenance,
}

impl PreconditionerSchedule {
    pub fn new(
        parametrization: Parametrization,
        thetas: Vec<ParamVector>,
        tau: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::EmptyDataset("PreconditionerSchedule"));
        }
        for theta in &thetas {
            if theta.parametrization() != &parametrization {
                return Err(Error::InvalidInput(
                    "schedule parameters must all share one parametrization".to_string(),
                ));
            }
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidInput(format!(
                "schedule safeguard step must be positive, got {tau}"
            )));
        }
        Ok(Self {
            parametrization,
            thetas,
            tau,
            provenance,
        })
    }

    pub fn parametrization(&self) -> &Parametrization {
        &self.parametrization
    }

    /// Number of trained iterations `T`.
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn theta(&self, t: usize) -> &ParamVector {
        &self.thetas[t]
    }

    pub fn thetas(&self) -> &[ParamVector] {
        &self.thetas
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
}

/// Runs the greedy training loop over the dataset and returns the learned
/// schedule together with per-iteration diagnostics.
pub fn train(
    dataset: &[DataPoint],
    parametrization: &Parametrization,
    config: &TrainerConfig,
) -> Result<(PreconditionerSchedule, TrainingTrace)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("train"));
    }
    let objectives: Vec<Arc<dyn Objective>> =
        dataset.iter().map(|p| Arc::clone(&p.objective)).collect();
    let mut iterates: Vec<Array1<f64>> = dataset.iter().map(|p| p.start.clone()).collect();

    let mut thetas: Vec<ParamVector> = Vec::with_capacity(config.outer_iterations);
    let mut rows = Vec::with_capacity(config.outer_iterations);
    let mut tau = 0.0;

    for t in 0..config.outer_iterations {
        let sub = GreedySubproblem::new(
            objectives.clone(),
            iterates.clone(),
            parametrization.clone(),
            config.tau_policy,
        )?;
        tau = sub.tau();
        let warm = thetas.last();
        let (theta, diag) = inner_solve(&sub, config, warm).map_err(|e| match e {
            Error::NumericalFailure { iteration, detail } => Error::NumericalFailure {
                iteration,
                detail: format!("{detail} (outer iteration {t})"),
            },
            other => other,
        })?;

        rows.push(TraceRow {
            t,
            stacked_value: sub.stacked_value(),
            per_point_values: sub.point_values().to_vec(),
            per_point_grad_norms: sub
                .gradients()
                .iter()
                .map(|g| g.dot(g).sqrt())
                .collect(),
            safeguard_value: diag.g_at_safeguard,
            accepted_value: diag.g_at_exit,
            exit_ratio: diag.exit_ratio,
            inner_iterations: diag.inner_iterations,
            fallback: diag.fallback,
            stationary: diag.stationary,
        });

        let advanced: Result<Vec<Array1<f64>>> = sub
            .iterates()
            .par_iter()
            .zip(sub.gradients().par_iter())
            .map(|(x, g)| {
                let step = preconditioners::apply(&theta, g.view())?;
                Ok(x - &step)
            })
            .collect();
        iterates = advanced?;
        thetas.push(theta);
    }

    let schedule = PreconditionerSchedule::new(
        parametrization.clone(),
        thetas,
        tau,
        config.provenance.clone(),
    )?;
    Ok((
        schedule,
        TrainingTrace {
            rows,
            final_iterates: iterates,
        },
    ))
}

/// Convergence-rate diagnostics derived from a finished training trace.
#[derive(Debug, Clone)]
pub struct RateReport {
    /// `(t, max_k L_k / (2 t N) * ‖x_0 - x^*‖²)` for `t ≥ 1`.
    pub sublinear_bounds: Vec<(usize, f64)>,
    /// Iterations `t` where `F(x_t) - F^*` exceeded the sublinear bound.
    pub sublinear_violations: Vec<usize>,
    /// Per-point constants `M_i = 1 + Σ_{k≠i} gap_k / gap_i` scaling the rate
    /// onto individual objectives; `None` where the initial gap is zero.
    pub per_function_constants: Vec<Option<f64>>,
    /// Contraction factor `1 - μ_F/L_F = 1 - min μ / max L` when every
    /// strong-convexity constant is available.
    pub linear_rate_factor: Option<f64>,
    /// Context for the linear factor.
    pub linear_rate_note: &'static str,
}

/// Evaluates the sublinear rate bound against a trace and computes the
/// per-function rate constants. `f_stars` are the reference optima, and
/// `initial_distance_sq` is `Σ_k ‖x_k^0 - x_k^*‖²`.
pub fn rate_bounds(
    trace: &TrainingTrace,
    l_list: &[f64],
    mu_list: Option<&[f64]>,
    f_stars: &[f64],
    initial_distance_sq: f64,
) -> Result<RateReport> {
    if trace.rows.is_empty() {
        return Err(Error::EmptyDataset("rate_bounds"));
    }
    let n_points = f_stars.len();
    if l_list.len() != n_points || trace.rows[0].per_point_values.len() != n_points {
        return Err(Error::DimensionMismatch {
            context: "rate_bounds lists",
            expected: n_points,
            got: l_list.len(),
        });
    }
    let l_max = l_list.iter().fold(0.0_f64, |a, &v| a.max(v));
    let f_star_mean = f_stars.iter().sum::<f64>() / n_points as f64;

    let stacked = trace.stacked_values();
    let mut bounds = Vec::new();
    let mut violations = Vec::new();
    for (t, value) in stacked.iter().enumerate().skip(1) {
        let bound = l_max * initial_distance_sq / (2.0 * t as f64 * n_points as f64);
        bounds.push((t, bound));
        let gap = value - f_star_mean;
        if gap > bound + 1e-12 * bound.abs().max(1.0) {
            violations.push(t);
        }
    }

    let initial_gaps: Vec<f64> = trace.rows[0]
        .per_point_values
        .iter()
        .zip(f_stars)
        .map(|(v, s)| v - s)
        .collect();
    let total_gap: f64 = initial_gaps.iter().sum();
    let per_function_constants = initial_gaps
        .iter()
        .map(|&gap| {
            if gap > 0.0 {
                Some(1.0 + (total_gap - gap) / gap)
            } else {
                None
            }
        })
        .collect();

    let linear_rate_factor = mu_list.and_then(|mus| {
        if mus.len() == n_points && mus.iter().all(|&m| m > 0.0) && l_max > 0.0 {
            let mu_min = mus.iter().fold(f64::INFINITY, |a, &v| a.min(v));
            Some(1.0 - mu_min / l_max)
        } else {
            None
        }
    });

    Ok(RateReport {
        sublinear_bounds: bounds,
        sublinear_violations: violations,
        per_function_constants,
        linear_rate_factor,
        linear_rate_note:
            "contraction factor 1 - mu_F/L_F with the stacked constants; the reciprocal \
             ordering would exceed 1 whenever L >= mu and is not usable as a rate",
    })
}
