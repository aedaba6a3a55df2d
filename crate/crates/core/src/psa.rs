//! Projected subgradient algorithm on the reduced min-max problem.
//!
//! `phi_ik(x) = -x_i^T A_iik x_i / (gamma_ik (sum_{j != i} x_j^T A_jik x_j + sigma^2))`
//! and `g(x) = max_ik phi_ik(x)` is minimized over the power ellipsoid
//! `X = { x : sum_i ||C_i x_i||^2 <= P }`. The inner maximization over the
//! probability simplex is attained at a vertex, so each iteration selects the
//! largest `phi_ik`, steps along its gradient and rescales onto `X`.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::Real;
use crate::theory::estimate_theory_constants;
use crate::transform::{TransformedProblem, WeightIterate};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Constant step size.
    Fixed(f64),
    /// Step `sqrt(Delta / (L M^2 (J + 1)))` for horizon `J`, with the
    /// constants estimated by seeded sampling.
    Estimated { horizon: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputRule {
    /// Feasible iterate with the smallest objective.
    Best,
    Last,
    /// Stop at `J° ~ Uniform{0..=J}` and return that iterate.
    UniformRandom,
}

/// Rule for picking among several maximizing `phi_ik`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Lowest `(i, k)` in lexicographic order.
    #[default]
    Lexicographic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Tolerance,
    MaxIters,
    RandomStop,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Tolerance => "tolerance",
            StopReason::MaxIters => "max_iters",
            StopReason::RandomStop => "random_stop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tolerance" => Some(StopReason::Tolerance),
            "max_iters" => Some(StopReason::MaxIters),
            "random_stop" => Some(StopReason::RandomStop),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub step_rule: StepRule,
    pub max_iters: usize,
    /// Stop once `|g(x^(j+1)) - g(x^(j))| < obj_tol`.
    pub obj_tol: f64,
    pub output_rule: OutputRule,
    pub rng_seed: u64,
    pub track_trajectory: bool,
    pub tie_break: TieBreak,
    /// Sample count for the step-size constants of [`StepRule::Estimated`].
    pub theory_samples: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            step_rule: StepRule::Estimated { horizon: 5000 },
            max_iters: 5000,
            obj_tol: 1e-5,
            output_rule: OutputRule::Best,
            rng_seed: 0,
            track_trajectory: false,
            tie_break: TieBreak::Lexicographic,
            theory_samples: 64,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        match self.step_rule {
            StepRule::Fixed(a) if !(a > 0.0 && a.is_finite()) => {
                return Err(Error::Config(format!(
                    "step size must be positive, got {a}"
                )))
            }
            StepRule::Estimated { horizon: 0 } => {
                return Err(Error::Config("step horizon must be at least 1".into()))
            }
            _ => {}
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.obj_tol >= 0.0) {
            return Err(Error::Config("obj_tol must be nonnegative".into()));
        }
        if matches!(self.step_rule, StepRule::Estimated { .. }) && self.theory_samples < 2 {
            return Err(Error::Config("theory_samples must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport<T: Real> {
    pub x_out: WeightIterate<T>,
    /// `g(x_out)`.
    pub objective: T,
    /// `SINR_ik` at `x_out`, flat order.
    pub per_user_sinr: Vec<T>,
    /// `min_ik SINR_ik`.
    pub min_sinr: T,
    /// `min_ik SINR_ik / gamma_ik = -g(x_out)`.
    pub min_weighted_sinr: T,
    /// `g(x^(j))` for every visited iterate, when tracked.
    pub g_trajectory: Vec<T>,
    /// Stationarity measure at `x^(j)` (`||x^(j) - x^(j+1)|| / alpha`), when tracked.
    pub stationarity_trajectory: Vec<T>,
    pub iterations_run: usize,
    /// Index of the returned iterate.
    pub output_index: usize,
    pub stationarity_final: T,
    pub step_size: T,
    pub wall_time_precompute: f64,
    pub wall_time_solve: f64,
    pub stop_reason: StopReason,
}

impl<T: Real> SolveReport<T> {
    pub fn min_sinr_db(&self) -> f64 {
        10.0 * self.min_sinr.as_f64().log10()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let v = |xs: &[T]| xs.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        json!({
            "x_out": v(self.x_out.x.as_slice()),
            "users_per_group": self.x_out.users_per_group,
            "objective": self.objective.as_f64(),
            "per_user_sinr": v(&self.per_user_sinr),
            "min_sinr": self.min_sinr.as_f64(),
            "min_weighted_sinr": self.min_weighted_sinr.as_f64(),
            "g_trajectory": v(&self.g_trajectory),
            "stationarity_trajectory": v(&self.stationarity_trajectory),
            "iterations_run": self.iterations_run,
            "output_index": self.output_index,
            "stationarity_final": self.stationarity_final.as_f64(),
            "step_size": self.step_size.as_f64(),
            "wall_time_precompute_s": self.wall_time_precompute,
            "wall_time_solve_s": self.wall_time_solve,
            "stop_reason": self.stop_reason.as_str(),
        })
    }
}

/// `x_j^T A_{j,user} x_j`.
fn quad<T: Real>(problem: &TransformedProblem<T>, x: &DVector<T>, j: usize, user: usize) -> T {
    let r = problem.block_range(j);
    let xj = x.rows(r.start, r.len());
    xj.dot(&(problem.quad_form(j, user) * xj))
}

fn signal_and_interference<T: Real>(
    problem: &TransformedProblem<T>,
    x: &DVector<T>,
    user: usize,
) -> (T, T) {
    let own = problem.user_group(user);
    let mut interference = T::zero();
    let mut signal = T::zero();
    for j in 0..problem.n_groups() {
        let q = quad(problem, x, j, user);
        if j == own {
            signal = q;
        } else {
            interference += q;
        }
    }
    (signal, interference)
}

pub(crate) fn phi_of<T: Real>(problem: &TransformedProblem<T>, x: &DVector<T>) -> Vec<T> {
    (0..problem.total_users())
        .map(|u| {
            let (s, i) = signal_and_interference(problem, x, u);
            -s / (problem.weights[u] * (i + problem.noise_var))
        })
        .collect()
}

/// Every `phi_ik(x)` in flat user order. All values are `<= 0`.
pub fn phi_all<T: Real>(problem: &TransformedProblem<T>, x: &WeightIterate<T>) -> Vec<T> {
    phi_of(problem, &x.x)
}

/// `g(x) = max_ik phi_ik(x)`.
pub fn objective<T: Real>(problem: &TransformedProblem<T>, x: &WeightIterate<T>) -> T {
    select_y(&phi_all(problem, x), TieBreak::Lexicographic).value
}

/// Per-user SINR `-gamma_ik phi_ik(x)`.
pub fn sinr_from_phi<T: Real>(problem: &TransformedProblem<T>, phi: &[T]) -> Vec<T> {
    phi.iter()
        .zip(&problem.weights)
        .map(|(&p, &w)| -w * p)
        .collect()
}

/// Maximizing vertex of the simplex for `f(x, y) = phi^T y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection<T> {
    /// Flat user index `(i*, k*)`.
    pub index: usize,
    pub value: T,
}

impl<T: Real> Selection<T> {
    /// The simplex vertex `y` with a one at the selected index.
    pub fn vertex(&self, len: usize) -> DVector<T> {
        let mut y = DVector::zeros(len);
        y[self.index] = T::one();
        y
    }
}

pub fn select_y<T: Real>(phi: &[T], tie_break: TieBreak) -> Selection<T> {
    assert!(!phi.is_empty(), "select_y needs at least one value");
    match tie_break {
        TieBreak::Lexicographic => {
            let mut best = Selection {
                index: 0,
                value: phi[0],
            };
            for (u, &v) in phi.iter().enumerate().skip(1) {
                if v > best.value {
                    best = Selection { index: u, value: v };
                }
            }
            best
        }
    }
}

pub(crate) fn gradient_of<T: Real>(
    problem: &TransformedProblem<T>,
    x: &DVector<T>,
    user: usize,
) -> DVector<T> {
    let own = problem.user_group(user);
    let gamma = problem.weights[user];
    let mut products = Vec::with_capacity(problem.n_groups());
    let mut signal = T::zero();
    let mut denom = problem.noise_var;
    for j in 0..problem.n_groups() {
        let r = problem.block_range(j);
        let xj = x.rows(r.start, r.len());
        let ax = problem.quad_form(j, user) * xj;
        let q = xj.dot(&ax);
        if j == own {
            signal = q;
        } else {
            denom += q;
        }
        products.push(ax);
    }
    let two = T::lit(2.0);
    let own_scale = -two / (gamma * denom);
    let cross_scale = two * signal / (gamma * denom * denom);
    let mut grad = DVector::zeros(x.len());
    for (j, ax) in products.into_iter().enumerate() {
        let r = problem.block_range(j);
        let scale = if j == own { own_scale } else { cross_scale };
        grad.rows_mut(r.start, r.len()).copy_from(&(ax * scale));
    }
    grad
}

/// `grad_x f(x, y)` at the vertex `y` selecting user `selected`, i.e. the
/// gradient of `phi_{i*k*}`.
pub fn subgradient<T: Real>(
    problem: &TransformedProblem<T>,
    x: &WeightIterate<T>,
    selected: usize,
) -> DVector<T> {
    gradient_of(problem, &x.x, selected)
}

pub(crate) fn project_vec<T: Real>(problem: &TransformedProblem<T>, x: DVector<T>) -> DVector<T> {
    let px = problem.power_of(&x);
    if px <= problem.power_budget {
        x
    } else {
        let s = (problem.power_budget / px).sqrt();
        x * s
    }
}

/// Radial projection: `x` when `P_x <= P`, otherwise `sqrt(P / P_x) x`.
pub fn project<T: Real>(problem: &TransformedProblem<T>, x: &WeightIterate<T>) -> WeightIterate<T> {
    x.with_vector(project_vec(problem, x.x.clone()))
}

pub fn is_feasible<T: Real>(problem: &TransformedProblem<T>, x: &WeightIterate<T>) -> bool {
    problem.power(x) <= problem.power_budget * (T::one() + T::lit(1e-9))
}

/// Resolves the step size for `options`, returning it with the time spent.
pub fn resolve_step<T: Real>(
    problem: &TransformedProblem<T>,
    options: &SolverOptions,
) -> Result<(T, f64)> {
    options.validate()?;
    match options.step_rule {
        StepRule::Fixed(a) => Ok((T::lit(a), 0.0)),
        StepRule::Estimated { horizon } => {
            let start = Instant::now();
            let tc = estimate_theory_constants(problem, options.theory_samples, options.rng_seed)?;
            Ok((tc.step_size(horizon), start.elapsed().as_secs_f64()))
        }
    }
}

/// Runs PSA from `x0` (which may be infeasible; the first projection repairs it).
pub fn run_psa<T: Real>(
    problem: &TransformedProblem<T>,
    x0: &WeightIterate<T>,
    options: &SolverOptions,
) -> Result<SolveReport<T>> {
    problem.check_iterate(x0)?;
    let (alpha, precompute) = resolve_step(problem, options)?;
    let start = Instant::now();
    let tol = T::lit(options.obj_tol);
    let limit = T::one() + T::lit(1e-9);
    let feasible = |v: &DVector<T>| problem.power_of(v) <= problem.power_budget * limit;

    let random_stop = match options.output_rule {
        OutputRule::UniformRandom => {
            let mut rng = rng_from(options.rng_seed ^ 0x5EED_0F57_0A11_u64);
            let horizon = match options.step_rule {
                StepRule::Estimated { horizon } => horizon.min(options.max_iters),
                StepRule::Fixed(_) => options.max_iters,
            };
            Some(rng.random_range(0..=horizon))
        }
        _ => None,
    };

    let mut x = x0.x.clone();
    let mut sel = select_y(&phi_of(problem, &x), options.tie_break);

    // Best feasible iterate. An infeasible start is represented by its projection.
    let mut best = if feasible(&x) {
        (x.clone(), sel.value, 0usize)
    } else {
        let p = project_vec(problem, x.clone());
        let g = select_y(&phi_of(problem, &p), options.tie_break).value;
        (p, g, 0usize)
    };

    let mut g_traj = Vec::new();
    let mut stat_traj = Vec::new();
    if options.track_trajectory {
        g_traj.push(sel.value);
    }

    let mut iterations = 0usize;
    let mut stop = StopReason::MaxIters;
    if random_stop == Some(0) {
        stop = StopReason::RandomStop;
    } else {
        while iterations < options.max_iters {
            let grad = gradient_of(problem, &x, sel.index);
            let next = project_vec(problem, &x - grad * alpha);
            if options.track_trajectory {
                stat_traj.push((&x - &next).norm() / alpha);
            }
            let next_sel = select_y(&phi_of(problem, &next), options.tie_break);
            iterations += 1;
            let delta = (next_sel.value - sel.value).abs();
            x = next;
            sel = next_sel;
            if options.track_trajectory {
                g_traj.push(sel.value);
            }
            if sel.value < best.1 && feasible(&x) {
                best = (x.clone(), sel.value, iterations);
            }
            if random_stop == Some(iterations) {
                stop = StopReason::RandomStop;
                break;
            }
            if delta < tol {
                stop = StopReason::Tolerance;
                break;
            }
        }
    }

    let (x_out, g_out, output_index) = match options.output_rule {
        OutputRule::Best => best,
        OutputRule::Last | OutputRule::UniformRandom => {
            if feasible(&x) {
                (x, sel.value, iterations)
            } else {
                // Only possible when no step was taken from an infeasible start.
                let p = project_vec(problem, x);
                let g = select_y(&phi_of(problem, &p), options.tie_break).value;
                (p, g, iterations)
            }
        }
    };
    let wall_time_solve = start.elapsed().as_secs_f64();

    let x_out = x0.with_vector(x_out);
    let out_phi = phi_all(problem, &x_out);
    let per_user_sinr = sinr_from_phi(problem, &out_phi);
    let min_sinr = per_user_sinr
        .iter()
        .copied()
        .fold(T::max_value().unwrap(), |a, b| a.min(b));
    let stationarity_final = stationarity_measure(problem, &x_out, alpha)?;
    Ok(SolveReport {
        x_out,
        objective: g_out,
        per_user_sinr,
        min_sinr,
        min_weighted_sinr: -g_out,
        g_trajectory: g_traj,
        stationarity_trajectory: stat_traj,
        iterations_run: iterations,
        output_index,
        stationarity_final,
        step_size: alpha,
        wall_time_precompute: precompute,
        wall_time_solve,
        stop_reason: stop,
    })
}

/// Projected-gradient residual `||x - Pi_X(x - alpha grad_x f(x, y*))|| / alpha`
/// with `y*` the selected vertex at `x`. Zero exactly at fixed points of the
/// PSA update.
pub fn stationarity_measure<T: Real>(
    problem: &TransformedProblem<T>,
    x: &WeightIterate<T>,
    alpha: T,
) -> Result<T> {
    if !(alpha > T::zero()) {
        return Err(Error::Config("stationarity step must be positive".into()));
    }
    problem.check_iterate(x)?;
    let sel = select_y(&phi_of(problem, &x.x), TieBreak::Lexicographic);
    let grad = gradient_of(problem, &x.x, sel.index);
    let next = project_vec(problem, &x.x - grad * alpha);
    Ok((&x.x - next).norm() / alpha)
}
