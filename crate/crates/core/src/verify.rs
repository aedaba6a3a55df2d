//! Self-check suite on tiny instances, used by `mmf-bench verify`.

use nalgebra::DVector;

use crate::channel::{generate_channels, ChannelSet, SystemConfig};
use crate::error::Result;
use crate::init::{initialize, InitMethod};
use crate::oracle::{evaluate_sinr, mrt_optimum};
use crate::psa::{
    objective, phi_all, project, run_psa, select_y, subgradient, SolverOptions, StepRule, TieBreak,
};
use crate::rng::derive_seed;
use crate::theory::sample_feasible;
use crate::transform::{
    build_r_tilde_common, build_r_tilde_general, build_transformed_problem,
    reconstruct_beamformers, CovarianceModel, TransformedProblem, WeightIterate,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value against its tolerance.
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> Check {
    Check {
        name,
        passed: worst <= tol,
        detail: format!("worst {worst:.3e} (tolerance {tol:.0e})"),
    }
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

type Instance = (SystemConfig<f64>, TransformedProblem<f64>, ChannelSet<f64>);

fn instance(n: usize, g: usize, k: usize, seed: u64) -> Result<Instance> {
    let cfg = SystemConfig::uniform(n, g, k, 1.0, 10.0, 1.0)?;
    let ch = generate_channels(&cfg, &vec![1.0; g * k], seed)?;
    let p = build_transformed_problem(&cfg, &ch, CovarianceModel::CommonGamma)?;
    Ok((cfg, p, ch))
}

/// Central finite-difference gradient of `g` with step `1e-6 (1 + ||x||)`.
pub fn finite_difference_gradient(
    problem: &TransformedProblem<f64>,
    x: &WeightIterate<f64>,
) -> DVector<f64> {
    let h = 1e-6 * (1.0 + x.x.norm());
    DVector::from_fn(x.dim(), |c, _| {
        let mut plus = x.x.clone();
        let mut minus = x.x.clone();
        plus[c] += h;
        minus[c] -= h;
        (objective(problem, &x.with_vector(plus)) - objective(problem, &x.with_vector(minus)))
            / (2.0 * h)
    })
}

/// Gap between the two largest `phi_ik` at `x`.
pub fn argmax_margin(problem: &TransformedProblem<f64>, x: &WeightIterate<f64>) -> f64 {
    let mut phi = phi_all(problem, x);
    phi.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if phi.len() < 2 {
        f64::INFINITY
    } else {
        phi[0] - phi[1]
    }
}

/// Runs every check with instances derived from `seed`.
pub fn run_checks(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let (cfg, p, ch) = instance(6, 2, 2, derive_seed(seed, &[0]))?;
    let points: Vec<WeightIterate<f64>> = (0..50)
        .map(|s| {
            WeightIterate::from_vector(
                sample_feasible(&p, derive_seed(seed, &[1, s])),
                &p.users_per_group,
            )
        })
        .collect::<Result<_>>()?;

    let mut worst = 0.0f64;
    for x in &points {
        let phi = phi_all(&p, x);
        let sinr = evaluate_sinr(&cfg, &reconstruct_beamformers(&p, x)?, &ch)?;
        for (u, s) in sinr.iter().enumerate() {
            worst = worst.max(relative(-p.weights[u] * phi[u], *s));
        }
    }
    out.push(check("objective matches direct SINR", worst, 1e-10));

    let mut worst = 0.0f64;
    for x in points.iter().filter(|x| argmax_margin(&p, x) > 1e-4) {
        let sel = select_y(&phi_all(&p, x), TieBreak::Lexicographic);
        let g = subgradient(&p, x, sel.index);
        let fd = finite_difference_gradient(&p, x);
        worst = worst.max((&g - &fd).norm() / g.norm().max(f64::MIN_POSITIVE));
    }
    out.push(check("subgradient matches finite differences", worst, 1e-6));

    let r5 = build_r_tilde_common(&cfg, &ch)?;
    let r4 = build_r_tilde_general(&cfg, &ch)?;
    let worst = r5
        .iter()
        .zip(r4.iter())
        .map(|(a, b)| (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    out.push(check(
        "covariance builders agree under a common weight",
        worst,
        1e-12,
    ));

    let mut worst = 0.0f64;
    let mut feasible_ok = true;
    for (s, x) in points.iter().enumerate() {
        let big = x.with_vector(&x.x * (1.5 + s as f64));
        let once = project(&p, &big);
        let twice = project(&p, &once);
        worst = worst
            .max(relative(p.power(&once), p.power_budget))
            .max((&twice.x - &once.x).norm() / once.x.norm())
            .max((once.x.normalize() - big.x.normalize()).norm());
        feasible_ok &= project(&p, x) == *x;
    }
    let mut c = check(
        "projection boundary, idempotence and direction",
        worst,
        1e-12,
    );
    if !feasible_ok {
        c.passed = false;
        c.detail.push_str("; feasible point changed");
    }
    out.push(c);

    let mut worst = 0.0f64;
    for n in [2, 4, 8] {
        let cfg1 = SystemConfig::uniform(n, 1, 1, 1.0, 10.0, 1.0)?;
        let ch1 = generate_channels(&cfg1, &[1.0], derive_seed(seed, &[2, n as u64]))?;
        let p1 = build_transformed_problem(&cfg1, &ch1, CovarianceModel::CommonGamma)?;
        let x0 = initialize(&p1, &InitMethod::Equal)?;
        let r = run_psa(&p1, &x0, &SolverOptions::default())?;
        worst = worst.max(relative(r.min_sinr, mrt_optimum(&cfg1, &ch1)?));
    }
    out.push(check("single-user optimum reached", worst, 1e-3));

    let opts = SolverOptions {
        step_rule: StepRule::Fixed(0.5),
        max_iters: 300,
        obj_tol: 0.0,
        ..SolverOptions::default()
    };
    let x0 = initialize(&p, &InitMethod::Equal)?;
    let a = run_psa(&p, &x0, &opts)?;
    let b = run_psa(&p, &x0, &opts)?;
    let repeat = a.x_out == b.x_out && a.objective == b.objective;
    let best_ok = a.objective <= objective(&p, &x0);
    let over = p.power(&a.x_out) / p.power_budget - 1.0;
    out.push(Check {
        name: "solver output feasible, repeatable and no worse than start",
        passed: repeat && best_ok && over <= 1e-9,
        detail: format!("repeatable {repeat}, improved {best_ok}, power excess {over:.3e}"),
    });
    Ok(out)
}
