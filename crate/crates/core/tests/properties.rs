use mmf_multicast::rng::derive_seed;
use mmf_multicast::theory::{sample_feasible, EllipsoidProjector};
use mmf_multicast::verify::{argmax_margin, finite_difference_gradient};
use mmf_multicast::*;
use nalgebra::DVector;
use proptest::prelude::*;

fn instance(n: usize, g: usize, k: usize, gamma: f64, seed: u64) -> (Config, Channels, Problem) {
    let cfg = Config::uniform(n, g, k, gamma, 10.0, 1.0).unwrap();
    let ch = generate_channels(&cfg, &vec![1.0; g * k], seed).unwrap();
    let p = build_transformed_problem(&cfg, &ch, CovarianceModel::CommonGamma).unwrap();
    (cfg, ch, p)
}

/// `(N, G, K)` with `N` large enough for the covariance approximation at
/// unit weight.
fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(g, k)| (g * k..=g * k + 10, Just(g), Just(k)))
}

fn point(p: &Problem, seed: u64) -> Iterate {
    Iterate::from_vector(sample_feasible(p, seed), &p.users_per_group).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_properties((n, g, k) in dims(), seed in any::<u64>(), scale in 0.01f64..100.0) {
        let (_, _, p) = instance(n, g, k, 1.0, seed);
        let x = point(&p, seed ^ 1);
        let x = x.with_vector(&x.x * scale);
        let once = project(&p, &x);
        prop_assert!(p.power(&once) <= p.power_budget * (1.0 + 1e-9));
        if p.power(&x) <= p.power_budget {
            prop_assert_eq!(&once, &x);
        } else {
            prop_assert!((p.power(&once) / p.power_budget - 1.0).abs() <= 1e-12);
            prop_assert!((once.x.normalize() - x.x.normalize()).norm() <= 1e-12);
            let twice = project(&p, &once);
            prop_assert!((&twice.x - &once.x).norm() <= 1e-12 * once.x.norm());
        }
    }

    #[test]
    fn phi_nonpositive_and_objective_is_max((n, g, k) in dims(), seed in any::<u64>()) {
        let (_, _, p) = instance(n, g, k, 1.0, seed);
        let x = point(&p, seed ^ 2);
        let phi = phi_all(&p, &x);
        prop_assert!(phi.iter().all(|&v| v <= 0.0));
        let m = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(objective(&p, &x), m);
        let sel = select_y(&phi, TieBreak::Lexicographic);
        prop_assert_eq!(sel.vertex(phi.len()).dot(&DVector::from_vec(phi.clone())), m);
    }

    #[test]
    fn objective_matches_sinr((n, g, k) in dims(), seed in any::<u64>()) {
        let (cfg, ch, p) = instance(n, g, k, 1.0, seed);
        let x = point(&p, seed ^ 3);
        let phi = phi_all(&p, &x);
        let sinr = evaluate_sinr(&cfg, &reconstruct_beamformers(&p, &x).unwrap(), &ch).unwrap();
        for (u, s) in sinr.iter().enumerate() {
            let v = -p.weights[u] * phi[u];
            prop_assert!((v - s).abs() <= 1e-10 * v.abs().max(*s));
        }
    }

    #[test]
    fn subgradient_matches_finite_differences((n, g, k) in dims(), seed in any::<u64>()) {
        let (_, _, p) = instance(n, g, k, 1.0, seed);
        let x = point(&p, seed ^ 4);
        prop_assume!(argmax_margin(&p, &x) > 1e-6);
        let sel = select_y(&phi_all(&p, &x), TieBreak::Lexicographic);
        let grad = subgradient(&p, &x, sel.index);
        let fd = finite_difference_gradient(&p, &x);
        prop_assert!((&grad - &fd).norm() <= 1e-6 * grad.norm());
    }

    #[test]
    fn psa_output_feasible_and_no_worse((n, g, k) in dims(), seed in any::<u64>(), scale in 0.5f64..3.0) {
        let (_, _, p) = instance(n, g, k, 1.0, seed);
        let x0 = initialize(&p, &InitMethod::Random(seed)).unwrap();
        let x0 = x0.with_vector(&x0.x * scale);
        let opts = SolverOptions {
            step_rule: StepRule::Fixed(0.2),
            max_iters: 100,
            ..SolverOptions::default()
        };
        let r = run_psa(&p, &x0, &opts).unwrap();
        prop_assert!(p.power(&r.x_out) <= p.power_budget * (1.0 + 1e-9));
        prop_assert!(r.objective <= objective(&p, &project(&p, &x0)));
        prop_assert_eq!(r.objective, objective(&p, &r.x_out));
    }

    #[test]
    fn best_iterate_monotone_in_max_iters((n, g, k) in dims(), seed in any::<u64>()) {
        let (_, _, p) = instance(n, g, k, 1.0, seed);
        let x0 = initialize(&p, &InitMethod::Equal).unwrap();
        let mut prev = f64::INFINITY;
        for iters in [1, 10, 50, 200] {
            let opts = SolverOptions {
                step_rule: StepRule::Fixed(0.3),
                max_iters: iters,
                obj_tol: 0.0,
                ..SolverOptions::default()
            };
            let r = run_psa(&p, &x0, &opts).unwrap();
            prop_assert!(r.objective <= prev);
            prev = r.objective;
        }
    }

    #[test]
    fn ellipsoid_projection_is_feasible_and_not_farther(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let (_, _, p) = instance(6, 2, 2, 1.0, seed);
        let proj = EllipsoidProjector::new(&p);
        let z = sample_feasible(&p, seed ^ 5) * scale;
        let e = proj.project(&z);
        let y = Iterate::from_vector(e.clone(), &p.users_per_group).unwrap();
        prop_assert!(p.power(&y) <= p.power_budget * (1.0 + 1e-9));
        // No feasible point is closer than the Euclidean projection.
        let radial = project(&p, &Iterate::from_vector(z.clone(), &p.users_per_group).unwrap());
        prop_assert!((&z - &e).norm() <= (&z - &radial.x).norm() * (1.0 + 1e-9));
    }
}

#[test]
fn subgradient_inequality_with_inflated_l() {
    let (_, _, p) = instance(8, 2, 2, 1.0, 21);
    let tc = estimate_theory_constants(&p, 64, 0).unwrap();
    let l = 2.0 * tc.l_hat;
    for s in 0..100 {
        let x1 = point(&p, derive_seed(21, &[s, 1]));
        let x2 = point(&p, derive_seed(21, &[s, 2]));
        let phi1 = phi_all(&p, &x1);
        let sel = select_y(&phi1, TieBreak::Lexicographic);
        let grad = subgradient(&p, &x1, sel.index);
        let f2 = phi_all(&p, &x2)[sel.index];
        let d = &x2.x - &x1.x;
        let lower = sel.value + grad.dot(&d) - 0.5 * l * d.norm_squared();
        assert!(f2 >= lower - 1e-12, "sample {s}: {f2} < {lower}");
    }
}

#[test]
fn transform_is_deterministic() {
    let (_, _, a) = instance(10, 2, 3, 1.0, 3);
    let (_, _, b) = instance(10, 2, 3, 1.0, 3);
    assert_eq!(a.r_tilde, b.r_tilde);
    assert_eq!(a.effective_channels, b.effective_channels);
}

#[test]
fn moreau_estimate_small_at_single_user_optimum() {
    let (_, _, p) = instance(4, 1, 1, 1.0, 8);
    let x0 = initialize(&p, &InitMethod::Equal).unwrap();
    let r = run_psa(&p, &x0, &SolverOptions::default()).unwrap();
    let tc = estimate_theory_constants(&p, 64, 0).unwrap();
    let est = moreau_gradient_estimate(&p, &r.x_out, 2.0 * tc.l_hat, 10_000, 0).unwrap();
    assert!(est <= 1e-3, "{est}");
}

#[test]
fn f32_pipeline_agrees_with_f64() {
    let cfg64 = Config::uniform(8, 2, 2, 1.0, 10.0, 1.0).unwrap();
    let ch64 = generate_channels(&cfg64, &[1.0; 4], 12).unwrap();
    let cfg32 = ConfigF32::uniform(8, 2, 2, 1.0, 10.0, 1.0).unwrap();
    let ch32 = generate_channels(&cfg32, &[1.0f32; 4], 12).unwrap();
    let p64 = build_transformed_problem(&cfg64, &ch64, CovarianceModel::CommonGamma).unwrap();
    let p32 = build_transformed_problem(&cfg32, &ch32, CovarianceModel::CommonGamma).unwrap();
    let opts = SolverOptions {
        step_rule: StepRule::Fixed(0.3),
        max_iters: 200,
        obj_tol: 0.0,
        ..SolverOptions::default()
    };
    let r64 = run_psa(&p64, &initialize(&p64, &InitMethod::Equal).unwrap(), &opts).unwrap();
    let r32: ReportF32 =
        run_psa(&p32, &initialize(&p32, &InitMethod::Equal).unwrap(), &opts).unwrap();
    assert!(p32.power(&r32.x_out) <= p32.power_budget * (1.0 + 1e-6));
    assert!((r32.min_sinr_db() - r64.min_sinr_db()).abs() < 0.05);
}
