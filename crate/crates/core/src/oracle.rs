//! Desk-scale reference values: closed-form single-user optimum, direct SINR
//! evaluation and a multistart random search in the weight space.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::channel::{ChannelSet, SystemConfig};
use crate::error::{Error, Result};
use crate::psa::{phi_of, project_vec, run_psa, select_y, SolverOptions, TieBreak};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::{Complex, Real};
use crate::transform::{TransformedProblem, WeightIterate};

/// `SINR_ik = |w_i^H h_ik|^2 / (sum_{j != i} |w_j^H h_ik|^2 + sigma^2)`.
pub fn evaluate_sinr<T: Real>(
    config: &SystemConfig<T>,
    beamformers: &[DVector<Complex<T>>],
    channels: &ChannelSet<T>,
) -> Result<Vec<T>> {
    if beamformers.len() != config.n_groups()
        || beamformers.iter().any(|w| w.len() != config.n_antennas)
        || channels.channels.len() != config.total_users()
    {
        return Err(Error::Contract(
            "beamformer or channel dimensions do not match the configuration".into(),
        ));
    }
    Ok((0..config.total_users())
        .map(|u| {
            let (own, _) = config.user_position(u);
            let h = &channels.channels[u];
            let mut signal = T::zero();
            let mut interference = T::zero();
            for (j, w) in beamformers.iter().enumerate() {
                let p = w.dotc(h).norm_sqr();
                if j == own {
                    signal = p;
                } else {
                    interference += p;
                }
            }
            signal / (interference + config.noise_var)
        })
        .collect())
}

/// Optimal weighted SINR of a single user: `P ||h||^2 / (gamma sigma^2)`.
pub fn mrt_optimum<T: Real>(config: &SystemConfig<T>, channels: &ChannelSet<T>) -> Result<T> {
    if config.users_per_group != [1] || channels.channels.len() != 1 {
        return Err(Error::Contract(
            "closed-form optimum needs exactly one group with one user".into(),
        ));
    }
    let h2 = channels.channels[0].norm_squared();
    Ok(config.power_budget * h2 / (config.sinr_weights[0] * config.noise_var))
}

#[derive(Debug, Clone)]
pub struct OracleResult<T: Real> {
    pub x_best: WeightIterate<T>,
    pub g_best: T,
    /// Best objective among the raw samples, before refinement.
    pub g_sampled: T,
}

fn sample_on_boundary<T: Real>(problem: &TransformedProblem<T>, seed: u64) -> DVector<T> {
    let mut rng = rng_from(seed);
    let z = DVector::from_fn(problem.dim(), |_, _| {
        T::lit(StandardNormal.sample(&mut rng))
    });
    let pz = problem.power_of(&z);
    z * (problem.power_budget / pz).sqrt()
}

/// Samples `n_samples` directions on the power boundary, keeps the best, and
/// refines the `n_refine` best samples with [`run_psa`].
///
/// Sample `s` is drawn from its own stream derived from `(seed, s)`, so the
/// first `n` samples are identical across calls with larger `n_samples`.
pub fn multistart_search<T: Real>(
    problem: &TransformedProblem<T>,
    n_samples: usize,
    n_refine: usize,
    seed: u64,
    refine_options: &SolverOptions,
) -> Result<OracleResult<T>> {
    if n_samples == 0 {
        return Err(Error::Contract(
            "multistart search needs at least one sample".into(),
        ));
    }
    let point = |s: usize| sample_on_boundary(problem, derive_seed(seed, &[s as u64]));
    let mut scored: Vec<(T, usize)> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let g = select_y(&phi_of(problem, &point(s)), TieBreak::Lexicographic).value;
            (g, s)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let layout = &problem.users_per_group;
    let (g0, s0) = scored[0];
    let mut best = (WeightIterate::from_vector(point(s0), layout)?, g0);
    let refined: Vec<Result<(WeightIterate<T>, T)>> = scored
        .iter()
        .take(n_refine)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|&(_, s)| {
            let x0 = WeightIterate::from_vector(point(s), layout)?;
            let r = run_psa(problem, &x0, refine_options)?;
            Ok((r.x_out, r.objective))
        })
        .collect();
    for r in refined {
        let (x, g) = r?;
        if g < best.1 {
            best = (x, g);
        }
    }
    let x_best = best.0.with_vector(project_vec(problem, best.0.x.clone()));
    Ok(OracleResult {
        x_best,
        g_best: best.1,
        g_sampled: g0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channels;
    use crate::psa::{objective, StepRule};
    use crate::transform::{build_transformed_problem, reconstruct_beamformers, CovarianceModel};

    fn single(h: &[f64], p: f64) -> (SystemConfig<f64>, ChannelSet<f64>) {
        let cfg = SystemConfig::new(h.len(), vec![1], p, 1.0, vec![1.0]).unwrap();
        let g = DVector::from_iterator(h.len(), h.iter().map(|&v| Complex::new(v, 0.0)));
        let ch = ChannelSet::from_normalized(&cfg, vec![1.0], vec![g], 0).unwrap();
        (cfg, ch)
    }

    #[test]
    fn mrt_closed_form_values() {
        let (c, ch) = single(&[1.0, 0.0], 1.0);
        assert_eq!(mrt_optimum(&c, &ch).unwrap(), 1.0);
        let (c2, ch2) = single(&[1.0, 0.0], 2.0);
        assert_eq!(mrt_optimum(&c2, &ch2).unwrap(), 2.0);
        let (c0, ch0) = single(&[0.0, 0.0], 1.0);
        assert_eq!(mrt_optimum(&c0, &ch0).unwrap(), 0.0);
    }

    #[test]
    fn mrt_rejects_multiuser() {
        let cfg = SystemConfig::uniform(3, 1, 2, 1.0, 1.0, 1.0).unwrap();
        let ch = generate_channels(&cfg, &[1.0; 2], 0).unwrap();
        assert!(matches!(mrt_optimum(&cfg, &ch), Err(Error::Contract(_))));
    }

    #[test]
    fn sinr_orthogonal_beamformer_is_zero() {
        let cfg = SystemConfig::uniform(2, 2, 1, 1.0, 1.0, 1.0).unwrap();
        let e1 = DVector::from_vec(vec![Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)]);
        let e2 = DVector::from_vec(vec![Complex::new(0.0, 0.0), Complex::new(1.0, 0.0)]);
        let ch = ChannelSet::from_normalized(&cfg, vec![1.0; 2], vec![e1.clone(), e1.clone()], 0)
            .unwrap();
        let sinr = evaluate_sinr(&cfg, &[e2.clone(), e2], &ch).unwrap();
        assert_eq!(sinr, vec![0.0, 0.0]);
    }

    #[test]
    fn sinr_single_group_no_interference() {
        let cfg = SystemConfig::uniform(3, 1, 2, 1.0, 1.0, 0.5).unwrap();
        let ch = generate_channels(&cfg, &[1.0; 2], 3).unwrap();
        let w = DVector::from_vec(vec![
            Complex::new(0.3, 0.1),
            Complex::new(-1.0, 0.2),
            Complex::new(0.0, 0.7),
        ]);
        let sinr = evaluate_sinr(&cfg, std::slice::from_ref(&w), &ch).unwrap();
        for u in 0..2 {
            let expected: f64 = w.dotc(&ch.channels[u]).norm_sqr() / 0.5;
            assert!((sinr[u] - expected).abs() <= 1e-15 * expected);
        }
    }

    #[test]
    fn sinr_invariant_under_joint_scaling() {
        let cfg = SystemConfig::uniform(4, 2, 2, 1.0, 1.0, 0.8).unwrap();
        let ch = generate_channels(&cfg, &[1.0; 4], 5).unwrap();
        let p = build_transformed_problem(&cfg, &ch, CovarianceModel::CommonGamma).unwrap();
        let x = crate::init::initialize(&p, &crate::init::InitMethod::Random(2)).unwrap();
        let w = reconstruct_beamformers(&p, &x).unwrap();
        let base = evaluate_sinr(&cfg, &w, &ch).unwrap();
        let c = 3.7;
        let mut scaled_cfg = cfg.clone();
        scaled_cfg.noise_var *= c * c;
        let ws: Vec<_> = w.iter().map(|w| w.map(|z| z * c)).collect();
        let scaled = evaluate_sinr(&scaled_cfg, &ws, &ch).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            let (a, b): (f64, f64) = (*a, *b);
            assert!((a - b).abs() <= 1e-12 * a);
        }
    }

    fn small_problem(seed: u64) -> TransformedProblem<f64> {
        let cfg = SystemConfig::uniform(4, 2, 1, 1.0, 10.0, 1.0).unwrap();
        let ch = generate_channels(&cfg, &[1.0; 2], seed).unwrap();
        build_transformed_problem(&cfg, &ch, CovarianceModel::CommonGamma).unwrap()
    }

    #[test]
    fn single_sample_without_refinement() {
        let p = small_problem(1);
        let opts = SolverOptions::default();
        let r = multistart_search(&p, 1, 0, 9, &opts).unwrap();
        let expected = sample_on_boundary(&p, derive_seed(9, &[0]));
        assert_eq!(r.x_best.x, expected);
        assert_eq!(r.g_best, objective(&p, &r.x_best));
    }

    #[test]
    fn doubling_samples_never_worsens_raw_search() {
        let p = small_problem(2);
        let opts = SolverOptions::default();
        let mut prev = f64::INFINITY;
        for n in [8, 16, 32, 64, 128] {
            let r = multistart_search(&p, n, 0, 4, &opts).unwrap();
            assert!(r.g_best <= prev);
            prev = r.g_best;
        }
    }

    #[test]
    fn refined_result_not_worse_than_samples() {
        let p = small_problem(3);
        let opts = SolverOptions {
            step_rule: StepRule::Fixed(1e-3),
            max_iters: 500,
            ..SolverOptions::default()
        };
        let r = multistart_search(&p, 64, 4, 1, &opts).unwrap();
        assert!(r.g_best <= r.g_sampled);
    }

    #[test]
    fn single_user_search_reaches_closed_form() {
        let cfg = SystemConfig::uniform(4, 1, 1, 1.0, 10.0, 1.0).unwrap();
        let ch = generate_channels(&cfg, &[1.0], 6).unwrap();
        let p = build_transformed_problem(&cfg, &ch, CovarianceModel::CommonGamma).unwrap();
        let r = multistart_search(&p, 16, 0, 0, &SolverOptions::default()).unwrap();
        let opt: f64 = mrt_optimum(&cfg, &ch).unwrap();
        assert!((-r.g_best - opt).abs() <= 1e-3 * opt);
    }

    #[test]
    fn zero_samples_rejected() {
        let p = small_problem(1);
        assert!(multistart_search(&p, 0, 0, 0, &SolverOptions::default()).is_err());
    }
}
