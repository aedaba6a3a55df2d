//! Step-size constants and near-stationarity diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::psa::{gradient_of, phi_of, project_vec, select_y, TieBreak};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::Real;
use crate::transform::{TransformedProblem, WeightIterate};

/// Sampled estimates of the smoothness `L`, gradient bound `M`, Lipschitz
/// constant `C` and diameter `D` of the feasible set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants<T> {
    pub l_hat: T,
    pub m_hat: T,
    pub c_hat: T,
    pub d_hat: T,
    /// `min(L D^2, C D)`.
    pub delta_hat: T,
}

impl<T: Real> TheoryConstants<T> {
    pub fn new(l_hat: T, m_hat: T, c_hat: T, d_hat: T) -> Result<Self> {
        for (name, v) in [("L", l_hat), ("M", m_hat), ("C", c_hat), ("D", d_hat)] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Estimation(format!(
                    "{name} estimate is not positive: {v}"
                )));
            }
        }
        let delta_hat = (l_hat * d_hat * d_hat).min(c_hat * d_hat);
        Ok(TheoryConstants {
            l_hat,
            m_hat,
            c_hat,
            d_hat,
            delta_hat,
        })
    }

    /// `sqrt(Delta / (L M^2 (J + 1)))`.
    pub fn step_size(&self, horizon: usize) -> T {
        let j1 = T::from_usize(horizon + 1).unwrap();
        (self.delta_hat / (self.l_hat * self.m_hat * self.m_hat * j1)).sqrt()
    }
}

/// Smallest singular value of the block-diagonal stack of the `C_i`.
pub fn min_singular_value<T: Real>(problem: &TransformedProblem<T>) -> T {
    problem
        .gram
        .iter()
        .map(|q| {
            let e = q.clone().symmetric_eigenvalues().min();
            e.max(T::zero()).sqrt()
        })
        .fold(T::max_value().unwrap(), |a, b| a.min(b))
}

/// Random point of the feasible set: Gaussian direction, radially scaled to
/// the boundary and then shrunk by `u^(1/d)`.
pub fn sample_feasible<T: Real>(problem: &TransformedProblem<T>, seed: u64) -> DVector<T> {
    let mut rng = rng_from(seed);
    let d = problem.dim();
    let z = DVector::from_fn(d, |_, _| T::lit(StandardNormal.sample(&mut rng)));
    let pz = problem.power_of(&z);
    let u: f64 = Uniform::new(0.0, 1.0).unwrap().sample(&mut rng);
    let r = u.powf(1.0 / d as f64);
    z * ((problem.power_budget / pz).sqrt() * T::lit(r))
}

/// Estimates the constants by seeded sampling.
///
/// Point `s` is drawn from its own stream, so a larger `samples` visits a
/// superset of points. Pairs are formed between consecutive points and
/// between each point and a nearby perturbation of it. All simplex vertices
/// are examined at every point.
pub fn estimate_theory_constants<T: Real>(
    problem: &TransformedProblem<T>,
    samples: usize,
    seed: u64,
) -> Result<TheoryConstants<T>> {
    if samples < 2 {
        return Err(Error::Estimation(
            "at least two samples are required".into(),
        ));
    }
    let sigma_min = min_singular_value(problem);
    if !(sigma_min > T::zero()) {
        return Err(Error::Estimation(
            "feasible set is unbounded (rank-deficient effective channels)".into(),
        ));
    }
    let d_hat = T::lit(2.0) * problem.power_budget.sqrt() / sigma_min;
    let k_tot = problem.total_users();

    let points: Vec<DVector<T>> = (0..samples)
        .map(|s| sample_feasible(problem, derive_seed(seed, &[s as u64, 0])))
        .collect();
    let neighbours: Vec<DVector<T>> = points
        .iter()
        .enumerate()
        .map(|(s, x)| {
            let mut rng = rng_from(derive_seed(seed, &[s as u64, 1]));
            let dir = DVector::from_fn(x.len(), |_, _| T::lit(StandardNormal.sample(&mut rng)));
            let step = d_hat * T::lit(1e-3) / dir.norm();
            project_vec(problem, x + dir * step)
        })
        .collect();

    let eval = |x: &DVector<T>| -> (Vec<T>, Vec<DVector<T>>) {
        let phi = phi_of(problem, x);
        let grads = (0..k_tot).map(|u| gradient_of(problem, x, u)).collect();
        (phi, grads)
    };
    let evals: Vec<_> = points.iter().map(eval).collect();
    let near: Vec<_> = neighbours.iter().map(eval).collect();

    let mut m_hat = T::zero();
    for (_, grads) in evals.iter().chain(&near) {
        for g in grads {
            m_hat = m_hat.max(g.norm());
        }
    }

    let mut l_hat = T::zero();
    let mut c_hat = T::zero();
    let mut any_pair = false;
    let mut compare = |x1: &DVector<T>,
                       e1: &(Vec<T>, Vec<DVector<T>>),
                       x2: &DVector<T>,
                       e2: &(Vec<T>, Vec<DVector<T>>)| {
        let dist = (x1 - x2).norm();
        if !(dist > T::zero()) {
            return;
        }
        any_pair = true;
        for u in 0..k_tot {
            l_hat = l_hat.max((&e1.1[u] - &e2.1[u]).norm() / dist);
            c_hat = c_hat.max((e1.0[u] - e2.0[u]).abs() / dist);
        }
    };
    for s in 0..samples {
        compare(&points[s], &evals[s], &neighbours[s], &near[s]);
        if s + 1 < samples {
            compare(&points[s], &evals[s], &points[s + 1], &evals[s + 1]);
        }
    }
    if !any_pair {
        return Err(Error::Estimation("all sampled points coincide".into()));
    }
    TheoryConstants::new(l_hat, m_hat, c_hat, d_hat)
}

/// Exact Euclidean projection onto `{ x : sum_i x_i^T Q_i x_i <= P }`.
///
/// Solves the secular equation for the multiplier by bisection in the
/// eigenbasis of each `Q_i`.
pub struct EllipsoidProjector<T: Real> {
    blocks: Vec<(std::ops::Range<usize>, DMatrix<T>, DVector<T>)>,
    power: T,
}

impl<T: Real> EllipsoidProjector<T> {
    pub fn new(problem: &TransformedProblem<T>) -> Self {
        let blocks = problem
            .gram
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let eig = SymmetricEigen::new(q.clone());
                let vals = eig.eigenvalues.map(|v| v.max(T::zero()));
                (problem.block_range(i), eig.eigenvectors, vals)
            })
            .collect();
        EllipsoidProjector {
            blocks,
            power: problem.power_budget,
        }
    }

    pub fn project(&self, x: &DVector<T>) -> DVector<T> {
        let coords: Vec<DVector<T>> = self
            .blocks
            .iter()
            .map(|(r, v, _)| v.transpose() * x.rows(r.start, r.len()))
            .collect();
        let power_at = |mu: T| -> T {
            let mut total = T::zero();
            for ((_, _, lam), z) in self.blocks.iter().zip(&coords) {
                for (&l, &c) in lam.iter().zip(z.iter()) {
                    let s = c / (T::one() + mu * l);
                    total += l * s * s;
                }
            }
            total
        };
        if power_at(T::zero()) <= self.power {
            return x.clone();
        }
        let mut hi = T::one();
        while power_at(hi) > self.power {
            hi *= T::lit(2.0);
        }
        let mut lo = T::zero();
        for _ in 0..200 {
            let mid = (lo + hi) * T::lit(0.5);
            if mid <= lo || mid >= hi {
                break;
            }
            if power_at(mid) > self.power {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = hi;
        let mut out = DVector::zeros(x.len());
        for ((r, v, lam), z) in self.blocks.iter().zip(&coords) {
            let scaled = DVector::from_fn(z.len(), |k, _| z[k] / (T::one() + mu * lam[k]));
            out.rows_mut(r.start, r.len()).copy_from(&(v * scaled));
        }
        out
    }
}

/// Result of the inner proximal solve behind the Moreau-gradient estimate.
#[derive(Debug, Clone)]
pub struct MoreauEstimate<T: Real> {
    /// `2 L ||x_hat - x||`.
    pub gradient_norm: T,
    /// Best inner objective `g(x_hat) + L ||x_hat - x||^2`.
    pub envelope_value: T,
    pub prox_point: DVector<T>,
}

/// Approximates `min_{x' in X} g(x') + L ||x' - x||^2` by projected
/// subgradient steps `2 / (L (t + 2))` with best-iterate tracking.
///
/// The start is `x` itself when `seed == 0`; other seeds start from a
/// seeded feasible sample.
pub fn moreau_estimate<T: Real>(
    problem: &TransformedProblem<T>,
    x: &WeightIterate<T>,
    l: T,
    inner_iters: usize,
    seed: u64,
) -> Result<MoreauEstimate<T>> {
    if !(l > T::zero()) {
        return Err(Error::Config("L must be positive".into()));
    }
    if inner_iters == 0 {
        return Err(Error::Config("inner_iters must be at least 1".into()));
    }
    problem.check_iterate(x)?;
    let proj = EllipsoidProjector::new(problem);
    let center = &x.x;
    let inner = |z: &DVector<T>| -> (T, usize) {
        let sel = select_y(&phi_of(problem, z), TieBreak::Lexicographic);
        let d = z - center;
        (sel.value + l * d.norm_squared(), sel.index)
    };
    let mut z = if seed == 0 {
        proj.project(center)
    } else {
        sample_feasible(problem, seed)
    };
    let (mut val, mut idx) = inner(&z);
    let mut best = (z.clone(), val);
    let two = T::lit(2.0);
    for t in 0..inner_iters {
        let eta = two / (l * T::from_usize(t + 2).unwrap());
        let grad = gradient_of(problem, &z, idx) + (&z - center) * (two * l);
        z = proj.project(&(&z - grad * eta));
        (val, idx) = inner(&z);
        if val < best.1 {
            best = (z.clone(), val);
        }
    }
    Ok(MoreauEstimate {
        gradient_norm: two * l * (&best.0 - center).norm(),
        envelope_value: best.1,
        prox_point: best.0,
    })
}

/// `2 L ||x_hat - x||`, the Moreau-envelope gradient norm at `lambda = 1/(2L)`.
pub fn moreau_gradient_estimate<T: Real>(
    problem: &TransformedProblem<T>,
    x: &WeightIterate<T>,
    l: T,
    inner_iters: usize,
    seed: u64,
) -> Result<T> {
    moreau_estimate(problem, x, l, inner_iters, seed).map(|m| m.gradient_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channels, SystemConfig};
    use crate::psa::objective;
    use crate::transform::{build_transformed_problem, CovarianceModel};

    fn toy() -> TransformedProblem<f64> {
        let i2 = DMatrix::<f64>::identity(2, 2);
        TransformedProblem::from_real_parts(
            vec![1, 1],
            vec![i2.clone(), i2.clone()],
            vec![i2.clone(), i2.clone(), i2.clone(), i2],
            vec![1.0, 1.0],
            1.0,
            2.0,
        )
        .unwrap()
    }

    fn single_user(n: usize, seed: u64) -> TransformedProblem<f64> {
        let cfg = SystemConfig::uniform(n, 1, 1, 1.0, 10.0, 1.0).unwrap();
        let ch = generate_channels(&cfg, &[1.0], seed).unwrap();
        build_transformed_problem(&cfg, &ch, CovarianceModel::CommonGamma).unwrap()
    }

    fn random_problem(seed: u64) -> TransformedProblem<f64> {
        let cfg = SystemConfig::uniform(6, 2, 2, 1.0, 10.0, 1.0).unwrap();
        let ch = generate_channels(&cfg, &[1.0; 4], seed).unwrap();
        build_transformed_problem(&cfg, &ch, CovarianceModel::CommonGamma).unwrap()
    }

    #[test]
    fn step_size_formula() {
        let tc = TheoryConstants::new(3.0, 2.0, 5.0, 4.0).unwrap();
        assert_eq!(tc.delta_hat, 20.0);
        assert_eq!(tc.step_size(99), (20.0f64 / (3.0 * 4.0 * 100.0)).sqrt());
        assert!(TheoryConstants::new(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn estimate_is_deterministic_and_alpha_consistent() {
        let p = random_problem(1);
        let a = estimate_theory_constants(&p, 16, 3).unwrap();
        let b = estimate_theory_constants(&p, 16, 3).unwrap();
        assert_eq!(a, b);
        let j = 1000;
        let expected = (a.delta_hat / (a.l_hat * a.m_hat * a.m_hat * (j as f64 + 1.0))).sqrt();
        assert_eq!(a.step_size(j), expected);
    }

    #[test]
    fn more_samples_never_decrease_m_hat() {
        let p = random_problem(2);
        let mut prev = 0.0;
        for s in [2, 4, 8, 16, 32] {
            let tc = estimate_theory_constants(&p, s, 5).unwrap();
            assert!(tc.m_hat >= prev);
            prev = tc.m_hat;
        }
    }

    #[test]
    fn m_hat_homogeneous_in_quad_forms_without_interference() {
        let p = single_user(4, 3);
        let base = estimate_theory_constants(&p, 8, 1).unwrap();
        let scaled = estimate_theory_constants(&p.with_scaled_quad_forms(3.0), 8, 1).unwrap();
        assert!((scaled.m_hat - 3.0 * base.m_hat).abs() <= 1e-12 * scaled.m_hat);
        assert_eq!(scaled.d_hat, base.d_hat);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(matches!(
            estimate_theory_constants(&toy(), 1, 0),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn diameter_for_unit_ellipsoid() {
        let tc = estimate_theory_constants(&toy(), 4, 0).unwrap();
        assert!((tc.d_hat - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ellipsoid_projection_is_euclidean() {
        let p = random_problem(4);
        let proj = EllipsoidProjector::new(&p);
        let mut rng = rng_from(8);
        for _ in 0..20 {
            let z = DVector::from_fn(p.dim(), |_, _| {
                let v: f64 = StandardNormal.sample(&mut rng);
                100.0 * v
            });
            assert!(p.power_of(&z) > p.power_budget);
            let y = proj.project(&z);
            let py = p.power_of(&y);
            assert!((py - p.power_budget).abs() <= 1e-9 * p.power_budget, "{py}");
            // KKT: z - y is parallel to Q y (outward normal).
            let qy = {
                let mut out = DVector::zeros(p.dim());
                for (i, q) in p.gram.iter().enumerate() {
                    let r = p.block_range(i);
                    out.rows_mut(r.start, r.len())
                        .copy_from(&(q * y.rows(r.start, r.len())));
                }
                out
            };
            let d = &z - &y;
            let cos = d.dot(&qy) / (d.norm() * qy.norm());
            assert!((cos - 1.0).abs() < 1e-8, "{cos}");
        }
        let inside = DVector::zeros(p.dim());
        assert_eq!(proj.project(&inside), inside);
    }

    #[test]
    fn moreau_small_at_single_user_optimum() {
        let p = single_user(4, 7);
        let x = crate::init::initialize(&p, &crate::init::InitMethod::Equal).unwrap();
        let tc = estimate_theory_constants(&p, 16, 0).unwrap();
        let est = moreau_gradient_estimate(&p, &x, tc.l_hat, 10_000, 0).unwrap();
        assert!(est <= 1e-3, "{est}");
    }

    #[test]
    fn moreau_envelope_value_refines_monotonically() {
        let p = toy();
        let x =
            WeightIterate::from_vector(DVector::from_column_slice(&[1.2, 0.0, 0.6, 0.0]), &[1, 1])
                .unwrap();
        let l = 2.0 * estimate_theory_constants(&p, 32, 0).unwrap().l_hat;
        for n in [1, 10, 100] {
            let short = moreau_estimate(&p, &x, l, n, 0).unwrap();
            let long = moreau_estimate(&p, &x, l, 10 * n, 0).unwrap();
            assert!(long.envelope_value <= short.envelope_value + 1e-15);
        }
    }

    /// Brute force over the toy's two power levels (phases are irrelevant and
    /// the cross terms make the inner problem separable in angle).
    fn toy_prox_oracle(x: &DVector<f64>, l: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let n = 400;
        for a in 0..=n {
            for b in 0..=n {
                let t1 = 2f64.sqrt() * a as f64 / n as f64;
                let t2 = 2f64.sqrt() * b as f64 / n as f64;
                if t1 * t1 + t2 * t2 > 2.0 {
                    continue;
                }
                // Optimal angles align with x_1 and x_2 (both along the first axis).
                let z = DVector::from_column_slice(&[t1, 0.0, t2, 0.0]);
                let p1 = t1 * t1;
                let p2 = t2 * t2;
                let g = (-p1 / (p2 + 1.0)).max(-p2 / (p1 + 1.0));
                let v = g + l * (&z - x).norm_squared();
                if v < best.0 {
                    best = (v, (&z - x).norm());
                }
            }
        }
        2.0 * l * best.1
    }

    #[test]
    fn moreau_large_at_nonstationary_toy_point() {
        let p = toy();
        let xv = DVector::from_column_slice(&[1.2, 0.0, 0.6, 0.0]);
        let x = WeightIterate::from_vector(xv.clone(), &[1, 1]).unwrap();
        let l = 2.0 * estimate_theory_constants(&p, 32, 0).unwrap().l_hat;
        let oracle = toy_prox_oracle(&xv, l);
        assert!(oracle > 0.1, "{oracle}");
        let est = moreau_gradient_estimate(&p, &x, l, 20_000, 0).unwrap();
        assert!(est > 0.1, "{est}");
        assert!(
            (est - oracle).abs() <= 0.05 * oracle,
            "est {est} oracle {oracle}"
        );
        assert!(objective(&p, &x) > -0.5);
    }
}
