//! Low-dimensional weight-space reformulation.
//!
//! With the beamformer structure `w_i = R^-1 H_i a_i` and `R` replaced by
//! its large-N approximation, the design variable shrinks from `G` complex
//! `N`-vectors to `K_tot` complex weights. Everything the solver touches per
//! iteration lives in `2K_j x 2K_j` real blocks whose size does not depend
//! on `N`.

use std::fs;
use std::ops::Range;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, DVectorView};
use serde_json::json;

use crate::channel::{ChannelSet, SystemConfig};
use crate::error::{Error, Result};
use crate::scalar::{Complex, Real};

/// Which large-N covariance approximation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceModel {
    /// Per-user SINR weights; requires `N - sum_{jl != ik} gamma_jl > 0`.
    General,
    /// Common SINR weight; uses the harmonic mean of the channel variances.
    CommonGamma,
}

/// Stacked real weight vector `x = [x_1; ...; x_G]` with
/// `x_i = [Re a_i; Im a_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightIterate<T: Real> {
    pub x: DVector<T>,
    pub users_per_group: Vec<usize>,
}

impl<T: Real> WeightIterate<T> {
    pub fn zeros(users_per_group: &[usize]) -> Self {
        let dim = 2 * users_per_group.iter().sum::<usize>();
        WeightIterate {
            x: DVector::zeros(dim),
            users_per_group: users_per_group.to_vec(),
        }
    }

    pub fn from_vector(x: DVector<T>, users_per_group: &[usize]) -> Result<Self> {
        let dim = 2 * users_per_group.iter().sum::<usize>();
        if x.len() != dim {
            return Err(Error::Contract(format!(
                "weight vector has length {}, expected {dim}",
                x.len()
            )));
        }
        Ok(WeightIterate {
            x,
            users_per_group: users_per_group.to_vec(),
        })
    }

    /// Stacks complex per-group weights `a_i` into the real layout.
    pub fn from_complex(weights: &[DVector<Complex<T>>]) -> Self {
        let users: Vec<usize> = weights.iter().map(|a| a.len()).collect();
        let mut out = Self::zeros(&users);
        for (i, a) in weights.iter().enumerate() {
            let range = out.block_range(i);
            let k = a.len();
            for (m, z) in a.iter().enumerate() {
                out.x[range.start + m] = z.re;
                out.x[range.start + k + m] = z.im;
            }
        }
        out
    }

    pub fn to_complex(&self) -> Vec<DVector<Complex<T>>> {
        (0..self.n_groups())
            .map(|i| {
                let b = self.block(i);
                let k = self.users_per_group[i];
                DVector::from_fn(k, |m, _| Complex::new(b[m], b[k + m]))
            })
            .collect()
    }

    pub fn n_groups(&self) -> usize {
        self.users_per_group.len()
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn block_range(&self, group: usize) -> Range<usize> {
        block_range(&self.users_per_group, group)
    }

    pub fn block(&self, group: usize) -> DVectorView<'_, T> {
        let r = self.block_range(group);
        self.x.rows(r.start, r.len())
    }

    pub fn with_vector(&self, x: DVector<T>) -> Self {
        debug_assert_eq!(x.len(), self.x.len());
        WeightIterate {
            x,
            users_per_group: self.users_per_group.clone(),
        }
    }
}

pub(crate) fn block_range(users_per_group: &[usize], group: usize) -> Range<usize> {
    let start = 2 * users_per_group[..group].iter().sum::<usize>();
    start..start + 2 * users_per_group[group]
}

/// Real expansion `[[Re M, -Im M], [Im M, Re M]]` of a complex matrix.
pub fn real_expand<T: Real>(m: &DMatrix<Complex<T>>) -> DMatrix<T> {
    let (r, c) = m.shape();
    DMatrix::from_fn(2 * r, 2 * c, |a, b| {
        let z = m[(a % r, b % c)];
        match (a < r, b < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Outer product `v v^H`, exactly Hermitian in floating point.
fn hermitian_outer<T: Real>(v: &DVector<Complex<T>>) -> DMatrix<Complex<T>> {
    DMatrix::from_fn(v.len(), v.len(), |a, b| v[a] * v[b].conj())
}

fn accumulate_rank_one<T: Real>(r: &mut DMatrix<Complex<T>>, g: &DVector<Complex<T>>, coef: T) {
    let n = g.len();
    for b in 0..n {
        for a in 0..n {
            let z = g[a] * g[b].conj();
            r[(a, b)] += Complex::new(z.re * coef, z.im * coef);
        }
    }
}

fn check_dims<T: Real>(config: &SystemConfig<T>, channels: &ChannelSet<T>) -> Result<()> {
    if channels.users_per_group != config.users_per_group
        || channels.channels.len() != config.total_users()
        || channels.n_antennas() != config.n_antennas
    {
        return Err(Error::Config(
            "channel set does not match the system configuration".into(),
        ));
    }
    Ok(())
}

/// Covariance approximation with per-user SINR weights.
///
/// `R = I + (P / sigma^2) sum_ik [eta_ik / sum_i'k' (eta_i'k' / beta_i'k')] g_ik g_ik^H`,
/// `eta_ik = gamma_ik / (N - sum_{jl != ik} gamma_jl)`.
pub fn build_r_tilde_general<T: Real>(
    config: &SystemConfig<T>,
    channels: &ChannelSet<T>,
) -> Result<DMatrix<Complex<T>>> {
    check_dims(config, channels)?;
    let n = config.n_antennas;
    let n_real = T::from_usize(n).unwrap();
    let gammas = &config.sinr_weights;
    let mut eta = Vec::with_capacity(gammas.len());
    for (u, &gamma) in gammas.iter().enumerate() {
        let others = gammas
            .iter()
            .enumerate()
            .filter(|&(v, _)| v != u)
            .fold(T::zero(), |acc, (_, &g)| acc + g);
        let denom = n_real - others;
        if !(denom > T::zero()) {
            let (group, user) = config.user_position(u);
            return Err(Error::InfeasibleApproximation {
                group,
                user,
                denominator: denom.as_f64(),
            });
        }
        eta.push(gamma / denom);
    }
    let normalizer = eta
        .iter()
        .zip(&channels.variances)
        .fold(T::zero(), |acc, (&e, &b)| acc + e / b);
    let snr = config.power_budget / config.noise_var;
    let mut r = DMatrix::identity(n, n);
    for (g, &e) in channels.normalized.iter().zip(&eta) {
        accumulate_rank_one(&mut r, g, snr * e / normalizer);
    }
    Ok(r)
}

/// Covariance approximation for a common SINR weight:
/// `R = I + (P beta_bar / (sigma^2 K_tot)) sum_ik g_ik g_ik^H`.
pub fn build_r_tilde_common<T: Real>(
    config: &SystemConfig<T>,
    channels: &ChannelSet<T>,
) -> Result<DMatrix<Complex<T>>> {
    check_dims(config, channels)?;
    if !config.weights_all_equal() {
        return Err(Error::Contract(
            "common-weight covariance requires equal SINR weights".into(),
        ));
    }
    let n = config.n_antennas;
    let k_tot = T::from_usize(config.total_users()).unwrap();
    let inv_sum = channels
        .variances
        .iter()
        .fold(T::zero(), |acc, &b| acc + T::one() / b);
    let beta_bar = k_tot / inv_sum;
    let coef = config.power_budget * beta_bar / (config.noise_var * k_tot);
    let mut r = DMatrix::identity(n, n);
    for g in &channels.normalized {
        accumulate_rank_one(&mut r, g, coef);
    }
    Ok(r)
}

/// Everything needed to evaluate the reduced min-max problem.
#[derive(Debug, Clone)]
pub struct TransformedProblem<T: Real> {
    pub r_tilde: DMatrix<Complex<T>>,
    /// `C~_i = R~^-1 H_i`, `N x K_i`.
    pub effective_channels: Vec<DMatrix<Complex<T>>>,
    /// Real expansions `C_i`, `2N x 2K_i`.
    pub real_effective: Vec<DMatrix<T>>,
    /// `C_i^T C_i`, `2K_i x 2K_i`; makes the power of a weight vector N-independent.
    pub gram: Vec<DMatrix<T>>,
    /// `A_jik`, indexed by `j * K_tot + flat(i, k)`.
    quad_forms: Vec<DMatrix<T>>,
    pub noise_var: T,
    pub weights: Vec<T>,
    pub power_budget: T,
    pub users_per_group: Vec<usize>,
    /// `||h_ik||`, used by the strongest-user initializer.
    pub channel_norms: Vec<T>,
    user_group: Vec<usize>,
}

impl<T: Real> TransformedProblem<T> {
    pub fn n_groups(&self) -> usize {
        self.users_per_group.len()
    }

    pub fn total_users(&self) -> usize {
        self.weights.len()
    }

    /// Dimension of the real weight space, `2 K_tot`.
    pub fn dim(&self) -> usize {
        2 * self.total_users()
    }

    pub fn n_antennas(&self) -> usize {
        self.r_tilde.nrows()
    }

    /// `A_jik` for beamformer group `j` and flat user index `user`.
    pub fn quad_form(&self, j: usize, user: usize) -> &DMatrix<T> {
        &self.quad_forms[j * self.total_users() + user]
    }

    pub fn user_group(&self, user: usize) -> usize {
        self.user_group[user]
    }

    pub fn user_position(&self, user: usize) -> (usize, usize) {
        let g = self.user_group[user];
        let offset: usize = self.users_per_group[..g].iter().sum();
        (g, user - offset)
    }

    pub fn block_range(&self, group: usize) -> Range<usize> {
        block_range(&self.users_per_group, group)
    }

    /// Total transmit power `P_x = sum_i ||C_i x_i||^2`.
    pub fn power(&self, x: &WeightIterate<T>) -> T {
        self.power_of(&x.x)
    }

    pub(crate) fn power_of(&self, x: &DVector<T>) -> T {
        let mut total = T::zero();
        for (i, q) in self.gram.iter().enumerate() {
            let r = self.block_range(i);
            let xi = x.rows(r.start, r.len());
            total += xi.dot(&(q * xi));
        }
        total
    }

    pub fn check_iterate(&self, x: &WeightIterate<T>) -> Result<()> {
        if x.users_per_group != self.users_per_group || x.dim() != self.dim() {
            return Err(Error::Contract(format!(
                "weight iterate layout {:?} does not match problem layout {:?}",
                x.users_per_group, self.users_per_group
            )));
        }
        Ok(())
    }

    /// Assembles a problem from the real blocks directly. The covariance is
    /// recorded as the identity and all channel norms as one.
    pub fn from_real_parts(
        users_per_group: Vec<usize>,
        real_effective: Vec<DMatrix<T>>,
        quad_forms: Vec<DMatrix<T>>,
        weights: Vec<T>,
        noise_var: T,
        power_budget: T,
    ) -> Result<Self> {
        let g = users_per_group.len();
        let k_tot: usize = users_per_group.iter().sum();
        if real_effective.len() != g || quad_forms.len() != g * k_tot || weights.len() != k_tot {
            return Err(Error::Contract("inconsistent problem part counts".into()));
        }
        let n2 = real_effective.first().map_or(0, |c| c.nrows());
        if !n2.is_multiple_of(2) {
            return Err(Error::Contract(
                "real effective channels need even row count".into(),
            ));
        }
        for (i, c) in real_effective.iter().enumerate() {
            if c.nrows() != n2 || c.ncols() != 2 * users_per_group[i] {
                return Err(Error::Contract(format!("C_{i} has wrong shape")));
            }
        }
        for (idx, a) in quad_forms.iter().enumerate() {
            let j = idx / k_tot;
            if a.shape() != (2 * users_per_group[j], 2 * users_per_group[j]) {
                return Err(Error::Contract(format!("A matrix {idx} has wrong shape")));
            }
        }
        let n = n2 / 2;
        let effective_channels = real_effective
            .iter()
            .zip(&users_per_group)
            .map(|(c, &k)| DMatrix::from_fn(n, k, |a, b| Complex::new(c[(a, b)], c[(n + a, b)])))
            .collect();
        let gram = real_effective.iter().map(symmetric_gram).collect();
        Ok(TransformedProblem {
            r_tilde: DMatrix::identity(n, n),
            effective_channels,
            real_effective,
            gram,
            quad_forms,
            noise_var,
            weights,
            power_budget,
            user_group: user_groups(&users_per_group),
            users_per_group,
            channel_norms: vec![T::one(); k_tot],
        })
    }

    /// Returns a copy with every `A_jik` multiplied by `c`.
    pub fn with_scaled_quad_forms(&self, c: T) -> Self {
        let mut out = self.clone();
        for a in &mut out.quad_forms {
            *a *= c;
        }
        out
    }

    /// Writes `R~`, `C~_i` and `A_jik` as JSON for cross-checking.
    pub fn write_debug_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let cmat = |m: &DMatrix<Complex<T>>| -> Vec<Vec<[f64; 2]>> {
            (0..m.nrows())
                .map(|a| {
                    (0..m.ncols())
                        .map(|b| [m[(a, b)].re.as_f64(), m[(a, b)].im.as_f64()])
                        .collect()
                })
                .collect()
        };
        let rmat = |m: &DMatrix<T>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|a| (0..m.ncols()).map(|b| m[(a, b)].as_f64()).collect())
                .collect()
        };
        let mut quads = Vec::new();
        for j in 0..self.n_groups() {
            for u in 0..self.total_users() {
                let (i, k) = self.user_position(u);
                quads.push(json!({ "j": j, "i": i, "k": k, "matrix": rmat(self.quad_form(j, u)) }));
            }
        }
        let doc = json!({
            "n_antennas": self.n_antennas(),
            "users_per_group": self.users_per_group,
            "noise_var": self.noise_var.as_f64(),
            "power_budget": self.power_budget.as_f64(),
            "weights": self.weights.iter().map(|w| w.as_f64()).collect::<Vec<_>>(),
            "r_tilde": cmat(&self.r_tilde),
            "effective_channels": self.effective_channels.iter().map(cmat).collect::<Vec<_>>(),
            "quad_forms": quads,
        });
        let text = serde_json::to_string_pretty(&doc).expect("JSON values serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn user_groups(users_per_group: &[usize]) -> Vec<usize> {
    users_per_group
        .iter()
        .enumerate()
        .flat_map(|(i, &k)| std::iter::repeat_n(i, k))
        .collect()
}

fn symmetric_gram<T: Real>(c: &DMatrix<T>) -> DMatrix<T> {
    let q = c.transpose() * c;
    (&q + q.transpose()) * T::lit(0.5)
}

/// Builds `R~`, `C~_i = R~^-1 H_i` (one Cholesky factorization, one solve
/// per group) and every real quadratic form `A_jik`.
pub fn build_transformed_problem<T: Real>(
    config: &SystemConfig<T>,
    channels: &ChannelSet<T>,
    model: CovarianceModel,
) -> Result<TransformedProblem<T>> {
    let r_tilde = match model {
        CovarianceModel::General => build_r_tilde_general(config, channels)?,
        CovarianceModel::CommonGamma => build_r_tilde_common(config, channels)?,
    };
    let chol = Cholesky::new(r_tilde.clone()).ok_or_else(|| {
        Error::Numeric("covariance approximation is not positive definite".into())
    })?;
    let g = config.n_groups();
    let effective_channels: Vec<DMatrix<Complex<T>>> = (0..g)
        .map(|i| chol.solve(&channels.group_matrix(i)))
        .collect();
    let real_effective: Vec<DMatrix<T>> = effective_channels.iter().map(real_expand).collect();
    let gram = effective_channels
        .iter()
        .map(|c| {
            let m = c.adjoint() * c;
            let herm = (&m + m.adjoint()).map(|z| z * T::lit(0.5));
            real_expand(&herm)
        })
        .collect();

    let k_tot = config.total_users();
    let mut quad_forms = Vec::with_capacity(g * k_tot);
    for c in &effective_channels {
        for h in &channels.channels {
            let v = c.adjoint() * h;
            quad_forms.push(real_expand(&hermitian_outer(&v)));
        }
    }
    Ok(TransformedProblem {
        r_tilde,
        effective_channels,
        real_effective,
        gram,
        quad_forms,
        noise_var: config.noise_var,
        weights: config.sinr_weights.clone(),
        power_budget: config.power_budget,
        users_per_group: config.users_per_group.clone(),
        channel_norms: channels.channels.iter().map(|h| h.norm()).collect(),
        user_group: user_groups(&config.users_per_group),
    })
}

/// Picks the covariance model the experiments use: common weight when all
/// SINR weights agree, the general form otherwise.
pub fn default_model<T: Real>(config: &SystemConfig<T>) -> CovarianceModel {
    if config.weights_all_equal() {
        CovarianceModel::CommonGamma
    } else {
        CovarianceModel::General
    }
}

/// `w_i = C~_i a_i` for every group.
pub fn reconstruct_beamformers<T: Real>(
    problem: &TransformedProblem<T>,
    x: &WeightIterate<T>,
) -> Result<Vec<DVector<Complex<T>>>> {
    problem.check_iterate(x)?;
    Ok(x.to_complex()
        .iter()
        .zip(&problem.effective_channels)
        .map(|(a, c)| c * a)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channels;
    use crate::rng::rng_from;
    use rand_distr::{Distribution, StandardNormal};

    fn instance(
        n: usize,
        groups: Vec<usize>,
        gamma: f64,
        seed: u64,
    ) -> (SystemConfig<f64>, ChannelSet<f64>) {
        let k: usize = groups.iter().sum();
        let cfg = SystemConfig::new(n, groups, 10.0, 1.0, vec![gamma; k]).unwrap();
        let betas: Vec<f64> = (0..k).map(|u| 0.5 + 0.25 * u as f64).collect();
        let ch = generate_channels(&cfg, &betas, seed).unwrap();
        (cfg, ch)
    }

    fn random_complex(k: usize, seed: u64) -> DVector<Complex<f64>> {
        let mut rng = rng_from(seed);
        DVector::from_fn(k, |_, _| {
            Complex::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            )
        })
    }

    #[test]
    fn single_user_general_covariance() {
        let cfg = SystemConfig::new(2, vec![1], 1.0, 1.0, vec![1.0]).unwrap();
        let g = DVector::from_vec(vec![Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)]);
        let ch = ChannelSet::from_normalized(&cfg, vec![1.0], vec![g], 0).unwrap();
        let r = build_r_tilde_general(&cfg, &ch).unwrap();
        let expected =
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]).map(|v| Complex::new(v, 0.0));
        assert_eq!(r, expected);
    }

    #[test]
    fn zero_power_gives_identity() {
        let (mut cfg, ch) = instance(3, vec![2], 0.5, 1);
        cfg.power_budget = 0.0;
        assert_eq!(
            build_r_tilde_general(&cfg, &ch).unwrap(),
            DMatrix::identity(3, 3)
        );
        assert_eq!(
            build_r_tilde_common(&cfg, &ch).unwrap(),
            DMatrix::identity(3, 3)
        );
    }

    #[test]
    fn eta_denominator_guard_names_user() {
        let (cfg, ch) = instance(4, vec![2, 2], 2.0, 1);
        match build_r_tilde_general(&cfg, &ch) {
            Err(Error::InfeasibleApproximation {
                group,
                user,
                denominator,
            }) => {
                assert_eq!((group, user), (0, 0));
                assert_eq!(denominator, -2.0);
            }
            other => panic!("expected infeasible approximation, got {other:?}"),
        }
    }

    #[test]
    fn common_requires_equal_weights() {
        let cfg = SystemConfig::new(3, vec![2], 1.0, 1.0, vec![1.0, 2.0]).unwrap();
        let ch = generate_channels(&cfg, &[1.0, 1.0], 0).unwrap();
        assert!(matches!(
            build_r_tilde_common(&cfg, &ch),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn common_single_user_is_rank_one_update() {
        let cfg = SystemConfig::new(3, vec![1], 2.0, 0.5, vec![1.0]).unwrap();
        let ch = generate_channels(&cfg, &[1.0], 4).unwrap();
        let r = build_r_tilde_common(&cfg, &ch).unwrap();
        let g = &ch.normalized[0];
        let expected = DMatrix::<Complex<f64>>::identity(3, 3) + (g * g.adjoint()).map(|z| z * 4.0);
        assert!((r - expected).norm() < 1e-14);
    }

    #[test]
    fn covariance_is_hermitian_with_eigenvalues_at_least_one() {
        let (cfg, ch) = instance(6, vec![2, 1], 0.7, 3);
        let r = build_r_tilde_general(&cfg, &ch).unwrap();
        assert_eq!(r, r.adjoint());
        let eig = real_expand(&r).symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e >= 1.0 - 1e-12), "{eig}");
    }

    #[test]
    fn effective_channels_solve_linear_system() {
        let (cfg, ch) = instance(16, vec![3, 2, 2], 1.0, 5);
        let p = build_transformed_problem(&cfg, &ch, CovarianceModel::General).unwrap();
        for i in 0..3 {
            let h = ch.group_matrix(i);
            let resid = (&p.r_tilde * &p.effective_channels[i] - &h).norm() / h.norm();
            assert!(resid <= 1e-10, "residual {resid}");
        }
    }

    #[test]
    fn single_user_quad_form_is_scaled_identity() {
        let (cfg, ch) = instance(4, vec![1], 1.0, 6);
        let p = build_transformed_problem(&cfg, &ch, CovarianceModel::CommonGamma).unwrap();
        let a = p.quad_form(0, 0);
        let c = &p.effective_channels[0];
        let s = (c.adjoint() * &ch.channels[0])[0].norm_sqr();
        assert!(s >= 0.0);
        assert!((a - DMatrix::identity(2, 2) * s).norm() <= 1e-14 * s);
    }

    #[test]
    fn quad_forms_symmetric_psd_rank_two() {
        let (cfg, ch) = instance(8, vec![3, 2], 1.0, 7);
        let p = build_transformed_problem(&cfg, &ch, CovarianceModel::CommonGamma).unwrap();
        let mut rng = rng_from(99);
        for j in 0..2 {
            for u in 0..5 {
                let a = p.quad_form(j, u);
                assert_eq!(a, &a.transpose());
                let sv = a.singular_values();
                let mut sorted: Vec<f64> = sv.iter().copied().collect();
                sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
                for s in &sorted[2..] {
                    assert!(*s <= 1e-10 * sorted[0]);
                }
                for _ in 0..20 {
                    let z = DVector::from_fn(a.nrows(), |_, _| StandardNormal.sample(&mut rng));
                    assert!(z.dot(&(a * &z)) >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn real_expansion_preserves_norms_and_quadratic_forms() {
        let (cfg, ch) = instance(10, vec![3, 2], 1.0, 8);
        let p = build_transformed_problem(&cfg, &ch, CovarianceModel::CommonGamma).unwrap();
        for trial in 0..100u64 {
            let a = vec![random_complex(3, trial), random_complex(2, 1000 + trial)];
            let x = WeightIterate::from_complex(&a);
            for j in 0..2 {
                let lhs = (&p.effective_channels[j] * &a[j]).norm();
                let xj = x.block(j).into_owned();
                let rhs = (&p.real_effective[j] * &xj).norm();
                assert!((lhs - rhs).abs() <= 1e-12 * lhs);
                for u in 0..5 {
                    let h = &ch.channels[u];
                    let direct = (h.adjoint() * &p.effective_channels[j] * &a[j])[0].norm_sqr();
                    let quad = xj.dot(&(p.quad_form(j, u) * &xj));
                    assert!((direct - quad).abs() <= 1e-10 * direct.max(1e-300));
                }
            }
        }
    }

    #[test]
    fn complex_round_trip_is_lossless() {
        let a = vec![random_complex(2, 1), random_complex(4, 2)];
        let x = WeightIterate::from_complex(&a);
        assert_eq!(x.dim(), 12);
        assert_eq!(x.to_complex(), a);
    }

    #[test]
    fn reconstruction_power_matches_weight_power() {
        let (cfg, ch) = instance(12, vec![2, 2], 1.0, 9);
        let p = build_transformed_problem(&cfg, &ch, CovarianceModel::CommonGamma).unwrap();
        let zero = WeightIterate::zeros(&[2, 2]);
        let w = reconstruct_beamformers(&p, &zero).unwrap();
        assert!(w.iter().all(|w| w.norm() == 0.0));
        let x = WeightIterate::from_complex(&[random_complex(2, 3), random_complex(2, 4)]);
        let w = reconstruct_beamformers(&p, &x).unwrap();
        let bf: f64 = w.iter().map(|w| w.norm_squared()).sum();
        let pw = p.power(&x);
        assert!((bf - pw).abs() <= 1e-10 * pw);
    }

    #[test]
    fn unit_weight_reconstructs_effective_channel() {
        let (cfg, ch) = instance(5, vec![1], 1.0, 2);
        let p = build_transformed_problem(&cfg, &ch, CovarianceModel::CommonGamma).unwrap();
        let x = WeightIterate::from_complex(&[DVector::from_element(1, Complex::new(1.0, 0.0))]);
        let w = reconstruct_beamformers(&p, &x).unwrap();
        assert_eq!(w[0], p.effective_channels[0].column(0).into_owned());
    }

    #[test]
    fn reconstruct_rejects_wrong_layout() {
        let (cfg, ch) = instance(5, vec![2], 1.0, 2);
        let p = build_transformed_problem(&cfg, &ch, CovarianceModel::CommonGamma).unwrap();
        assert!(reconstruct_beamformers(&p, &WeightIterate::zeros(&[1])).is_err());
    }

    #[test]
    fn debug_dump_is_valid_json() {
        let (cfg, ch) = instance(3, vec![1, 1], 1.0, 2);
        let p = build_transformed_problem(&cfg, &ch, CovarianceModel::CommonGamma).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.json");
        p.write_debug_dump(&path).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["quad_forms"].as_array().unwrap().len(), 4);
        assert_eq!(v["r_tilde"].as_array().unwrap().len(), 3);
    }
}
