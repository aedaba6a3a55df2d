//! System configuration, seeded Rayleigh channels and the config file schema.
//!
//! Channels are stored as `h_ik = sqrt(beta_ik) * g_ik` where `g_ik` has
//! i.i.d. CN(0, 1) entries. Only `g_ik` and `beta_ik` are persisted so that a
//! reload reproduces `h_ik` bit for bit.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::{db_to_linear, linear_to_db, Complex, Real};

/// Antenna count, group layout, power budget, noise and per-user SINR weights.
///
/// All quantities are linear scale. `sinr_weights` is flat, ordered group by
/// group.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig<T> {
    pub n_antennas: usize,
    pub users_per_group: Vec<usize>,
    pub power_budget: T,
    pub noise_var: T,
    pub sinr_weights: Vec<T>,
}

impl<T: Real> SystemConfig<T> {
    pub fn new(
        n_antennas: usize,
        users_per_group: Vec<usize>,
        power_budget: T,
        noise_var: T,
        sinr_weights: Vec<T>,
    ) -> Result<Self> {
        let cfg = SystemConfig {
            n_antennas,
            users_per_group,
            power_budget,
            noise_var,
            sinr_weights,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `G` groups of `K` users each, all sharing the SINR weight `gamma`.
    pub fn uniform(
        n_antennas: usize,
        n_groups: usize,
        users: usize,
        gamma: T,
        power_budget: T,
        noise_var: T,
    ) -> Result<Self> {
        Self::new(
            n_antennas,
            vec![users; n_groups],
            power_budget,
            noise_var,
            vec![gamma; n_groups * users],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 {
            return Err(Error::Validation("n_antennas must be at least 1".into()));
        }
        if self.users_per_group.is_empty() {
            return Err(Error::Validation("at least one group is required".into()));
        }
        if let Some(i) = self.users_per_group.iter().position(|&k| k == 0) {
            return Err(Error::Validation(format!(
                "group {i} has no users (n_users must be at least 1)"
            )));
        }
        if !(self.power_budget > T::zero()) {
            return Err(Error::Validation(format!(
                "power budget must be positive, got {}",
                self.power_budget
            )));
        }
        if !(self.noise_var > T::zero()) {
            return Err(Error::Validation(format!(
                "noise_var must be positive, got {}",
                self.noise_var
            )));
        }
        if self.sinr_weights.len() != self.total_users() {
            return Err(Error::Validation(format!(
                "expected {} SINR weights, got {}",
                self.total_users(),
                self.sinr_weights.len()
            )));
        }
        if let Some(u) = self.sinr_weights.iter().position(|&g| !(g > T::zero())) {
            let (i, k) = self.user_position(u);
            return Err(Error::Validation(format!(
                "SINR weight of user ({i}, {k}) must be positive"
            )));
        }
        Ok(())
    }

    pub fn n_groups(&self) -> usize {
        self.users_per_group.len()
    }

    pub fn total_users(&self) -> usize {
        self.users_per_group.iter().sum()
    }

    /// Flat index of user `k` in group `i`.
    pub fn user_index(&self, group: usize, user: usize) -> usize {
        self.users_per_group[..group].iter().sum::<usize>() + user
    }

    /// Inverse of [`SystemConfig::user_index`].
    pub fn user_position(&self, mut flat: usize) -> (usize, usize) {
        for (i, &k) in self.users_per_group.iter().enumerate() {
            if flat < k {
                return (i, flat);
            }
            flat -= k;
        }
        panic!("user index out of range");
    }

    pub fn weights_all_equal(&self) -> bool {
        self.sinr_weights.windows(2).all(|w| w[0] == w[1])
    }
}

/// Channel vectors `h_ik`, their variances `beta_ik` and normalized fading `g_ik`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet<T: Real> {
    pub channels: Vec<DVector<Complex<T>>>,
    pub variances: Vec<T>,
    pub normalized: Vec<DVector<Complex<T>>>,
    pub users_per_group: Vec<usize>,
    pub seed: u64,
}

impl<T: Real> ChannelSet<T> {
    /// Builds `h_ik = sqrt(beta_ik) g_ik` from the normalized fading.
    pub fn from_normalized(
        config: &SystemConfig<T>,
        variances: Vec<T>,
        normalized: Vec<DVector<Complex<T>>>,
        seed: u64,
    ) -> Result<Self> {
        let k_tot = config.total_users();
        if variances.len() != k_tot {
            return Err(Error::Config(format!(
                "expected {k_tot} channel variances, got {}",
                variances.len()
            )));
        }
        if normalized.len() != k_tot {
            return Err(Error::Config(format!(
                "expected {k_tot} channel vectors, got {}",
                normalized.len()
            )));
        }
        if let Some(u) = variances.iter().position(|&b| !(b > T::zero())) {
            return Err(Error::Config(format!(
                "channel variance of user {u} must be positive"
            )));
        }
        if let Some(u) = normalized.iter().position(|g| g.len() != config.n_antennas) {
            return Err(Error::Config(format!(
                "channel vector of user {u} has length {}, expected {}",
                normalized[u].len(),
                config.n_antennas
            )));
        }
        let channels = normalized
            .iter()
            .zip(&variances)
            .map(|(g, &b)| g.map(|z| z * b.sqrt()))
            .collect();
        Ok(ChannelSet {
            channels,
            variances,
            normalized,
            users_per_group: config.users_per_group.clone(),
            seed,
        })
    }

    pub fn n_antennas(&self) -> usize {
        self.channels.first().map_or(0, |h| h.len())
    }

    pub fn n_groups(&self) -> usize {
        self.users_per_group.len()
    }

    pub fn channel(&self, group: usize, user: usize) -> &DVector<Complex<T>> {
        let offset: usize = self.users_per_group[..group].iter().sum();
        &self.channels[offset + user]
    }

    /// The `N x K_i` channel matrix `H_i` of group `i`.
    pub fn group_matrix(&self, group: usize) -> DMatrix<Complex<T>> {
        let offset: usize = self.users_per_group[..group].iter().sum();
        let cols = &self.channels[offset..offset + self.users_per_group[group]];
        DMatrix::from_columns(cols)
    }
}

/// Draws i.i.d. CN(0, 1) fading for every user and scales by `sqrt(beta_ik)`.
pub fn generate_channels<T: Real>(
    config: &SystemConfig<T>,
    variances: &[T],
    seed: u64,
) -> Result<ChannelSet<T>> {
    let k_tot = config.total_users();
    if variances.len() != k_tot {
        return Err(Error::Config(format!(
            "expected {k_tot} channel variances, got {}",
            variances.len()
        )));
    }
    let mut rng = rng_from(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let normalized = (0..k_tot)
        .map(|_| {
            DVector::from_fn(config.n_antennas, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex::new(T::lit(re * scale), T::lit(im * scale))
            })
        })
        .collect();
    ChannelSet::from_normalized(config, variances.to_vec(), normalized, seed)
}

// ---------------------------------------------------------------------------
// File schema

/// A per-group weight: one value for the whole group or one per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerUser {
    Scalar(f64),
    List(Vec<f64>),
}

impl PerUser {
    fn expand(&self, n: usize, what: &str, group: usize) -> Result<Vec<f64>> {
        match self {
            PerUser::Scalar(v) => Ok(vec![*v; n]),
            PerUser::List(v) if v.len() == n => Ok(v.clone()),
            PerUser::List(v) => Err(Error::Validation(format!(
                "groups[{group}].{what}: expected {n} entries, got {}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEntry {
    pub n_users: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_db: Option<PerUser>,
    /// Linear override; takes precedence over `gamma_db` when both are given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<PerUser>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelEntry {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    /// Normalized fading `g_ik`, one list of `[re, im]` pairs per user.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<Vec<Vec<[f64; 2]>>>,
}

/// On-disk configuration document (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n_antennas: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    pub noise_var: f64,
    pub groups: Vec<GroupEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelEntry>,
}

const DB_CONSISTENCY_TOL: f64 = 1e-9;

fn pick_linear(linear: Option<f64>, db: Option<f64>, what: &str) -> Result<f64> {
    match (linear, db) {
        (Some(l), Some(d)) => {
            let from_db = db_to_linear(d);
            if (l - from_db).abs() > DB_CONSISTENCY_TOL * l.abs().max(from_db.abs()) {
                return Err(Error::Validation(format!(
                    "{what} = {l} disagrees with {what}_db = {d}"
                )));
            }
            Ok(l)
        }
        (Some(l), None) => Ok(l),
        (None, Some(d)) => Ok(db_to_linear(d)),
        (None, None) => Err(Error::Validation(format!(
            "one of {what} or {what}_db is required"
        ))),
    }
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(path, e.to_string()))
    }

    /// Converts to linear-scale structures, generating channels from the
    /// seed when no explicit fading is stored.
    pub fn into_system<T: Real>(self) -> Result<(SystemConfig<T>, ChannelSet<T>)> {
        let power = pick_linear(self.power, self.power_db, "power")?;
        let mut weights = Vec::new();
        for (i, g) in self.groups.iter().enumerate() {
            let lin = g
                .gamma
                .as_ref()
                .map(|v| v.expand(g.n_users, "gamma", i))
                .transpose()?;
            let db = g
                .gamma_db
                .as_ref()
                .map(|v| v.expand(g.n_users, "gamma_db", i))
                .transpose()?;
            match (lin, db) {
                (Some(l), Some(d)) => {
                    for (a, b) in l.iter().zip(&d) {
                        pick_linear(Some(*a), Some(*b), &format!("groups[{i}].gamma"))?;
                    }
                    weights.extend(l);
                }
                (Some(l), None) => weights.extend(l),
                (None, Some(d)) => weights.extend(d.into_iter().map(db_to_linear)),
                (None, None) => {
                    return Err(Error::Validation(format!(
                        "groups[{i}]: one of gamma or gamma_db is required"
                    )))
                }
            }
        }
        let config = SystemConfig::new(
            self.n_antennas,
            self.groups.iter().map(|g| g.n_users).collect(),
            T::lit(power),
            T::lit(self.noise_var),
            weights.into_iter().map(T::lit).collect(),
        )?;
        let k_tot = config.total_users();
        let channel = self.channel.unwrap_or(ChannelEntry {
            seed: 0,
            betas: None,
            normalized: None,
        });
        let betas = channel.betas.unwrap_or_else(|| vec![1.0; k_tot]);
        if betas.len() != k_tot {
            return Err(Error::Validation(format!(
                "channel.betas: expected {k_tot} entries, got {}",
                betas.len()
            )));
        }
        if let Some(u) = betas.iter().position(|&b| !(b > 0.0)) {
            return Err(Error::Validation(format!(
                "channel.betas[{u}] must be positive"
            )));
        }
        let betas: Vec<T> = betas.into_iter().map(T::lit).collect();
        let channels = match channel.normalized {
            None => generate_channels(&config, &betas, channel.seed)?,
            Some(vectors) => {
                if vectors.len() != k_tot {
                    return Err(Error::Validation(format!(
                        "channel.normalized: expected {k_tot} vectors, got {}",
                        vectors.len()
                    )));
                }
                let mut normalized = Vec::with_capacity(k_tot);
                for (u, v) in vectors.into_iter().enumerate() {
                    if v.len() != config.n_antennas {
                        return Err(Error::Validation(format!(
                            "channel.normalized[{u}]: expected {} entries, got {}",
                            config.n_antennas,
                            v.len()
                        )));
                    }
                    normalized.push(DVector::from_iterator(
                        v.len(),
                        v.into_iter()
                            .map(|[re, im]| Complex::new(T::lit(re), T::lit(im))),
                    ));
                }
                ChannelSet::from_normalized(&config, betas, normalized, channel.seed)
                    .map_err(|e| Error::Validation(e.to_string()))?
            }
        };
        Ok((config, channels))
    }

    /// Snapshot of a configuration and its channels. Linear values are
    /// authoritative; the dB fields are written alongside for readability.
    pub fn from_system<T: Real>(config: &SystemConfig<T>, channels: &ChannelSet<T>) -> Self {
        let mut groups = Vec::with_capacity(config.n_groups());
        let mut offset = 0;
        for &k in &config.users_per_group {
            let lin: Vec<f64> = config.sinr_weights[offset..offset + k]
                .iter()
                .map(|g| g.as_f64())
                .collect();
            offset += k;
            groups.push(GroupEntry {
                n_users: k,
                gamma_db: Some(PerUser::List(
                    lin.iter().map(|&g| linear_to_db(g)).collect(),
                )),
                gamma: Some(PerUser::List(lin)),
            });
        }
        let power = config.power_budget.as_f64();
        ConfigFile {
            n_antennas: config.n_antennas,
            power_db: Some(linear_to_db(power)),
            power: Some(power),
            noise_var: config.noise_var.as_f64(),
            groups,
            channel: Some(ChannelEntry {
                seed: channels.seed,
                betas: Some(channels.variances.iter().map(|b| b.as_f64()).collect()),
                normalized: Some(
                    channels
                        .normalized
                        .iter()
                        .map(|g| g.iter().map(|z| [z.re.as_f64(), z.im.as_f64()]).collect())
                        .collect(),
                ),
            }),
        }
    }
}

pub fn load_config<T: Real>(path: impl AsRef<Path>) -> Result<(SystemConfig<T>, ChannelSet<T>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ConfigFile::parse(&text, path)?.into_system()
}

pub fn save_config<T: Real>(
    path: impl AsRef<Path>,
    config: &SystemConfig<T>,
    channels: &ChannelSet<T>,
) -> Result<()> {
    let path = path.as_ref();
    let doc = ConfigFile::from_system(config, channels);
    let text = toml::to_string(&doc).map_err(|e| Error::parse(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
