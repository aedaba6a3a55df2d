//! Starting points for PSA.
//!
//! The built-in heuristics all start on the power boundary. Externally
//! computed points (for instance from a semidefinite relaxation) can be
//! injected through [`InitMethod::FromFile`]; they are used verbatim and may
//! be infeasible.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::{Complex, Real};
use crate::transform::{TransformedProblem, WeightIterate};

#[derive(Debug, Clone, PartialEq)]
pub enum InitMethod {
    /// `a_i = c 1`.
    Equal,
    /// `a_i = c e_k*` with `k* = argmax_k ||h_ik||`.
    StrongestUser,
    /// Complex Gaussian entries.
    Random(u64),
    FromFile(PathBuf),
}

impl InitMethod {
    /// Parses `equal`, `strongest`, `random[:SEED]` or `file:PATH`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(InitMethod::Equal),
            "strongest" | "strongest_user" => Ok(InitMethod::StrongestUser),
            "random" => Ok(InitMethod::Random(0)),
            _ => {
                if let Some(seed) = s.strip_prefix("random:") {
                    seed.parse()
                        .map(InitMethod::Random)
                        .map_err(|_| Error::Usage(format!("bad random seed in {s:?}")))
                } else if let Some(path) = s.strip_prefix("file:") {
                    Ok(InitMethod::FromFile(PathBuf::from(path)))
                } else {
                    Err(Error::Usage(format!("unknown init method {s:?}")))
                }
            }
        }
    }
}

fn scale_to_boundary<T: Real>(
    problem: &TransformedProblem<T>,
    x: WeightIterate<T>,
) -> Result<WeightIterate<T>> {
    let p = problem.power(&x);
    if !(p > T::zero()) || !p.is_finite() {
        return Err(Error::Initialization(
            "initial direction carries no transmit power".into(),
        ));
    }
    let c = (problem.power_budget / p).sqrt();
    let v = &x.x * c;
    Ok(x.with_vector(v))
}

pub fn initialize<T: Real>(
    problem: &TransformedProblem<T>,
    method: &InitMethod,
) -> Result<WeightIterate<T>> {
    let groups = &problem.users_per_group;
    let one = Complex::new(T::one(), T::zero());
    match method {
        InitMethod::Equal => {
            let a: Vec<_> = groups
                .iter()
                .map(|&k| DVector::from_element(k, one))
                .collect();
            scale_to_boundary(problem, WeightIterate::from_complex(&a))
        }
        InitMethod::StrongestUser => {
            let mut offset = 0;
            let a: Vec<_> = groups
                .iter()
                .map(|&k| {
                    let norms = &problem.channel_norms[offset..offset + k];
                    offset += k;
                    let mut best = 0;
                    for (m, &v) in norms.iter().enumerate() {
                        if v > norms[best] {
                            best = m;
                        }
                    }
                    let mut a = DVector::from_element(k, Complex::new(T::zero(), T::zero()));
                    a[best] = one;
                    a
                })
                .collect();
            scale_to_boundary(problem, WeightIterate::from_complex(&a))
        }
        InitMethod::Random(seed) => {
            let mut rng = rng_from(*seed);
            let x = DVector::from_fn(problem.dim(), |_, _| {
                T::lit(StandardNormal.sample(&mut rng))
            });
            scale_to_boundary(problem, WeightIterate::from_vector(x, groups)?)
        }
        InitMethod::FromFile(path) => {
            let x = load_iterate(path).map_err(|e| Error::Initialization(e.to_string()))?;
            if x.users_per_group != *groups {
                return Err(Error::Initialization(format!(
                    "{}: group sizes {:?} do not match problem {:?}",
                    path.display(),
                    x.users_per_group,
                    groups
                )));
            }
            Ok(x)
        }
    }
}

/// On-disk weight vector: one list of `[re, im]` pairs per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterateFile {
    pub groups: Vec<Vec<[f64; 2]>>,
}

pub fn save_iterate<T: Real>(path: impl AsRef<Path>, x: &WeightIterate<T>) -> Result<()> {
    let path = path.as_ref();
    let doc = IterateFile {
        groups: x
            .to_complex()
            .iter()
            .map(|a| a.iter().map(|z| [z.re.as_f64(), z.im.as_f64()]).collect())
            .collect(),
    };
    let text = toml::to_string(&doc).map_err(|e| Error::parse(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_iterate<T: Real>(path: impl AsRef<Path>) -> Result<WeightIterate<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: IterateFile = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    if doc.groups.iter().any(|g| g.is_empty()) {
        return Err(Error::parse(path, "every group needs at least one weight"));
    }
    let a: Vec<DVector<Complex<T>>> = doc
        .groups
        .iter()
        .map(|g| {
            DVector::from_iterator(
                g.len(),
                g.iter()
                    .map(|[re, im]| Complex::new(T::lit(*re), T::lit(*im))),
            )
        })
        .collect();
    Ok(WeightIterate::from_complex(&a))
}
