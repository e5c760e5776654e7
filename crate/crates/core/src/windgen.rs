//! Synthetic wind histories: correlated, skewed or multimodal farm outputs
//! drawn from a known Gaussian mixture and clipped to `[0, capacity]`.
//!
//! Every component shares one correlation matrix `R`; component `j` has
//! covariance `D_j R D_j` with `D_j` its per-farm standard deviations.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::gmm::Gmm;
use crate::netcase::WindHistory;
use crate::{Error, Result};

/// Share of clipped values above which a warning is emitted.
pub const CLIP_WARN_FRACTION: f64 = 0.05;

pub const PRESETS: [&str; 3] = ["unimodal-skewed", "bimodal", "nine-farm-maryland-like"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmSpec {
    pub name: String,
    #[serde(default = "unit")]
    pub capacity: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Generator description; the JSON form of a spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindSpec {
    pub farms: Vec<FarmSpec>,
    pub correlation: Vec<Vec<f64>>,
    pub components: Vec<ComponentSpec>,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedWind {
    pub history: WindHistory,
    /// Mixture the samples were drawn from, before clipping.
    pub truth: Gmm,
    pub clipped_fraction: f64,
}

#[derive(Serialize)]
struct GroundTruth<'a> {
    spec: &'a WindSpec,
    clipped_fraction: f64,
    mixture: &'a Gmm,
}

impl WindSpec {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("wind spec: {e}")))
    }

    pub fn preset(name: &str, n_samples: usize, seed: u64) -> Result<Self> {
        let (farms, correlation, components) = match name {
            "unimodal-skewed" => (
                3,
                uniform_correlation(3, 0.7),
                vec![
                    (0.5, vec![0.22, 0.25, 0.2], vec![0.07, 0.08, 0.07]),
                    (0.35, vec![0.42, 0.46, 0.4], vec![0.1, 0.1, 0.09]),
                    (0.15, vec![0.7, 0.72, 0.66], vec![0.1, 0.1, 0.1]),
                ],
            ),
            "bimodal" => (
                3,
                uniform_correlation(3, 0.6),
                vec![
                    (0.55, vec![0.24, 0.26, 0.22], vec![0.08, 0.08, 0.07]),
                    (0.45, vec![0.7, 0.68, 0.72], vec![0.09, 0.1, 0.09]),
                ],
            ),
            "nine-farm-maryland-like" => {
                let shift = |base: f64, k: usize| base + 0.02 * ((k % 3) as f64 - 1.0);
                let comp = |w: f64, m: f64, s: f64| {
                    (
                        w,
                        (0..9).map(|k| shift(m, k)).collect(),
                        (0..9).map(|k| s * (1.0 + 0.05 * (k % 2) as f64)).collect(),
                    )
                };
                (
                    9,
                    decaying_correlation(9, 0.85),
                    vec![comp(0.45, 0.2, 0.065), comp(0.35, 0.45, 0.09), comp(0.2, 0.72, 0.09)],
                )
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown wind preset `{name}` (available: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            farms: (1..=farms)
                .map(|k| FarmSpec {
                    name: format!("farm{k}"),
                    capacity: 1.0,
                })
                .collect(),
            correlation: (0..farms)
                .map(|i| (0..farms).map(|j| correlation[(i, j)]).collect())
                .collect(),
            components: components
                .into_iter()
                .map(|(weight, mean, sd)| ComponentSpec { weight, mean, sd })
                .collect(),
            n_samples,
            seed,
        })
    }

    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        let d = self.farms.len();
        DMatrix::from_fn(d, d, |i, j| self.correlation[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.farms.len();
        if d == 0 {
            return Err(Error::Config("wind spec has no farms".into()));
        }
        if let Some(f) = self.farms.iter().find(|f| !(f.capacity > 0.0)) {
            return Err(Error::Config(format!("farm `{}` needs a positive capacity", f.name)));
        }
        if self.correlation.len() != d || self.correlation.iter().any(|r| r.len() != d) {
            return Err(Error::Config(format!("correlation must be {d}×{d}")));
        }
        let r = self.correlation_matrix();
        for i in 0..d {
            if (r[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("correlation diagonal entry {i} is {}", r[(i, i)])));
            }
            for j in 0..i {
                if (r[(i, j)] - r[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Config(format!("correlation is not symmetric at ({i}, {j})")));
                }
            }
        }
        let min = SymmetricEigen::new(r.clone()).eigenvalues.min();
        if min < -1e-10 {
            return Err(Error::Config(format!(
                "correlation matrix is not positive semidefinite (min eigenvalue {min:.3e}):\n{r:.4}"
            )));
        }
        if self.components.is_empty() {
            return Err(Error::Config("wind spec has no mixture components".into()));
        }
        for (k, c) in self.components.iter().enumerate() {
            if c.mean.len() != d || c.sd.len() != d {
                return Err(Error::Config(format!("component {k} must give {d} means and sds")));
            }
            if c.sd.iter().any(|s| !(*s >= 0.0)) || !(c.weight >= 0.0) {
                return Err(Error::Config(format!("component {k} has a negative sd or weight")));
            }
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        Ok(())
    }

    /// Ground-truth mixture over farm outputs (same units as the capacities).
    pub fn mixture(&self) -> Result<Gmm> {
        self.validate()?;
        let r = self.correlation_matrix();
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for c in &self.components {
            let scale = DVector::from_iterator(
                c.sd.len(),
                c.sd.iter().zip(&self.farms).map(|(s, f)| s * f.capacity),
            );
            let dm = DMatrix::from_diagonal(&scale);
            weights.push(c.weight / total);
            means.push(DVector::from_iterator(
                c.mean.len(),
                c.mean.iter().zip(&self.farms).map(|(m, f)| m * f.capacity),
            ));
            covs.push(&dm * &r * &dm);
        }
        Gmm::new(weights, means, covs)
    }
}

fn uniform_correlation(d: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho })
}

fn decaying_correlation(d: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

/// Samples the spec's mixture and clips each farm to `[0, capacity]`.
pub fn generate(spec: &WindSpec) -> Result<GeneratedWind> {
    let truth = spec.mixture()?;
    let mut data = truth.sample(spec.n_samples, spec.seed);
    let mut clipped = 0usize;
    for (k, farm) in spec.farms.iter().enumerate() {
        for v in data.column_mut(k).iter_mut() {
            let c = v.clamp(0.0, farm.capacity);
            if c != *v {
                clipped += 1;
                *v = c;
            }
        }
    }
    let clipped_fraction = clipped as f64 / data.len() as f64;
    if clipped_fraction > CLIP_WARN_FRACTION {
        log::warn!(
            "{:.1}% of generated wind values were clipped to the farm bounds",
            100.0 * clipped_fraction
        );
    }
    Ok(GeneratedWind {
        history: WindHistory {
            names: spec.farms.iter().map(|f| f.name.clone()).collect(),
            data,
        },
        truth,
        clipped_fraction,
    })
}

/// JSON with the spec, the ground-truth mixture and the clipped share.
pub fn ground_truth_json(spec: &WindSpec, generated: &GeneratedWind) -> Result<String> {
    Ok(serde_json::to_string_pretty(&GroundTruth {
        spec,
        clipped_fraction: generated.clipped_fraction,
        mixture: &generated.truth,
    })?)
}
