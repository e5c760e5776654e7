//! Gaussian mixtures: construction, sampling, affine images, conditioning on
//! a linear functional, moments, marginal CDFs, merging and EM fitting.
//!
//! Covariances are reference-counted so that components produced by the same
//! operation can share one matrix (conditioning on different values of the
//! same functional leaves the covariance unchanged). Operations preserve and
//! exploit that sharing. Expanding affine maps keep covariances in factored
//! form `L Lᵀ`, so high-dimensional images of low-dimensional mixtures stay cheap.

mod cdf;
mod covariance;
mod em;
mod serial;

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{enforce_psd, psd_factor};
use covariance::Cov;
use crate::{Error, Result};

pub use cdf::{normal_cdf, MarginalMixture};
pub use em::{em_fit, em_fit_with, EmFit, EmOptions};

const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<Arc<Cov>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn key<T>(m: &Arc<T>) -> usize {
    Arc::as_ptr(m) as usize
}

impl Gmm {
    /// Validates and builds a mixture; weights are renormalized once checked.
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::from_shared(weights, means, covariances.into_iter().map(Arc::new).collect())
    }

    /// Like [`Gmm::new`] but with covariances that may be shared between components.
    pub fn from_shared(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<Arc<DMatrix<f64>>>,
    ) -> Result<Self> {
        let mut cache: HashMap<usize, Arc<Cov>> = HashMap::new();
        let mut checked = Vec::with_capacity(covariances.len());
        for c in covariances {
            let fixed = match cache.get(&key(&c)) {
                Some(f) => f.clone(),
                None => {
                    let f = Arc::new(Cov::full(enforce_psd((*c).clone())?));
                    cache.insert(key(&c), f.clone());
                    f
                }
            };
            checked.push(fixed);
        }
        Self::from_parts(weights, means, checked)
    }

    /// Structural validation only; covariances are trusted to be symmetric PSD.
    pub(crate) fn from_parts(
        mut weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<Arc<Cov>>,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidMixture("no components".into()));
        }
        if weights.len() != means.len() || weights.len() != covariances.len() {
            return Err(Error::InvalidMixture(format!(
                "{} weights, {} means, {} covariances",
                weights.len(),
                means.len(),
                covariances.len()
            )));
        }
        let d = means[0].len();
        for (m, c) in means.iter().zip(&covariances) {
            if m.len() != d || c.dim() != d {
                return Err(Error::InvalidMixture("component dimensions differ".into()));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMixture("non-finite mean".into()));
            }
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMixture("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidMixture(format!("weights sum to {total}")));
        }
        if total != 1.0 {
            for w in &mut weights {
                *w /= total;
            }
        }
        Ok(Self {
            weights,
            means,
            covariances,
        })
    }

    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![cov])
    }

    /// A single zero-covariance component.
    pub fn point_mass(mean: DVector<f64>) -> Self {
        let d = mean.len();
        Self {
            weights: vec![1.0],
            means: vec![mean],
            covariances: vec![Arc::new(Cov::full(DMatrix::zeros(d, d)))],
        }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    /// Covariance of component `j` (formed from its factor on first use).
    pub fn covariance(&self, j: usize) -> &DMatrix<f64> {
        self.covariances[j].matrix()
    }

    /// Factor `L` with `covariance(j) = L Lᵀ` when component `j` is stored factored.
    pub fn covariance_factor(&self, j: usize) -> Option<&DMatrix<f64>> {
        self.covariances[j].factor()
    }

    pub fn covariances(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.covariances.iter().map(|c| c.matrix())
    }

    /// Distinct covariance matrices and, per component, which one it uses.
    pub fn distinct_covariances(&self) -> (Vec<&DMatrix<f64>>, Vec<usize>) {
        let (distinct, index) = self.distinct_storage();
        (distinct.into_iter().map(|c| c.matrix()).collect(), index)
    }

    fn distinct_storage(&self) -> (Vec<&Cov>, Vec<usize>) {
        let mut seen: HashMap<usize, usize> = HashMap::new();
        let mut distinct = Vec::new();
        let index = self
            .covariances
            .iter()
            .map(|c| {
                *seen.entry(key(c)).or_insert_with(|| {
                    distinct.push(c.as_ref());
                    distinct.len() - 1
                })
            })
            .collect();
        (distinct, index)
    }

    /// Draws `n` rows deterministically from `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let sampler = self.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = DMatrix::zeros(n, self.dim());
        for r in 0..n {
            let x = sampler.draw(&mut rng);
            out.row_mut(r).copy_from(&x.transpose());
        }
        out
    }

    /// A reusable sampler holding one covariance factor per distinct covariance.
    pub fn sampler(&self) -> Sampler<'_> {
        let mut cache: HashMap<usize, Arc<DMatrix<f64>>> = HashMap::new();
        let factors = self
            .covariances
            .iter()
            .map(|c| {
                cache
                    .entry(key(c))
                    .or_insert_with(|| Arc::new(c.any_factor()))
                    .clone()
            })
            .collect();
        let mut acc = 0.0;
        let cumulative = self
            .weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Sampler {
            gmm: self,
            factors,
            cumulative,
        }
    }

    /// Components `N(A mu + b, A Sigma Aᵀ)`; shared covariances stay shared.
    ///
    /// When `A` has more rows than columns the result is stored factored.
    pub fn affine_map(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Gmm> {
        if a.ncols() != self.dim() || b.len() != a.nrows() {
            return Err(Error::Shape(format!(
                "affine map {}×{} with offset {} applied to dimension {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                self.dim()
            )));
        }
        let expanding = a.nrows() > a.ncols();
        let mut cache: HashMap<usize, Arc<Cov>> = HashMap::new();
        let mut covs = Vec::with_capacity(self.n_components());
        for c in &self.covariances {
            let mapped = match cache.get(&key(c)) {
                Some(m) => m.clone(),
                None => {
                    let m = Arc::new(match c.factor() {
                        Some(l) => Cov::factored(a * l),
                        None if expanding => Cov::factored(a * psd_factor(c.matrix())),
                        None => Cov::full(enforce_psd(a * c.matrix() * a.transpose())?),
                    });
                    cache.insert(key(c), m.clone());
                    m
                }
            };
            covs.push(mapped);
        }
        let means = self.means.iter().map(|m| a * m + b).collect();
        Ok(Gmm {
            weights: self.weights.clone(),
            means,
            covariances: covs,
        })
    }

    /// Joint mixture of `[x; epsᵀ x]`.
    pub fn augment(&self, eps: &DVector<f64>) -> Result<Gmm> {
        let d = self.dim();
        if eps.len() != d {
            return Err(Error::Shape(format!("functional of length {} on dimension {d}", eps.len())));
        }
        let mut phi = DMatrix::zeros(d + 1, d);
        phi.view_mut((0, 0), (d, d)).fill_with_identity();
        phi.row_mut(d).copy_from(&eps.transpose());
        self.affine_map(&phi, &DVector::zeros(d + 1))
    }

    /// Mixture of `x` given `epsᵀ x = z`.
    pub fn condition_on_sum(&self, eps: &DVector<f64>, z: f64) -> Result<Gmm> {
        SumConditioner::new(self, eps)?.condition(z)
    }

    pub fn moments(&self) -> Moments {
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        for (w, m) in self.weights.iter().zip(&self.means) {
            mean.axpy(*w, m, 1.0);
        }
        let mut cov = DMatrix::zeros(d, d);
        // Pool weights per distinct covariance, in order of first use.
        let (distinct, index) = self.distinct_covariances();
        let mut pooled = vec![0.0; distinct.len()];
        for (w, &i) in self.weights.iter().zip(&index) {
            pooled[i] += w;
        }
        for (w, c) in pooled.iter().zip(distinct) {
            cov += c * *w;
        }
        for (w, m) in self.weights.iter().zip(&self.means) {
            let dm = m - &mean;
            cov.ger(*w, &dm, &dm, 1.0);
        }
        crate::linalg::symmetrize(&mut cov);
        Moments { mean, cov }
    }

    /// Per-coordinate means and variances without forming the full covariance.
    pub fn marginal_moments(&self) -> (DVector<f64>, DVector<f64>) {
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        for (w, m) in self.weights.iter().zip(&self.means) {
            mean.axpy(*w, m, 1.0);
        }
        let mut var = DVector::zeros(d);
        for (w, (m, c)) in self.weights.iter().zip(self.means.iter().zip(&self.covariances)) {
            for k in 0..d {
                let dm = m[k] - mean[k];
                var[k] += w * (c.diag(k) + dm * dm);
            }
        }
        (mean, var)
    }

    pub fn marginal(&self, k: usize) -> MarginalMixture {
        MarginalMixture::new(
            self.weights.clone(),
            self.means.iter().map(|m| m[k]).collect(),
            self.covariances.iter().map(|c| c.diag(k).max(0.0).sqrt()).collect(),
        )
    }

    pub fn marginal_cdf(&self, k: usize, t: f64) -> f64 {
        self.marginal(k).cdf(t)
    }

    /// Weighted union of mixtures; part weights must sum to one.
    pub fn merge(parts: &[(f64, &Gmm)]) -> Result<Gmm> {
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if parts.is_empty() || (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidMixture(format!("part weights sum to {total}")));
        }
        let d = parts[0].1.dim();
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for (w, g) in parts {
            if g.dim() != d {
                return Err(Error::Shape("merged mixtures differ in dimension".into()));
            }
            if *w == 0.0 {
                continue;
            }
            weights.extend(g.weights.iter().map(|v| v * w));
            means.extend(g.means.iter().cloned());
            covs.extend(g.covariances.iter().cloned());
        }
        Gmm::from_parts(weights, means, covs)
    }

    /// Total log-likelihood of the rows of `data`.
    pub fn log_likelihood(&self, data: &DMatrix<f64>) -> Result<f64> {
        let comps = em::ComponentDensity::for_gmm(self)?;
        let rows = em::row_major(data);
        let d = data.ncols();
        let mut buf = vec![0.0; d];
        let mut lp = vec![0.0; comps.len()];
        let mut total = 0.0;
        for x in rows.chunks(d) {
            for (j, c) in comps.iter().enumerate() {
                lp[j] = self.weights[j].ln() + c.log_density(x, &mut buf);
            }
            total += em::log_sum_exp(&lp);
        }
        Ok(total)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub struct Sampler<'a> {
    gmm: &'a Gmm,
    factors: Vec<Arc<DMatrix<f64>>>,
    cumulative: Vec<f64>,
}

impl Sampler<'_> {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let u: f64 = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        let j = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1);
        let r = self.factors[j].ncols();
        let z = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.gmm.means[j] + self.factors[j].as_ref() * z
    }
}

struct ConditionedComponent {
    log_weight: f64,
    mean_sum: f64,
    var_sum: f64,
    gain: DVector<f64>,
    degenerate: bool,
}

/// Precomputed conditioning of one mixture on `epsᵀ x`, reusable for many values.
pub struct SumConditioner {
    base: Gmm,
    comps: Vec<ConditionedComponent>,
    /// Conditional covariance per component (shared like the source covariances).
    theta: Vec<Arc<Cov>>,
}

impl SumConditioner {
    pub fn new(g: &Gmm, eps: &DVector<f64>) -> Result<Self> {
        let d = g.dim();
        if eps.len() != d {
            return Err(Error::Shape(format!("functional of length {} on dimension {d}", eps.len())));
        }
        let mut cache: HashMap<usize, (DVector<f64>, f64, Arc<Cov>, bool)> = HashMap::new();
        let mut comps = Vec::with_capacity(g.n_components());
        let mut theta = Vec::with_capacity(g.n_components());
        for j in 0..g.n_components() {
            let c = &g.covariances[j];
            let (s, v, th, degenerate) = match cache.get(&key(c)) {
                Some(e) => e.clone(),
                None => {
                    let s = c.mul_vec(eps);
                    let v = eps.dot(&s);
                    let scale = c.max_diag() * eps.norm_squared();
                    let degenerate = !(v > 1e-12 * scale) || v <= 0.0;
                    let th = if degenerate {
                        c.clone()
                    } else if let Some(l) = c.factor() {
                        // L (I - w wᵀ / wᵀw) is a factor of the conditional covariance.
                        let w = l.transpose() * eps;
                        let mut f = l.clone();
                        f.ger(-1.0 / v, &s, &w, 1.0);
                        Arc::new(Cov::factored(f))
                    } else {
                        let mut t = c.matrix().clone();
                        t.ger(-1.0 / v, &s, &s, 1.0);
                        Arc::new(Cov::full(enforce_psd(t)?))
                    };
                    let e = (s, v, th, degenerate);
                    cache.insert(key(c), e.clone());
                    e
                }
            };
            comps.push(ConditionedComponent {
                log_weight: g.weights[j].ln(),
                mean_sum: eps.dot(&g.means[j]),
                var_sum: v,
                gain: if degenerate { s } else { s / v },
                degenerate,
            });
            theta.push(th);
        }
        Ok(Self {
            base: g.clone(),
            comps,
            theta,
        })
    }

    pub fn condition(&self, z: f64) -> Result<Gmm> {
        // Components with no spread along the functional carry infinite density at their own value.
        let pinned: Vec<usize> = self
            .comps
            .iter()
            .enumerate()
            .filter(|(_, c)| c.degenerate && (z - c.mean_sum).abs() <= 1e-9 * (1.0 + z.abs()))
            .map(|(j, _)| j)
            .collect();
        if !pinned.is_empty() {
            let total: f64 = pinned.iter().map(|&j| self.base.weights[j]).sum();
            if total > 0.0 {
                return Gmm::from_parts(
                    pinned.iter().map(|&j| self.base.weights[j] / total).collect(),
                    pinned.iter().map(|&j| self.base.means[j].clone()).collect(),
                    pinned.iter().map(|&j| self.base.covariances[j].clone()).collect(),
                );
            }
        }
        let active: Vec<usize> = (0..self.comps.len())
            .filter(|&j| !self.comps[j].degenerate && self.comps[j].log_weight.is_finite())
            .collect();
        if active.is_empty() {
            return Err(Error::Degenerate(format!(
                "no mixture component has spread along the conditioning functional at {z}"
            )));
        }
        let logs: Vec<f64> = active
            .iter()
            .map(|&j| {
                let c = &self.comps[j];
                let r = z - c.mean_sum;
                c.log_weight - 0.5 * (r * r / c.var_sum + c.var_sum.ln() + (2.0 * std::f64::consts::PI).ln())
            })
            .collect();
        let lse = em::log_sum_exp(&logs);
        let mut weights: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let means = active
            .iter()
            .map(|&j| {
                let c = &self.comps[j];
                &self.base.means[j] + &c.gain * (z - c.mean_sum)
            })
            .collect();
        let covs = active.iter().map(|&j| self.theta[j].clone()).collect();
        Gmm::from_parts(weights, means, covs)
    }
}

#[cfg(test)]
mod tests;
