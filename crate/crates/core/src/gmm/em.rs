//! Expectation–maximization for full-covariance mixtures, seeded by k-means++.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Gmm;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    pub max_iterations: usize,
    /// Stop once the relative log-likelihood change drops below this.
    pub tolerance: f64,
    /// Diagonal loading as a fraction of the average data variance.
    pub regularization: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-6,
            regularization: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub gmm: Gmm,
    /// Log-likelihood of the data before each M-step, plus the final value.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn em_fit(data: &DMatrix<f64>, components: usize, seed: u64) -> Result<EmFit> {
    em_fit_with(data, components, seed, &EmOptions::default())
}

pub fn em_fit_with(
    data: &DMatrix<f64>,
    components: usize,
    seed: u64,
    opts: &EmOptions,
) -> Result<EmFit> {
    let (n, d) = data.shape();
    if components == 0 || d == 0 || n < components * (d + 1) {
        return Err(Error::TooFewSamples {
            n,
            components,
            dim: d,
        });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite training data".into()));
    }
    let rows = row_major(data);
    let (_, cov) = weighted_moments(&rows, d, &vec![1.0; n]);
    let trace = cov.trace();
    if !(trace > 0.0) || rows.chunks(d).all(|x| x == &rows[..d]) {
        return Err(Error::Degenerate("all training rows are identical".into()));
    }
    let reg = opts.regularization * trace / d as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_pp(&rows, d, components, &mut rng);
    let mut resp = vec![0.0; n * components];
    for (i, x) in rows.chunks(d).enumerate() {
        let best = nearest(x, &centers, d).0;
        resp[i * components + best] = 1.0;
    }
    let mut params = m_step(&rows, d, &resp, components, reg)?;

    let mut trace_ll = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut lp = vec![0.0; components];
    let mut buf = vec![0.0; d];
    loop {
        let comps: Vec<ComponentDensity> = params
            .iter()
            .map(|(_, m, c)| ComponentDensity::new(m.clone(), c))
            .collect::<Result<_>>()?;
        let logw: Vec<f64> = params.iter().map(|(w, _, _)| w.ln()).collect();
        let mut ll = 0.0;
        for (i, x) in rows.chunks(d).enumerate() {
            for j in 0..params.len() {
                lp[j] = logw[j] + comps[j].log_density(x, &mut buf);
            }
            let lse = log_sum_exp(&lp[..params.len()]);
            ll += lse;
            for j in 0..params.len() {
                resp[i * components + j] = (lp[j] - lse).exp();
            }
            for j in params.len()..components {
                resp[i * components + j] = 0.0;
            }
        }
        if let Some(&prev) = trace_ll.last() {
            let change: f64 = ll - prev;
            if change.abs() <= opts.tolerance * ll.abs().max(1e-300) {
                trace_ll.push(ll);
                converged = true;
                break;
            }
        }
        trace_ll.push(ll);
        if iterations >= opts.max_iterations {
            break;
        }
        params = m_step(&rows, d, &resp, components, reg)?;
        iterations += 1;
    }

    let gmm = Gmm::from_parts(
        params.iter().map(|(w, _, _)| *w).collect(),
        params.iter().map(|(_, m, _)| m.clone()).collect(),
        params.into_iter().map(|(_, _, c)| Arc::new(super::covariance::Cov::full(c))).collect(),
    )?;
    Ok(EmFit {
        gmm,
        log_likelihood: trace_ll,
        iterations,
        converged,
    })
}

type Params = Vec<(f64, DVector<f64>, DMatrix<f64>)>;

fn m_step(
    rows: &[f64],
    d: usize,
    resp: &[f64],
    components: usize,
    reg: f64,
) -> Result<Params> {
    let n = rows.len() / d;
    let mut out = Vec::with_capacity(components);
    for j in 0..components {
        let w: Vec<f64> = (0..n).map(|i| resp[i * components + j]).collect();
        let nk: f64 = w.iter().sum();
        // A component that lost all support is dropped.
        if nk <= 1e-10 * n as f64 {
            continue;
        }
        let (m, mut c) = weighted_moments(rows, d, &w);
        for k in 0..d {
            c[(k, k)] += reg;
        }
        out.push((nk / n as f64, m, c));
    }
    if out.is_empty() {
        return Err(Error::Degenerate("every mixture component collapsed".into()));
    }
    let total: f64 = out.iter().map(|(w, _, _)| w).sum();
    for p in &mut out {
        p.0 /= total;
    }
    Ok(out)
}

fn weighted_moments(rows: &[f64], d: usize, w: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let total: f64 = w.iter().sum();
    let mut mean = DVector::zeros(d);
    for (x, wi) in rows.chunks(d).zip(w) {
        for k in 0..d {
            mean[k] += wi * x[k];
        }
    }
    mean /= total;
    let mut cov = DMatrix::zeros(d, d);
    let mut diff = vec![0.0; d];
    for (x, wi) in rows.chunks(d).zip(w) {
        if *wi == 0.0 {
            continue;
        }
        for k in 0..d {
            diff[k] = x[k] - mean[k];
        }
        for a in 0..d {
            let da = wi * diff[a];
            for b in 0..=a {
                cov[(a, b)] += da * diff[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[(a, b)] / total;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    (mean, cov)
}

fn kmeans_pp<R: Rng>(rows: &[f64], d: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = rows.len() / d;
    let mut centers = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(&rows[first * d..(first + 1) * d]);
    let mut dist: Vec<f64> = rows.chunks(d).map(|x| sq_dist(x, &centers[0..d])).collect();
    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, v) in dist.iter().enumerate() {
                if u < *v {
                    idx = i;
                    break;
                }
                u -= v;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = &rows[pick * d..(pick + 1) * d];
        centers.extend_from_slice(c);
        for (x, dv) in rows.chunks(d).zip(dist.iter_mut()) {
            *dv = dv.min(sq_dist(x, c));
        }
    }
    centers
}

fn nearest(x: &[f64], centers: &[f64], d: usize) -> (usize, f64) {
    centers
        .chunks(d)
        .map(|c| sq_dist(x, c))
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(super) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = m.shape();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        for k in 0..d {
            out.push(m[(i, k)]);
        }
    }
    out
}

pub(super) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Gaussian log-density evaluator backed by a Cholesky factor.
pub(super) struct ComponentDensity {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl ComponentDensity {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))?
            .l();
        let log_det: f64 = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            mean,
            chol,
            log_norm: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }

    pub fn for_gmm(g: &Gmm) -> Result<Vec<Self>> {
        (0..g.n_components())
            .map(|j| Self::new(g.means[j].clone(), g.covariance(j)))
            .collect()
    }

    pub fn log_density(&self, x: &[f64], buf: &mut [f64]) -> f64 {
        let d = buf.len();
        let mut q = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for k in 0..i {
                s -= self.chol[(i, k)] * buf[k];
            }
            let v = s / self.chol[(i, i)];
            buf[i] = v;
            q += v * v;
        }
        self.log_norm - 0.5 * q
    }
}
