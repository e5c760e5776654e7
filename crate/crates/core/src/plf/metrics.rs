//! Accuracy of analytic marginals against empirical samples.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::gmm::{Gmm, MarginalMixture};

/// Probability levels on which CDFs are compared.
pub const CDF_LEVELS: usize = 1000;
/// Coordinates whose benchmark variance is below this are left out.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Sorted samples and moments per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMarginals {
    pub labels: Vec<String>,
    #[serde(skip)]
    pub sorted: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl EmpiricalMarginals {
    /// From one sample per row.
    pub fn from_samples(labels: Vec<String>, data: &DMatrix<f64>) -> Self {
        let (n, d) = data.shape();
        let mut sorted = Vec::with_capacity(d);
        let mut mean = Vec::with_capacity(d);
        let mut variance = Vec::with_capacity(d);
        for k in 0..d {
            let mut col: Vec<f64> = data.column(k).iter().copied().collect();
            col.sort_by(f64::total_cmp);
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
            sorted.push(col);
            mean.push(m);
            variance.push(v);
        }
        Self {
            labels,
            sorted,
            mean,
            variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.sorted.len()
    }

    pub fn n(&self) -> usize {
        self.sorted.first().map_or(0, Vec::len)
    }

    pub fn cdf(&self, k: usize, t: f64) -> f64 {
        let s = &self.sorted[k];
        s.partition_point(|v| *v <= t) as f64 / s.len() as f64
    }
}

/// RMSE between an analytic CDF and the empirical CDF of `sorted`, over the
/// empirical quantiles at levels `(m - 0.5) / CDF_LEVELS`.
pub fn cdf_rmse(marginal: &MarginalMixture, sorted: &[f64]) -> f64 {
    let n = sorted.len();
    let mut acc = 0.0;
    for m in 0..CDF_LEVELS {
        let p = (m as f64 + 0.5) / CDF_LEVELS as f64;
        let t = sorted[((p * n as f64) as usize).min(n - 1)];
        let emp = sorted.partition_point(|v| *v <= t) as f64 / n as f64;
        let diff = marginal.cdf(t) - emp;
        acc += diff * diff;
    }
    (acc / CDF_LEVELS as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfRmse {
    /// Per coordinate in the requested set; `None` when below the variance floor.
    pub per_state: Vec<Option<f64>>,
    pub average: Option<f64>,
    pub included: usize,
}

/// CDF RMSE of `gmm`'s marginals against the benchmark for coordinates `indices`.
pub fn metrics_cdf_rmse(
    gmm: &Gmm,
    bench: &EmpiricalMarginals,
    indices: impl IntoIterator<Item = usize>,
) -> CdfRmse {
    let per_state: Vec<Option<f64>> = indices
        .into_iter()
        .map(|k| {
            (bench.variance[k] >= VARIANCE_FLOOR).then(|| cdf_rmse(&gmm.marginal(k), &bench.sorted[k]))
        })
        .collect();
    summarize(per_state)
}

fn summarize(per_state: Vec<Option<f64>>) -> CdfRmse {
    let vals: Vec<f64> = per_state.iter().flatten().copied().collect();
    CdfRmse {
        average: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
        included: vals.len(),
        per_state,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentErrors {
    /// Average `|m - m_bench| / |m_bench|`.
    pub mean: Option<f64>,
    /// Average `|v - v_bench| / v_bench`.
    pub variance: Option<f64>,
    pub included: usize,
}

/// Average relative errors of means and variances over `indices`,
/// skipping coordinates below the variance floor.
pub fn metrics_moments(
    mean: &[f64],
    variance: &[f64],
    bench: &EmpiricalMarginals,
    indices: impl IntoIterator<Item = usize>,
) -> MomentErrors {
    let (mut em, mut ev, mut nm, mut nv) = (0.0, 0.0, 0, 0);
    for k in indices {
        if bench.variance[k] < VARIANCE_FLOOR {
            continue;
        }
        if bench.mean[k] != 0.0 {
            em += (mean[k] - bench.mean[k]).abs() / bench.mean[k].abs();
            nm += 1;
        }
        ev += (variance[k] - bench.variance[k]).abs() / bench.variance[k];
        nv += 1;
    }
    MomentErrors {
        mean: (nm > 0).then(|| em / nm as f64),
        variance: (nv > 0).then(|| ev / nv as f64),
        included: nv,
    }
}

/// Accuracy split into angles, voltage magnitudes and branch flows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub angle_cdf: CdfRmse,
    pub voltage_cdf: CdfRmse,
    pub flow_cdf: CdfRmse,
    pub angle_moments: MomentErrors,
    pub voltage_moments: MomentErrors,
    pub flow_moments: MomentErrors,
}

impl AccuracyReport {
    /// `n_angles` leading state coordinates are angles, the rest magnitudes.
    pub fn compute(
        states: &Gmm,
        flows: &Gmm,
        n_angles: usize,
        bench_states: &EmpiricalMarginals,
        bench_flows: &EmpiricalMarginals,
    ) -> Self {
        let ds = bench_states.dim();
        let df = bench_flows.dim();
        let (sm, sv) = states.marginal_moments();
        let (fm, fv) = flows.marginal_moments();
        Self {
            angle_cdf: metrics_cdf_rmse(states, bench_states, 0..n_angles),
            voltage_cdf: metrics_cdf_rmse(states, bench_states, n_angles..ds),
            flow_cdf: metrics_cdf_rmse(flows, bench_flows, 0..df),
            angle_moments: metrics_moments(sm.as_slice(), sv.as_slice(), bench_states, 0..n_angles),
            voltage_moments: metrics_moments(sm.as_slice(), sv.as_slice(), bench_states, n_angles..ds),
            flow_moments: metrics_moments(fm.as_slice(), fv.as_slice(), bench_flows, 0..df),
        }
    }
}
