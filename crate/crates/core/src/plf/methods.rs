//! Mapping the input mixture through the segments.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::segments::SegmentStats;
use crate::control::{PiecewiseLinearModel, SEGMENTS};
use crate::gmm::{em_fit, Gmm, SumConditioner};
use crate::{Error, Result};

/// Input-space mixture per segment together with the segment probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMixtures {
    pub probs: [f64; SEGMENTS],
    /// `None` for segments without samples (their probability is zero).
    pub parts: Vec<Option<Gmm>>,
}

impl SegmentMixtures {
    /// Maps each part through its segment and merges with the segment probabilities.
    pub fn push_through(&self, model: &PiecewiseLinearModel) -> Result<Gmm> {
        let mapped: Vec<(f64, Gmm)> = self
            .parts
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|g| (i, g)))
            .map(|(i, g)| {
                let s = &model.segments[i];
                Ok((self.probs[i], g.affine_map(&s.a, &s.b)?))
            })
            .collect::<Result<_>>()?;
        let refs: Vec<(f64, &Gmm)> = mapped.iter().map(|(w, g)| (*w, g)).collect();
        Gmm::merge(&refs)
    }

    pub fn n_components(&self) -> usize {
        self.parts.iter().flatten().map(Gmm::n_components).sum()
    }
}

/// One conditional mixture per sample, each weighted `1 / n_i` inside its segment.
pub fn direct_mixtures(x_gmm: &Gmm, model: &PiecewiseLinearModel, stats: &SegmentStats) -> Result<SegmentMixtures> {
    let conditioner = SumConditioner::new(x_gmm, &model.epsilon)?;
    let mut parts = Vec::with_capacity(SEGMENTS);
    for i in 0..SEGMENTS {
        let rows = stats.rows_in(i);
        if rows.is_empty() {
            parts.push(None);
            continue;
        }
        let conds: Vec<Gmm> = rows
            .iter()
            .map(|&r| conditioner.condition(stats.z[r]))
            .collect::<Result<_>>()?;
        let w = 1.0 / rows.len() as f64;
        let refs: Vec<(f64, &Gmm)> = conds.iter().map(|g| (w, g)).collect();
        parts.push(Some(Gmm::merge(&refs)?));
    }
    Ok(SegmentMixtures {
        probs: stats.probs,
        parts,
    })
}

/// Output mixture by conditioning on every sampled imbalance.
pub fn direct_method(x_gmm: &Gmm, model: &PiecewiseLinearModel, stats: &SegmentStats) -> Result<Gmm> {
    direct_mixtures(x_gmm, model, stats)?.push_through(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    Em,
    /// Too few samples for EM: a single Gaussian with the sample moments.
    Moments,
    /// One sample or identical samples.
    Point,
}

/// How one segment's mixture was obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentFit {
    pub segment: usize,
    pub samples: usize,
    pub components: usize,
    pub kind: FitKind,
    pub iterations: usize,
    pub converged: bool,
}

/// Refits a mixture to each segment's samples, reducing the component count
/// when a segment is too small for `j` components.
pub fn indirect_mixtures(stats: &SegmentStats, j: usize, seed: u64) -> Result<(SegmentMixtures, Vec<SegmentFit>)> {
    if j == 0 {
        return Err(Error::Config("the number of mixture components must be positive".into()));
    }
    let d = stats.samples.ncols();
    let fits: Vec<Option<(Gmm, SegmentFit)>> = (0..SEGMENTS)
        .into_par_iter()
        .map(|i| -> Result<Option<(Gmm, SegmentFit)>> {
            let rows = stats.rows_in(i);
            if rows.is_empty() {
                return Ok(None);
            }
            let data = DMatrix::from_fn(rows.len(), d, |r, c| stats.samples[(rows[r], c)]);
            let n = rows.len();
            let jj = j.min(n / (d + 1));
            if jj < j {
                log::info!("segment {}: {n} samples, fitting {jj} instead of {j} components", i + 1);
            }
            let mean = data.row_mean().transpose();
            let point = |mean: DVector<f64>| {
                Some((
                    Gmm::point_mass(mean),
                    SegmentFit { segment: i, samples: n, components: 1, kind: FitKind::Point, iterations: 0, converged: true },
                ))
            };
            if jj == 0 {
                if n == 1 {
                    return Ok(point(mean));
                }
                let centered = &data - DVector::from_element(n, 1.0) * mean.transpose();
                let cov = centered.transpose() * &centered / n as f64;
                let g = Gmm::gaussian(mean, cov)?;
                return Ok(Some((
                    g,
                    SegmentFit { segment: i, samples: n, components: 1, kind: FitKind::Moments, iterations: 0, converged: true },
                )));
            }
            let segment_seed = seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            match em_fit(&data, jj, segment_seed) {
                Ok(fit) => {
                    let info = SegmentFit {
                        segment: i,
                        samples: n,
                        components: fit.gmm.n_components(),
                        kind: FitKind::Em,
                        iterations: fit.iterations,
                        converged: fit.converged,
                    };
                    Ok(Some((fit.gmm, info)))
                }
                Err(Error::Degenerate(_)) => Ok(point(mean)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut parts = Vec::with_capacity(SEGMENTS);
    let mut info = Vec::new();
    for f in fits {
        match f {
            Some((g, s)) => {
                parts.push(Some(g));
                info.push(s);
            }
            None => parts.push(None),
        }
    }
    Ok((
        SegmentMixtures {
            probs: stats.probs,
            parts,
        },
        info,
    ))
}

/// Output mixture from per-segment refits of the samples.
pub fn indirect_method(model: &PiecewiseLinearModel, stats: &SegmentStats, j: usize, seed: u64) -> Result<Gmm> {
    indirect_mixtures(stats, j, seed)?.0.push_through(model)
}

#[cfg(test)]
mod tests {
    use super::super::metrics::{metrics_cdf_rmse, EmpiricalMarginals};
    use super::super::segments::segment_stats;
    use super::*;
    use crate::control::Segment;
    use crate::netcase::ExceedPolicy;

    fn model(same: bool) -> PiecewiseLinearModel {
        let a0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0]);
        let seg = |k: f64, lo: f64, hi: f64| Segment {
            a: if same { a0.clone() } else { &a0 * k },
            b: DVector::from_column_slice(&[0.1, if same { 0.0 } else { k }]),
            bounds: (lo, hi),
        };
        PiecewiseLinearModel {
            segments: vec![seg(1.0, 0.0, 0.4), seg(1.5, 0.4, 1.0), seg(2.0, 1.0, 50.0)],
            epsilon: DVector::from_element(2, 1.0),
            c_offset: -0.5,
            exceed_policy: ExceedPolicy::Error,
        }
    }

    fn x_gmm() -> Gmm {
        Gmm::new(
            vec![0.6, 0.4],
            vec![DVector::from_column_slice(&[0.2, 0.3]), DVector::from_column_slice(&[0.9, 0.6])],
            vec![
                DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.05]),
                DMatrix::from_row_slice(2, 2, &[0.09, -0.02, -0.02, 0.03]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn smallest_direct_instance() {
        let m = PiecewiseLinearModel {
            segments: vec![model(true).segments[0].clone(); 3]
                .into_iter()
                .enumerate()
                .map(|(i, mut s)| {
                    s.bounds = [(0.0, 10.0), (10.0, 20.0), (20.0, 30.0)][i];
                    s
                })
                .collect(),
            ..model(true)
        };
        let g = Gmm::gaussian(
            DVector::from_column_slice(&[0.2, 0.3]),
            DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.05]),
        )
        .unwrap();
        let stats = segment_stats(&g, &m, 1, 4).unwrap();
        let y = direct_method(&g, &m, &stats).unwrap();
        assert_eq!(y.n_components(), 1);
        let want = g
            .condition_on_sum(&m.epsilon, stats.z[0])
            .unwrap()
            .affine_map(&m.segments[0].a, &m.segments[0].b)
            .unwrap();
        assert!((&y.means()[0] - &want.means()[0]).abs().max() < 1e-12);
        assert!((y.covariance(0) - want.covariance(0)).abs().max() < 1e-12);
    }

    #[test]
    fn direct_weights_and_counts() {
        let m = model(false);
        let g = x_gmm();
        let stats = segment_stats(&g, &m, 300, 11).unwrap();
        let mix = direct_mixtures(&g, &m, &stats).unwrap();
        assert_eq!(mix.n_components(), 300 * 2);
        let y = mix.push_through(&m).unwrap();
        assert!((y.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Segment weights equal the sample frequencies.
        for (i, part) in mix.parts.iter().enumerate() {
            let total: f64 = part.as_ref().map_or(0.0, |p| p.weights().iter().sum::<f64>()) * mix.probs[i];
            assert!((total - stats.probs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_segments_reduce_to_the_linear_image() {
        let m = model(true);
        let g = x_gmm();
        let stats = segment_stats(&g, &m, 200, 2).unwrap();
        let y = direct_method(&g, &m, &stats).unwrap();
        let exact = g.affine_map(&m.segments[0].a, &m.segments[0].b).unwrap();
        let bench = EmpiricalMarginals::from_samples(
            vec!["a".into(), "b".into()],
            &(exact.sample(50_000, 3)),
        );
        let direct = metrics_cdf_rmse(&y, &bench, 0..2).average.unwrap();
        assert!(direct < 1e-2, "rmse {direct}");
    }

    #[test]
    fn indirect_matches_push_through_samples() {
        let m = model(false);
        let g = x_gmm();
        let stats = segment_stats(&g, &m, 10_000, 21).unwrap();
        let (mix, info) = indirect_mixtures(&stats, 3, 5).unwrap();
        assert!(mix.n_components() <= 3 * 3);
        assert!(info.iter().all(|f| f.kind == FitKind::Em));
        let y = mix.push_through(&m).unwrap();
        let xs = g.sample(50_000, 77);
        let rows: Vec<DVector<f64>> = (0..xs.nrows())
            .filter_map(|r| m.map(&xs.row(r).transpose()))
            .collect();
        let ys = DMatrix::from_fn(rows.len(), 2, |r, c| rows[r][c]);
        let bench = EmpiricalMarginals::from_samples(vec!["a".into(), "b".into()], &ys);
        let rmse = metrics_cdf_rmse(&y, &bench, 0..2).average.unwrap();
        assert!(rmse < 1e-2, "rmse {rmse}");
    }

    #[test]
    fn small_segments_fall_back() {
        let m = model(false);
        let g = Gmm::gaussian(
            DVector::from_column_slice(&[0.1, 0.1]),
            DMatrix::from_row_slice(2, 2, &[0.001, 0.0, 0.0, 0.001]),
        )
        .unwrap();
        let stats = segment_stats(&g, &m, 40, 1).unwrap();
        let (mix, info) = indirect_mixtures(&stats, 5, 1).unwrap();
        assert!(mix.parts[2].is_none());
        let f = &info[0];
        assert_eq!(f.samples, stats.counts[0]);
        assert!(f.components <= 5 && f.components * 3 <= f.samples.max(3));
    }
}
