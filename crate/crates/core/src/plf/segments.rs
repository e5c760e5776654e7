use nalgebra::{DMatrix, DVector};

use crate::control::{PiecewiseLinearModel, SegmentClass, SEGMENTS};
use crate::gmm::Gmm;
use crate::netcase::ExceedPolicy;
use crate::{Error, Result};

/// Largest tolerated share of samples beyond the regulation capacity when
/// such samples are dropped.
pub const EXCEEDED_MASS_LIMIT: f64 = 1e-4;

/// Samples of the input mixture and how they split over the segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStats {
    /// One sample per row.
    pub samples: DMatrix<f64>,
    /// `epsilonᵀ x` per sample.
    pub z: Vec<f64>,
    /// Segment per sample; `None` for dropped beyond-capacity samples.
    pub labels: Vec<Option<usize>>,
    pub counts: [usize; SEGMENTS],
    pub exceeded: usize,
    /// `counts / retained samples`.
    pub probs: [f64; SEGMENTS],
}

impl SegmentStats {
    pub fn retained(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn rows_in(&self, segment: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&r| self.labels[r] == Some(segment))
            .collect()
    }

    pub fn sample(&self, row: usize) -> DVector<f64> {
        self.samples.row(row).transpose()
    }
}

/// Draws `l` samples and counts them per segment.
///
/// Beyond-capacity samples are relabelled to the last segment under the
/// clamp policy; otherwise they are dropped and must stay under
/// [`EXCEEDED_MASS_LIMIT`].
pub fn segment_stats(x_gmm: &Gmm, model: &PiecewiseLinearModel, l: usize, seed: u64) -> Result<SegmentStats> {
    if l == 0 {
        return Err(Error::Config("the number of samples must be positive".into()));
    }
    if x_gmm.dim() != model.input_dim() {
        return Err(Error::Shape(format!(
            "input mixture has dimension {}, the model expects {}",
            x_gmm.dim(),
            model.input_dim()
        )));
    }
    let samples = x_gmm.sample(l, seed);
    let z: Vec<f64> = (0..l)
        .map(|r| samples.row(r).iter().zip(model.epsilon.iter()).map(|(a, b)| a * b).sum())
        .collect();
    let mut counts = [0; SEGMENTS];
    let mut exceeded = 0;
    let mut worst = 0.0_f64;
    let labels: Vec<Option<usize>> = z
        .iter()
        .map(|&zi| {
            if model.classify_z(zi) == SegmentClass::Exceeded {
                exceeded += 1;
                worst = worst.max((zi + model.c_offset).abs());
            }
            let label = model.segment_for_z(zi);
            if let Some(i) = label {
                counts[i] += 1;
            }
            label
        })
        .collect();
    if model.exceed_policy == ExceedPolicy::Error && exceeded as f64 > EXCEEDED_MASS_LIMIT * l as f64 {
        return Err(Error::CapacityExceeded {
            p_delta: worst,
            p_delta_max: model.thresholds()[3],
        });
    }
    let retained: usize = counts.iter().sum();
    if retained == 0 {
        return Err(Error::Degenerate("no sample fell inside the regulation capacity".into()));
    }
    let mut probs = [0.0; SEGMENTS];
    for i in 0..SEGMENTS {
        probs[i] = counts[i] as f64 / retained as f64;
    }
    warn_empty_segments(x_gmm, model, &counts);
    Ok(SegmentStats {
        samples,
        z,
        labels,
        counts,
        exceeded,
        probs,
    })
}

fn warn_empty_segments(x_gmm: &Gmm, model: &PiecewiseLinearModel, counts: &[usize; SEGMENTS]) {
    if counts.iter().all(|&c| c > 0) {
        return;
    }
    let row = DMatrix::from_row_slice(1, model.input_dim(), model.epsilon.as_slice());
    let Ok(zg) = x_gmm.affine_map(&row, &DVector::zeros(1)) else {
        return;
    };
    let zm = zg.marginal(0);
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            continue;
        }
        let mass: f64 = model
            .z_intervals(i)
            .iter()
            .map(|&(a, b)| (zm.cdf(b) - zm.cdf(a)).max(0.0))
            .sum();
        if mass > 1e-3 {
            log::warn!(
                "segment {} drew no samples although it carries probability {mass:.2e}",
                i + 1
            );
        }
    }
}
