//! Probabilistic load flow on the control-aware piece-wise linear model.
//!
//! The input is a Gaussian mixture over wind-farm outputs. Samples of it fix
//! how much probability falls in each regulation segment; the mixture is then
//! pushed through each segment's affine map either by conditioning on the
//! sampled imbalances ([`direct_method`]) or by refitting one mixture per
//! segment ([`indirect_method`]). AC/linear pair results fitted per segment
//! correct the linear maps before the push. [`run_plf`] chains the
//! whole pipeline; [`acmc_benchmark`] and the metrics compare it with AC
//! Monte Carlo.

mod acmc;
mod correction;
mod methods;
mod metrics;
mod pipeline;
mod segments;

pub use acmc::{acmc_benchmark, AcmcOptions, Benchmark};
pub use correction::{
    apply_correction, draw_segment_inputs, fit_correction, AcOracle, CorrectionCoeffs,
    CorrectionMode, DlpfOracle, PairOracle, SegmentCoeffs,
};
pub use methods::{
    direct_method, direct_mixtures, indirect_method, indirect_mixtures, FitKind, SegmentFit,
    SegmentMixtures,
};
pub use metrics::{
    cdf_rmse, metrics_cdf_rmse, metrics_moments, AccuracyReport, CdfRmse, EmpiricalMarginals,
    MomentErrors, CDF_LEVELS, VARIANCE_FLOOR,
};
pub use pipeline::{
    fit_input_mixture, run_plf, run_with_models, Method, PlfConfig, PlfModels, PlfResult, PlfRun, Seeds,
    Timings,
};
pub use segments::{segment_stats, SegmentStats, EXCEEDED_MASS_LIMIT};

pub(crate) mod ser {
    use nalgebra::DVector;
    use serde::Serializer;

    pub fn dvec<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }
}
