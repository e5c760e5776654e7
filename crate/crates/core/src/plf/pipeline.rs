//! End-to-end pipeline: linear model, correction, input mixture, segment
//! sampling and the chosen mapping method.

use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::correction::{apply_correction, fit_correction, AcOracle, CorrectionCoeffs, CorrectionMode};
use super::methods::{direct_mixtures, indirect_mixtures, SegmentFit};
use super::segments::segment_stats;
use super::ser;
use crate::control::{assemble_piecewise, injection_map, ControlParams, PiecewiseLinearModel, SEGMENTS};
use crate::dlpf::{branch_flow_matrix, build_dlpf, LinearPfModel};
use crate::error::StageExt;
use crate::gmm::{em_fit, Gmm};
use crate::netcase::{build_admittance, NetworkCase, WindHistory};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    #[default]
    Indirect,
}

impl Method {
    /// Default number of input samples.
    pub fn default_samples(self) -> usize {
        match self {
            Method::Direct => 2_000,
            Method::Indirect => 10_000,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Self::Direct),
            "indirect" => Ok(Self::Indirect),
            _ => Err(Error::Config(format!("unknown method `{s}` (expected direct or indirect)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Input mixture fit and per-segment refits.
    pub gmm: u64,
    /// Input samples that fix the segment probabilities.
    pub sampling: u64,
    /// Inputs of the correction fit.
    pub correction: u64,
    /// AC Monte Carlo draws.
    pub benchmark: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            gmm: 1,
            sampling: 2,
            correction: 3,
            benchmark: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlfConfig {
    pub method: Method,
    /// Input samples; `None` picks the method's default.
    pub l: Option<usize>,
    /// Mixture components of the input fit and of each segment refit.
    pub j: usize,
    /// Pair results per segment for the correction fit.
    pub h: usize,
    pub correction: CorrectionMode,
    pub seeds: Seeds,
}

impl Default for PlfConfig {
    fn default() -> Self {
        Self {
            method: Method::Indirect,
            l: None,
            j: 5,
            h: 12,
            correction: CorrectionMode::Polynomial,
            seeds: Seeds::default(),
        }
    }
}

impl PlfConfig {
    pub fn samples(&self) -> usize {
        self.l.unwrap_or_else(|| self.method.default_samples())
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples() == 0 || self.j == 0 {
            return Err(Error::Config("L and J must be positive".into()));
        }
        Ok(())
    }
}

/// Everything derived from the case before any randomness enters.
#[derive(Debug, Clone)]
pub struct PlfModels {
    pub case: NetworkCase,
    pub params: ControlParams,
    pub linear: LinearPfModel,
    /// Farm outputs to stacked `[P_S; Q_L]` injections.
    pub injection_map: DMatrix<f64>,
    /// Farm outputs to states `[theta_S; V_L]`, uncorrected.
    pub states: PiecewiseLinearModel,
    /// Farm outputs to from-end active branch flows, uncorrected.
    pub flows: PiecewiseLinearModel,
    pub flow_matrix: DMatrix<f64>,
    pub flow_offset: DVector<f64>,
}

impl PlfModels {
    pub fn build(case: &NetworkCase, params: &ControlParams, power_factor: f64) -> Result<Self> {
        let adm = build_admittance(case);
        let linear = build_dlpf(case, &adm)?;
        let (flow_matrix, flow_offset) = branch_flow_matrix(case, &adm);
        let s = injection_map(case, power_factor);
        let states = assemble_piecewise(case, params, &linear)?.compose_input(&s)?;
        let flows = states.compose_output(&flow_matrix, &flow_offset);
        Ok(Self {
            case: case.clone(),
            params: params.clone(),
            linear,
            injection_map: s,
            states,
            flows,
            flow_matrix,
            flow_offset,
        })
    }

    pub fn oracle(&self) -> Result<AcOracle> {
        AcOracle::new(&self.case, &self.params, self.injection_map.clone())
    }

    pub fn n_angles(&self) -> usize {
        self.linear.n()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlfResult {
    pub case: String,
    pub method: Method,
    pub samples: usize,
    pub components: usize,
    pub state_labels: Vec<String>,
    pub flow_labels: Vec<String>,
    pub farm_labels: Vec<String>,
    pub segment_probs: [f64; SEGMENTS],
    pub segment_counts: [usize; SEGMENTS],
    pub exceeded: usize,
    pub segment_fits: Vec<SegmentFit>,
    pub correction: CorrectionCoeffs,
    #[serde(serialize_with = "ser::dvec")]
    pub state_mean: DVector<f64>,
    #[serde(serialize_with = "ser::dvec")]
    pub state_variance: DVector<f64>,
    #[serde(serialize_with = "ser::dvec")]
    pub flow_mean: DVector<f64>,
    #[serde(serialize_with = "ser::dvec")]
    pub flow_variance: DVector<f64>,
    pub notes: Vec<String>,
    /// Mixture over farm outputs (p.u.).
    pub x_gmm: Gmm,
    /// Mixture over `[theta_S; V_L]`.
    pub y_gmm: Gmm,
    /// Mixture over from-end active branch flows.
    pub flow_gmm: Gmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

impl Timings {
    fn record(&mut self, stage: &str, start: Instant) {
        self.stages.push((stage.to_string(), start.elapsed().as_secs_f64()));
    }

    pub fn total(&self) -> f64 {
        self.stages.iter().map(|(_, s)| s).sum()
    }

    pub fn get(&self, stage: &str) -> Option<f64> {
        self.stages.iter().find(|(n, _)| n == stage).map(|(_, s)| *s)
    }
}

#[derive(Debug, Clone)]
pub struct PlfRun {
    pub result: PlfResult,
    pub timings: Timings,
    pub models: PlfModels,
    /// Corrected farm-output-to-state model actually used.
    pub corrected_states: PiecewiseLinearModel,
    pub corrected_flows: PiecewiseLinearModel,
}

/// Runs the analytical pipeline on a case that already carries its sidecar
/// (AGC units, farms, schedule).
pub fn run_plf(
    case: &NetworkCase,
    params: &ControlParams,
    wind: &WindHistory,
    power_factor: f64,
    config: &PlfConfig,
) -> Result<PlfRun> {
    config.validate()?;
    if case.wind_farms.is_empty() {
        return Err(Error::Config("the case has no wind farms".into()));
    }
    let mut timings = Timings::default();

    let t = Instant::now();
    let models = PlfModels::build(case, params, power_factor).stage("linear model")?;
    timings.record("linear_model", t);

    let t = Instant::now();
    let data = wind.farm_outputs(case).stage("wind history")?;
    let mut notes = Vec::new();
    let x_gmm = fit_input_mixture(&data, config.j, config.seeds.gmm, &mut notes).stage("input mixture")?;
    timings.record("input_mixture", t);

    run_with_models(models, x_gmm, config, timings, notes)
}

/// Same as [`run_plf`] from prepared models and a given input mixture.
pub fn run_with_models(
    models: PlfModels,
    x_gmm: Gmm,
    config: &PlfConfig,
    mut timings: Timings,
    mut notes: Vec<String>,
) -> Result<PlfRun> {
    let t = Instant::now();
    let correction = if config.correction == CorrectionMode::None {
        CorrectionCoeffs::identity(models.states.output_dim(), models.flows.output_dim())
    } else {
        let oracle = models.oracle().stage("correction")?;
        fit_correction(
            &models.states,
            &models.flows,
            &x_gmm,
            &oracle,
            config.h,
            config.correction,
            config.seeds.correction,
        )
        .stage("correction")?
    };
    notes.extend(correction.notes.iter().cloned());
    let corrected_states = apply_correction(&models.states, &correction.states).stage("correction")?;
    let corrected_flows = apply_correction(&models.flows, &correction.flows).stage("correction")?;
    timings.record("correction", t);

    let t = Instant::now();
    let l = config.samples();
    let stats = segment_stats(&x_gmm, &models.states, l, config.seeds.sampling).stage("segment sampling")?;
    if stats.exceeded > 0 {
        notes.push(format!(
            "{} of {l} samples exceeded the regulation capacity",
            stats.exceeded
        ));
    }
    timings.record("segment_sampling", t);

    let t = Instant::now();
    let (mixtures, fits) = match config.method {
        Method::Direct => {
            (direct_mixtures(&x_gmm, &models.states, &stats).stage("direct method")?, Vec::new())
        }
        Method::Indirect => {
            let (m, f) = indirect_mixtures(&stats, config.j, config.seeds.gmm.wrapping_add(1))
                .stage("indirect method")?;
            for fit in &f {
                if fit.components < config.j {
                    notes.push(format!(
                        "segment {}: {} samples, {} component(s) fitted",
                        fit.segment + 1,
                        fit.samples,
                        fit.components
                    ));
                }
            }
            (m, f)
        }
    };
    timings.record("segment_mixtures", t);

    let t = Instant::now();
    let y_gmm = mixtures.push_through(&corrected_states).stage("state mixture")?;
    let flow_gmm = mixtures.push_through(&corrected_flows).stage("flow mixture")?;
    let (state_mean, state_variance) = y_gmm.marginal_moments();
    let (flow_mean, flow_variance) = flow_gmm.marginal_moments();
    timings.record("output_mixtures", t);

    let case = &models.case;
    let result = PlfResult {
        case: case.name.clone(),
        method: config.method,
        samples: l,
        components: config.j,
        state_labels: case.state_labels(),
        flow_labels: case.branch_labels(),
        farm_labels: case.wind_farms.iter().map(|f| f.name.clone()).collect(),
        segment_probs: stats.probs,
        segment_counts: stats.counts,
        exceeded: stats.exceeded,
        segment_fits: fits,
        correction,
        state_mean,
        state_variance,
        flow_mean,
        flow_variance,
        notes,
        x_gmm,
        y_gmm,
        flow_gmm,
    };
    Ok(PlfRun {
        result,
        timings,
        models,
        corrected_states,
        corrected_flows,
    })
}

/// Fits the farm-output mixture; identical rows give a point mass and short
/// histories a smaller component count.
pub fn fit_input_mixture(data: &DMatrix<f64>, j: usize, seed: u64, notes: &mut Vec<String>) -> Result<Gmm> {
    let (n, d) = data.shape();
    if n == 0 {
        return Err(Error::Config("the wind history is empty".into()));
    }
    let jj = j.min(n / (d + 1));
    if jj == 0 {
        return Err(Error::TooFewSamples { n, components: j, dim: d });
    }
    if jj < j {
        notes.push(format!("wind history has {n} rows: input mixture fitted with {jj} components"));
    }
    match em_fit(data, jj, seed) {
        Ok(fit) => {
            if !fit.converged {
                notes.push(format!("input mixture EM stopped after {} iterations", fit.iterations));
            }
            Ok(fit.gmm)
        }
        Err(Error::Degenerate(_)) => {
            notes.push("wind history has no spread: input is a point mass".into());
            Ok(Gmm::point_mass(data.row_mean().transpose()))
        }
        Err(e) => Err(e),
    }
}
