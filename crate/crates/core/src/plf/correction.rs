//! Per-segment correction of the linear maps against AC pair results.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ser;
use crate::acpf::{branch_flows_ac, AcSolver, InjectionSet, StateVector};
use crate::control::{regulation_amounts, ControlParams, PiecewiseLinearModel, SEGMENTS};
use crate::gmm::{Gmm, SumConditioner};
use crate::netcase::NetworkCase;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorrectionMode {
    /// Per-state slope and intercept.
    #[default]
    Polynomial,
    /// Per-state intercept only.
    Constant,
    None,
}

impl FromStr for CorrectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "polynomial" | "poly" => Ok(Self::Polynomial),
            "constant" => Ok(Self::Constant),
            "none" => Ok(Self::None),
            _ => Err(Error::Config(format!(
                "unknown correction `{s}` (expected polynomial, constant or none)"
            ))),
        }
    }
}

/// `corrected = rho ∘ linear + varsigma`, elementwise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentCoeffs {
    #[serde(serialize_with = "ser::dvec")]
    pub rho: DVector<f64>,
    #[serde(serialize_with = "ser::dvec")]
    pub varsigma: DVector<f64>,
}

impl SegmentCoeffs {
    pub fn identity(n: usize) -> Self {
        Self {
            rho: DVector::from_element(n, 1.0),
            varsigma: DVector::zeros(n),
        }
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        self.rho.component_mul(y) + &self.varsigma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectionCoeffs {
    pub mode: CorrectionMode,
    /// Pair results per segment used in the fit.
    pub h: usize,
    pub states: Vec<SegmentCoeffs>,
    pub flows: Vec<SegmentCoeffs>,
    /// Coordinates whose linear value did not vary over the fit (intercept only).
    pub constant_fallbacks: usize,
    pub notes: Vec<String>,
}

impl CorrectionCoeffs {
    pub fn identity(states: usize, flows: usize) -> Self {
        Self {
            mode: CorrectionMode::None,
            h: 0,
            states: vec![SegmentCoeffs::identity(states); SEGMENTS],
            flows: vec![SegmentCoeffs::identity(flows); SEGMENTS],
            constant_fallbacks: 0,
            notes: Vec::new(),
        }
    }
}

/// Source of reference `(states, flows)` for an input vector.
pub trait PairOracle: Sync {
    fn evaluate(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)>;
}

/// Full AC power flow with frequency regulation applied to the imbalance.
pub struct AcOracle {
    case: NetworkCase,
    solver: AcSolver,
    params: ControlParams,
    injection_map: DMatrix<f64>,
    base: DVector<f64>,
    warm: Option<StateVector>,
}

impl AcOracle {
    /// `injection_map` takes inputs to stacked `[P_S; Q_L]` injection changes.
    pub fn new(case: &NetworkCase, params: &ControlParams, injection_map: DMatrix<f64>) -> Result<Self> {
        let solver = AcSolver::new(case);
        let idx = solver.index();
        if injection_map.nrows() != idx.state_dim() {
            return Err(Error::Shape(format!(
                "injection map has {} rows, the case has {} injections",
                injection_map.nrows(),
                idx.state_dim()
            )));
        }
        let mut oracle = Self {
            case: case.clone(),
            solver,
            params: params.clone(),
            base: InjectionSet::base(case).stacked(),
            injection_map,
            warm: None,
        };
        let zero = DVector::zeros(oracle.input_dim());
        oracle.warm = oracle.solve(&zero).ok();
        Ok(oracle)
    }

    pub fn input_dim(&self) -> usize {
        self.injection_map.ncols()
    }

    pub fn case(&self) -> &NetworkCase {
        &self.case
    }

    /// Injections for input `x` after regulation has absorbed the imbalance.
    pub fn injections(&self, x: &DVector<f64>) -> Result<InjectionSet> {
        let n = self.solver.index().n();
        let mut inj = InjectionSet::from_stacked(&(&self.base + &self.injection_map * x), n);
        let p_delta = inj.p.sum();
        inj.p += regulation_amounts(&self.params, p_delta)?;
        Ok(inj)
    }

    pub fn solve(&self, x: &DVector<f64>) -> Result<StateVector> {
        let inj = self.injections(x)?;
        match self.solver.solve(&inj, self.warm.as_ref()) {
            Ok(s) => Ok(s.state),
            Err(e) if self.warm.is_some() => self
                .solver
                .solve(&inj, None)
                .map(|s| s.state)
                .map_err(|_| e),
            Err(e) => Err(e),
        }
    }
}

impl PairOracle for AcOracle {
    fn evaluate(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let state = self.solve(x)?;
        let flows = branch_flows_ac(&self.case, &state);
        Ok((
            state.y(),
            DVector::from_iterator(flows.len(), flows.iter().map(|f| f.p_from)),
        ))
    }
}

/// The piece-wise linear model itself; fitting against it is the identity.
pub struct DlpfOracle {
    pub states: PiecewiseLinearModel,
    pub flows: PiecewiseLinearModel,
}

impl PairOracle for DlpfOracle {
    fn evaluate(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let z = self.states.epsilon.dot(x);
        match self.states.segment_for_z(z) {
            Some(i) => Ok((
                &self.states.segments[i].a * x + &self.states.segments[i].b,
                &self.flows.segments[i].a * x + &self.flows.segments[i].b,
            )),
            None => Err(Error::CapacityExceeded {
                p_delta: z + self.states.c_offset,
                p_delta_max: self.states.thresholds()[3],
            }),
        }
    }
}

/// Draws `count` inputs per segment from `x_gmm` restricted to that segment.
///
/// Rejection sampling is tried first; segments it leaves short are filled
/// by conditioning on an imbalance drawn uniformly from the part of the
/// segment within four standard deviations of the mixture. A segment that
/// cannot be reached at all comes back empty.
pub fn draw_segment_inputs(
    x_gmm: &Gmm,
    model: &PiecewiseLinearModel,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<DVector<f64>>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<DVector<f64>>> = vec![Vec::new(); SEGMENTS];
    let sampler = x_gmm.sampler();
    let budget = (200 * count * SEGMENTS).max(2000);
    for _ in 0..budget {
        if out.iter().all(|v| v.len() >= count) {
            break;
        }
        let x = sampler.draw(&mut rng);
        if let Some(i) = model.segment_for_z(model.epsilon.dot(&x)) {
            if out[i].len() < count {
                out[i].push(x);
            }
        }
    }
    if out.iter().all(|v| v.len() >= count) {
        return Ok(out);
    }

    let eps_row = DMatrix::from_row_slice(1, model.input_dim(), model.epsilon.as_slice());
    let z_marginal = x_gmm.affine_map(&eps_row, &DVector::zeros(1))?.marginal(0);
    let (lo, hi) = z_marginal.support(4.0);
    let conditioner = SumConditioner::new(x_gmm, &model.epsilon)?;
    for (i, drawn) in out.iter_mut().enumerate() {
        if drawn.len() >= count {
            continue;
        }
        let pieces: Vec<(f64, f64)> = model
            .z_intervals(i)
            .iter()
            .map(|&(a, b)| (a.max(lo), b.min(hi)))
            .filter(|(a, b)| b > a)
            .collect();
        let total: f64 = pieces.iter().map(|(a, b)| b - a).sum();
        if pieces.is_empty() || !(total > 0.0) {
            continue;
        }
        let mut attempts = 0;
        while drawn.len() < count && attempts < 20 * count {
            attempts += 1;
            let mut u = rng.random::<f64>() * total;
            let mut z = pieces[pieces.len() - 1].1;
            for &(a, b) in &pieces {
                if u <= b - a {
                    z = a + u;
                    break;
                }
                u -= b - a;
            }
            let Ok(cond) = conditioner.condition(z) else {
                continue;
            };
            let x = cond.sampler().draw(&mut rng);
            if model.segment_for_z(model.epsilon.dot(&x)) == Some(i) {
                drawn.push(x);
            }
        }
    }
    Ok(out)
}

/// Fits per-segment corrections of the state and flow maps.
///
/// `model` maps inputs to states and `flow_model` to branch flows (both
/// uncorrected). For every segment `h` inputs are drawn inside it, the oracle
/// is evaluated (a failed evaluation is replaced by a fresh input up to three
/// times), and each coordinate is fitted separately. Segments that cannot be
/// populated keep identity coefficients, which is recorded in `notes`.
pub fn fit_correction(
    model: &PiecewiseLinearModel,
    flow_model: &PiecewiseLinearModel,
    x_gmm: &Gmm,
    oracle: &dyn PairOracle,
    h: usize,
    mode: CorrectionMode,
    seed: u64,
) -> Result<CorrectionCoeffs> {
    let (ny, nf) = (model.output_dim(), flow_model.output_dim());
    let mut coeffs = CorrectionCoeffs::identity(ny, nf);
    coeffs.mode = mode;
    coeffs.h = h;
    if mode == CorrectionMode::None {
        return Ok(coeffs);
    }
    let needed = if mode == CorrectionMode::Polynomial { 2 } else { 1 };
    if h < needed {
        return Err(Error::Config(format!(
            "{mode:?} correction needs at least {needed} pair results per segment, got {h}"
        )));
    }
    const RETRIES: usize = 3;
    let inputs = draw_segment_inputs(x_gmm, model, h * (1 + RETRIES), seed)?;

    for (i, pool) in inputs.iter().enumerate() {
        let first = pool.len().min(h);
        let mut results: Vec<Option<(DVector<f64>, DVector<f64>)>> =
            pool[..first].par_iter().map(|x| oracle.evaluate(x).ok()).collect();
        let mut xs: Vec<&DVector<f64>> = pool[..first].iter().collect();
        let mut spare = pool[first..].iter();
        for slot in 0..first {
            let mut tries = 0;
            while results[slot].is_none() && tries < RETRIES {
                let Some(x) = spare.next() else { break };
                tries += 1;
                results[slot] = oracle.evaluate(x).ok();
                xs[slot] = x;
            }
        }
        let pairs: Vec<(&DVector<f64>, (DVector<f64>, DVector<f64>))> = xs
            .into_iter()
            .zip(results)
            .filter_map(|(x, r)| r.map(|r| (x, r)))
            .collect();
        if pairs.len() < needed {
            let msg = format!(
                "segment {}: only {} of {h} pair results available, correction left at identity",
                i + 1,
                pairs.len()
            );
            log::warn!("{msg}");
            coeffs.notes.push(msg);
            continue;
        }
        if pairs.len() < h {
            coeffs.notes.push(format!(
                "segment {}: fitted on {} of {h} pair results",
                i + 1,
                pairs.len()
            ));
        }
        let seg = &model.segments[i];
        let fseg = &flow_model.segments[i];
        let lin_y: Vec<DVector<f64>> = pairs.iter().map(|(x, _)| &seg.a * *x + &seg.b).collect();
        let lin_f: Vec<DVector<f64>> = pairs.iter().map(|(x, _)| &fseg.a * *x + &fseg.b).collect();
        let ref_y: Vec<&DVector<f64>> = pairs.iter().map(|(_, r)| &r.0).collect();
        let ref_f: Vec<&DVector<f64>> = pairs.iter().map(|(_, r)| &r.1).collect();
        let (sy, ky) = fit_coordinates(&lin_y, &ref_y, mode);
        let (sf, kf) = fit_coordinates(&lin_f, &ref_f, mode);
        coeffs.constant_fallbacks += ky + kf;
        coeffs.states[i] = sy;
        coeffs.flows[i] = sf;
    }
    Ok(coeffs)
}

/// Least-squares `reference ≈ rho · linear + varsigma` per coordinate.
/// Returns the coefficients and how many coordinates fell back to an intercept.
fn fit_coordinates(
    linear: &[DVector<f64>],
    reference: &[&DVector<f64>],
    mode: CorrectionMode,
) -> (SegmentCoeffs, usize) {
    let d = linear[0].len();
    let h = linear.len() as f64;
    let mut out = SegmentCoeffs::identity(d);
    let mut fallbacks = 0;
    for k in 0..d {
        let ml = linear.iter().map(|v| v[k]).sum::<f64>() / h;
        let mr = reference.iter().map(|v| v[k]).sum::<f64>() / h;
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for (l, r) in linear.iter().zip(reference) {
            let dl = l[k] - ml;
            sxx += dl * dl;
            sxy += dl * (r[k] - mr);
        }
        let flat = sxx <= h * (1e-9 * ml.abs().max(1.0)).powi(2);
        if mode == CorrectionMode::Polynomial && !flat {
            out.rho[k] = sxy / sxx;
            out.varsigma[k] = mr - out.rho[k] * ml;
        } else {
            if mode == CorrectionMode::Polynomial {
                fallbacks += 1;
            }
            out.varsigma[k] = mr - ml;
        }
    }
    (out, fallbacks)
}

/// Revises every segment: `A_i ← diag(rho_i) A_i`, `b_i ← rho_i ∘ b_i + varsigma_i`.
pub fn apply_correction(
    model: &PiecewiseLinearModel,
    coeffs: &[SegmentCoeffs],
) -> Result<PiecewiseLinearModel> {
    if coeffs.len() != model.segments.len() {
        return Err(Error::Shape(format!(
            "{} coefficient sets for {} segments",
            coeffs.len(),
            model.segments.len()
        )));
    }
    let mut out = model.clone();
    for (seg, c) in out.segments.iter_mut().zip(coeffs) {
        if c.rho.len() != seg.b.len() || c.varsigma.len() != seg.b.len() {
            return Err(Error::Shape(format!(
                "coefficients of length {} for a map with {} outputs",
                c.rho.len(),
                seg.b.len()
            )));
        }
        for (r, mut row) in seg.a.row_iter_mut().enumerate() {
            row *= c.rho[r];
        }
        seg.b = c.apply(&seg.b);
    }
    Ok(out)
}
