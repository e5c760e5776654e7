//! Frequency regulation and the control-aware piece-wise linear power flow.
//!
//! The system imbalance `P_Δ` (scheduled generation plus wind minus load
//! over the PV/PQ buses) is shared out according to which regulation regime
//! it falls in:
//!
//! | segment | `|P_Δ|` range        | share at bus n          |
//! |---------|----------------------|-------------------------|
//! | 1       | `(0, K_D f_D]`       | `-Kd_n / K_D`           |
//! | 2       | `(K_D f_D, K_U f_A]` | `-(Kg_n + Kd_n) / K_U`  |
//! | 3       | `(K_U f_A, P_max]`   | `-Hg_n / H_G`           |
//!
//! Within a segment the state is an affine function of the injections.

use nalgebra::{DMatrix, DVector};
use crate::dlpf::LinearPfModel;
use crate::netcase::{BusType, ControlSettings, ExceedPolicy, NetworkCase};
use crate::{Error, Result};

pub const SEGMENTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlParams {
    /// Load frequency characteristic per PV/PQ bus (p.u. per Hz).
    pub kd: DVector<f64>,
    /// Governor response per PV/PQ bus (p.u. per Hz).
    pub kg: DVector<f64>,
    /// AGC participation per PV/PQ bus (p.u.).
    pub hg: DVector<f64>,
    pub f_d: f64,
    pub f_a: f64,
    pub f_n: f64,
    pub p_delta_max: f64,
    pub exceed_policy: ExceedPolicy,
}

impl ControlParams {
    /// Converts sidecar settings to per-bus coefficients on the system base.
    ///
    /// Governor gains are quoted on generator capacity and load gains on bus
    /// load, both per unit of frequency; AGC participation defaults to the
    /// capacity of each AGC unit.
    pub fn from_case(case: &NetworkCase, settings: &ControlSettings) -> Result<Self> {
        let idx = case.index();
        let n = idx.n();
        let mut kg = DVector::zeros(n);
        let mut hg = DVector::zeros(n);
        for g in &case.generators {
            if let Some(k) = idx.pos_s[g.bus] {
                kg[k] += settings.kg * g.capacity / settings.f_n;
                if g.is_agc {
                    hg[k] += g.agc_ramp.unwrap_or(g.capacity);
                }
            }
        }
        let kd = DVector::from_iterator(
            n,
            idx.s
                .iter()
                .map(|&i| settings.kd * case.buses[i].pd.max(0.0) / settings.f_n),
        );
        let mut p = Self {
            kd,
            kg,
            hg,
            f_d: settings.f_d,
            f_a: settings.f_a,
            f_n: settings.f_n,
            p_delta_max: 0.0,
            exceed_policy: settings.exceed_policy,
        };
        p.p_delta_max = match settings.p_delta_max_mw {
            Some(mw) => mw / case.base_mva,
            None => 2.0 * p.k_u() * p.f_a,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: &DVector<f64>| v.iter().all(|x| *x >= 0.0 && x.is_finite());
        if !(nonneg(&self.kd) && nonneg(&self.kg) && nonneg(&self.hg)) {
            return Err(Error::Config("regulation coefficients must be non-negative".into()));
        }
        if !(self.k_d() > 0.0 && self.k_u() > 0.0) {
            return Err(Error::Config(
                "load and governor frequency characteristics sum to zero".into(),
            ));
        }
        if !(self.h_g() > 0.0) {
            return Err(Error::Config("no AGC unit participates in secondary control".into()));
        }
        let d = self.thresholds();
        if !(d[0] < d[1] && d[1] < d[2] && d[2] < d[3]) {
            return Err(Error::Config(format!(
                "regulation thresholds must increase strictly, got {d:?}"
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.kd.len()
    }

    pub fn k_d(&self) -> f64 {
        self.kd.sum()
    }

    pub fn k_u(&self) -> f64 {
        self.kd.sum() + self.kg.sum()
    }

    pub fn h_g(&self) -> f64 {
        self.hg.sum()
    }

    /// `[0, K_D f_D, K_U f_A, P_max]` on `|P_Δ|`.
    pub fn thresholds(&self) -> [f64; 4] {
        [0.0, self.k_d() * self.f_d, self.k_u() * self.f_a, self.p_delta_max]
    }

    /// Participation coefficients of a segment (0-based); each vector sums to -1.
    pub fn alpha(&self, segment: usize) -> DVector<f64> {
        match segment {
            0 => -&self.kd / self.k_d(),
            1 => -(&self.kg + &self.kd) / self.k_u(),
            2 => -&self.hg / self.h_g(),
            _ => panic!("segment index {segment} out of range"),
        }
    }

    /// Segment of an imbalance value.
    pub fn classify(&self, p_delta: f64) -> SegmentClass {
        let a = p_delta.abs();
        let d = self.thresholds();
        if a == 0.0 {
            SegmentClass::Balanced
        } else if a <= d[1] {
            SegmentClass::Segment(0)
        } else if a <= d[2] {
            SegmentClass::Segment(1)
        } else if a <= d[3] {
            SegmentClass::Segment(2)
        } else {
            SegmentClass::Exceeded
        }
    }
}

/// Outcome of locating an imbalance among the regulation regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentClass {
    /// Zero imbalance; handled by the first segment (no regulation).
    Balanced,
    /// 0-based segment index.
    Segment(usize),
    /// Beyond the maximum regulation capability.
    Exceeded,
}

impl SegmentClass {
    /// Segment whose affine map applies, if any.
    pub fn segment(self) -> Option<usize> {
        match self {
            SegmentClass::Balanced => Some(0),
            SegmentClass::Segment(i) => Some(i),
            SegmentClass::Exceeded => None,
        }
    }
}

/// Steady-state frequency deviation (Hz) for an imbalance.
pub fn frequency_deviation(params: &ControlParams, p_delta: f64) -> Result<f64> {
    if p_delta.abs() > params.p_delta_max {
        return Err(Error::CapacityExceeded {
            p_delta,
            p_delta_max: params.p_delta_max,
        });
    }
    if p_delta.abs() <= params.k_d() * params.f_d {
        Ok(p_delta / params.k_d())
    } else {
        Ok(p_delta / params.k_u())
    }
}

/// Active power adjustment at each PV/PQ bus; sums to `-p_delta`.
pub fn regulation_amounts(params: &ControlParams, p_delta: f64) -> Result<DVector<f64>> {
    match params.classify(p_delta) {
        SegmentClass::Balanced => Ok(DVector::zeros(params.n())),
        SegmentClass::Segment(i) => Ok(params.alpha(i) * p_delta),
        SegmentClass::Exceeded => match params.exceed_policy {
            ExceedPolicy::Clamp => Ok(params.alpha(2) * p_delta),
            ExceedPolicy::Error => Err(Error::CapacityExceeded {
                p_delta,
                p_delta_max: params.p_delta_max,
            }),
        },
    }
}

/// One affine piece `y = A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `(lower, upper]` bounds on `|P_Δ|`.
    pub bounds: (f64, f64),
}

/// Control-aware piece-wise linear map from injection deviations `x` to the state.
///
/// `x` is either the stacked `[P_S; Q_L]` deviation vector or, after
/// [`PiecewiseLinearModel::compose_input`], any lower-dimensional input that maps into it.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearModel {
    pub segments: Vec<Segment>,
    /// Weights giving the active imbalance contribution `epsilonᵀ x`.
    pub epsilon: DVector<f64>,
    /// Scheduled imbalance without uncertain injections.
    pub c_offset: f64,
    pub exceed_policy: ExceedPolicy,
}

/// Builds `A_i = Λ⁻¹ E_i` and `b_i = Λ⁻¹ (D_i + C [theta_R; V_T])` for each segment.
pub fn assemble_piecewise(
    case: &NetworkCase,
    params: &ControlParams,
    lin: &LinearPfModel,
) -> Result<PiecewiseLinearModel> {
    let idx = &lin.index;
    let (n, m) = (idx.n(), idx.m());
    if params.n() != n {
        return Err(Error::Shape(format!(
            "control parameters cover {} buses, the case has {n}",
            params.n()
        )));
    }
    let pg = case.bus_pg();
    let qg = case.bus_qg();
    let p_sched = DVector::from_iterator(n, idx.s.iter().map(|&i| pg[i] - case.buses[i].pd));
    let gamma = DVector::from_iterator(m, idx.l.iter().map(|&i| qg[i] - case.buses[i].qd));
    let c_offset = p_sched.sum();
    let lambda_inv = lin.lambda_inverse();
    let boundary = lin.boundary_term();
    let d = params.thresholds();

    let mut segments = Vec::with_capacity(SEGMENTS);
    for i in 0..SEGMENTS {
        let alpha = params.alpha(i);
        // E_i = I + [alpha; 0] [1; 0]ᵀ, so A_i = Λ⁻¹ + (Λ⁻¹ [alpha; 0]) [1; 0]ᵀ.
        let u = lambda_inv.columns(0, n) * &alpha;
        let mut a = lambda_inv.clone();
        for col in 0..n {
            a.column_mut(col).axpy(1.0, &u, 1.0);
        }
        let beta = &p_sched + &alpha * c_offset;
        let mut rhs = boundary.clone();
        rhs.rows_mut(0, n).add_assign(&beta);
        rhs.rows_mut(n, m).add_assign(&gamma);
        let b = lin.solve_linear(&rhs);
        segments.push(Segment {
            a,
            b,
            bounds: (d[i], d[i + 1]),
        });
    }
    let mut epsilon = DVector::zeros(n + m);
    epsilon.rows_mut(0, n).fill(1.0);
    Ok(PiecewiseLinearModel {
        segments,
        epsilon,
        c_offset,
        exceed_policy: params.exceed_policy,
    })
}

trait AddAssignView {
    fn add_assign(&mut self, rhs: &DVector<f64>);
}

impl AddAssignView for nalgebra::DVectorViewMut<'_, f64> {
    fn add_assign(&mut self, rhs: &DVector<f64>) {
        for (a, b) in self.iter_mut().zip(rhs.iter()) {
            *a += b;
        }
    }
}

impl PiecewiseLinearModel {
    pub fn input_dim(&self) -> usize {
        self.epsilon.len()
    }

    pub fn output_dim(&self) -> usize {
        self.segments[0].b.len()
    }

    pub fn thresholds(&self) -> [f64; 4] {
        [
            self.segments[0].bounds.0,
            self.segments[1].bounds.0,
            self.segments[2].bounds.0,
            self.segments[2].bounds.1,
        ]
    }

    /// Classifies the imbalance `z + c_offset` for `z = epsilonᵀ x`.
    pub fn classify_z(&self, z: f64) -> SegmentClass {
        let p = z + self.c_offset;
        let a = p.abs();
        if a == 0.0 {
            return SegmentClass::Balanced;
        }
        for (i, s) in self.segments.iter().enumerate() {
            if a > s.bounds.0 && a <= s.bounds.1 {
                return SegmentClass::Segment(i);
            }
        }
        SegmentClass::Exceeded
    }

    pub fn classify_segment(&self, x: &DVector<f64>) -> SegmentClass {
        self.classify_z(self.epsilon.dot(x))
    }

    /// Segment used for `z`, honoring the exceed policy (`None` means excluded).
    pub fn segment_for_z(&self, z: f64) -> Option<usize> {
        match self.classify_z(z) {
            SegmentClass::Exceeded => match self.exceed_policy {
                ExceedPolicy::Clamp => Some(SEGMENTS - 1),
                ExceedPolicy::Error => None,
            },
            c => c.segment(),
        }
    }

    /// Evaluates the piece-wise map; `None` outside the regulation capability.
    pub fn map(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let s = &self.segments[self.segment_for_z(self.epsilon.dot(x))?];
        Some(&s.a * x + &s.b)
    }

    /// Intervals of `z = epsilonᵀ x` that make up segment `i`, as `(lo, hi)` pairs.
    pub fn z_intervals(&self, i: usize) -> [(f64, f64); 2] {
        let (lo, hi) = self.segments[i].bounds;
        let c = self.c_offset;
        [(lo - c, hi - c), (-hi - c, -lo - c)]
    }

    /// Re-expresses the model on an input `u` with `x = S u`.
    pub fn compose_input(&self, s: &DMatrix<f64>) -> Result<Self> {
        if s.nrows() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input map has {} rows, model expects {}",
                s.nrows(),
                self.input_dim()
            )));
        }
        Ok(Self {
            segments: self
                .segments
                .iter()
                .map(|seg| Segment {
                    a: &seg.a * s,
                    b: seg.b.clone(),
                    bounds: seg.bounds,
                })
                .collect(),
            epsilon: s.transpose() * &self.epsilon,
            c_offset: self.c_offset,
            exceed_policy: self.exceed_policy,
        })
    }

    /// Composes an affine output map `w = G y + g` onto every segment.
    pub fn compose_output(&self, g: &DMatrix<f64>, offset: &DVector<f64>) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|seg| Segment {
                    a: g * &seg.a,
                    b: g * &seg.b + offset,
                    bounds: seg.bounds,
                })
                .collect(),
            epsilon: self.epsilon.clone(),
            c_offset: self.c_offset,
            exceed_policy: self.exceed_policy,
        }
    }
}

/// Maps per-farm active outputs to stacked `[P_S; Q_L]` injections.
///
/// Farms at PQ buses also inject reactive power at the given power factor.
pub fn injection_map(case: &NetworkCase, power_factor: f64) -> DMatrix<f64> {
    let idx = case.index();
    let ratio = power_factor.acos().tan();
    let mut s = DMatrix::zeros(idx.state_dim(), case.wind_farms.len());
    for (f, farm) in case.wind_farms.iter().enumerate() {
        if let Some(k) = idx.pos_s[farm.bus] {
            s[(k, f)] = 1.0;
        }
        if case.buses[farm.bus].kind == BusType::Pq {
            if let Some(k) = idx.pos_l[farm.bus] {
                s[(idx.n() + k, f)] = ratio;
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dlpf::build_dlpf;
    use crate::netcase::fixtures::case14_text;
    use crate::netcase::{build_admittance, parse_case, Sidecar};

    fn params(kd: &[f64], kg: &[f64], hg: &[f64]) -> ControlParams {
        ControlParams {
            kd: DVector::from_column_slice(kd),
            kg: DVector::from_column_slice(kg),
            hg: DVector::from_column_slice(hg),
            f_d: 0.01,
            f_a: 0.1,
            f_n: 50.0,
            p_delta_max: 100.0,
            exceed_policy: ExceedPolicy::Error,
        }
    }

    #[test]
    fn frequency_deviation_branches() {
        let p = params(&[10.0], &[90.0], &[1.0]);
        assert_eq!(frequency_deviation(&p, 0.0).unwrap(), 0.0);
        assert!((frequency_deviation(&p, 0.1).unwrap() - 0.01).abs() < 1e-15);
        assert!((frequency_deviation(&p, 0.5).unwrap() - 0.005).abs() < 1e-15);
        assert!(matches!(
            frequency_deviation(&p, 101.0),
            Err(Error::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn regulation_by_segment() {
        let p = params(&[1.0, 3.0], &[0.0, 0.0], &[0.0, 2.0]);
        let r = regulation_amounts(&p, 0.04).unwrap();
        assert!((r[0] + 0.01).abs() < 1e-15 && (r[1] + 0.03).abs() < 1e-15);
        let r = regulation_amounts(&p, 5.0).unwrap();
        assert_eq!(p.classify(5.0), SegmentClass::Segment(2));
        assert!(r[0] == 0.0 && (r[1] + 5.0).abs() < 1e-15);
    }

    #[test]
    fn boundaries_go_to_lower_segment() {
        let p = params(&[1.0, 3.0], &[5.0, 0.0], &[1.0, 1.0]);
        let d = p.thresholds();
        assert_eq!(p.classify(0.0), SegmentClass::Balanced);
        assert_eq!(p.classify(d[1]), SegmentClass::Segment(0));
        assert_eq!(p.classify(-d[1]), SegmentClass::Segment(0));
        assert_eq!(p.classify(d[2]), SegmentClass::Segment(1));
        assert_eq!(p.classify(d[3]), SegmentClass::Segment(2));
        assert_eq!(p.classify(d[3] * 1.000001), SegmentClass::Exceeded);
    }

    #[test]
    fn beta_closed_form() {
        // Three buses: slack, generator bus with Pg = 1, load bus with Pd = 0.5 ...
        let text = "\
function mpc = three
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1.0 0 230 1 1.1 0.9;
  2 2 50 0 0 0 1 1.0 0 230 1 1.1 0.9;
  3 1 50 0 0 0 1 1.0 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1.0 100 1 200 0;
  2 150 0 100 -100 1.0 100 1 200 0;
];
mpc.branch = [
  1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360;
  2 3 0.02 0.2 0 0 0 0 0 0 1 -360 360;
];
";
        // ... i.e. Pg - Pd = (1.0, -0.5) over the free buses.
        let case = parse_case(text).unwrap();
        let adm = build_admittance(&case);
        let lin = build_dlpf(&case, &adm).unwrap();
        let p = params(&[1.0, 1.0], &[3.0, 0.0], &[1.0, 0.0]);
        let model = assemble_piecewise(&case, &p, &lin).unwrap();
        assert!((model.c_offset - 0.5).abs() < 1e-15);
        for i in 0..SEGMENTS {
            let alpha = p.alpha(i);
            let beta = DVector::from_vec(vec![1.0 + alpha[0] * 0.5, -0.5 + alpha[1] * 0.5]);
            let mut rhs = lin.boundary_term();
            rhs[0] += beta[0];
            rhs[1] += beta[1];
            let b = lin.solve_linear(&rhs);
            assert!((&model.segments[i].b - b).abs().max() < 1e-12);
        }
    }

    #[test]
    fn alpha_matrix_column_and_row_sums() {
        let p = params(&[1.0, 3.0, 0.5], &[2.0, 0.0, 1.0], &[0.0, 2.0, 1.0]);
        for i in 0..SEGMENTS {
            let alpha = p.alpha(i);
            let n = alpha.len();
            let mat = DMatrix::identity(n, n) + &alpha * DVector::from_element(n, 1.0).transpose();
            for c in 0..n {
                assert!(mat.column(c).sum().abs() < 1e-12);
            }
            for r in 0..n {
                assert!((mat.row(r).sum() - (1.0 + n as f64 * alpha[r])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_response_reduces_to_dlpf() {
        let case = parse_case(&case14_text()).unwrap();
        let adm = build_admittance(&case);
        let lin = build_dlpf(&case, &adm).unwrap();
        // All response at the first bus: alpha = -e_0, so undoing the rank-one
        // term must give back the plain inverse.
        let mut p = params(&[0.0; 13], &[0.0; 13], &[0.0; 13]);
        p.kd[0] = 1.0;
        p.kg[0] = 1.0;
        p.hg[0] = 1.0;
        let model = assemble_piecewise(&case, &p, &lin).unwrap();
        let inv = lin.lambda_inverse();
        let u = inv.column(0).into_owned();
        let mut a0 = model.segments[0].a.clone();
        for c in 0..13 {
            a0.column_mut(c).axpy(1.0, &u, 1.0);
        }
        assert!((a0 - inv).abs().max() < 1e-10);
    }

    #[test]
    fn sidecar_conversion() {
        let mut case = parse_case(&case14_text()).unwrap();
        let side = Sidecar::from_json(r#"{"agc_units": [{"bus": 2}]}"#).unwrap();
        side.apply(&mut case, &[]).unwrap();
        let p = ControlParams::from_case(&case, &side.control).unwrap();
        // Bus 2: 140 MW capacity, 21.7 MW load.
        assert!((p.kg[0] - 25.0 * 1.4 / 50.0).abs() < 1e-12);
        assert!((p.kd[0] - 2.6 * 0.217 / 50.0).abs() < 1e-12);
        assert!((p.hg[0] - 1.4).abs() < 1e-12);
        assert_eq!(p.hg.iter().filter(|v| **v > 0.0).count(), 1);
        assert!((p.p_delta_max - 2.0 * p.thresholds()[2]).abs() < 1e-12);
    }
}
