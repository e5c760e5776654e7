//! Full AC power flow by Newton–Raphson in polar coordinates.
//!
//! Unknowns are the angles of the PV/PQ buses and the magnitudes of the PQ
//! buses; PV and slack magnitudes are held at their set points and the
//! slack angle at its case value. Reactive limits are not enforced.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::linalg::Factorization;
use crate::netcase::{build_admittance, BusIndex, NetworkCase};
use crate::{Error, Result};

pub const MAX_ITERATIONS: usize = 30;
pub const TOLERANCE: f64 = 1e-8;
/// Above this many buses the Jacobian is factorized sparsely.
pub const DENSE_BUS_LIMIT: usize = 200;

/// Net injections at the free buses: `p` over the PV/PQ set, `q` over the PQ set.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSet {
    pub p: DVector<f64>,
    pub q: DVector<f64>,
}

impl InjectionSet {
    /// Scheduled generation minus load, without any wind.
    pub fn base(case: &NetworkCase) -> Self {
        let idx = case.index();
        let pg = case.bus_pg();
        let qg = case.bus_qg();
        Self {
            p: DVector::from_iterator(idx.n(), idx.s.iter().map(|&i| pg[i] - case.buses[i].pd)),
            q: DVector::from_iterator(idx.m(), idx.l.iter().map(|&i| qg[i] - case.buses[i].qd)),
        }
    }

    /// Stacked `[p; q]`.
    pub fn stacked(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.p.len() + self.q.len());
        out.rows_mut(0, self.p.len()).copy_from(&self.p);
        out.rows_mut(self.p.len(), self.q.len()).copy_from(&self.q);
        out
    }

    pub fn from_stacked(x: &DVector<f64>, n: usize) -> Self {
        Self {
            p: x.rows(0, n).into_owned(),
            q: x.rows(n, x.len() - n).into_owned(),
        }
    }
}

/// Free state `[theta_S; V_L]` together with the held boundary values.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub theta_s: DVector<f64>,
    pub v_l: DVector<f64>,
    pub slack_theta: f64,
    /// Magnitudes of the PV and slack buses, in `BusIndex::t` order.
    pub v_t: DVector<f64>,
}

impl StateVector {
    /// Stacked free state `[theta_S; V_L]`.
    pub fn y(&self) -> DVector<f64> {
        let n = self.theta_s.len();
        let mut out = DVector::zeros(n + self.v_l.len());
        out.rows_mut(0, n).copy_from(&self.theta_s);
        out.rows_mut(n, self.v_l.len()).copy_from(&self.v_l);
        out
    }

    /// Full per-bus `(magnitude, angle)` vectors.
    pub fn bus_vectors(&self, idx: &BusIndex) -> (Vec<f64>, Vec<f64>) {
        let nb = idx.pos_s.len();
        let mut vm = vec![0.0; nb];
        let mut va = vec![0.0; nb];
        va[idx.slack] = self.slack_theta;
        for (k, &i) in idx.s.iter().enumerate() {
            va[i] = self.theta_s[k];
        }
        for (k, &i) in idx.t.iter().enumerate() {
            vm[i] = self.v_t[k];
        }
        for (k, &i) in idx.l.iter().enumerate() {
            vm[i] = self.v_l[k];
        }
        (vm, va)
    }

    fn from_bus_vectors(idx: &BusIndex, vm: &[f64], va: &[f64]) -> Self {
        Self {
            theta_s: DVector::from_iterator(idx.n(), idx.s.iter().map(|&i| va[i])),
            v_l: DVector::from_iterator(idx.m(), idx.l.iter().map(|&i| vm[i])),
            slack_theta: va[idx.slack],
            v_t: DVector::from_iterator(idx.t.len(), idx.t.iter().map(|&i| vm[i])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchFlow {
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
}

/// Solver report alongside the converged state.
#[derive(Debug, Clone)]
pub struct AcSolution {
    pub state: StateVector,
    pub iterations: usize,
    /// Infinity-norm mismatch after each iteration (entry 0 is the initial point).
    pub mismatch_history: Vec<f64>,
}

/// A reusable Newton–Raphson solver for one case.
#[derive(Debug, Clone)]
pub struct AcSolver {
    idx: BusIndex,
    rows: Vec<Vec<(usize, Complex64)>>,
    vset: Vec<f64>,
    slack_theta: f64,
    dense: bool,
}

impl AcSolver {
    pub fn new(case: &NetworkCase) -> Self {
        let idx = case.index();
        let adm = build_admittance(case);
        let vset = case.voltage_setpoints();
        Self {
            slack_theta: case.buses[idx.slack].va_init,
            rows: adm.rows,
            vset,
            dense: case.buses.len() <= DENSE_BUS_LIMIT,
            idx,
        }
    }

    pub fn index(&self) -> &BusIndex {
        &self.idx
    }

    /// Flat start: PV/slack magnitudes at set point, PQ magnitudes 1, angles at the slack angle.
    pub fn flat_start(&self) -> StateVector {
        let nb = self.rows.len();
        let vm: Vec<f64> = (0..nb)
            .map(|i| if self.idx.pos_l[i].is_some() { 1.0 } else { self.vset[i] })
            .collect();
        let va = vec![self.slack_theta; nb];
        StateVector::from_bus_vectors(&self.idx, &vm, &va)
    }

    pub fn solve(&self, inj: &InjectionSet, warm: Option<&StateVector>) -> Result<AcSolution> {
        let idx = &self.idx;
        let (n, m) = (idx.n(), idx.m());
        if inj.p.len() != n || inj.q.len() != m {
            return Err(Error::Shape(format!(
                "injections ({}, {}) do not match the case ({n}, {m})",
                inj.p.len(),
                inj.q.len()
            )));
        }
        if inj.p.iter().chain(inj.q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite injection".into()));
        }
        let start = warm.cloned().unwrap_or_else(|| self.flat_start());
        let (mut vm, mut va) = start.bus_vectors(idx);
        for &i in &idx.t {
            vm[i] = self.vset[i];
        }
        va[idx.slack] = self.slack_theta;

        let dim = n + m;
        let mut history = Vec::with_capacity(MAX_ITERATIONS + 1);
        let mut f = DVector::zeros(dim);
        for it in 0..=MAX_ITERATIONS {
            let v: Vec<Complex64> = vm
                .iter()
                .zip(&va)
                .map(|(&mag, &ang)| Complex64::from_polar(mag, ang))
                .collect();
            let current = self.currents(&v);
            for (k, &i) in idx.s.iter().enumerate() {
                f[k] = (v[i] * current[i].conj()).re - inj.p[k];
            }
            for (k, &i) in idx.l.iter().enumerate() {
                f[n + k] = (v[i] * current[i].conj()).im - inj.q[k];
            }
            let norm = f.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
            history.push(norm);
            if !norm.is_finite() {
                break;
            }
            if norm <= TOLERANCE {
                return Ok(AcSolution {
                    state: StateVector::from_bus_vectors(idx, &vm, &va),
                    iterations: it,
                    mismatch_history: history,
                });
            }
            if it == MAX_ITERATIONS {
                break;
            }
            let jac = self.jacobian(&v, &vm, &current);
            let fact = Factorization::auto(dim, &jac, if self.dense { usize::MAX } else { 0 }, "AC Jacobian")?;
            let dx = fact.solve(&f);
            if dx.iter().any(|x| !x.is_finite()) {
                return Err(Error::Singular("AC Jacobian".into()));
            }
            for (k, &i) in idx.s.iter().enumerate() {
                va[i] -= dx[k];
            }
            for (k, &i) in idx.l.iter().enumerate() {
                vm[i] -= dx[n + k];
            }
        }
        Err(Error::NonConvergence {
            iterations: MAX_ITERATIONS,
            mismatch: *history.last().unwrap_or(&f64::NAN),
        })
    }

    fn currents(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(k, y)| y * v[k]).sum())
            .collect()
    }

    /// Jacobian entries of `[P_S; Q_L]` with respect to `[theta_S; V_L]`.
    fn jacobian(&self, v: &[Complex64], vm: &[f64], current: &[Complex64]) -> Vec<(usize, usize, f64)> {
        let idx = &self.idx;
        let n = idx.n();
        let mut out = Vec::new();
        let j = Complex64::new(0.0, 1.0);
        for (i, row) in self.rows.iter().enumerate() {
            let (ps, pl) = (idx.pos_s[i], idx.pos_l[i]);
            if ps.is_none() && pl.is_none() {
                continue;
            }
            let mut has_diag = false;
            let mut emit = |k: usize, d_va: Complex64, d_vm: Complex64| {
                if let Some(cs) = idx.pos_s[k] {
                    if let Some(r) = ps {
                        out.push((r, cs, d_va.re));
                    }
                    if let Some(r) = pl {
                        out.push((n + r, cs, d_va.im));
                    }
                }
                if let Some(cl) = idx.pos_l[k] {
                    if let Some(r) = ps {
                        out.push((r, n + cl, d_vm.re));
                    }
                    if let Some(r) = pl {
                        out.push((n + r, n + cl, d_vm.im));
                    }
                }
            };
            for &(k, y) in row {
                let unit_k = v[k] / vm[k];
                let mut d_va = j * v[i] * (-(y * v[k]).conj());
                let mut d_vm = v[i] * (y * unit_k).conj();
                if k == i {
                    has_diag = true;
                    d_va += j * v[i] * current[i].conj();
                    d_vm += current[i].conj() * unit_k;
                }
                emit(k, d_va, d_vm);
            }
            if !has_diag {
                let unit = v[i] / vm[i];
                emit(i, j * v[i] * current[i].conj(), current[i].conj() * unit);
            }
        }
        out
    }
}

/// Solves the AC power flow from a flat start.
pub fn solve_ac(case: &NetworkCase, inj: &InjectionSet) -> Result<StateVector> {
    AcSolver::new(case).solve(inj, None).map(|s| s.state)
}

/// Per-branch complex power at both terminals (in-service branches; zero for the rest).
pub fn branch_flows_ac(case: &NetworkCase, state: &StateVector) -> Vec<BranchFlow> {
    let idx = case.index();
    let (vm, va) = state.bus_vectors(&idx);
    case.branches
        .iter()
        .map(|br| {
            if !br.status {
                return BranchFlow { p_from: 0.0, q_from: 0.0, p_to: 0.0, q_to: 0.0 };
            }
            let (yff, yft, ytf, ytt) = crate::netcase::branch_two_port(br);
            let vf = Complex64::from_polar(vm[br.from], va[br.from]);
            let vt = Complex64::from_polar(vm[br.to], va[br.to]);
            let sf = vf * (yff * vf + yft * vt).conj();
            let st = vt * (ytf * vf + ytt * vt).conj();
            BranchFlow { p_from: sf.re, q_from: sf.im, p_to: st.re, q_to: st.im }
        })
        .collect()
}

/// Net complex injection at every bus for a state (used for balance checks).
pub fn bus_injections(case: &NetworkCase, state: &StateVector) -> Vec<Complex64> {
    let idx = case.index();
    let (vm, va) = state.bus_vectors(&idx);
    let adm = build_admittance(case);
    let v: Vec<Complex64> = vm.iter().zip(&va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
    adm.rows
        .iter()
        .enumerate()
        .map(|(i, row)| v[i] * row.iter().map(|&(k, y)| y * v[k]).sum::<Complex64>().conj())
        .collect()
}
