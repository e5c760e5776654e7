//! Decoupled linearized power flow.
//!
//! The free state `y = [theta_S; V_L]` solves
//! `Λ y = [P_S; Q_L] + C [theta_R; V_T]` with
//!
//! ```text
//! Λ = [ -B'_SS   G_SL ]      C = [ B'_SR  -G_ST ]
//!     [ -G_LS   -B_LL ]          [ G_LR    B_LT ]
//! ```
//!
//! where `B'` is the shunt-free susceptance matrix and `G`, `B` the full
//! bus admittance parts. `Λ` is factorized once per case.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::acpf::{InjectionSet, StateVector, DENSE_BUS_LIMIT};
use crate::linalg::Factorization;
use crate::netcase::{Admittance, BusIndex, NetworkCase};
use crate::Result;

#[derive(Clone)]
pub struct LinearPfModel {
    pub lambda: DMatrix<f64>,
    /// Boundary coupling, columns ordered `[theta_R; V_T]`.
    pub c: DMatrix<f64>,
    pub boundary: DVector<f64>,
    pub index: BusIndex,
    factor: Arc<Factorization>,
}

impl std::fmt::Debug for LinearPfModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearPfModel")
            .field("dim", &self.dim())
            .field("boundary", &self.boundary.len())
            .finish()
    }
}

pub fn build_dlpf(case: &NetworkCase, adm: &Admittance) -> Result<LinearPfModel> {
    let idx = case.index();
    let (n, m) = (idx.n(), idx.m());
    let dim = n + m;
    let nt = idx.t.len();

    let mut lambda = DMatrix::zeros(dim, dim);
    let mut c = DMatrix::zeros(dim, 1 + nt);
    let mut entries = Vec::new();
    let mut put = |lambda: &mut DMatrix<f64>, r: usize, col: usize, v: f64| {
        if v != 0.0 {
            lambda[(r, col)] = v;
            entries.push((r, col, v));
        }
    };
    for (r, &i) in idx.s.iter().enumerate() {
        for (col, &j) in idx.s.iter().enumerate() {
            put(&mut lambda, r, col, -adm.b_noshunt[(i, j)]);
        }
        for (col, &j) in idx.l.iter().enumerate() {
            put(&mut lambda, r, n + col, adm.g[(i, j)]);
        }
        c[(r, 0)] = adm.b_noshunt[(i, idx.slack)];
        for (col, &j) in idx.t.iter().enumerate() {
            c[(r, 1 + col)] = -adm.g[(i, j)];
        }
    }
    for (r, &i) in idx.l.iter().enumerate() {
        for (col, &j) in idx.s.iter().enumerate() {
            put(&mut lambda, n + r, col, -adm.g[(i, j)]);
        }
        for (col, &j) in idx.l.iter().enumerate() {
            put(&mut lambda, n + r, n + col, -adm.b[(i, j)]);
        }
        c[(n + r, 0)] = adm.g[(i, idx.slack)];
        for (col, &j) in idx.t.iter().enumerate() {
            c[(n + r, 1 + col)] = adm.b[(i, j)];
        }
    }

    let factor = if case.buses.len() <= DENSE_BUS_LIMIT {
        Factorization::dense(lambda.clone(), "DLPF matrix (disconnected island?)")?
    } else {
        Factorization::sparse(dim, &entries, "DLPF matrix (disconnected island?)")?
    };

    let vset = case.voltage_setpoints();
    let mut boundary = DVector::zeros(1 + nt);
    boundary[0] = case.buses[idx.slack].va_init;
    for (k, &i) in idx.t.iter().enumerate() {
        boundary[1 + k] = vset[i];
    }

    Ok(LinearPfModel {
        lambda,
        c,
        boundary,
        index: idx,
        factor: Arc::new(factor),
    })
}

impl LinearPfModel {
    pub fn dim(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn n(&self) -> usize {
        self.index.n()
    }

    pub fn m(&self) -> usize {
        self.index.m()
    }

    /// `Λ⁻¹ rhs` using the cached factorization.
    pub fn solve_linear(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(rhs)
    }

    pub fn solve_linear_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.solve_matrix(rhs)
    }

    /// Explicit `Λ⁻¹`.
    pub fn lambda_inverse(&self) -> DMatrix<f64> {
        self.factor.solve_matrix(&DMatrix::identity(self.dim(), self.dim()))
    }

    /// Stacked free state for stacked injections `[P_S; Q_L]`.
    pub fn solve_y(&self, injections: &DVector<f64>) -> DVector<f64> {
        self.solve_linear(&(injections + &self.c * &self.boundary))
    }

    pub fn boundary_term(&self) -> DVector<f64> {
        &self.c * &self.boundary
    }
}

pub fn solve_dlpf(model: &LinearPfModel, inj: &InjectionSet) -> StateVector {
    let y = model.solve_y(&inj.stacked());
    let n = model.n();
    StateVector {
        theta_s: y.rows(0, n).into_owned(),
        v_l: y.rows(n, model.m()).into_owned(),
        slack_theta: model.boundary[0],
        v_t: model.boundary.rows(1, model.boundary.len() - 1).into_owned(),
    }
}

/// Linearized active flows at the from-end of each branch: `P ≈ F y + f0`.
///
/// First-order expansion of the AC branch equation around unit magnitudes
/// and zero angle difference, keeping tap ratios and phase shifts. Held
/// magnitudes and the slack angle are folded into `f0`. Out-of-service
/// branches get zero rows.
pub fn branch_flow_matrix(case: &NetworkCase, _adm: &Admittance) -> (DMatrix<f64>, DVector<f64>) {
    let idx = case.index();
    let (n, m) = (idx.n(), idx.m());
    let nbr = case.branches.len();
    let vset = case.voltage_setpoints();
    let slack_theta = case.buses[idx.slack].va_init;
    let mut f = DMatrix::zeros(nbr, n + m);
    let mut f0 = DVector::zeros(nbr);
    for (k, br) in case.branches.iter().enumerate() {
        if !br.status {
            continue;
        }
        let ys = num_complex::Complex64::new(1.0, 0.0) / num_complex::Complex64::new(br.r, br.x);
        let (g, b) = (ys.re, ys.im);
        let t = br.tap_ratio;
        let (sin, cos) = br.phase_shift.sin_cos();
        let kk = g * cos - b * sin;
        let h = g * sin + b * cos;
        let terms = [
            (br.from, Var::Mag, 2.0 * g / (t * t) - kk / t),
            (br.to, Var::Mag, -kk / t),
            (br.from, Var::Ang, -h / t),
            (br.to, Var::Ang, h / t),
        ];
        f0[k] = -g / (t * t) + kk / t;
        for (bus, var, coef) in terms {
            match var {
                Var::Ang => match idx.pos_s[bus] {
                    Some(col) => f[(k, col)] += coef,
                    None => f0[k] += coef * slack_theta,
                },
                Var::Mag => match idx.pos_l[bus] {
                    Some(col) => f[(k, n + col)] += coef,
                    None => f0[k] += coef * vset[bus],
                },
            }
        }
    }
    (f, f0)
}

enum Var {
    Ang,
    Mag,
}
