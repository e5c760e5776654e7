//! Grid case model: buses, branches and generators in per-unit, plus the
//! bus-type partition used by the linear and AC power flow formulations.
//!
//! Internal bus indices are dense (`0..buses.len()`) in file order; every
//! record keeps the original bus number for reporting.

mod admittance;
mod matpower;
mod sidecar;

pub use admittance::{build_admittance, Admittance};
pub(crate) use admittance::branch_two_port;
pub use matpower::{parse_case, read_case};
pub use sidecar::{
    AgcUnit, ColumnRef,
    read_wind_history, ControlSettings, ExceedPolicy, FarmMapping, Sidecar, WindHistory,
};

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BusType {
    /// Reference bus (fixed magnitude and angle).
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub kind: BusType,
    pub pd: f64,
    pub qd: f64,
    pub gs: f64,
    pub bs: f64,
    pub vm_init: f64,
    /// Initial angle in radians.
    pub va_init: f64,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    /// Off-nominal turns ratio; 1.0 for lines.
    pub tap_ratio: f64,
    /// Phase shift in radians.
    pub phase_shift: f64,
    pub status: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub pg: f64,
    pub qg: f64,
    pub vset: f64,
    pub is_agc: bool,
    /// Active power capacity in p.u. on the system base.
    pub capacity: f64,
    /// Automatic-generation-control ramp participation (p.u.); only used when `is_agc`.
    pub agc_ramp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindFarm {
    pub name: String,
    pub bus: usize,
    /// Column of the wind-history table feeding this farm.
    pub column: usize,
    /// Multiplier applied to the history values (p.u. per history unit).
    pub scale: f64,
}

/// A validated network model in per-unit on `base_mva`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub wind_farms: Vec<WindFarm>,
}

/// Bus-type partition of a case.
///
/// `s` holds the PV and PQ buses (size N), `l` the PQ buses (size M),
/// `t` the PV and slack buses, all in ascending internal order.
#[derive(Debug, Clone, PartialEq)]
pub struct BusIndex {
    pub slack: usize,
    pub s: Vec<usize>,
    pub l: Vec<usize>,
    pub t: Vec<usize>,
    pub pos_s: Vec<Option<usize>>,
    pub pos_l: Vec<Option<usize>>,
    pub pos_t: Vec<Option<usize>>,
}

impl BusIndex {
    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn m(&self) -> usize {
        self.l.len()
    }

    /// Dimension of the free state `[theta_S; V_L]`.
    pub fn state_dim(&self) -> usize {
        self.s.len() + self.l.len()
    }
}

impl NetworkCase {
    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn index(&self) -> BusIndex {
        let nb = self.buses.len();
        let mut idx = BusIndex {
            slack: usize::MAX,
            s: Vec::new(),
            l: Vec::new(),
            t: Vec::new(),
            pos_s: vec![None; nb],
            pos_l: vec![None; nb],
            pos_t: vec![None; nb],
        };
        for (i, bus) in self.buses.iter().enumerate() {
            match bus.kind {
                BusType::Slack => {
                    idx.slack = i;
                    idx.pos_t[i] = Some(idx.t.len());
                    idx.t.push(i);
                }
                BusType::Pv => {
                    idx.pos_s[i] = Some(idx.s.len());
                    idx.s.push(i);
                    idx.pos_t[i] = Some(idx.t.len());
                    idx.t.push(i);
                }
                BusType::Pq => {
                    idx.pos_s[i] = Some(idx.s.len());
                    idx.s.push(i);
                    idx.pos_l[i] = Some(idx.l.len());
                    idx.l.push(i);
                }
            }
        }
        idx
    }

    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusType::Slack)
            .expect("validated case has a slack bus")
    }

    /// Scheduled active generation per bus (p.u.).
    pub fn bus_pg(&self) -> Vec<f64> {
        let mut pg = vec![0.0; self.buses.len()];
        for g in &self.generators {
            pg[g.bus] += g.pg;
        }
        pg
    }

    /// Scheduled reactive generation per bus (p.u.).
    pub fn bus_qg(&self) -> Vec<f64> {
        let mut qg = vec![0.0; self.buses.len()];
        for g in &self.generators {
            qg[g.bus] += g.qg;
        }
        qg
    }

    /// Voltage magnitude held at each bus in `t` (generator set point, else the bus initial value).
    pub fn voltage_setpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.buses.iter().map(|b| b.vm_init).collect();
        let mut seen = vec![false; self.buses.len()];
        for g in &self.generators {
            if !seen[g.bus] && self.buses[g.bus].kind != BusType::Pq {
                v[g.bus] = g.vset;
                seen[g.bus] = true;
            }
        }
        v
    }

    /// Sum over S-buses of scheduled generation minus load, i.e. the imbalance with zero wind.
    pub fn base_imbalance(&self) -> f64 {
        let pg = self.bus_pg();
        self.buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind != BusType::Slack)
            .map(|(i, b)| pg[i] - b.pd)
            .sum()
    }

    /// Human-readable label of each free state `[theta_S; V_L]`.
    pub fn state_labels(&self) -> Vec<String> {
        let idx = self.index();
        idx.s
            .iter()
            .map(|&i| format!("theta_{}", self.buses[i].id))
            .chain(idx.l.iter().map(|&i| format!("V_{}", self.buses[i].id)))
            .collect()
    }

    pub fn branch_labels(&self) -> Vec<String> {
        self.branches
            .iter()
            .map(|br| {
                format!(
                    "P_{}_{}",
                    self.buses[br.from].id, self.buses[br.to].id
                )
            })
            .collect()
    }

    pub fn bus_position(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Checks the structural invariants of a case.
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        if !(self.base_mva > 0.0) {
            return Err(Error::InvalidCase(format!(
                "baseMVA must be positive, got {}",
                self.base_mva
            )));
        }
        let slacks = self
            .buses
            .iter()
            .filter(|b| b.kind == BusType::Slack)
            .count();
        if slacks != 1 {
            return Err(Error::InvalidCase(format!(
                "expected exactly one slack bus, found {slacks}"
            )));
        }
        let nb = self.buses.len();
        for (k, br) in self.branches.iter().enumerate() {
            if br.from >= nb || br.to >= nb {
                return Err(Error::InvalidCase(format!(
                    "branch {} references a missing bus",
                    k + 1
                )));
            }
            if br.status && br.x == 0.0 {
                return Err(Error::InvalidCase(format!(
                    "branch {} ({} - {}) has zero reactance",
                    k + 1,
                    self.buses[br.from].id,
                    self.buses[br.to].id
                )));
            }
        }
        for g in &self.generators {
            if g.bus >= nb {
                return Err(Error::InvalidCase("generator on a missing bus".into()));
            }
        }
        for f in &self.wind_farms {
            if f.bus >= nb || self.buses[f.bus].kind == BusType::Slack {
                return Err(Error::InvalidCase(format!(
                    "wind farm `{}` must sit on a PV or PQ bus",
                    f.name
                )));
            }
        }
        Ok(())
    }
}
