//! Experiment sidecar: AGC membership, wind-farm placement, control
//! parameters and generation rescheduling, none of which live in case files.
//! Also reads the wind-history CSV the farms draw from.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{BusType, NetworkCase, WindFarm};
use crate::{Error, Result};

/// Behaviour when the imbalance exceeds the regulation capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExceedPolicy {
    /// Beyond-capacity probability must stay under a small threshold; such samples are dropped.
    #[default]
    Error,
    /// Beyond-capacity samples are treated as secondary-control samples.
    Clamp,
}

/// Frequency-regulation settings, in the units they are usually quoted in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSettings {
    /// Dead-zone threshold (Hz).
    pub f_d: f64,
    /// AGC activation threshold (Hz).
    pub f_a: f64,
    /// Nominal frequency (Hz).
    pub f_n: f64,
    /// Governor response, p.u. on generator capacity per p.u. frequency.
    pub kg: f64,
    /// Load frequency characteristic, p.u. on bus load per p.u. frequency.
    pub kd: f64,
    /// Maximum regulation capability (MW); defaults to twice the AGC threshold.
    pub p_delta_max_mw: Option<f64>,
    pub exceed_policy: ExceedPolicy,
}

impl Default for ControlSettings {
    fn default() -> Self {
        Self {
            f_d: 0.01,
            f_a: 0.1,
            f_n: 50.0,
            kg: 25.0,
            kd: 2.6,
            p_delta_max_mw: None,
            exceed_policy: ExceedPolicy::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmMapping {
    #[serde(default)]
    pub name: Option<String>,
    pub bus: u32,
    pub column: ColumnRef,
    #[serde(default = "one")]
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgcUnit {
    pub bus: u32,
    /// Ramp participation in MW; defaults to the generator capacity.
    #[serde(default)]
    pub ramp_mw: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_pf() -> f64 {
    0.85
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    #[serde(default)]
    pub agc_units: Vec<AgcUnit>,
    #[serde(default)]
    pub wind_farms: Vec<FarmMapping>,
    #[serde(default = "default_pf")]
    pub power_factor: f64,
    /// Reschedules the non-slack generators so that scheduled generation minus
    /// load over the PV and PQ buses equals this value (MW).
    #[serde(default)]
    pub scheduled_imbalance_mw: Option<f64>,
    #[serde(default)]
    pub control: ControlSettings,
}

impl Sidecar {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Sidecar = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("sidecar: {e}")))?;
        if !(s.power_factor > 0.0 && s.power_factor <= 1.0) {
            return Err(Error::Config(format!(
                "power factor must lie in (0, 1], got {}",
                s.power_factor
            )));
        }
        Ok(s)
    }

    /// Applies AGC flags, farm placement and rescheduling to `case`.
    ///
    /// `columns` are the wind-history header names used to resolve named columns.
    pub fn apply(&self, case: &mut NetworkCase, columns: &[String]) -> Result<()> {
        let ids: Vec<u32> = case.buses.iter().map(|b| b.id).collect();
        let lookup = |id: u32| -> Result<usize> {
            ids.iter()
                .position(|&b| b == id)
                .ok_or_else(|| Error::Config(format!("sidecar references unknown bus {id}")))
        };

        for g in &mut case.generators {
            g.is_agc = false;
            g.agc_ramp = None;
        }
        for unit in &self.agc_units {
            let bus = lookup(unit.bus)?;
            if case.buses[bus].kind == BusType::Slack {
                return Err(Error::Config(format!(
                    "AGC unit at bus {} sits on the slack bus",
                    unit.bus
                )));
            }
            let mut found = false;
            for g in case.generators.iter_mut().filter(|g| g.bus == bus) {
                g.is_agc = true;
                g.agc_ramp = unit.ramp_mw.map(|r| r / case.base_mva);
                found = true;
            }
            if !found {
                return Err(Error::Config(format!(
                    "AGC unit at bus {} has no in-service generator",
                    unit.bus
                )));
            }
        }

        let mut farms = Vec::with_capacity(self.wind_farms.len());
        for (k, f) in self.wind_farms.iter().enumerate() {
            let bus = lookup(f.bus)?;
            let column = match &f.column {
                ColumnRef::Index(i) => *i,
                ColumnRef::Name(n) => columns.iter().position(|c| c == n).ok_or_else(|| {
                    Error::Config(format!("wind history has no column named `{n}`"))
                })?,
            };
            if !columns.is_empty() && column >= columns.len() {
                return Err(Error::Config(format!(
                    "wind farm column {column} out of range ({} columns)",
                    columns.len()
                )));
            }
            let name = f.name.clone().unwrap_or_else(|| match &f.column {
                ColumnRef::Name(n) => n.clone(),
                ColumnRef::Index(_) => format!("farm{}", k + 1),
            });
            farms.push(WindFarm {
                name,
                bus,
                column,
                scale: f.scale,
            });
        }
        case.wind_farms = farms;

        if let Some(target_mw) = self.scheduled_imbalance_mw {
            reschedule(case, target_mw / case.base_mva)?;
        }
        case.validate()
    }
}

fn reschedule(case: &mut NetworkCase, target: f64) -> Result<()> {
    let slack = case.slack();
    let load: f64 = case
        .buses
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != slack)
        .map(|(_, b)| b.pd)
        .sum();
    let cap: f64 = case
        .generators
        .iter()
        .filter(|g| g.bus != slack)
        .map(|g| g.capacity)
        .sum();
    if cap <= 0.0 {
        return Err(Error::Config(
            "rescheduling needs at least one non-slack generator".into(),
        ));
    }
    let loading = (target + load) / cap;
    if !(0.0..=1.0).contains(&loading) {
        return Err(Error::Config(format!(
            "scheduled imbalance needs a generator loading of {loading:.3}, outside [0, 1]"
        )));
    }
    for g in case.generators.iter_mut().filter(|g| g.bus != slack) {
        g.pg = loading * g.capacity;
    }
    Ok(())
}

/// Historical farm outputs: one column per farm, values in p.u. active power.
#[derive(Debug, Clone, PartialEq)]
pub struct WindHistory {
    pub names: Vec<String>,
    pub data: DMatrix<f64>,
}

pub fn read_wind_history(path: impl AsRef<Path>) -> Result<WindHistory> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    WindHistory::from_reader(file)
}

impl WindHistory {
    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if names.is_empty() {
            return Err(Error::Config("wind history has no columns".into()));
        }
        let mut values = Vec::new();
        let mut rows = 0;
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != names.len() {
                return Err(Error::Config(format!(
                    "wind history row {} has {} fields, expected {}",
                    k + 1,
                    rec.len(),
                    names.len()
                )));
            }
            for field in rec.iter() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Config(format!("wind history row {}: invalid value `{field}`", k + 1))
                })?;
                if !v.is_finite() {
                    return Err(Error::Config(format!(
                        "wind history row {}: non-finite value",
                        k + 1
                    )));
                }
                values.push(v);
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::Config("wind history has no rows".into()));
        }
        Ok(Self {
            data: DMatrix::from_row_slice(rows, names.len(), &values),
            names,
        })
    }

    /// Writes the history as CSV; `comment` lines are prefixed with `#`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(out, "# {line}").map_err(|e| Error::io("<csv>", e))?;
            }
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.names)?;
        for r in 0..self.data.nrows() {
            w.write_record(self.data.row(r).iter().map(|v| format!("{v:?}")))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Per-farm active outputs (rows = samples, columns = the case's farms, in p.u.).
    pub fn farm_outputs(&self, case: &NetworkCase) -> Result<DMatrix<f64>> {
        let n = self.data.nrows();
        let mut out = DMatrix::zeros(n, case.wind_farms.len());
        for (f, farm) in case.wind_farms.iter().enumerate() {
            if farm.column >= self.data.ncols() {
                return Err(Error::Config(format!(
                    "wind farm `{}` uses column {} but the history has {}",
                    farm.name,
                    farm.column,
                    self.data.ncols()
                )));
            }
            for r in 0..n {
                out[(r, f)] = self.data[(r, farm.column)] * farm.scale;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::case14_text;
    use super::super::parse_case;
    use super::*;

    const SIDE: &str = r#"{
        "agc_units": [{"bus": 2}, {"bus": 3, "ramp_mw": 20}],
        "wind_farms": [
            {"bus": 4, "column": "a"},
            {"bus": 9, "column": 1, "scale": 0.5}
        ],
        "scheduled_imbalance_mw": -40,
        "control": {"f_d": 0.02}
    }"#;

    #[test]
    fn applies_flags_and_farms() {
        let mut case = parse_case(&case14_text()).unwrap();
        let side = Sidecar::from_json(SIDE).unwrap();
        assert_eq!(side.power_factor, 0.85);
        assert_eq!(side.control.f_d, 0.02);
        assert_eq!(side.control.kg, 25.0);
        side.apply(&mut case, &["a".into(), "b".into()]).unwrap();
        let agc: Vec<u32> = case
            .generators
            .iter()
            .filter(|g| g.is_agc)
            .map(|g| case.buses[g.bus].id)
            .collect();
        assert_eq!(agc, vec![2, 3]);
        assert_eq!(case.generators[2].agc_ramp, Some(0.2));
        assert_eq!(case.wind_farms.len(), 2);
        assert_eq!(case.wind_farms[0].column, 0);
        assert_eq!(case.wind_farms[1].name, "farm2");
        assert!((case.base_imbalance() - (-0.4)).abs() < 1e-12);
    }

    #[test]
    fn unknown_column_is_config_error() {
        let mut case = parse_case(&case14_text()).unwrap();
        let side = Sidecar::from_json(SIDE).unwrap();
        let err = side.apply(&mut case, &["x".into(), "y".into()]).unwrap_err();
        assert!(err.is_config_error());
    }

    #[test]
    fn rejects_unknown_fields() {
        assert!(Sidecar::from_json(r#"{"wind_farmz": []}"#).is_err());
    }

    #[test]
    fn wind_csv_round_trip() {
        let h = WindHistory {
            names: vec!["a".into(), "b".into()],
            data: DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.45]),
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf, Some("config_hash: abc")).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# config_hash: abc\na,b\n"));
        let back = WindHistory::from_reader(text.as_bytes()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn wind_csv_rejects_ragged_rows() {
        let text = "a,b\n0.1,0.2\n0.3\n";
        assert!(WindHistory::from_reader(text.as_bytes()).is_err());
    }
}
