//! Reader and writer for the MATPOWER version 2 case subset:
//! `baseMVA`, `bus`, `gen` and `branch`. Every other field is ignored.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Branch, Bus, BusType, Generator, NetworkCase};
use crate::{Error, Result};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

struct Table {
    rows: Vec<(usize, Vec<f64>)>,
}

/// Reads and parses a case file from disk.
pub fn read_case(path: impl AsRef<Path>) -> Result<NetworkCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut case = parse_case(&text)?;
    if case.name.is_empty() {
        case.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(case)
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Parses MATPOWER case text into a per-unit [`NetworkCase`].
///
/// Out-of-service branches and generators are dropped. A PV bus left
/// without an in-service generator is demoted to PQ.
pub fn parse_case(text: &str) -> Result<NetworkCase> {
    let mut base_mva: Option<f64> = None;
    let mut tables: HashMap<&'static str, Table> = HashMap::new();
    let mut name = String::new();

    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let lineno = i + 1;
        let line = strip_comment(lines[i]).trim();
        i += 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("function") {
            if let Some(eq) = rest.find('=') {
                name = rest[eq + 1..].trim().trim_end_matches(';').to_string();
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else {
            continue;
        };
        let Some(eq) = rest.find('=') else {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected assignment, found `{line}`"),
            });
        };
        let field = rest[..eq].trim();
        let value = rest[eq + 1..].trim();
        let key: &'static str = match field {
            "baseMVA" => {
                let v = value.trim_end_matches(';').trim();
                base_mva = Some(v.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("invalid baseMVA `{v}`"),
                })?);
                continue;
            }
            "bus" => "bus",
            "gen" => "gen",
            "branch" => "branch",
            _ => {
                // Skip any other matrix or cell array wholesale.
                if value.starts_with('[') || value.starts_with('{') {
                    let close = if value.starts_with('[') { ']' } else { '}' };
                    let mut body = value.to_string();
                    while !body.contains(close) {
                        if i >= lines.len() {
                            return Err(Error::Parse {
                                line: lineno,
                                msg: format!("unterminated `{field}` block"),
                            });
                        }
                        body = strip_comment(lines[i]).to_string();
                        i += 1;
                    }
                }
                continue;
            }
        };
        let Some(open) = value.strip_prefix('[') else {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected `[` after mpc.{field}"),
            });
        };
        let mut rows = Vec::new();
        let mut pending = open.to_string();
        let mut pending_line = lineno;
        loop {
            let (body, done) = match pending.find(']') {
                Some(p) => (pending[..p].to_string(), true),
                None => (pending.clone(), false),
            };
            for chunk in body.split(';') {
                let chunk = chunk.trim();
                if chunk.is_empty() {
                    continue;
                }
                let mut row = Vec::new();
                for tok in chunk.split(|c: char| c.is_whitespace() || c == ',') {
                    if tok.is_empty() {
                        continue;
                    }
                    let v = parse_number(tok).ok_or_else(|| Error::Parse {
                        line: pending_line,
                        msg: format!("invalid number `{tok}` in mpc.{field}"),
                    })?;
                    row.push(v);
                }
                rows.push((pending_line, row));
            }
            if done {
                break;
            }
            if i >= lines.len() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("unterminated matrix mpc.{field}"),
                });
            }
            pending = strip_comment(lines[i]).to_string();
            pending_line = i + 1;
            i += 1;
        }
        tables.insert(key, Table { rows });
    }

    let base_mva = base_mva.ok_or(Error::MissingSection("baseMVA"))?;
    let bus_t = tables.remove("bus").ok_or(Error::MissingSection("bus"))?;
    let gen_t = tables.remove("gen").ok_or(Error::MissingSection("gen"))?;
    let br_t = tables.remove("branch").ok_or(Error::MissingSection("branch"))?;

    build_case(name, base_mva, bus_t, gen_t, br_t)
}

fn parse_number(tok: &str) -> Option<f64> {
    match tok {
        "Inf" | "inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        _ => tok.parse().ok(),
    }
}

fn check_cols(table: &Table, min: usize, what: &str) -> Result<()> {
    for (line, row) in &table.rows {
        if row.len() < min {
            return Err(Error::Parse {
                line: *line,
                msg: format!("{what} row has {} columns, need at least {min}", row.len()),
            });
        }
    }
    Ok(())
}

fn build_case(
    name: String,
    base_mva: f64,
    bus_t: Table,
    gen_t: Table,
    br_t: Table,
) -> Result<NetworkCase> {
    check_cols(&bus_t, BUS_COLS, "bus")?;
    check_cols(&gen_t, GEN_COLS, "gen")?;
    check_cols(&br_t, BRANCH_COLS, "branch")?;
    if !(base_mva > 0.0) {
        return Err(Error::InvalidCase(format!(
            "baseMVA must be positive, got {base_mva}"
        )));
    }

    let deg = std::f64::consts::PI / 180.0;
    let mut lookup: HashMap<u32, usize> = HashMap::new();
    let mut buses = Vec::with_capacity(bus_t.rows.len());
    for (line, r) in &bus_t.rows {
        let id = r[0] as u32;
        if r[0] < 0.0 || r[0].fract() != 0.0 {
            return Err(Error::Parse {
                line: *line,
                msg: format!("invalid bus number {}", r[0]),
            });
        }
        let kind = match r[1] as i64 {
            1 => BusType::Pq,
            2 => BusType::Pv,
            3 => BusType::Slack,
            4 => {
                return Err(Error::InvalidCase(format!(
                    "bus {id} is isolated; multi-island cases are not supported"
                )))
            }
            t => {
                return Err(Error::Parse {
                    line: *line,
                    msg: format!("unknown bus type {t}"),
                })
            }
        };
        if lookup.insert(id, buses.len()).is_some() {
            return Err(Error::Parse {
                line: *line,
                msg: format!("duplicate bus number {id}"),
            });
        }
        buses.push(Bus {
            id,
            kind,
            pd: r[2] / base_mva,
            qd: r[3] / base_mva,
            gs: r[4] / base_mva,
            bs: r[5] / base_mva,
            vm_init: r[7],
            va_init: r[8] * deg,
            base_kv: r[9],
        });
    }

    let bus_of = |id: f64, line: usize, what: &str| -> Result<usize> {
        lookup.get(&(id as u32)).copied().ok_or_else(|| {
            Error::InvalidCase(format!(
                "{what} on line {line} references unknown bus {id}"
            ))
        })
    };

    let mut generators = Vec::new();
    for (line, r) in &gen_t.rows {
        if r[7] <= 0.0 {
            continue;
        }
        let bus = bus_of(r[0], *line, "generator")?;
        let capacity = if r[8] > 0.0 { r[8] } else { r[6] };
        generators.push(Generator {
            bus,
            pg: r[1] / base_mva,
            qg: r[2] / base_mva,
            vset: r[5],
            is_agc: false,
            capacity: capacity / base_mva,
            agc_ramp: None,
        });
    }

    let mut branches = Vec::new();
    for (line, r) in &br_t.rows {
        if r[10] <= 0.0 {
            continue;
        }
        let from = bus_of(r[0], *line, "branch")?;
        let to = bus_of(r[1], *line, "branch")?;
        let tap = if r[8] == 0.0 { 1.0 } else { r[8] };
        let shift = if r.len() > 9 { r[9] * deg } else { 0.0 };
        branches.push(Branch {
            from,
            to,
            r: r[2],
            x: r[3],
            b_charging: r[4],
            tap_ratio: tap,
            phase_shift: shift,
            status: true,
        });
    }

    let mut has_gen = vec![false; buses.len()];
    for g in &generators {
        has_gen[g.bus] = true;
    }
    for (i, bus) in buses.iter_mut().enumerate() {
        if bus.kind == BusType::Pv && !has_gen[i] {
            bus.kind = BusType::Pq;
        }
    }

    let case = NetworkCase {
        name,
        base_mva,
        buses,
        branches,
        generators,
        wind_farms: Vec::new(),
    };
    case.validate()?;
    Ok(case)
}

fn num(v: f64) -> String {
    // Shortest round-trip representation.
    let s = format!("{v:?}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

impl NetworkCase {
    /// Writes the case back out in the MATPOWER subset accepted by [`parse_case`].
    pub fn to_matpower(&self) -> String {
        let base = self.base_mva;
        let rad = 180.0 / std::f64::consts::PI;
        let mut out = String::new();
        let name = if self.name.is_empty() { "case" } else { &self.name };
        let _ = writeln!(out, "function mpc = {name}");
        let _ = writeln!(out, "mpc.version = '2';");
        let _ = writeln!(out, "mpc.baseMVA = {};", num(base));
        let _ = writeln!(out, "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin");
        let _ = writeln!(out, "mpc.bus = [");
        for b in &self.buses {
            let t = match b.kind {
                BusType::Pq => 1,
                BusType::Pv => 2,
                BusType::Slack => 3,
            };
            let _ = writeln!(
                out,
                "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t{}\t{}\t{}\t1\t1.1\t0.9;",
                b.id,
                t,
                num(b.pd * base),
                num(b.qd * base),
                num(b.gs * base),
                num(b.bs * base),
                num(b.vm_init),
                num(b.va_init * rad),
                num(b.base_kv)
            );
        }
        let _ = writeln!(out, "];");
        let _ = writeln!(out, "mpc.gen = [");
        for g in &self.generators {
            let _ = writeln!(
                out,
                "\t{}\t{}\t{}\t9999\t-9999\t{}\t{}\t1\t{}\t0;",
                self.buses[g.bus].id,
                num(g.pg * base),
                num(g.qg * base),
                num(g.vset),
                num(base),
                num(g.capacity * base)
            );
        }
        let _ = writeln!(out, "];");
        let _ = writeln!(out, "mpc.branch = [");
        for br in &self.branches {
            let _ = writeln!(
                out,
                "\t{}\t{}\t{}\t{}\t{}\t0\t0\t0\t{}\t{}\t{}\t-360\t360;",
                self.buses[br.from].id,
                self.buses[br.to].id,
                num(br.r),
                num(br.x),
                num(br.b_charging),
                num(br.tap_ratio),
                num(br.phase_shift * rad),
                u8::from(br.status)
            );
        }
        let _ = writeln!(out, "];");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn two_bus_minimal() {
        let case = parse_case(TWO_BUS).unwrap();
        assert_eq!(case.name, "two_bus");
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.branches[0].x, 0.1);
        assert_eq!(case.branches[0].tap_ratio, 1.0);
    }

    #[test]
    fn ieee14_counts() {
        let case = parse_case(&case14_text()).unwrap();
        assert_eq!(case.generators.len(), 5);
        assert_eq!(case.branches.len(), 20);
        assert!((case.buses[2].pd - 0.942).abs() < 1e-15);
        assert!((case.branches[7].tap_ratio - 0.978).abs() < 1e-15);
        let pv = case.buses.iter().filter(|b| b.kind == BusType::Pv).count();
        assert_eq!(pv, 4);
    }

    #[test]
    fn missing_bus_table_is_named() {
        let text = "mpc.baseMVA = 100;\nmpc.gen = [1 0 0 0 0 1 100 1 10 0];\nmpc.branch = [1 2 0 0.1 0 0 0 0 0 0 1];\n";
        match parse_case(text) {
            Err(Error::MissingSection(s)) => assert_eq!(s, "bus"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = TWO_BUS.replace("2 1 0 0 0 0 1 1.0", "2 1 0 zz 0 0 1 1.0");
        match parse_case(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_two_slacks() {
        let text = TWO_BUS.replace("2 1 0 0 0 0 1 1.0", "2 3 0 0 0 0 1 1.0");
        assert!(matches!(parse_case(&text), Err(Error::InvalidCase(_))));
    }

    #[test]
    fn rejects_zero_slack() {
        let text = TWO_BUS.replace("1 3 0 0 0 0 1 1.0", "1 1 0 0 0 0 1 1.0");
        assert!(matches!(parse_case(&text), Err(Error::InvalidCase(_))));
    }

    #[test]
    fn rejects_dangling_branch() {
        let text = TWO_BUS.replace("1 2 0 0.1", "1 7 0 0.1");
        assert!(matches!(parse_case(&text), Err(Error::InvalidCase(_))));
    }

    #[test]
    fn rejects_zero_reactance() {
        let text = TWO_BUS.replace("1 2 0 0.1", "1 2 0.01 0");
        assert!(matches!(parse_case(&text), Err(Error::InvalidCase(_))));
    }

    #[test]
    fn drops_out_of_service_and_demotes_pv() {
        let text = "\
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0 0 0 0 1 1 0 0 1 1.1 0.9;
 2 2 10 0 0 0 1 1 0 0 1 1.1 0.9;
 3 1 10 0 0 0 1 1 0 0 1 1.1 0.9;
];
mpc.gen = [
 1 0 0 0 0 1 100 1 100 0;
 2 5 0 0 0 1 100 0 100 0;
];
mpc.branch = [
 1 2 0 0.1 0 0 0 0 0 0 1 -360 360;
 2 3 0 0.1 0 0 0 0 0 0 1 -360 360;
 1 3 0 0   0 0 0 0 0 0 0 -360 360;
];
";
        let case = parse_case(text).unwrap();
        assert_eq!(case.branches.len(), 2);
        assert_eq!(case.generators.len(), 1);
        assert_eq!(case.buses[1].kind, BusType::Pq);
    }

    #[test]
    fn round_trip_reparses_identically() {
        let case = parse_case(&case14_text()).unwrap();
        let again = parse_case(&case.to_matpower()).unwrap();
        assert_eq!(case.buses.len(), again.buses.len());
        for (a, b) in case.buses.iter().zip(&again.buses) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.kind, b.kind);
            assert!((a.pd - b.pd).abs() < 1e-14);
            assert!((a.qd - b.qd).abs() < 1e-14);
            assert!((a.bs - b.bs).abs() < 1e-14);
            assert!((a.va_init - b.va_init).abs() < 1e-14);
        }
        for (a, b) in case.branches.iter().zip(&again.branches) {
            assert_eq!(a, b);
        }
        for (a, b) in case.generators.iter().zip(&again.generators) {
            assert_eq!(a.bus, b.bus);
            assert!((a.pg - b.pg).abs() < 1e-14);
            assert!((a.capacity - b.capacity).abs() < 1e-14);
            assert_eq!(a.vset, b.vset);
        }
    }

    #[test]
    fn per_unit_is_scale_invariant() {
        let case = parse_case(&case14_text()).unwrap();
        // Rewrite every MW/MVAr quantity and the base by the same factor.
        let mut scaled = case.clone();
        scaled.base_mva = case.base_mva * 10.0;
        let text = scaled.to_matpower();
        let back = parse_case(&text).unwrap();
        for (a, b) in case.buses.iter().zip(&back.buses) {
            assert!((a.pd - b.pd).abs() < 1e-14);
            assert!((a.qd - b.qd).abs() < 1e-14);
        }
        for (a, b) in case.generators.iter().zip(&back.generators) {
            assert!((a.pg - b.pg).abs() < 1e-14);
        }
    }
}
