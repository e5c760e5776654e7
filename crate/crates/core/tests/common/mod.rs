#![allow(dead_code)]

use std::path::PathBuf;

use ctrlplf::control::ControlParams;
use ctrlplf::netcase::{read_case, NetworkCase, Sidecar, WindHistory};
use ctrlplf::windgen::{generate, WindSpec};

pub fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(rel)
}

pub fn case_path(name: &str) -> PathBuf {
    data(&format!("cases/{name}.m"))
}

pub fn sidecar_path(name: &str) -> PathBuf {
    data(&format!("sidecars/{name}.json"))
}

/// Wind preset each shipped sidecar is written for.
pub fn preset_for(name: &str) -> &'static str {
    if name == "case14" {
        "bimodal"
    } else {
        "nine-farm-maryland-like"
    }
}

pub struct Setup {
    pub case: NetworkCase,
    pub params: ControlParams,
    pub power_factor: f64,
    pub wind: WindHistory,
}

/// Shipped case with its sidecar and 10,000 rows of preset wind (seed 1),
/// the same inputs `ctrlplf run --wind-preset` builds.
pub fn setup(name: &str) -> Setup {
    let mut case = read_case(case_path(name)).unwrap();
    let sidecar = Sidecar::read(sidecar_path(name)).unwrap();
    let wind = generate(&WindSpec::preset(preset_for(name), 10_000, 1).unwrap())
        .unwrap()
        .history;
    sidecar.apply(&mut case, &wind.names).unwrap();
    let params = ControlParams::from_case(&case, &sidecar.control).unwrap();
    Setup {
        case,
        params,
        power_factor: sidecar.power_factor,
        wind,
    }
}

pub fn cli_args(name: &str, out: &std::path::Path, extra: &[&str]) -> Vec<String> {
    let mut args = vec![
        "ctrlplf".to_string(),
        "run".into(),
        "--case".into(),
        case_path(name).display().to_string(),
        "--sidecar".into(),
        sidecar_path(name).display().to_string(),
        "--wind-preset".into(),
        preset_for(name).into(),
        "--out".into(),
        out.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}
