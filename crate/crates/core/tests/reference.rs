//! IEEE 14-bus admittance matrix and power flow against an independent solver.

mod common;

use ctrlplf::acpf::{branch_flows_ac, solve_ac, InjectionSet};
use ctrlplf::netcase::{build_admittance, read_case};
use serde_json::Value;

fn reference() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/case14_reference.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn matrix(v: &Value) -> Vec<Vec<f64>> {
    serde_json::from_value(v.clone()).unwrap()
}

#[test]
fn admittance_matches_reference() {
    let r = reference();
    let case = read_case(common::case_path("case14")).unwrap();
    let y = build_admittance(&case);
    let (re, im) = (matrix(&r["ybus_re"]), matrix(&r["ybus_im"]));
    for i in 0..14 {
        for j in 0..14 {
            assert!((y.g[(i, j)] - re[i][j]).abs() < 1e-9, "G[{i},{j}]");
            assert!((y.b[(i, j)] - im[i][j]).abs() < 1e-9, "B[{i},{j}]");
        }
    }
}

#[test]
fn power_flow_matches_reference() {
    let r = reference();
    let case = read_case(common::case_path("case14")).unwrap();
    let state = solve_ac(&case, &InjectionSet::base(&case)).unwrap();
    let (vm, va) = state.bus_vectors(&case.index());
    let vm_ref: Vec<f64> = serde_json::from_value(r["vm"].clone()).unwrap();
    let va_ref: Vec<f64> = serde_json::from_value(r["va_deg"].clone()).unwrap();
    for i in 0..14 {
        assert!((vm[i] - vm_ref[i]).abs() < 1e-4, "vm at bus {}", i + 1);
        assert!((va[i].to_degrees() - va_ref[i]).abs() < 1e-3, "va at bus {}", i + 1);
    }
    let flows = branch_flows_ac(&case, &state);
    let b12 = &r["branch_1_2"];
    let base = case.base_mva;
    assert!((flows[0].p_from - b12["p_from_mw"].as_f64().unwrap() / base).abs() < 1e-3);
    assert!((flows[0].q_from - b12["q_from_mvar"].as_f64().unwrap() / base).abs() < 1e-3);
    assert!((flows[0].p_to - b12["p_to_mw"].as_f64().unwrap() / base).abs() < 1e-3);
}
