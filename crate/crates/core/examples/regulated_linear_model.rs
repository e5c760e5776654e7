//! Linear power flow with frequency regulation: the imbalance decides the
//! segment, the segment decides how the regulating units share it.
//!
//! cargo run --example regulated_linear_model

use ctrlplf::acpf::InjectionSet;
use ctrlplf::control::{assemble_piecewise, frequency_deviation, regulation_amounts, ControlParams};
use ctrlplf::dlpf::{build_dlpf, solve_dlpf};
use ctrlplf::netcase::{build_admittance, read_case, Sidecar};
use nalgebra::DVector;

fn main() -> ctrlplf::Result<()> {
    let mut case = read_case("data/cases/case14.m")?;
    let sidecar = Sidecar::read("data/sidecars/case14.json")?;
    let farms = ["farm1", "farm2", "farm3"].map(String::from);
    sidecar.apply(&mut case, &farms)?;
    let params = ControlParams::from_case(&case, &sidecar.control)?;
    let [_, t1, t2, t3] = params.thresholds();
    println!("segment bounds on |imbalance| (p.u.): {t1:.3} / {t2:.3} / {t3:.3}");

    let lin = build_dlpf(&case, &build_admittance(&case))?;
    let model = assemble_piecewise(&case, &params, &lin)?;
    let n = case.index().n();
    for p_delta in [-0.5 * t1, -0.5 * (t1 + t2), -0.5 * (t2 + t3)] {
        // Spread the wanted imbalance evenly over the active injections.
        let mut x = DVector::zeros(model.input_dim());
        x.rows_mut(0, n).fill((p_delta - model.c_offset) / n as f64);
        let segment = model.classify_segment(&x);
        let y = model.map(&x).expect("inside capacity");

        let mut inj = InjectionSet::base(&case);
        inj.p += x.rows(0, n);
        let total = inj.p.sum();
        let regulation = regulation_amounts(&params, total)?;
        inj.p += &regulation;
        let check = solve_dlpf(&lin, &inj).y();
        println!(
            "imbalance {total:>7.3} p.u.: {segment:?}, frequency deviation {:.4} Hz, regulation {:.3} p.u., map vs solve {:.1e}",
            frequency_deviation(&params, total)?,
            regulation.sum(),
            (y - check).abs().max()
        );
    }
    Ok(())
}
