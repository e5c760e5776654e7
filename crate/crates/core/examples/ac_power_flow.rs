//! Parse a MATPOWER case and solve the AC power flow.
//!
//! cargo run --example ac_power_flow -- data/cases/case14.m

use ctrlplf::acpf::{branch_flows_ac, AcSolver, InjectionSet};
use ctrlplf::netcase::read_case;

fn main() -> ctrlplf::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "data/cases/case14.m".into());
    let case = read_case(&path)?;
    let idx = case.index();
    println!("{path}: {} buses, {} branches, slack bus {}", case.buses.len(), case.branches.len(), case.buses[idx.slack].id);

    let sol = AcSolver::new(&case).solve(&InjectionSet::base(&case), None)?;
    println!("converged in {} iterations, mismatch {:?}", sol.iterations, sol.mismatch_history);
    let (vm, va) = sol.state.bus_vectors(&idx);
    for (k, bus) in case.buses.iter().enumerate().take(10) {
        println!("bus {:>5}: |V| = {:.4} p.u., angle = {:>8.3} deg", bus.id, vm[k], va[k].to_degrees());
    }
    let flows = branch_flows_ac(&case, &sol.state);
    let labels = case.branch_labels();
    for (label, f) in labels.iter().zip(&flows).take(5) {
        println!("{label}: P = {:>8.2} MW, Q = {:>8.2} MVAr", 100.0 * f.p_from, 100.0 * f.q_from);
    }
    Ok(())
}
