//! Analytical probabilistic load flow on a shipped case.
//!
//! cargo run --example probabilistic_load_flow -- case39 direct

use ctrlplf::control::ControlParams;
use ctrlplf::netcase::{read_case, Sidecar};
use ctrlplf::plf::{run_plf, PlfConfig};
use ctrlplf::windgen::{generate, WindSpec};

fn main() -> ctrlplf::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "case14".into());
    let method = args.next().unwrap_or_else(|| "indirect".into()).parse()?;
    let preset = if name == "case14" { "bimodal" } else { "nine-farm-maryland-like" };

    let mut case = read_case(format!("data/cases/{name}.m"))?;
    let sidecar = Sidecar::read(format!("data/sidecars/{name}.json"))?;
    let wind = generate(&WindSpec::preset(preset, 10_000, 1)?)?.history;
    sidecar.apply(&mut case, &wind.names)?;
    let params = ControlParams::from_case(&case, &sidecar.control)?;

    let config = PlfConfig { method, ..PlfConfig::default() };
    let run = run_plf(&case, &params, &wind, sidecar.power_factor, &config)?;
    let r = &run.result;
    println!("{name}, {:?} method, {} samples", r.method, r.samples);
    println!("segment probabilities {:.4?}", r.segment_probs);
    println!("state mixture: {} components; flow mixture: {} components", r.y_gmm.n_components(), r.flow_gmm.n_components());
    let n_angles = run.models.n_angles();
    for k in (n_angles..r.state_labels.len()).take(5) {
        println!("{}: mean {:.4}, sd {:.2e}", r.state_labels[k], r.state_mean[k], r.state_variance[k].sqrt());
    }
    for (stage, secs) in &run.timings.stages {
        println!("  {stage}: {secs:.3} s");
    }
    Ok(())
}
