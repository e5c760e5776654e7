//! Compare the analytical result with an AC Monte Carlo run.
//!
//! cargo run --example monte_carlo_check -- 5000

use ctrlplf::control::ControlParams;
use ctrlplf::netcase::{read_case, Sidecar};
use ctrlplf::plf::{acmc_benchmark, run_plf, AccuracyReport, AcmcOptions, PlfConfig};
use ctrlplf::windgen::{generate, WindSpec};

fn main() -> ctrlplf::Result<()> {
    let n = std::env::args().nth(1).map_or(5_000, |s| s.parse().expect("sample count"));
    let mut case = read_case("data/cases/case14.m")?;
    let sidecar = Sidecar::read("data/sidecars/case14.json")?;
    let wind = generate(&WindSpec::preset("bimodal", 10_000, 1)?)?.history;
    sidecar.apply(&mut case, &wind.names)?;
    let params = ControlParams::from_case(&case, &sidecar.control)?;

    let run = run_plf(&case, &params, &wind, sidecar.power_factor, &PlfConfig::default())?;
    let oracle = run.models.oracle()?;
    let bench = acmc_benchmark(&oracle, &run.result.x_gmm, case.state_labels(), case.branch_labels(), &AcmcOptions::new(n, 4))?;
    let report = AccuracyReport::compute(&run.result.y_gmm, &run.result.flow_gmm, run.models.n_angles(), &bench.states, &bench.flows);

    println!("analytical {:.2} s, Monte Carlo ({n} AC solves) {:.2} s", run.timings.total(), bench.seconds);
    println!("CDF RMSE: angles {:.2e}, voltages {:.2e}, flows {:.2e}", report.angle_cdf.average.unwrap_or(0.0), report.voltage_cdf.average.unwrap_or(0.0), report.flow_cdf.average.unwrap_or(0.0));
    println!(
        "voltage moments: mean rel. error {:.2e}, variance rel. error {:.2e}",
        report.voltage_moments.mean.unwrap_or(0.0),
        report.voltage_moments.variance.unwrap_or(0.0)
    );
    Ok(())
}
