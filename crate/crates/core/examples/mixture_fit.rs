//! Fit a Gaussian mixture to correlated wind data and condition it on the
//! total output.
//!
//! cargo run --example mixture_fit

use ctrlplf::gmm::em_fit;
use ctrlplf::windgen::{generate, WindSpec};
use nalgebra::DVector;

fn main() -> ctrlplf::Result<()> {
    let wind = generate(&WindSpec::preset("bimodal", 5_000, 7)?)?;
    let fit = em_fit(&wind.history.data, 2, 1)?;
    println!("EM: {} iterations, converged {}", fit.iterations, fit.converged);
    for (w, m) in fit.gmm.weights().iter().zip(fit.gmm.means()) {
        println!("  weight {w:.3}, mean {:.3?}", m.as_slice());
    }
    for (w, m) in wind.truth.weights().iter().zip(wind.truth.means()) {
        println!("  truth  {w:.3}, mean {:.3?}", m.as_slice());
    }

    let eps = DVector::from_element(fit.gmm.dim(), 1.0);
    for total in [0.5, 1.5, 2.5] {
        let cond = fit.gmm.condition_on_sum(&eps, total)?;
        let (mean, var) = cond.marginal_moments();
        println!(
            "given total {total}: farm means {:.3?}, farm sds {:.3?}",
            mean.as_slice(),
            var.map(f64::sqrt).as_slice()
        );
    }
    Ok(())
}
