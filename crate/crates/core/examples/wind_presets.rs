//! Synthetic wind histories from the built-in presets.
//!
//! cargo run --example wind_presets

use ctrlplf::windgen::{generate, WindSpec, PRESETS};

fn main() -> ctrlplf::Result<()> {
    for name in PRESETS {
        let spec = WindSpec::preset(name, 10_000, 1)?;
        let wind = generate(&spec)?;
        let data = &wind.history.data;
        let means: Vec<f64> = (0..data.ncols()).map(|c| data.column(c).mean()).collect();
        println!(
            "{name}: {} farms, {} components, clipped {:.2} %, farm means {:.2?}",
            data.ncols(),
            wind.truth.n_components(),
            100.0 * wind.clipped_fraction,
            means
        );
    }
    Ok(())
}
