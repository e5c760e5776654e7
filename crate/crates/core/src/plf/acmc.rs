//! AC Monte Carlo reference distributions.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::correction::{AcOracle, PairOracle};
use super::metrics::EmpiricalMarginals;
use crate::gmm::Gmm;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AcmcOptions {
    pub n: usize,
    pub seed: u64,
    /// Largest tolerated share of failed AC solves.
    pub max_failure_rate: f64,
    /// Draws per sample before giving up on it.
    pub max_attempts: usize,
}

impl AcmcOptions {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            max_failure_rate: 1e-3,
            max_attempts: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Benchmark {
    pub n: usize,
    pub seed: u64,
    pub states: EmpiricalMarginals,
    pub flows: EmpiricalMarginals,
    /// Draws discarded because the AC solve failed.
    pub nonconverged: usize,
    /// Draws discarded because the imbalance exceeded the regulation capacity.
    pub exceeded: usize,
    pub seconds: f64,
}

/// Samples `x_gmm`, solves the AC power flow with regulation for every sample
/// and collects states and from-end active flows.
///
/// Sample `k` uses its own ChaCha stream of `seed`, so the result does not
/// depend on scheduling. Draws that fail (no convergence or beyond capacity)
/// are replaced by the next draw of the same stream.
pub fn acmc_benchmark(
    oracle: &AcOracle,
    x_gmm: &Gmm,
    state_labels: Vec<String>,
    flow_labels: Vec<String>,
    opts: &AcmcOptions,
) -> Result<Benchmark> {
    if x_gmm.dim() != oracle.input_dim() {
        return Err(Error::Shape(format!(
            "input mixture has dimension {}, the oracle expects {}",
            x_gmm.dim(),
            oracle.input_dim()
        )));
    }
    let start = Instant::now();
    let sampler = x_gmm.sampler();
    let failed = AtomicUsize::new(0);
    let exceeded = AtomicUsize::new(0);
    let results: Vec<Result<_>> = (0..opts.n)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(k as u64);
            let mut last = None;
            for _ in 0..opts.max_attempts {
                let x = sampler.draw(&mut rng);
                match oracle.evaluate(&x) {
                    Ok(r) => return Ok(r),
                    Err(e @ Error::CapacityExceeded { .. }) => {
                        exceeded.fetch_add(1, Ordering::Relaxed);
                        last = Some(e);
                    }
                    Err(e) => {
                        failed.fetch_add(1, Ordering::Relaxed);
                        last = Some(e);
                    }
                }
            }
            Err(last.expect("at least one attempt"))
        })
        .collect();
    let nonconverged = failed.into_inner();
    if nonconverged as f64 > opts.max_failure_rate * opts.n as f64 {
        return Err(Error::Stats(format!(
            "{nonconverged} of {} AC Monte Carlo solves failed to converge",
            opts.n
        )));
    }
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let ds = rows.first().map_or(0, |r| r.0.len());
    let df = rows.first().map_or(0, |r| r.1.len());
    let states = DMatrix::from_fn(rows.len(), ds, |r, c| rows[r].0[c]);
    let flows = DMatrix::from_fn(rows.len(), df, |r, c| rows[r].1[c]);
    Ok(Benchmark {
        n: opts.n,
        seed: opts.seed,
        states: EmpiricalMarginals::from_samples(state_labels, &states),
        flows: EmpiricalMarginals::from_samples(flow_labels, &flows),
        nonconverged,
        exceeded: exceeded.into_inner(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acpf::branch_flows_ac;
    use crate::control::{injection_map, regulation_amounts, ControlParams};
    use crate::netcase::fixtures::case14_text;
    use crate::netcase::{parse_case, Sidecar};
    use nalgebra::DVector;

    fn setup() -> (crate::netcase::NetworkCase, ControlParams) {
        let mut case = parse_case(&case14_text()).unwrap();
        let sidecar = Sidecar::from_json(
            r#"{"agc_units": [{"bus": 2}, {"bus": 3}],
                "wind_farms": [{"bus": 9, "column": 0}, {"bus": 5, "column": 1}],
                "scheduled_imbalance_mw": -20}"#,
        )
        .unwrap();
        sidecar.apply(&mut case, &[]).unwrap();
        let params = ControlParams::from_case(&case, &sidecar.control).unwrap();
        (case, params)
    }

    #[test]
    fn zero_spread_reproduces_the_single_solution() {
        let (case, params) = setup();
        let s = injection_map(&case, 0.85);
        let oracle = AcOracle::new(&case, &params, s).unwrap();
        let x = DVector::from_column_slice(&[0.1, 0.05]);
        let g = Gmm::point_mass(x.clone());
        let labels = case.state_labels();
        let b = acmc_benchmark(&oracle, &g, labels, case.branch_labels(), &AcmcOptions::new(64, 3)).unwrap();
        let state = oracle.solve(&x).unwrap();
        let y = state.y();
        let flows = branch_flows_ac(&case, &state);
        for k in 0..y.len() {
            assert!(b.states.sorted[k].iter().all(|v| (v - y[k]).abs() < 1e-9));
        }
        assert!((b.flows.mean[0] - flows[0].p_from).abs() < 1e-9);
        assert_eq!(b.nonconverged, 0);
        // Regulation absorbs exactly the imbalance.
        let inj = oracle.injections(&x).unwrap();
        assert!(inj.p.sum().abs() < 1e-12);
        let base = crate::acpf::InjectionSet::base(&case).p.sum() + 0.1;
        assert!((regulation_amounts(&params, base).unwrap().sum() + base).abs() < 1e-12);
    }

    #[test]
    fn schedule_independent() {
        let (case, params) = setup();
        let oracle = AcOracle::new(&case, &params, injection_map(&case, 0.85)).unwrap();
        let g = Gmm::gaussian(
            DVector::from_column_slice(&[0.1, 0.1]),
            DMatrix::from_row_slice(2, 2, &[0.002, 0.001, 0.001, 0.002]),
        )
        .unwrap();
        let opts = AcmcOptions::new(40, 9);
        let a = acmc_benchmark(&oracle, &g, case.state_labels(), case.branch_labels(), &opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool
            .install(|| acmc_benchmark(&oracle, &g, case.state_labels(), case.branch_labels(), &opts))
            .unwrap();
        assert_eq!(a.states.sorted, b.states.sorted);
        assert_eq!(a.flows.mean, b.flows.mean);
    }
}
