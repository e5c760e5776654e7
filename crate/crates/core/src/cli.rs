//! Batch front-end: `run`, `benchmark` and `windgen`.
//!
//! Every artifact carries the SHA-256 of the configuration that produced it
//! (a `config_hash` field in JSON, a `# config_hash:` line in CSV). Exit
//! codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::control::ControlParams;
use crate::error::StageExt;
use crate::gmm::Gmm;
use crate::netcase::{read_case, read_wind_history, NetworkCase, Sidecar, WindHistory};
use crate::plf::{
    acmc_benchmark, fit_input_mixture, run_plf, AccuracyReport, AcmcOptions, CorrectionMode,
    Method, PlfConfig, PlfModels, PlfRun, Seeds,
};
use crate::windgen::{generate, ground_truth_json, WindSpec};
use crate::{Error, Result};

/// Smallest AC Monte Carlo sample accepted by `benchmark`.
pub const MIN_BENCHMARK_SAMPLES: usize = 1000;
/// Points per marginal in `cdf_grid.csv`.
const GRID_POINTS: usize = 101;

#[derive(Parser, Debug)]
#[command(name = "ctrlplf", version, about = "Control-aware probabilistic load flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the input mixture and compute state and flow distributions.
    Run(RunArgs),
    /// AC Monte Carlo reference, plus accuracy metrics against a prior result.
    Benchmark(BenchArgs),
    /// Write a synthetic wind history and its ground-truth mixture.
    Windgen(WindgenArgs),
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// MATPOWER case file.
    #[arg(long)]
    case: PathBuf,
    /// JSON sidecar with AGC units, wind farms and control settings.
    #[arg(long)]
    sidecar: PathBuf,
    /// Wind-history CSV.
    #[arg(long, required_unless_present = "wind_preset", conflicts_with = "wind_preset")]
    wind: Option<PathBuf>,
    /// Generate the wind history from a named preset instead of reading a CSV.
    #[arg(long)]
    wind_preset: Option<String>,
    /// Rows generated for `--wind-preset`.
    #[arg(long, default_value_t = 10_000)]
    wind_samples: usize,
    #[arg(long, default_value = "indirect")]
    method: Method,
    /// Input samples (default 2000 direct, 10000 indirect).
    #[arg(long = "L")]
    l: Option<usize>,
    /// Mixture components.
    #[arg(long = "J", default_value_t = 5)]
    j: usize,
    /// Pair results per segment for the correction fit.
    #[arg(long = "H", default_value_t = 12)]
    h: usize,
    #[arg(long, default_value = "polynomial")]
    correction: CorrectionMode,
    #[arg(long, default_value_t = 1)]
    seed_gmm: u64,
    #[arg(long, default_value_t = 2)]
    seed_sampling: u64,
    #[arg(long, default_value_t = 3)]
    seed_correction: u64,
    #[arg(long, default_value_t = 4)]
    seed_benchmark: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    /// AC Monte Carlo samples.
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    /// `result.json` of a prior run; enables `metrics.json`.
    #[arg(long)]
    result: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WindgenArgs {
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    preset: Option<String>,
    /// JSON generator description.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Rows (presets only).
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Seed (presets only).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV; the ground truth goes to `<stem>.truth.json` beside it.
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => with_threads(a.threads, || cmd_run(&a)),
        Command::Benchmark(a) => with_threads(a.run.threads, || cmd_benchmark(&a)),
        Command::Windgen(a) => cmd_windgen(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                2
            } else {
                1
            }
        }
    }
}

fn with_threads(threads: Option<usize>, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    match threads {
        None => f(),
        Some(0) => Err(Error::Config("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(f),
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum WindSource {
    Csv { path: String, sha256: String },
    Preset { preset: String, rows: usize, seed: u64 },
}

/// Everything that determines the outputs; hashed into `config_hash`.
#[derive(Serialize)]
struct ConfigEcho {
    command: &'static str,
    case: String,
    case_sha256: String,
    sidecar: String,
    sidecar_sha256: String,
    wind: WindSource,
    plf: PlfConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    benchmark_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prior_result_sha256: Option<String>,
}

impl ConfigEcho {
    fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(serde_json::to_vec(self)?)))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(bytes)))
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(path: &Path, hash: &str, body: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&Stamped { config_hash: hash, body })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Case, control parameters and wind history with the sidecar applied.
struct Inputs {
    case: NetworkCase,
    params: ControlParams,
    power_factor: f64,
    wind: WindHistory,
    echo: ConfigEcho,
}

fn load_inputs(a: &RunArgs, command: &'static str) -> Result<Inputs> {
    let plf = PlfConfig {
        method: a.method,
        l: a.l,
        j: a.j,
        h: a.h,
        correction: a.correction,
        seeds: Seeds {
            gmm: a.seed_gmm,
            sampling: a.seed_sampling,
            correction: a.seed_correction,
            benchmark: a.seed_benchmark,
        },
    };
    plf.validate()?;
    if a.h == 0 {
        return Err(Error::Config("H must be positive".into()));
    }
    let mut case = read_case(&a.case).stage("case")?;
    let sidecar = Sidecar::read(&a.sidecar).stage("sidecar")?;
    let (wind, source) = match (&a.wind, &a.wind_preset) {
        (Some(path), _) => (
            read_wind_history(path).stage("wind history")?,
            WindSource::Csv {
                path: path.display().to_string(),
                sha256: file_sha256(path)?,
            },
        ),
        (None, Some(preset)) => {
            let spec = WindSpec::preset(preset, a.wind_samples, a.seed_gmm)?;
            (
                generate(&spec).stage("wind history")?.history,
                WindSource::Preset {
                    preset: preset.clone(),
                    rows: a.wind_samples,
                    seed: a.seed_gmm,
                },
            )
        }
        (None, None) => return Err(Error::Config("either --wind or --wind-preset is required".into())),
    };
    sidecar.apply(&mut case, &wind.names).stage("sidecar")?;
    let params = ControlParams::from_case(&case, &sidecar.control).stage("control")?;
    let echo = ConfigEcho {
        command,
        case: a.case.display().to_string(),
        case_sha256: file_sha256(&a.case)?,
        sidecar: a.sidecar.display().to_string(),
        sidecar_sha256: file_sha256(&a.sidecar)?,
        wind: source,
        plf,
        benchmark_samples: None,
        prior_result_sha256: None,
    };
    Ok(Inputs {
        case,
        params,
        power_factor: sidecar.power_factor,
        wind,
        echo,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let inputs = load_inputs(a, "run")?;
    let hash = inputs.echo.hash()?;
    let run = run_plf(
        &inputs.case,
        &inputs.params,
        &inputs.wind,
        inputs.power_factor,
        &inputs.echo.plf,
    )?;
    create_dir(&a.out)?;
    write_json(&a.out.join("result.json"), &hash, &run.result)?;
    write_moments(&a.out.join("moments.csv"), &hash, &run)?;
    write_cdf_grid(&a.out.join("cdf_grid.csv"), &hash, &run)?;
    let provenance = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": inputs.echo,
        "timings": run.timings.stages.iter().map(|(s, t)| (s.clone(), Value::from(*t))).collect::<serde_json::Map<_, _>>(),
        "total_seconds": run.timings.total(),
        "threads": rayon::current_num_threads(),
    });
    write_json(&a.out.join("provenance.json"), &hash, &provenance)?;

    let r = &run.result;
    println!("case {}: {} states, {} flows, {} farms", r.case, r.state_labels.len(), r.flow_labels.len(), r.farm_labels.len());
    println!(
        "segment probabilities: {:.4} / {:.4} / {:.4} ({} exceeded)",
        r.segment_probs[0], r.segment_probs[1], r.segment_probs[2], r.exceeded
    );
    println!("{} state components, {:.3} s", r.y_gmm.n_components(), run.timings.total());
    for note in &r.notes {
        println!("note: {note}");
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn csv_writer(path: &Path, hash: &str) -> Result<csv::Writer<fs::File>> {
    use std::io::Write;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "# config_hash: {hash}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_moments(path: &Path, hash: &str, run: &PlfRun) -> Result<()> {
    let r = &run.result;
    let n_angles = run.models.n_angles();
    let mut w = csv_writer(path, hash)?;
    w.write_record(["kind", "label", "mean", "variance"])?;
    for (k, label) in r.state_labels.iter().enumerate() {
        let kind = if k < n_angles { "angle" } else { "voltage" };
        w.write_record([kind, label, &format!("{:?}", r.state_mean[k]), &format!("{:?}", r.state_variance[k])])?;
    }
    for (k, label) in r.flow_labels.iter().enumerate() {
        w.write_record(["flow", label, &format!("{:?}", r.flow_mean[k]), &format!("{:?}", r.flow_variance[k])])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Analytic marginal CDFs on `mean ± 4 sd`, one row per point.
fn write_cdf_grid(path: &Path, hash: &str, run: &PlfRun) -> Result<()> {
    let r = &run.result;
    let n_angles = run.models.n_angles();
    let mut w = csv_writer(path, hash)?;
    w.write_record(["kind", "label", "x", "cdf"])?;
    let mut emit = |kind: &str, label: &str, g: &Gmm, k: usize, mean: f64, var: f64| -> Result<()> {
        let marginal = g.marginal(k);
        let sd = var.max(0.0).sqrt();
        let points = if sd > 0.0 { GRID_POINTS } else { 1 };
        for p in 0..points {
            let x = if points == 1 {
                mean
            } else {
                mean + sd * (-4.0 + 8.0 * p as f64 / (points - 1) as f64)
            };
            w.write_record([kind, label, &format!("{x:?}"), &format!("{:?}", marginal.cdf(x))])?;
        }
        Ok(())
    };
    for (k, label) in r.state_labels.iter().enumerate() {
        let kind = if k < n_angles { "angle" } else { "voltage" };
        emit(kind, label, &r.y_gmm, k, r.state_mean[k], r.state_variance[k])?;
    }
    for (k, label) in r.flow_labels.iter().enumerate() {
        emit("flow", label, &r.flow_gmm, k, r.flow_mean[k], r.flow_variance[k])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// The parts of a prior `result.json` the metrics need.
struct PriorResult {
    config_hash: Option<String>,
    x_gmm: Gmm,
    y_gmm: Gmm,
    flow_gmm: Gmm,
    proposed_seconds: Option<f64>,
}

fn read_prior(path: &Path) -> Result<PriorResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Value = serde_json::from_str(&text)?;
    let gmm = |key: &str| -> Result<Gmm> {
        let field = v
            .get(key)
            .ok_or_else(|| Error::Config(format!("{} has no `{key}`", path.display())))?;
        Ok(serde_json::from_value(field.clone())?)
    };
    // Timings live in provenance.json beside the result.
    let proposed_seconds = path
        .parent()
        .map(|d| d.join("provenance.json"))
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|t| serde_json::from_str::<Value>(&t).ok())
        .and_then(|p| p.get("total_seconds").and_then(Value::as_f64));
    Ok(PriorResult {
        config_hash: v.get("config_hash").and_then(Value::as_str).map(str::to_string),
        x_gmm: gmm("x_gmm")?,
        y_gmm: gmm("y_gmm")?,
        flow_gmm: gmm("flow_gmm")?,
        proposed_seconds,
    })
}

#[derive(Serialize)]
struct Metrics<'a> {
    result_config_hash: Option<&'a str>,
    benchmark_samples: usize,
    accuracy: AccuracyReport,
    runtimes: Runtimes,
}

#[derive(Serialize)]
struct Runtimes {
    proposed_seconds: Option<f64>,
    acmc_seconds: f64,
}

fn cmd_benchmark(a: &BenchArgs) -> Result<()> {
    if a.n < MIN_BENCHMARK_SAMPLES {
        return Err(Error::Config(format!(
            "benchmark needs at least {MIN_BENCHMARK_SAMPLES} samples, got {}",
            a.n
        )));
    }
    let mut inputs = load_inputs(&a.run, "benchmark")?;
    let prior = match &a.result {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Config(format!("prior result {} does not exist", path.display())));
            }
            inputs.echo.prior_result_sha256 = Some(file_sha256(path)?);
            Some(read_prior(path).stage("prior result")?)
        }
        None => None,
    };
    inputs.echo.benchmark_samples = Some(a.n);
    let hash = inputs.echo.hash()?;

    let models = PlfModels::build(&inputs.case, &inputs.params, inputs.power_factor).stage("linear model")?;
    let x_gmm = match &prior {
        Some(p) => p.x_gmm.clone(),
        // Same input fit as `run` would use.
        None => {
            let data = inputs.wind.farm_outputs(&inputs.case).stage("wind history")?;
            let plf = &inputs.echo.plf;
            fit_input_mixture(&data, plf.j, plf.seeds.gmm, &mut Vec::new()).stage("input mixture")?
        }
    };
    let oracle = models.oracle().stage("benchmark")?;
    let t = Instant::now();
    let bench = acmc_benchmark(
        &oracle,
        &x_gmm,
        inputs.case.state_labels(),
        inputs.case.branch_labels(),
        &AcmcOptions::new(a.n, inputs.echo.plf.seeds.benchmark),
    )
    .stage("benchmark")?;
    let acmc_seconds = t.elapsed().as_secs_f64();
    create_dir(&a.run.out)?;
    write_json(&a.run.out.join("benchmark.json"), &hash, &bench)?;
    println!(
        "benchmark: {} AC solves in {acmc_seconds:.2} s ({} failed draws replaced, {} beyond capacity)",
        a.n, bench.nonconverged, bench.exceeded
    );

    if let Some(p) = prior {
        if p.y_gmm.dim() != bench.states.dim() || p.flow_gmm.dim() != bench.flows.dim() {
            return Err(Error::Config("the prior result was computed for a different case".into()));
        }
        let accuracy = AccuracyReport::compute(&p.y_gmm, &p.flow_gmm, models.n_angles(), &bench.states, &bench.flows);
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3e}"));
        println!(
            "CDF RMSE: angle {}, voltage {}, flow {}",
            fmt(accuracy.angle_cdf.average),
            fmt(accuracy.voltage_cdf.average),
            fmt(accuracy.flow_cdf.average)
        );
        let metrics = Metrics {
            result_config_hash: p.config_hash.as_deref(),
            benchmark_samples: a.n,
            accuracy,
            runtimes: Runtimes {
                proposed_seconds: p.proposed_seconds,
                acmc_seconds,
            },
        };
        write_json(&a.run.out.join("metrics.json"), &hash, &metrics)?;
    }
    println!("wrote {}", a.run.out.display());
    Ok(())
}

fn cmd_windgen(a: &WindgenArgs) -> Result<()> {
    let (spec, echo) = match (&a.preset, &a.spec) {
        (Some(p), _) => (
            WindSpec::preset(p, a.n, a.seed)?,
            serde_json::json!({"command": "windgen", "preset": p, "rows": a.n, "seed": a.seed}),
        ),
        (None, Some(path)) => (
            WindSpec::read(path)?,
            serde_json::json!({"command": "windgen", "spec_sha256": file_sha256(path)?}),
        ),
        (None, None) => return Err(Error::Config("either --preset or --spec is required".into())),
    };
    let hash = hex(&Sha256::digest(serde_json::to_vec(&echo)?));
    let generated = generate(&spec)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let file = fs::File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    generated
        .history
        .write_csv(std::io::BufWriter::new(file), Some(&format!("config_hash: {hash}")))?;
    let truth_path = a.out.with_extension("truth.json");
    let truth: Value = serde_json::from_str(&ground_truth_json(&spec, &generated)?)?;
    write_json(&truth_path, &hash, &truth)?;
    println!(
        "wrote {} rows × {} farms to {} ({:.2}% clipped)",
        generated.history.data.nrows(),
        generated.history.data.ncols(),
        a.out.display(),
        100.0 * generated.clipped_fraction
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run(["ctrlplf", "run", "--case", "x", "--sidecar", "y", "--wind", "z", "--out", "o", "--method", "sideways"]), 2);
        assert_eq!(run(["ctrlplf", "frobnicate"]), 2);
        assert_eq!(run(["ctrlplf", "--help"]), 0);
    }

    #[test]
    fn missing_case_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let code = run([
            "ctrlplf".into(),
            "run".into(),
            "--case".into(),
            dir.path().join("nope.m").into_os_string(),
            "--sidecar".into(),
            dir.path().join("s.json").into_os_string(),
            "--wind-preset".into(),
            "bimodal".into(),
            "--out".into(),
            out.into_os_string(),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn windgen_writes_csv_and_truth() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("w.csv");
        let o = out.to_str().unwrap();
        assert_eq!(run(["ctrlplf", "windgen", "--preset", "bimodal", "--n", "200", "--out", o]), 0);
        let h = read_wind_history(&out).unwrap();
        assert_eq!(h.names, ["farm1", "farm2", "farm3"]);
        assert_eq!(h.data.nrows(), 200);
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("# config_hash: "));
        let truth: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("w.truth.json")).unwrap()).unwrap();
        assert!(truth["config_hash"].is_string());
        let g: Gmm = serde_json::from_value(truth["mixture"].clone()).unwrap();
        assert_eq!(g.n_components(), 2);
        assert_eq!(run(["ctrlplf", "windgen", "--preset", "gusty", "--out", o]), 2);
    }

    #[test]
    fn windgen_reports_non_psd_correlation() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = WindSpec::preset("bimodal", 10, 1).unwrap();
        spec.correlation = vec![vec![1.0, 0.9, -0.9], vec![0.9, 1.0, 0.9], vec![-0.9, 0.9, 1.0]];
        let path = dir.path().join("spec.json");
        fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
        let out = dir.path().join("w.csv");
        let code = run(["ctrlplf", "windgen", "--spec", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, 2);
        assert!(!out.exists());
    }
}
