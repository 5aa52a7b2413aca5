#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod fmt;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use qinstr::ensemble::McConfig;
use qinstr::harness::{self, RunConfig, RunMode, Scale, StateSpec};
use qinstr::information::{mutual_entropy_report, shatten_decompose};
use qinstr::semigroup::increment_characteristic;
use qinstr::{DensityMatrix, EnsembleSeries, MeasurementModel, RawModel};

#[derive(Parser)]
#[command(name = "qinstr", version, about = "Continual quantum measurement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file; exit 1 with a diagnostic if it is invalid.
    Validate { model: PathBuf },
    /// Run a trajectory ensemble and write `series.csv` and `manifest.json`.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Preset (excited, ground, plus, mixed, basis:i) or a JSON matrix file.
        #[arg(long)]
        state: String,
        #[arg(long)]
        tmax: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = ["q", "p"])]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated functionals; defaults depend on the mode.
        #[arg(long, value_delimiter = ',')]
        outputs: Option<Vec<String>>,
        /// Record every `stride` steps.
        #[arg(long, default_value_t = 10)]
        stride: usize,
        /// Worker threads; 0 uses all cores. Results do not depend on it.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Characteristic function of the output increment, `t,kappa,re,im`.
    Characteristic {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        state: String,
        #[arg(long = "k")]
        kappa: f64,
        #[arg(long)]
        tmax: f64,
        /// Number of intervals in `[0, tmax]`.
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mutual-entropy report at time `t` as JSON.
    Report {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        state: String,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Built-in verification suite; exit 1 if any check fails.
    Selftest {
        #[arg(long, default_value = "quick", value_parser = ["quick", "full"])]
        scale: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { model } => Ok(validate(&model)),
        Command::Simulate { model, state, tmax, dt, n, seed, mode, out, outputs, stride, workers } => {
            let m = load_model(&model)?;
            let mode: RunMode = mode.parse()?;
            let outputs = outputs.unwrap_or_else(|| {
                let d: &[&str] = match mode {
                    RunMode::Q => &["norm", "logWeight", "y"],
                    _ => &["y", "entropy", "purityDefect", "logWeight"],
                };
                d.iter().map(|s| s.to_string()).collect()
            });
            let cfg = RunConfig {
                model_path: Some(model.display().to_string()),
                initial_state: state_spec(&state)?,
                reference_state: None,
                t_max: tmax,
                dt,
                n_trajectories: n,
                master_seed: seed,
                mode,
                outputs,
                snapshot_stride: stride,
                workers,
            };
            let series = harness::run_ensemble(&m, &cfg)?;
            write_simulation(&out, &cfg, &series)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Characteristic { model, state, kappa, tmax, points, out } => {
            let m = load_model(&model)?;
            let rho = resolve_state(&state, &m)?;
            if points == 0 || !(tmax > 0.0) {
                bail!("need tmax > 0 and at least one interval");
            }
            let mut text = String::from("t,kappa,re,im\n");
            for j in 0..=points {
                let t = tmax * j as f64 / points as f64;
                let v = increment_characteristic(&m, &rho, kappa, t)?;
                text.push_str(&format!("{t:.16e},{kappa:.16e},{:.16e},{:.16e}\n", v.re, v.im));
            }
            emit(out.as_deref(), &text)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { model, state, t, n, seed, dt, workers, out } => {
            let m = load_model(&model)?;
            let rho = resolve_state(&state, &m)?;
            let dec = shatten_decompose(&rho)?;
            let report = mutual_entropy_report(&m, &rho, &dec, t, &McConfig::new(n, dt, seed).with_workers(workers))?;
            emit(out.as_deref(), &fmt::to_json(&report)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { scale, out } => {
            let scale: Scale = scale.parse()?;
            let report = harness::self_test_suite(scale);
            emit(out.as_deref(), &fmt::to_json(&report)?)?;
            for c in report.failures() {
                eprintln!("FAIL {}: {} > {}", c.name, c.statistic, c.threshold);
            }
            Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn validate(path: &Path) -> ExitCode {
    let diagnose = || -> Result<MeasurementModel> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let raw = RawModel::from_json(&text).context("parsing model JSON")?;
        Ok(MeasurementModel::validate(raw)?)
    };
    match diagnose() {
        Ok(m) => {
            let qc = m.quasi_completeness();
            println!("valid: {}", path.display());
            println!("dim: {}", m.dim());
            println!("lindblad operators: {}", m.lindblad_ops().len());
            println!("jump amplitudes: {}", m.amplitudes().len());
            println!("total jump rate: {:.16e}", m.total_jump_rate());
            println!("quasi-complete: C1 {} C2 {}", qc.c1_holds, qc.c2_holds);
            println!("fingerprint: {}", m.fingerprint());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("invalid: {}: {e:#}", path.display());
            ExitCode::FAILURE
        }
    }
}

fn load_model(path: &Path) -> Result<MeasurementModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let raw = RawModel::from_json(&text).context("parsing model JSON")?;
    MeasurementModel::validate(raw).with_context(|| format!("validating {}", path.display()))
}

/// An existing file is read as a JSON matrix; anything else is a preset.
fn state_spec(arg: &str) -> Result<StateSpec> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        let spec: StateSpec = serde_json::from_str(&text).with_context(|| format!("parsing state {arg}"))?;
        if let StateSpec::Preset(_) = spec {
            bail!("state file {arg} must contain a matrix");
        }
        Ok(spec)
    } else {
        Ok(StateSpec::Preset(arg.to_string()))
    }
}

fn resolve_state(arg: &str, m: &MeasurementModel) -> Result<DensityMatrix> {
    Ok(state_spec(arg)?.resolve(m.dim())?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    provenance: &'a qinstr::information::Provenance,
    times: usize,
    functionals: &'a [String],
    series: &'static str,
}

fn write_simulation(dir: &Path, cfg: &RunConfig, series: &EnsembleSeries) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut csv = Vec::new();
    series.write_csv(&mut csv)?;
    fs::write(dir.join("series.csv"), csv)?;
    let manifest = Manifest {
        tool: "qinstr",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        provenance: &series.provenance,
        times: series.times.len(),
        functionals: &series.names,
        series: "series.csv",
    };
    fs::write(dir.join("manifest.json"), fmt::to_json(&manifest)?)?;
    Ok(())
}
