//! The `kinopt` command line: `train`, `dsmc`, `compare` and `bench`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::dsmc::{self, HSample, ParticleSystem};
use crate::exp::{self, write_atomic};
use crate::linalg::write_f64;
use crate::metrics::MetricsRecord;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "kinopt", version, about = "Kinetics-inspired optimizer experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the synthetic-regression network and record condensation metrics.
    Train(RunArgs),
    /// Run the hard-sphere gas simulation and record the H series.
    Dsmc(RunArgs),
    /// Compare the metrics of two training runs.
    Compare(CompareArgs),
    /// Time a training step with and without the configured collision.
    Bench(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// INI config file; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the seed(s) of the config.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub run_dir_a: PathBuf,
    pub run_dir_b: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub quiet: bool,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Parse(_) => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_RUNTIME,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Dsmc(a) => cmd_dsmc(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code, printing any error to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
        cfg.dsmc.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_train(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    for &seed in &cfg.seeds {
        let dir = if cfg.seeds.len() == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("seed_{seed}"))
        };
        let outcome = exp::run_condensation(&cfg.experiment(seed))?;
        let manifest = RunConfig {
            seeds: vec![seed],
            ..cfg.clone()
        }
        .emit_flat();
        exp::write_run_dir(&dir, &manifest, &outcome)?;
        if !args.quiet {
            if let Some(r) = outcome.records.last() {
                println!(
                    "seed {seed}: epoch {} train_loss {:.6} neuron_similarity {:.6} weight_correlation {:.4} -> {}",
                    r.epoch,
                    r.train_loss,
                    r.neuron_similarity,
                    r.weight_correlation,
                    dir.display()
                );
            }
        }
        if let Some(err) = outcome.failure {
            return Err(err);
        }
    }
    Ok(())
}

fn velocity_csv(sys: &ParticleSystem) -> String {
    let mut s = String::from("vx,vy,vz\n");
    for v in &sys.velocities {
        for (k, c) in v.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            write_f64(&mut s, *c);
        }
        s.push('\n');
    }
    s
}

pub fn cmd_dsmc(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let d = &cfg.dsmc;
    create_dir(&args.out)?;
    write_atomic(
        &args.out.join("manifest.txt"),
        &RunConfig {
            seeds: vec![d.seed],
            ..cfg.clone()
        }
        .emit_flat(),
    )?;
    let out = &args.out;
    let (_, series) = dsmc::run(d, |step, sys| {
        if d.snapshot_every > 0 && step % d.snapshot_every == 0 {
            write_atomic(&out.join(format!("velocities_step_{step}.csv")), &velocity_csv(sys))?;
        }
        Ok(())
    })?;
    let mut csv = String::from(HSample::CSV_HEADER);
    csv.push('\n');
    for s in &series {
        csv.push_str(&s.csv_row());
        csv.push('\n');
    }
    write_atomic(&out.join("h_series.csv"), &csv)?;
    if !args.quiet {
        match (series.first(), series.last()) {
            (Some(a), Some(b)) => println!(
                "{} steps: H {:.6} -> {:.6}, mb_distance {:.4}, collisions in last step {} -> {}",
                series.len(),
                a.h,
                b.h,
                b.mb_distance,
                b.collisions,
                out.display()
            ),
            _ => println!("0 steps -> {}", out.display()),
        }
    }
    Ok(())
}

const METRIC_COLUMNS: [&str; 4] = ["train_loss", "neuron_similarity", "weight_correlation", "step_time_ms"];

/// `(epochs, rows)` of a run directory's `metrics.csv`, one row per epoch
/// holding the [`METRIC_COLUMNS`].
fn read_metrics(dir: &Path) -> Result<(Vec<usize>, Vec<[f64; 4]>)> {
    let path = dir.join("metrics.csv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MetricsRecord::CSV_HEADER) {
        return Err(Error::invalid(format!("{}: unexpected header", path.display())));
    }
    let mut epochs = Vec::new();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let bad = || Error::invalid(format!("{}: malformed row {}", path.display(), k + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad());
        }
        epochs.push(fields[0].parse().map_err(|_| bad())?);
        let mut row = [0.0; 4];
        for (slot, f) in row.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| bad())?;
        }
        rows.push(row);
    }
    Ok((epochs, rows))
}

/// Deltas `b − a` of every metric column: `(final, mean)` per column.
pub fn metric_deltas(a: &[[f64; 4]], b: &[[f64; 4]]) -> Vec<(&'static str, f64, f64)> {
    METRIC_COLUMNS
        .iter()
        .enumerate()
        .map(|(c, &name)| {
            let diffs: Vec<f64> = a.iter().zip(b).map(|(ra, rb)| rb[c] - ra[c]).collect();
            let last = diffs.last().copied().unwrap_or(0.0);
            let mean = if diffs.is_empty() {
                0.0
            } else {
                diffs.iter().sum::<f64>() / diffs.len() as f64
            };
            (name, last, mean)
        })
        .collect()
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let (epochs_a, a) = read_metrics(&args.run_dir_a)?;
    let (epochs_b, b) = read_metrics(&args.run_dir_b)?;
    if epochs_a != epochs_b {
        return Err(Error::invalid(format!(
            "epoch counts differ: {} has {}, {} has {}",
            args.run_dir_a.display(),
            epochs_a.len(),
            args.run_dir_b.display(),
            epochs_b.len()
        )));
    }
    let mut report = Map::new();
    report.insert("run_a".into(), json!(args.run_dir_a.display().to_string()));
    report.insert("run_b".into(), json!(args.run_dir_b.display().to_string()));
    report.insert("epochs".into(), json!(epochs_a.len()));
    let deltas = metric_deltas(&a, &b);
    for &(name, last, mean) in &deltas {
        report.insert(format!("{name}_final_delta"), json!(last));
        report.insert(format!("{name}_mean_delta"), json!(mean));
    }

    let mut csv = String::from("epoch");
    for name in METRIC_COLUMNS {
        csv.push_str(&format!(",{name}_delta"));
    }
    csv.push('\n');
    for (k, epoch) in epochs_a.iter().enumerate() {
        csv.push_str(&epoch.to_string());
        for c in 0..METRIC_COLUMNS.len() {
            csv.push(',');
            write_f64(&mut csv, b[k][c] - a[k][c]);
        }
        csv.push('\n');
    }

    create_dir(&args.out)?;
    write_atomic(&args.out.join("compare.json"), &pretty(&Value::Object(report))?)?;
    write_atomic(&args.out.join("compare_epochs.csv"), &csv)?;
    if !args.quiet {
        for (name, last, mean) in deltas {
            println!("{name}: final delta {last:+.6e}, mean delta {mean:+.6e}");
        }
    }
    Ok(())
}

fn pretty(v: &Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::State(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn cmd_bench(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let seed = cfg.seeds[0];
    let exp_cfg = cfg.experiment(seed);
    let o = exp::bench_overhead(&exp_cfg, cfg.bench_warmup, cfg.bench_steps)?;
    let report = json!({
        "dims": cfg.dims,
        "mode": cfg.kinetic.mode.map_or("none", |m| m.name()),
        "coll_coef": cfg.kinetic.coll_coef,
        "target_layers": cfg.kinetic.target_layers,
        "warmup_steps": cfg.bench_warmup,
        "timed_steps": cfg.bench_steps,
        "base_ms_per_step": o.base_ms_per_step,
        "ko_ms_per_step": o.ko_ms_per_step,
        "ratio": o.ratio(),
    });
    create_dir(&args.out)?;
    write_atomic(
        &args.out.join("manifest.txt"),
        &RunConfig {
            seeds: vec![seed],
            ..cfg.clone()
        }
        .emit_flat(),
    )?;
    write_atomic(&args.out.join("bench.json"), &pretty(&report)?)?;
    if !args.quiet {
        println!(
            "base {:.4} ms/step, with collision {:.4} ms/step, ratio {:.3}",
            o.base_ms_per_step,
            o.ko_ms_per_step,
            o.ratio()
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::config("run.epochs", "x")), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Parse("x".into())), EXIT_CONFIG);
        assert_eq!(
            exit_code(&Error::Divergence {
                epoch: 3,
                message: "nan".into()
            }),
            EXIT_RUNTIME
        );
        let io = Error::io("x", std::io::Error::other("boom"));
        assert_eq!(exit_code(&io), EXIT_IO);
    }

    #[test]
    fn deltas_of_identical_runs_are_zero() {
        let rows = vec![[1.0, 0.5, 3.0, 0.0], [0.5, 0.25, 2.0, 0.0]];
        for (_, last, mean) in metric_deltas(&rows, &rows) {
            assert_eq!(last, 0.0);
            assert_eq!(mean, 0.0);
        }
    }

    #[test]
    fn deltas_are_b_minus_a() {
        let a = vec![[1.0, 0.0, 3.0, 0.0], [2.0, 0.0, 5.0, 0.0]];
        let b = vec![[2.0, 0.0, 1.0, 0.0], [2.0, 0.0, 4.0, 0.0]];
        let d = metric_deltas(&a, &b);
        assert_eq!(d[0], ("train_loss", 0.0, 0.5));
        assert_eq!(d[2], ("weight_correlation", -1.0, -1.5));
    }

    #[test]
    fn usage_errors_exit_with_config_code() {
        assert_eq!(main_with_args(["kinopt", "train"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["kinopt", "fly"]), EXIT_CONFIG);
    }
}
