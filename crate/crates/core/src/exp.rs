//! Synthetic condensation experiment and step-time benchmark.
//!
//! The regression target is `y = Σ_k A sin(f x_k + φ)` with inputs drawn
//! uniformly from a box; a small tanh MLP is fitted to it while the cosine
//! similarity of the first hidden layer's neurons is tracked every epoch.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::kinetic::KineticConfig;
use crate::linalg::{Matrix, Rng};
use crate::metrics::{cosine_matrix, neuron_similarity, weight_correlation, MetricsRecord, SimilarityMatrix};
use crate::net::{mse_loss, Activation, Network};
use crate::optim::{KoOptimizer, OptimizerConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub input_dim: usize,
    pub low: f64,
    pub high: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_samples: 80,
            input_dim: 5,
            low: -4.0,
            high: 2.0,
            amplitude: 3.5,
            frequency: 5.0,
            phase: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::config("data.n_samples", "must be at least 1"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("data.input_dim", "must be at least 1"));
        }
        if !(self.low < self.high) {
            return Err(Error::config(
                "data.low",
                format!("range [{}, {}] is empty", self.low, self.high),
            ));
        }
        Ok(())
    }

    /// `Σ_k A sin(f x_k + φ)`.
    pub fn target(&self, x: &[f64]) -> f64 {
        x.iter()
            .map(|&xk| self.amplitude * (self.frequency * xk + self.phase).sin())
            .sum()
    }
}

/// Samples `(X, y)` with `X` uniform in `[low, high)^input_dim`.
pub fn gen_synthetic(spec: &SyntheticSpec, rng: &mut Rng) -> Result<(Matrix, Vec<f64>)> {
    spec.validate()?;
    let x = Matrix::from_fn(spec.n_samples, spec.input_dim, |_, _| rng.uniform_range(spec.low, spec.high));
    let y = x.iter_rows().map(|row| spec.target(row)).collect();
    Ok((x, y))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub init_std: f64,
    pub optimizer: OptimizerConfig,
    /// `None` trains with the bare base optimizer.
    pub kinetic: Option<KineticConfig>,
    pub target_layers: Vec<usize>,
    pub epochs: usize,
    /// Mini-batch size; 0 means full batch.
    pub batch_size: usize,
    /// Also write the similarity matrix every this many epochs; 0 keeps only
    /// the final one.
    pub snapshot_every: usize,
    pub seed: u64,
    pub data: SyntheticSpec,
    /// Fill `step_time_ms` with wall-clock time. Off by default so that a
    /// seed fully determines `metrics.csv`.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dims: vec![5, 50, 1],
            activation: Activation::Tanh,
            init_std: 0.005,
            optimizer: OptimizerConfig::default(),
            kinetic: None,
            target_layers: vec![0],
            epochs: 100,
            batch_size: 0,
            snapshot_every: 0,
            seed: 0,
            data: SyntheticSpec::default(),
            record_timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.optimizer.validate()?;
        if let Some(k) = &self.kinetic {
            k.validate()?;
        }
        if self.epochs == 0 {
            return Err(Error::config("run.epochs", "must be at least 1"));
        }
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::config("network.dims", format!("need at least two positive sizes, got {:?}", self.dims)));
        }
        if self.dims[0] != self.data.input_dim {
            return Err(Error::config(
                "network.dims",
                format!("input size {} does not match data.input_dim {}", self.dims[0], self.data.input_dim),
            ));
        }
        if *self.dims.last().unwrap() != 1 {
            return Err(Error::config("network.dims", "the regression target needs one output"));
        }
        if !(self.init_std >= 0.0) {
            return Err(Error::config("network.init_std", "must be >= 0"));
        }
        if let Some(&k) = self.target_layers.iter().find(|&&k| k + 1 >= self.dims.len()) {
            return Err(Error::config("kinetic.target_layers", format!("layer {k} does not exist")));
        }
        Ok(())
    }
}

/// Everything a training run produces.
#[derive(Debug)]
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub final_similarity: SimilarityMatrix,
    /// `(epoch, matrix)` for intermediate snapshots.
    pub snapshots: Vec<(usize, SimilarityMatrix)>,
    pub network: Network,
    /// Set when training stopped early; records up to the failure are kept.
    pub failure: Option<Error>,
}

/// Network and data for `cfg`, drawn from independent seed sub-streams.
pub fn setup(cfg: &ExperimentConfig) -> Result<(Network, Matrix, Matrix, Matrix, Matrix)> {
    cfg.validate()?;
    let net = Network::mlp(&cfg.dims, cfg.activation, cfg.init_std, &mut Rng::substream(cfg.seed, "init"))?;
    let (x, y) = gen_synthetic(&cfg.data, &mut Rng::substream(cfg.seed, "data"))?;
    let (xv, yv) = gen_synthetic(&cfg.data, &mut Rng::substream(cfg.seed, "validation"))?;
    let n = y.len();
    let y = Matrix::from_vec(n, 1, y)?;
    let yv = Matrix::from_vec(yv.len(), 1, yv)?;
    Ok((net, x, y, xv, yv))
}

fn build_optimizer(cfg: &ExperimentConfig) -> Result<KoOptimizer> {
    KoOptimizer::new(
        cfg.optimizer.clone(),
        cfg.kinetic.clone(),
        cfg.target_layers.iter().copied(),
        cfg.seed,
    )
}

fn rows_of(m: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), m.cols(), |r, c| m.get(idx[r], c))
}

/// Trains per `cfg`, recording condensation metrics of layer 0 every epoch.
pub fn run_condensation(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let (mut net, x, y, xv, yv) = setup(cfg)?;
    let mut opt = build_optimizer(cfg)?;
    let n = x.rows();
    let batch = if cfg.batch_size == 0 || cfg.batch_size >= n { n } else { cfg.batch_size };
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = Rng::substream(cfg.seed, "batches");

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::new();
    let mut failure = None;
    for epoch in 1..=cfg.epochs {
        let started = cfg.record_timing.then(Instant::now);
        if batch < n {
            // Fisher–Yates on the dedicated stream
            for i in (1..n).rev() {
                order.swap(i, shuffle_rng.below(i + 1));
            }
        }
        for chunk in order.chunks(batch) {
            let (bx, by) = if batch == n { (x.clone(), y.clone()) } else { (rows_of(&x, chunk), rows_of(&y, chunk)) };
            let pred = net.forward(&bx)?;
            let (_, grad) = mse_loss(&pred, &by)?;
            net.backward(&grad)?;
            opt.step(&mut net)?;
        }
        let step_time_ms = started.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3);

        let (train_loss, _) = mse_loss(&net.predict(&x)?, &y)?;
        let (val_loss, _) = mse_loss(&net.predict(&xv)?, &yv)?;
        let sim = cosine_matrix(&net.layers[0].weight);
        let record = MetricsRecord {
            epoch,
            train_loss,
            val_metric: val_loss,
            neuron_similarity: neuron_similarity(&sim),
            weight_correlation: weight_correlation(&sim),
            step_time_ms,
        };
        let finite = train_loss.is_finite() && net.layers.iter().all(|l| l.weight.is_finite());
        records.push(record);
        if !finite {
            failure = Some(Error::Divergence {
                epoch,
                message: format!("training loss is {train_loss}"),
            });
            break;
        }
        if cfg.snapshot_every > 0 && epoch % cfg.snapshot_every == 0 && epoch != cfg.epochs {
            snapshots.push((epoch, sim));
        }
    }
    Ok(RunOutcome {
        records,
        final_similarity: cosine_matrix(&net.layers[0].weight),
        snapshots,
        network: net,
        failure,
    })
}

/// Writes `contents` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(MetricsRecord::CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Writes `manifest.txt`, `metrics.csv`, `similarity_final.csv` and any
/// `similarity_epoch_K.csv` into `dir`.
pub fn write_run_dir(dir: &Path, manifest: &str, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join("manifest.txt"), manifest)?;
    write_atomic(&dir.join("metrics.csv"), &metrics_csv(&outcome.records))?;
    write_atomic(&dir.join("similarity_final.csv"), &outcome.final_similarity.to_csv())?;
    for (epoch, sim) in &outcome.snapshots {
        write_atomic(&dir.join(format!("similarity_epoch_{epoch}.csv")), &sim.to_csv())?;
    }
    Ok(())
}

/// Median wall-clock milliseconds per training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overhead {
    pub base_ms_per_step: f64,
    pub ko_ms_per_step: f64,
}

impl Overhead {
    pub fn ratio(&self) -> f64 {
        self.ko_ms_per_step / self.base_ms_per_step
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Measures the full-batch step (forward, backward, optional collision,
/// update) with and without the kinetic transform of `cfg`. Each step starts
/// both variants from the same parameters, so the two timings cover identical
/// work; the trajectory then follows the kinetic variant. The order of the two
/// timed steps alternates so drifts in machine load hit both equally.
pub fn bench_overhead(cfg: &ExperimentConfig, warmup: usize, steps: usize) -> Result<Overhead> {
    let (net, x, y, _, _) = setup(cfg)?;
    bench_on(cfg, net, &x, &y, warmup, steps)
}

/// [`bench_overhead`] on caller-provided network and data.
pub fn bench_on(
    cfg: &ExperimentConfig,
    mut net: Network,
    x: &Matrix,
    y: &Matrix,
    warmup: usize,
    steps: usize,
) -> Result<Overhead> {
    if steps == 0 {
        return Err(Error::config("run.bench_steps", "must be at least 1"));
    }
    let base_cfg = ExperimentConfig {
        kinetic: None,
        ..cfg.clone()
    };
    let mut base_opt = build_optimizer(&base_cfg)?;
    let mut ko_opt = build_optimizer(cfg)?;
    let mut base_times = Vec::with_capacity(steps);
    let mut ko_times = Vec::with_capacity(steps);
    let timed = |net: &mut Network, opt: &mut KoOptimizer| -> Result<f64> {
        let t0 = Instant::now();
        let pred = net.forward(x)?;
        let (_, grad) = mse_loss(&pred, y)?;
        net.backward(&grad)?;
        opt.step(net)?;
        Ok(t0.elapsed().as_secs_f64() * 1e3)
    };
    for s in 0..warmup + steps {
        let mut base_net = net.clone();
        let (tb, tk) = if s % 2 == 0 {
            let tb = timed(&mut base_net, &mut base_opt)?;
            (tb, timed(&mut net, &mut ko_opt)?)
        } else {
            let tk = timed(&mut net, &mut ko_opt)?;
            (timed(&mut base_net, &mut base_opt)?, tk)
        };
        if s >= warmup {
            base_times.push(tb);
            ko_times.push(tk);
        }
    }
    Ok(Overhead {
        base_ms_per_step: median(base_times),
        ko_ms_per_step: median(ko_times),
    })
}
