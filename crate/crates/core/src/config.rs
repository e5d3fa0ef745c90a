//! INI-style run configuration.
//!
//! A config file is a list of `[section]` headers followed by `key = value`
//! lines. Blank lines and lines starting with `#` or `;` are ignored. A key
//! may also be written fully qualified (`kinetic.coll_coef = 0.2`) outside any
//! section, which makes every run manifest a valid config file in its own
//! right. Every key has a default; unknown keys and sections are rejected.

use std::collections::BTreeMap;
use std::fmt::{Display, Write as _};
use std::str::FromStr;

use crate::dsmc::DsmcConfig;
use crate::exp::{ExperimentConfig, SyntheticSpec};
use crate::kinetic::{CollisionMode, KineticConfig};
use crate::net::Activation;
use crate::optim::OptimizerConfig;
use crate::{Error, Result};

pub const SECTIONS: [&str; 6] = ["network", "optimizer", "kinetic", "data", "run", "dsmc"];

/// The `[kinetic]` section. `mode = none` trains with the bare optimizer while
/// keeping the remaining settings, so a config survives toggling the mode.
#[derive(Clone, Debug, PartialEq)]
pub struct KineticSection {
    pub mode: Option<CollisionMode>,
    pub coll_coef: f64,
    pub soft_zero_diagonal: bool,
    pub hard_max_one_collision_per_neuron: bool,
    pub target_layers: Vec<usize>,
    pub rng_stream_label: String,
}

impl Default for KineticSection {
    fn default() -> Self {
        let k = KineticConfig::default();
        KineticSection {
            mode: None,
            coll_coef: k.coll_coef,
            soft_zero_diagonal: k.soft_zero_diagonal,
            hard_max_one_collision_per_neuron: k.hard_max_one_collision_per_neuron,
            target_layers: vec![0],
            rng_stream_label: k.rng_stream_label,
        }
    }
}

impl KineticSection {
    pub fn to_kinetic(&self) -> Option<KineticConfig> {
        self.mode.map(|mode| KineticConfig {
            mode,
            coll_coef: self.coll_coef,
            soft_zero_diagonal: self.soft_zero_diagonal,
            hard_max_one_collision_per_neuron: self.hard_max_one_collision_per_neuron,
            rng_stream_label: self.rng_stream_label.clone(),
        })
    }
}

/// Everything a `kinopt` command reads from its config file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub init_std: f64,
    pub optimizer: OptimizerConfig,
    pub kinetic: KineticSection,
    pub data: SyntheticSpec,
    /// One run per seed; several seeds get one sub-directory each.
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub snapshot_every: usize,
    pub record_timing: bool,
    pub bench_warmup: usize,
    pub bench_steps: usize,
    pub dsmc: DsmcConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        RunConfig {
            dims: exp.dims,
            activation: exp.activation,
            init_std: exp.init_std,
            optimizer: exp.optimizer,
            kinetic: KineticSection::default(),
            data: exp.data,
            seeds: vec![exp.seed],
            epochs: exp.epochs,
            batch_size: exp.batch_size,
            snapshot_every: exp.snapshot_every,
            record_timing: exp.record_timing,
            bench_warmup: 50,
            bench_steps: 300,
            dsmc: DsmcConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Table::read(text)?;
        let d = RunConfig::default();
        let kd = d.kinetic.clone();
        let dd = d.dsmc.clone();
        let od = d.optimizer.clone();
        let sd = d.data.clone();
        let mode: String = t.take("kinetic.mode", "none".to_string())?;
        let mode = match mode.as_str() {
            "none" => None,
            other => Some(
                other
                    .parse::<CollisionMode>()
                    .map_err(|e| Error::config("kinetic.mode", e.to_string()))?,
            ),
        };
        let cfg = RunConfig {
            dims: t.take_list("network.dims", d.dims)?,
            activation: t.take("network.activation", d.activation)?,
            init_std: t.take("network.init_std", d.init_std)?,
            optimizer: OptimizerConfig {
                kind: t.take("optimizer.kind", od.kind)?,
                learning_rate: t.take("optimizer.lr", od.learning_rate)?,
                momentum: t.take("optimizer.momentum", od.momentum)?,
                weight_decay: t.take("optimizer.weight_decay", od.weight_decay)?,
                beta1: t.take("optimizer.beta1", od.beta1)?,
                beta2: t.take("optimizer.beta2", od.beta2)?,
                epsilon: t.take("optimizer.epsilon", od.epsilon)?,
            },
            kinetic: KineticSection {
                mode,
                coll_coef: t.take("kinetic.coll_coef", kd.coll_coef)?,
                soft_zero_diagonal: t.take("kinetic.soft_zero_diagonal", kd.soft_zero_diagonal)?,
                hard_max_one_collision_per_neuron: t.take(
                    "kinetic.hard_max_one_collision_per_neuron",
                    kd.hard_max_one_collision_per_neuron,
                )?,
                target_layers: t.take_list("kinetic.target_layers", kd.target_layers)?,
                rng_stream_label: t.take("kinetic.rng_stream_label", kd.rng_stream_label)?,
            },
            data: SyntheticSpec {
                n_samples: t.take("data.n_samples", sd.n_samples)?,
                input_dim: t.take("data.input_dim", sd.input_dim)?,
                low: t.take("data.low", sd.low)?,
                high: t.take("data.high", sd.high)?,
                amplitude: t.take("data.amplitude", sd.amplitude)?,
                frequency: t.take("data.frequency", sd.frequency)?,
                phase: t.take("data.phase", sd.phase)?,
            },
            seeds: t.take_list("run.seeds", d.seeds)?,
            epochs: t.take("run.epochs", d.epochs)?,
            batch_size: t.take("run.batch_size", d.batch_size)?,
            snapshot_every: t.take("run.snapshot_every", d.snapshot_every)?,
            record_timing: t.take("run.record_timing", d.record_timing)?,
            bench_warmup: t.take("run.bench_warmup", d.bench_warmup)?,
            bench_steps: t.take("run.bench_steps", d.bench_steps)?,
            dsmc: DsmcConfig {
                n_particles: t.take("dsmc.n_particles", dd.n_particles)?,
                f_n: t.take("dsmc.f_n", dd.f_n)?,
                diameter: t.take("dsmc.diameter", dd.diameter)?,
                tau: t.take("dsmc.tau", dd.tau)?,
                box_size: t.take_triple("dsmc.box_size", dd.box_size)?,
                cells: t.take_triple("dsmc.cells", dd.cells)?,
                mass: t.take("dsmc.mass", dd.mass)?,
                kt: t.take("dsmc.kt", dd.kt)?,
                seed: t.take("dsmc.seed", dd.seed)?,
                n_steps: t.take("dsmc.n_steps", dd.n_steps)?,
                start: t.take("dsmc.start", dd.start)?,
                hist_bins: t.take("dsmc.hist_bins", dd.hist_bins)?,
                hist_max_sigmas: t.take("dsmc.hist_max_sigmas", dd.hist_max_sigmas)?,
                snapshot_every: t.take("dsmc.snapshot_every", dd.snapshot_every)?,
            },
        };
        t.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("run.seeds", "need at least one seed"));
        }
        if self.bench_steps == 0 {
            return Err(Error::config("run.bench_steps", "must be at least 1"));
        }
        // checked even with `mode = none`, so flipping the mode cannot expose
        // a bad value later
        if !(0.0..=1.0).contains(&self.kinetic.coll_coef) {
            return Err(Error::config(
                "kinetic.coll_coef",
                format!("must lie in [0, 1], got {}", self.kinetic.coll_coef),
            ));
        }
        if self.kinetic.rng_stream_label.is_empty() {
            return Err(Error::config("kinetic.rng_stream_label", "must not be empty"));
        }
        self.experiment(self.seeds[0]).validate()?;
        self.dsmc.validate()
    }

    /// The experiment this config describes, for one seed.
    pub fn experiment(&self, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            dims: self.dims.clone(),
            activation: self.activation,
            init_std: self.init_std,
            optimizer: self.optimizer.clone(),
            kinetic: self.kinetic.to_kinetic(),
            target_layers: self.kinetic.target_layers.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            snapshot_every: self.snapshot_every,
            seed,
            data: self.data.clone(),
            record_timing: self.record_timing,
        }
    }

    /// Key/value pairs in emission order, keys fully qualified.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let o = &self.optimizer;
        let k = &self.kinetic;
        let s = &self.data;
        let d = &self.dsmc;
        vec![
            ("network.dims", join(&self.dims)),
            ("network.activation", self.activation.name().to_string()),
            ("network.init_std", self.init_std.to_string()),
            ("optimizer.kind", o.kind.name().to_string()),
            ("optimizer.lr", o.learning_rate.to_string()),
            ("optimizer.momentum", o.momentum.to_string()),
            ("optimizer.weight_decay", o.weight_decay.to_string()),
            ("optimizer.beta1", o.beta1.to_string()),
            ("optimizer.beta2", o.beta2.to_string()),
            ("optimizer.epsilon", o.epsilon.to_string()),
            ("kinetic.mode", k.mode.map_or("none", CollisionMode::name).to_string()),
            ("kinetic.coll_coef", k.coll_coef.to_string()),
            ("kinetic.soft_zero_diagonal", k.soft_zero_diagonal.to_string()),
            (
                "kinetic.hard_max_one_collision_per_neuron",
                k.hard_max_one_collision_per_neuron.to_string(),
            ),
            ("kinetic.target_layers", join(&k.target_layers)),
            ("kinetic.rng_stream_label", k.rng_stream_label.clone()),
            ("data.n_samples", s.n_samples.to_string()),
            ("data.input_dim", s.input_dim.to_string()),
            ("data.low", s.low.to_string()),
            ("data.high", s.high.to_string()),
            ("data.amplitude", s.amplitude.to_string()),
            ("data.frequency", s.frequency.to_string()),
            ("data.phase", s.phase.to_string()),
            ("run.seeds", join(&self.seeds)),
            ("run.epochs", self.epochs.to_string()),
            ("run.batch_size", self.batch_size.to_string()),
            ("run.snapshot_every", self.snapshot_every.to_string()),
            ("run.record_timing", self.record_timing.to_string()),
            ("run.bench_warmup", self.bench_warmup.to_string()),
            ("run.bench_steps", self.bench_steps.to_string()),
            ("dsmc.n_particles", d.n_particles.to_string()),
            ("dsmc.f_n", d.f_n.to_string()),
            ("dsmc.diameter", d.diameter.to_string()),
            ("dsmc.tau", d.tau.to_string()),
            ("dsmc.box_size", join(&d.box_size)),
            ("dsmc.cells", join(&d.cells)),
            ("dsmc.mass", d.mass.to_string()),
            ("dsmc.kt", d.kt.to_string()),
            ("dsmc.seed", d.seed.to_string()),
            ("dsmc.n_steps", d.n_steps.to_string()),
            ("dsmc.start", d.start.name().to_string()),
            ("dsmc.hist_bins", d.hist_bins.to_string()),
            ("dsmc.hist_max_sigmas", d.hist_max_sigmas.to_string()),
            ("dsmc.snapshot_every", d.snapshot_every.to_string()),
        ]
    }

    /// Sectioned INI text; `parse(emit(cfg)) == cfg`.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (key, value) in self.entries() {
            let (section, name) = key.split_once('.').expect("qualified key");
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{name} = {value}");
        }
        out
    }

    /// Flat `section.key=value` lines, as written to run manifests.
    pub fn emit_flat(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Raw `section.key → (line, value)` entries awaiting typed extraction.
struct Table {
    entries: BTreeMap<String, (usize, String)>,
}

impl Table {
    fn read(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section: Option<&str> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Parse(format!("line {line_no}: unterminated section header")))?
                    .trim();
                let known = SECTIONS.iter().copied().find(|s| *s == name);
                section = Some(known.ok_or_else(|| {
                    Error::config(name, format!("unknown section (line {line_no})"))
                })?);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {line_no}: expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let full = match section {
                Some(s) => format!("{s}.{key}"),
                None if key.contains('.') => key.to_string(),
                None => {
                    return Err(Error::config(
                        key,
                        format!("key outside any section (line {line_no})"),
                    ))
                }
            };
            if let Some((first, _)) = entries.insert(full.clone(), (line_no, value.trim().to_string())) {
                return Err(Error::config(
                    full,
                    format!("duplicate key (lines {first} and {line_no})"),
                ));
            }
        }
        Ok(Table { entries })
    }

    fn take<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .map_err(|e| Error::config(key, format!("cannot parse `{v}` (line {line}): {e}"))),
        }
    }

    fn take_list<T>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(default),
            Some((line, v)) => v
                .split(',')
                .map(|item| {
                    let item = item.trim();
                    item.parse().map_err(|e| {
                        Error::config(key, format!("cannot parse list item `{item}` (line {line}): {e}"))
                    })
                })
                .collect(),
        }
    }

    fn take_triple<T>(&mut self, key: &str, default: [T; 3]) -> Result<[T; 3]>
    where
        T: FromStr + Copy,
        T::Err: Display,
    {
        let v = self.take_list(key, default.to_vec())?;
        <[T; 3]>::try_from(v)
            .map_err(|v| Error::config(key, format!("expected 3 comma-separated values, got {}", v.len())))
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::config(key, format!("unknown key (line {line})"))),
        }
    }
}

/// Plain `key=value` lines into a map, for manifests that are not run
/// configs (network checkpoints).
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected `key=value`", idx + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
