//! SGD, Adam, AdamW, and the kinetic wrapper around them.
//!
//! The wrapper runs the collision transform on the raw backprop gradients of
//! the targeted layers and then hands every layer to the base optimizer.
//! SGD folds weight decay into the gradient; AdamW applies it directly to
//! the weights before the adaptive update.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::kinetic::{kinetic_transform, KineticConfig};
use crate::linalg::Rng;
use crate::net::Network;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    AdamW,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            other => Err(Error::invalid(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.0,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            momentum,
            weight_decay,
            ..Default::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            learning_rate,
            ..Default::default()
        }
    }

    pub fn adamw(learning_rate: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            learning_rate,
            weight_decay,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(format!("optimizer.{key}"), msg));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("lr", format!("must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", format!("must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", format!("must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", format!("must lie in [0, 1), got {}", self.beta1));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", format!("must lie in [0, 1), got {}", self.beta2));
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", format!("must be > 0, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// Buffers for one parameter tensor: the momentum buffer (SGD) or the first
/// moment (Adam), plus the second moment for Adam.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl ParamState {
    pub fn new(len: usize) -> Self {
        ParamState {
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }
}

fn check_lengths(state: &ParamState, w: &[f64], g: &[f64]) -> Result<()> {
    if w.len() != g.len() || state.first.len() != w.len() || state.second.len() != w.len() {
        return Err(Error::Shape {
            op: "optimizer step",
            left: (w.len(), 1),
            right: (g.len(), 1),
        });
    }
    Ok(())
}

/// `buf ← μ·buf + (g + λw)`, `w ← w − η·buf`.
pub fn sgd_step(state: &mut ParamState, w: &mut [f64], g: &[f64], cfg: &OptimizerConfig) -> Result<()> {
    check_lengths(state, w, g)?;
    let (mu, lambda, eta) = (cfg.momentum, cfg.weight_decay, cfg.learning_rate);
    for ((wk, &gk), buf) in w.iter_mut().zip(g).zip(state.first.iter_mut()) {
        let d = if lambda != 0.0 { gk + lambda * *wk } else { gk };
        *buf = mu * *buf + d;
        *wk -= eta * *buf;
    }
    Ok(())
}

/// Bias-corrected Adam update for step number `t` (1-based). AdamW first
/// shrinks the weights by `η·λ·w`; plain Adam adds `λw` to the gradient.
pub fn adam_step(
    state: &mut ParamState,
    t: u64,
    w: &mut [f64],
    g: &[f64],
    cfg: &OptimizerConfig,
) -> Result<()> {
    check_lengths(state, w, g)?;
    if t == 0 {
        return Err(Error::State("adam step counter starts at 1".into()));
    }
    let (b1, b2, eta, eps, lambda) = (cfg.beta1, cfg.beta2, cfg.learning_rate, cfg.epsilon, cfg.weight_decay);
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decoupled = cfg.kind == OptimizerKind::AdamW;
    for (k, wk) in w.iter_mut().enumerate() {
        let mut gk = g[k];
        if decoupled {
            *wk -= eta * lambda * *wk;
        } else if lambda != 0.0 {
            gk += lambda * *wk;
        }
        let m = b1 * state.first[k] + (1.0 - b1) * gk;
        let v = b2 * state.second[k] + (1.0 - b2) * gk * gk;
        state.first[k] = m;
        state.second[k] = v;
        *wk -= eta * (m / c1) / ((v / c2).sqrt() + eps);
    }
    Ok(())
}

/// A base optimizer over every weight and bias tensor of a [`Network`].
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    states: Vec<ParamState>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            states: Vec::new(),
            step_count: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn states(&self) -> &[ParamState] {
        &self.states
    }

    /// One update using the gradients currently stored in `net`.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        if self.states.is_empty() {
            for layer in &net.layers {
                self.states.push(ParamState::new(layer.weight.as_slice().len()));
                self.states.push(ParamState::new(layer.bias.len()));
            }
        } else if self.states.len() != 2 * net.layers.len() {
            return Err(Error::State("optimizer was built for a different network".into()));
        }
        self.step_count += 1;
        let t = self.step_count;
        let cfg = &self.config;
        for (layer, states) in net.layers.iter_mut().zip(self.states.chunks_exact_mut(2)) {
            let (ws, bs) = states.split_at_mut(1);
            let w = layer.weight.as_mut_slice();
            let gw = layer.grad_weight.as_slice();
            match cfg.kind {
                OptimizerKind::Sgd => {
                    sgd_step(&mut ws[0], w, gw, cfg)?;
                    sgd_step(&mut bs[0], &mut layer.bias, &layer.grad_bias, cfg)?;
                }
                OptimizerKind::Adam | OptimizerKind::AdamW => {
                    adam_step(&mut ws[0], t, w, gw, cfg)?;
                    adam_step(&mut bs[0], t, &mut layer.bias, &layer.grad_bias, cfg)?;
                }
            }
        }
        Ok(())
    }
}

/// Base optimizer plus an optional collision transform on selected layers.
#[derive(Clone, Debug)]
pub struct KoOptimizer {
    pub base: Optimizer,
    pub kinetic: Option<KineticConfig>,
    pub target_layers: BTreeSet<usize>,
    rng: Rng,
}

impl KoOptimizer {
    /// `seed` and the kinetic config's stream label pick the scattering
    /// direction stream.
    pub fn new(
        base: OptimizerConfig,
        kinetic: Option<KineticConfig>,
        target_layers: impl IntoIterator<Item = usize>,
        seed: u64,
    ) -> Result<Self> {
        if let Some(k) = &kinetic {
            k.validate()?;
        }
        let label = kinetic.as_ref().map_or("kinetic", |k| k.rng_stream_label.as_str());
        Ok(KoOptimizer {
            rng: Rng::substream(seed, label),
            base: Optimizer::new(base)?,
            kinetic,
            target_layers: target_layers.into_iter().collect(),
        })
    }

    /// Collision on the target layers' weight gradients, then a base step.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        if let Some(cfg) = &self.kinetic {
            for &k in &self.target_layers {
                let layer = net.layers.get_mut(k).ok_or_else(|| {
                    Error::config("kinetic.target_layers", format!("layer {k} does not exist"))
                })?;
                layer.grad_weight = kinetic_transform(&layer.weight, &layer.grad_weight, cfg, &mut self.rng)?;
            }
        }
        self.base.step(net)
    }
}

/// Free-function form of [`KoOptimizer::step`].
pub fn ko_step(wrapper: &mut KoOptimizer, net: &mut Network) -> Result<()> {
    wrapper.step(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_step() {
        let mut s = ParamState::new(1);
        let mut w = [0.0];
        sgd_step(&mut s, &mut w, &[1.0], &OptimizerConfig::sgd(0.1, 0.0, 0.0)).unwrap();
        assert!((w[0] + 0.1).abs() < 1e-16);
    }

    #[test]
    fn zero_gradient_sgd_is_noop() {
        let mut s = ParamState::new(2);
        let mut w = [0.3, -1.0];
        sgd_step(&mut s, &mut w, &[0.0, 0.0], &OptimizerConfig::sgd(0.5, 0.9, 0.0)).unwrap();
        assert_eq!(w, [0.3, -1.0]);
    }

    #[test]
    fn sgd_momentum_unrolled() {
        let cfg = OptimizerConfig::sgd(1.0, 0.9, 0.0);
        let mut s = ParamState::new(1);
        let mut w = [0.0];
        sgd_step(&mut s, &mut w, &[1.0], &cfg).unwrap();
        assert_eq!(w[0], -1.0);
        sgd_step(&mut s, &mut w, &[1.0], &cfg).unwrap();
        assert!((w[0] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_decay_is_coupled() {
        let mut s = ParamState::new(1);
        let mut w = [2.0];
        sgd_step(&mut s, &mut w, &[0.0], &OptimizerConfig::sgd(0.1, 0.0, 0.5)).unwrap();
        assert!((w[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut s = ParamState::new(3);
        let mut w = [1.0, -2.0, 0.5];
        adam_step(&mut s, 1, &mut w, &[0.0; 3], &OptimizerConfig::default()).unwrap();
        assert_eq!(w, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_size() {
        let cfg = OptimizerConfig::adam(1e-3);
        let mut s = ParamState::new(1);
        let mut w = [0.0];
        adam_step(&mut s, 1, &mut w, &[1e-3], &cfg).unwrap();
        let expected = 1e-3 * 1e-3 / (1e-3 + 1e-8);
        assert!((w[0].abs() - expected).abs() < 1e-15);
        assert!((w[0].abs() - 9.99e-4).abs() < 1e-6);
    }

    #[test]
    fn adam_first_step_is_scale_invariant() {
        let cfg = OptimizerConfig::adam(1e-3);
        let step = |g: f64| {
            let mut s = ParamState::new(1);
            let mut w = [0.0];
            adam_step(&mut s, 1, &mut w, &[g], &cfg).unwrap();
            w[0]
        };
        assert!((step(1e-3) - step(1.0)).abs() < 1e-7);
    }

    #[test]
    fn adamw_decouples_decay() {
        let cfg = OptimizerConfig::adamw(1e-3, 0.01);
        let mut s = ParamState::new(2);
        let mut w = [1.0, -2.0];
        adam_step(&mut s, 1, &mut w, &[0.0, 0.0], &cfg).unwrap();
        assert!((w[0] - (1.0 - 1e-5)).abs() < 1e-15);
        assert!((w[1] - (-2.0 + 2e-5)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = ParamState::new(2);
        let mut w = [0.0, 0.0];
        assert!(sgd_step(&mut s, &mut w, &[1.0], &OptimizerConfig::sgd(0.1, 0.0, 0.0)).is_err());
        assert!(adam_step(&mut s, 1, &mut w, &[1.0, 2.0, 3.0], &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(Optimizer::new(OptimizerConfig::adam(0.0)).is_err());
        let cfg = OptimizerConfig {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(OptimizerConfig::sgd(0.1, 1.0, 0.0).validate().is_err());
    }

    #[test]
    fn step_counter_increments() {
        let mut net = Network::mlp(&[2, 3, 1], crate::net::Activation::Tanh, 0.1, &mut Rng::new(0)).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::default()).unwrap();
        for t in 1..=3 {
            opt.step(&mut net).unwrap();
            assert_eq!(opt.step_count(), t);
        }
        assert_eq!(opt.states().len(), 4);
        assert_eq!(opt.states()[0].first.len(), 6);
    }
}
