//! WebAssembly bindings behind `www/index.html`.
//!
//! Three operations: train the 5-50-1 condensation network and return its
//! similarity heatmap, step a DSMC gas and read its speed histogram, and
//! scatter one pair of 2-D gradients.

use kinopt::dsmc::{self, DsmcConfig, InitialState, ParticleSystem, VelocityHistogram};
use kinopt::exp::{run_condensation, ExperimentConfig};
use kinopt::kinetic::{hard_collision_with, CollisionMode, FixedDirections, KineticConfig};
use kinopt::Matrix;
use wasm_bindgen::prelude::*;

/// Final state and per-epoch series of one training run.
#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct Condensation {
    neurons: usize,
    similarity: Vec<f64>,
    weight_correlation: Vec<f64>,
    neuron_similarity: Vec<f64>,
    train_loss: Vec<f64>,
}

#[wasm_bindgen]
impl Condensation {
    #[wasm_bindgen(getter)]
    pub fn neurons(&self) -> usize {
        self.neurons
    }

    /// Row-major `neurons × neurons` cosine matrix of the hidden layer.
    pub fn similarity(&self) -> Vec<f64> {
        self.similarity.clone()
    }

    #[wasm_bindgen(js_name = weightCorrelation)]
    pub fn weight_correlation(&self) -> Vec<f64> {
        self.weight_correlation.clone()
    }

    #[wasm_bindgen(js_name = neuronSimilarity)]
    pub fn neuron_similarity(&self) -> Vec<f64> {
        self.neuron_similarity.clone()
    }

    #[wasm_bindgen(js_name = trainLoss)]
    pub fn train_loss(&self) -> Vec<f64> {
        self.train_loss.clone()
    }
}

pub fn condensation(mode: &str, coll_coef: f64, seed: u64, epochs: usize) -> Result<Condensation, String> {
    let kinetic = match mode {
        "none" => None,
        other => {
            let mode: CollisionMode = other.parse().map_err(|e: kinopt::Error| e.to_string())?;
            Some(KineticConfig {
                mode,
                coll_coef,
                ..Default::default()
            })
        }
    };
    let cfg = ExperimentConfig {
        kinetic,
        seed,
        epochs,
        ..Default::default()
    };
    let out = run_condensation(&cfg).map_err(|e| e.to_string())?;
    if let Some(e) = out.failure {
        return Err(e.to_string());
    }
    let col = |f: fn(&kinopt::metrics::MetricsRecord) -> f64| out.records.iter().map(f).collect();
    Ok(Condensation {
        neurons: out.final_similarity.len(),
        similarity: out.final_similarity.matrix().as_slice().to_vec(),
        weight_correlation: col(|r| r.weight_correlation),
        neuron_similarity: col(|r| r.neuron_similarity),
        train_loss: col(|r| r.train_loss),
    })
}

/// Trains with `mode` in `none | soft | hard`.
#[wasm_bindgen(js_name = trainCondensation)]
pub fn train_condensation(mode: &str, coll_coef: f64, seed: u32, epochs: u32) -> Result<Condensation, JsError> {
    condensation(mode, coll_coef, u64::from(seed), epochs as usize).map_err(|e| JsError::new(&e))
}

/// Hard-sphere gas relaxing from the equal-speed start.
#[wasm_bindgen]
pub struct Gas {
    cfg: DsmcConfig,
    sys: ParticleSystem,
    steps: usize,
}

impl Gas {
    pub fn create(n_particles: usize, seed: u64) -> Result<Gas, String> {
        let cfg = DsmcConfig {
            n_particles,
            seed,
            start: InitialState::EqualSpeed,
            hist_bins: 40,
            // keeps the collision rate per particle independent of n
            f_n: 1e4 / n_particles.max(1) as f64,
            ..Default::default()
        };
        let sys = ParticleSystem::new(&cfg).map_err(|e| e.to_string())?;
        Ok(Gas { cfg, sys, steps: 0 })
    }

    fn histogram(&self) -> VelocityHistogram {
        let upper = self.upper_speed();
        VelocityHistogram::from_speeds(&self.sys.speeds(), self.cfg.hist_bins, upper).expect("gas is never empty")
    }
}

#[wasm_bindgen]
impl Gas {
    #[wasm_bindgen(constructor)]
    pub fn new(n_particles: u32, seed: u32) -> Result<Gas, JsError> {
        Gas::create(n_particles as usize, u64::from(seed)).map_err(|e| JsError::new(&e))
    }

    /// Runs `steps` steps and returns the collisions they produced.
    pub fn advance(&mut self, steps: u32) -> u32 {
        let mut accepted = 0;
        for _ in 0..steps {
            accepted += self.sys.step(&self.cfg).accepted;
        }
        self.steps += steps as usize;
        accepted as u32
    }

    #[wasm_bindgen(getter)]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[wasm_bindgen(getter)]
    pub fn time(&self) -> f64 {
        self.steps as f64 * self.cfg.tau
    }

    #[wasm_bindgen(js_name = upperSpeed)]
    pub fn upper_speed(&self) -> f64 {
        self.cfg.hist_max_sigmas * self.cfg.thermal_speed()
    }

    /// Speed density per histogram bin.
    #[wasm_bindgen(js_name = speedDensity)]
    pub fn speed_density(&self) -> Vec<f64> {
        self.histogram().density
    }

    /// Maxwell–Boltzmann density averaged over the same bins.
    #[wasm_bindgen(js_name = maxwellDensity)]
    pub fn maxwell_density(&self) -> Vec<f64> {
        let a = self.sys.temperature(self.cfg.mass).sqrt();
        self.histogram()
            .edges
            .windows(2)
            .map(|e| (dsmc::mb_speed_cdf(e[1], a) - dsmc::mb_speed_cdf(e[0], a)) / (e[1] - e[0]))
            .collect()
    }

    #[wasm_bindgen(getter)]
    pub fn h(&self) -> f64 {
        dsmc::h_function(&self.histogram()).unwrap_or(f64::NAN)
    }

    #[wasm_bindgen(js_name = mbDistance)]
    pub fn mb_distance(&self) -> f64 {
        dsmc::mb_distance(&self.sys, self.cfg.mass).unwrap_or(f64::NAN)
    }
}

/// Post-collision gradients `[g0x, g0y, g1x, g1y]` of two neurons at `w`
/// (same layout) scattered into direction `angle`; the input gradients come
/// back unchanged when the pair is rejected.
pub fn scatter(w: &[f64], g: &[f64], coll_coef: f64, angle: f64) -> Result<Vec<f64>, String> {
    if w.len() != 4 || g.len() != 4 {
        return Err("expected two 2-D rows for both weights and gradients".into());
    }
    let w = Matrix::from_vec(2, 2, w.to_vec()).map_err(|e| e.to_string())?;
    let g = Matrix::from_vec(2, 2, g.to_vec()).map_err(|e| e.to_string())?;
    let mut dirs = FixedDirections::new(vec![vec![angle.cos(), angle.sin()]]);
    hard_collision_with(&w, &g, &KineticConfig::hard(coll_coef), &mut dirs)
        .map(Matrix::into_vec)
        .map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = scatterPair)]
pub fn scatter_pair(w: Vec<f64>, g: Vec<f64>, coll_coef: f64, angle: f64) -> Result<Vec<f64>, JsError> {
    scatter(&w, &g, coll_coef, angle).map_err(|e| JsError::new(&e))
}
