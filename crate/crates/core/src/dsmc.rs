//! Direct simulation Monte Carlo for a dilute hard-sphere gas in a closed box.
//!
//! A step is: straight-line drift, specular reflection at the walls, cell
//! re-indexing, then stochastic binary collisions inside each cell using the
//! no-time-counter scheme. Units are non-dimensional (`m = k_B = 1` in the
//! defaults).
//!
//! Per cell, `M_cand = N_c (N_c − 1) F_N π d² v_r^max τ / (2 V_c)` candidate
//! pairs are drawn (stochastically rounded), each accepted with probability
//! `|v_i − v_j| / v_r^max`. An accepted pair keeps its centre-of-mass
//! velocity and gets an isotropically redirected relative velocity of the
//! same magnitude, so pair momentum and kinetic energy are conserved.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::linalg::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialState {
    /// Maxwell–Boltzmann velocities at the configured temperature.
    Equilibrium,
    /// Every particle at the speed `√(3 k_B T / m)` in a random direction;
    /// same mean energy as the equilibrium start, far from equilibrium.
    EqualSpeed,
}

impl InitialState {
    pub fn name(self) -> &'static str {
        match self {
            InitialState::Equilibrium => "equilibrium",
            InitialState::EqualSpeed => "equal_speed",
        }
    }
}

impl fmt::Display for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitialState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "equilibrium" => Ok(InitialState::Equilibrium),
            "equal_speed" => Ok(InitialState::EqualSpeed),
            other => Err(Error::invalid(format!("unknown initial state `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DsmcConfig {
    pub n_particles: usize,
    /// Physical molecules represented by one simulation particle.
    pub f_n: f64,
    /// Molecular diameter.
    pub diameter: f64,
    /// Time step.
    pub tau: f64,
    pub box_size: [f64; 3],
    pub cells: [usize; 3],
    pub mass: f64,
    /// `k_B · T` of the initial state.
    pub kt: f64,
    pub seed: u64,
    pub n_steps: usize,
    pub start: InitialState,
    /// Speed-histogram bins for the H diagnostic.
    pub hist_bins: usize,
    /// Upper edge of the speed histogram in units of `√(k_B T / m)`.
    pub hist_max_sigmas: f64,
    /// Write a velocity snapshot every this many steps; 0 disables.
    pub snapshot_every: usize,
}

impl Default for DsmcConfig {
    /// 10⁴ particles in a unit box with 4³ cells; about 0.035 collisions per
    /// particle per step.
    fn default() -> Self {
        DsmcConfig {
            n_particles: 10_000,
            f_n: 1.0,
            diameter: 0.01,
            tau: 0.005,
            box_size: [1.0; 3],
            cells: [4; 3],
            mass: 1.0,
            kt: 1.0,
            seed: 0,
            n_steps: 2000,
            start: InitialState::EqualSpeed,
            hist_bins: 60,
            hist_max_sigmas: 6.0,
            snapshot_every: 0,
        }
    }
}

/// Velocity bound used to validate `tau`: six times the RMS speed.
const SPEED_BOUND_RMS: f64 = 6.0;

impl DsmcConfig {
    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.box_size.iter().product::<f64>() / self.cell_count() as f64
    }

    pub fn thermal_speed(&self) -> f64 {
        (self.kt / self.mass).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("dsmc.{key}"), format!("must be > 0, got {v}")))
            }
        };
        if self.n_particles == 0 {
            return Err(Error::config("dsmc.n_particles", "need at least one particle"));
        }
        positive("f_n", self.f_n)?;
        positive("diameter", self.diameter)?;
        positive("tau", self.tau)?;
        positive("mass", self.mass)?;
        positive("kt", self.kt)?;
        positive("hist_max_sigmas", self.hist_max_sigmas)?;
        for &l in &self.box_size {
            positive("box_size", l)?;
        }
        if self.cells.contains(&0) {
            return Err(Error::config("dsmc.cells", "every axis needs at least one cell"));
        }
        if self.hist_bins == 0 {
            return Err(Error::config("dsmc.hist_bins", "need at least one bin"));
        }
        let v_bound = SPEED_BOUND_RMS * (3.0 * self.kt / self.mass).sqrt();
        let min_extent = self.box_size.iter().copied().fold(f64::INFINITY, f64::min);
        if self.tau * v_bound >= min_extent {
            return Err(Error::config(
                "dsmc.tau",
                format!(
                    "a particle at {v_bound:.3} could cross the {min_extent} box in one step of {}",
                    self.tau
                ),
            ));
        }
        Ok(())
    }
}

/// Candidate and accepted collision counts of one collision sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CollisionStats {
    pub candidates: usize,
    pub accepted: usize,
}

#[derive(Clone, Debug)]
pub struct ParticleSystem {
    pub positions: Vec<[f64; 3]>,
    pub velocities: Vec<[f64; 3]>,
    /// `cell_start[c]..cell_start[c + 1]` indexes `cell_members` for cell `c`.
    cell_start: Vec<usize>,
    cell_members: Vec<usize>,
    /// Running maximum relative speed per cell.
    pub vr_max: Vec<f64>,
    box_size: [f64; 3],
    cells: [usize; 3],
    rng: Rng,
}

#[inline]
fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn norm3(a: &[f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Isotropic unit vector from the polar form `φ = 2π ℜ₂`, `θ = acos(2ℜ₃ − 1)`.
fn polar_direction(rng: &mut Rng) -> [f64; 3] {
    let phi = 2.0 * PI * rng.uniform();
    let cos_theta = 2.0 * rng.uniform() - 1.0;
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    [sin_theta * phi.cos(), sin_theta * phi.sin(), cos_theta]
}

/// Post-collision velocities of an equal-mass hard-sphere pair that scatters
/// into unit direction `dir`.
pub fn scatter_pair(vi: &[f64; 3], vj: &[f64; 3], dir: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let vr = norm3(&sub(vi, vj));
    let mut a = [0.0; 3];
    let mut b = [0.0; 3];
    for k in 0..3 {
        let cm = 0.5 * (vi[k] + vj[k]);
        let half = 0.5 * vr * dir[k];
        a[k] = cm + half;
        b[k] = cm - half;
    }
    (a, b)
}

impl ParticleSystem {
    pub fn new(cfg: &DsmcConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = Rng::substream(cfg.seed, "dsmc-init");
        let n = cfg.n_particles;
        let positions = (0..n)
            .map(|_| {
                [
                    init.uniform() * cfg.box_size[0],
                    init.uniform() * cfg.box_size[1],
                    init.uniform() * cfg.box_size[2],
                ]
            })
            .collect();
        let sigma = cfg.thermal_speed();
        let velocities = match cfg.start {
            InitialState::Equilibrium => (0..n)
                .map(|_| [sigma * init.normal(), sigma * init.normal(), sigma * init.normal()])
                .collect(),
            InitialState::EqualSpeed => {
                let speed = 3.0f64.sqrt() * sigma;
                (0..n)
                    .map(|_| polar_direction(&mut init).map(|c| speed * c))
                    .collect()
            }
        };
        // relative velocity has per-component variance 2kT/m
        let vr_rms = (6.0 * cfg.kt / cfg.mass).sqrt();
        let mut sys = ParticleSystem {
            positions,
            velocities,
            cell_start: Vec::new(),
            cell_members: Vec::new(),
            vr_max: vec![3.0 * vr_rms; cfg.cell_count()],
            box_size: cfg.box_size,
            cells: cfg.cells,
            rng: Rng::substream(cfg.seed, "dsmc-collide"),
        };
        sys.index_cells();
        Ok(sys)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }

    /// Particle indices currently in cell `c`.
    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cell_members[self.cell_start[c]..self.cell_start[c + 1]]
    }

    fn cell_of(&self, x: &[f64; 3]) -> usize {
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let f = (x[k] / self.box_size[k] * self.cells[k] as f64).floor();
            idx[k] = (f.max(0.0) as usize).min(self.cells[k] - 1);
        }
        (idx[0] * self.cells[1] + idx[1]) * self.cells[2] + idx[2]
    }

    /// Rebuilds the cell lists with a counting sort, stable in particle index.
    pub fn index_cells(&mut self) {
        let nc = self.cell_count();
        let owner: Vec<usize> = self.positions.iter().map(|x| self.cell_of(x)).collect();
        let mut start = vec![0usize; nc + 1];
        for &c in &owner {
            start[c + 1] += 1;
        }
        for c in 0..nc {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut members = vec![0usize; owner.len()];
        for (p, &c) in owner.iter().enumerate() {
            members[fill[c]] = p;
            fill[c] += 1;
        }
        self.cell_start = start;
        self.cell_members = members;
    }

    pub fn total_kinetic_energy(&self, mass: f64) -> f64 {
        0.5 * mass
            * self
                .velocities
                .iter()
                .map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
                .sum::<f64>()
    }

    pub fn total_momentum(&self, mass: f64) -> [f64; 3] {
        let mut p = [0.0; 3];
        for v in &self.velocities {
            for k in 0..3 {
                p[k] += mass * v[k];
            }
        }
        p
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.velocities.iter().map(norm3).collect()
    }

    /// `k_B T` implied by the mean kinetic energy.
    pub fn temperature(&self, mass: f64) -> f64 {
        2.0 * self.total_kinetic_energy(mass) / (3.0 * self.len() as f64)
    }

    pub fn step(&mut self, cfg: &DsmcConfig) -> CollisionStats {
        drift(self, cfg.tau);
        self.index_cells();
        collide_cells(self, cfg)
    }
}

pub fn init_system(cfg: &DsmcConfig) -> Result<ParticleSystem> {
    ParticleSystem::new(cfg)
}

/// `x ← x + v τ`, followed by wall reflection.
pub fn drift(sys: &mut ParticleSystem, tau: f64) {
    if tau == 0.0 {
        return;
    }
    for (x, v) in sys.positions.iter_mut().zip(&sys.velocities) {
        for k in 0..3 {
            x[k] += v[k] * tau;
        }
    }
    let box_size = sys.box_size;
    wall_reflect(sys, &box_size);
}

/// Specular walls at `0` and `box_size[k]`: an escaped coordinate is mirrored
/// back about the wall it crossed and that velocity component flips sign.
pub fn wall_reflect(sys: &mut ParticleSystem, box_size: &[f64; 3]) {
    for (x, v) in sys.positions.iter_mut().zip(sys.velocities.iter_mut()) {
        for k in 0..3 {
            let l = box_size[k];
            // a validated tau needs at most one pass; the cap guards non-finite input
            for _ in 0..64 {
                if x[k] < 0.0 {
                    x[k] = -x[k];
                    v[k] = -v[k];
                } else if x[k] > l {
                    x[k] = 2.0 * l - x[k];
                    v[k] = -v[k];
                } else {
                    break;
                }
            }
        }
    }
}

/// Expected candidate count `N_c (N_c − 1) F_N π d² v_r^max τ / (2 V_c)`.
pub fn candidate_count(n_c: usize, f_n: f64, diameter: f64, vr_max: f64, tau: f64, cell_volume: f64) -> f64 {
    let n = n_c as f64;
    n * (n - 1.0) * f_n * PI * diameter * diameter * vr_max * tau / (2.0 * cell_volume)
}

/// No-time-counter collision sweep over every cell, in cell order.
pub fn collide_cells(sys: &mut ParticleSystem, cfg: &DsmcConfig) -> CollisionStats {
    let mut stats = CollisionStats::default();
    let v_c = cfg.cell_volume();
    for c in 0..sys.cell_count() {
        let (lo, hi) = (sys.cell_start[c], sys.cell_start[c + 1]);
        let n_c = hi - lo;
        if n_c < 2 {
            continue;
        }
        let expected = candidate_count(n_c, cfg.f_n, cfg.diameter, sys.vr_max[c], cfg.tau, v_c);
        let whole = expected.floor();
        let mut m_cand = whole as usize;
        if sys.rng.uniform() < expected - whole {
            m_cand += 1;
        }
        stats.candidates += m_cand;
        for _ in 0..m_cand {
            let a = sys.rng.below(n_c);
            let mut b = sys.rng.below(n_c - 1);
            if b >= a {
                b += 1;
            }
            let (i, j) = (sys.cell_members[lo + a], sys.cell_members[lo + b]);
            let (vi, vj) = (sys.velocities[i], sys.velocities[j]);
            let vr = norm3(&sub(&vi, &vj));
            if vr > sys.vr_max[c] {
                sys.vr_max[c] = vr;
            }
            if vr / sys.vr_max[c] > sys.rng.uniform() {
                let dir = polar_direction(&mut sys.rng);
                let (ni, nj) = scatter_pair(&vi, &vj, &dir);
                sys.velocities[i] = ni;
                sys.velocities[j] = nj;
                stats.accepted += 1;
            }
        }
    }
    stats
}

/// Normalized histogram `f̂` over speed bins.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityHistogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

impl VelocityHistogram {
    /// Equal-width bins over `[0, upper]`; speeds beyond `upper` land in the
    /// last bin so the histogram stays normalized.
    pub fn from_speeds(speeds: &[f64], bins: usize, upper: f64) -> Result<Self> {
        if speeds.is_empty() || bins == 0 || !(upper > 0.0) {
            return Err(Error::invalid("speed histogram needs samples, bins and a positive range"));
        }
        let width = upper / bins as f64;
        let mut counts = vec![0usize; bins];
        for &s in speeds {
            let k = ((s / width).floor().max(0.0) as usize).min(bins - 1);
            counts[k] += 1;
        }
        let total = speeds.len() as f64;
        Ok(VelocityHistogram {
            edges: (0..=bins).map(|k| k as f64 * width).collect(),
            density: counts.iter().map(|&c| c as f64 / (total * width)).collect(),
        })
    }

    pub fn from_density(edges: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if edges.len() != density.len() + 1 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("histogram edges must be increasing with one more entry than bins"));
        }
        Ok(VelocityHistogram { edges, density })
    }

    pub fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.windows(2).map(|w| w[1] - w[0])
    }

    /// `Σ f̂ Δ`.
    pub fn mass(&self) -> f64 {
        self.density.iter().zip(self.widths()).map(|(f, w)| f * w).sum()
    }
}

/// `H = Σ f̂ ln f̂ Δ`, taking `0 · ln 0 = 0`.
pub fn h_function(hist: &VelocityHistogram) -> Result<f64> {
    let mass = hist.mass();
    if (mass - 1.0).abs() > 1e-9 || hist.density.iter().any(|&f| f < 0.0) {
        return Err(Error::invalid(format!("histogram is not normalized (mass {mass})")));
    }
    Ok(hist
        .density
        .iter()
        .zip(hist.widths())
        .filter(|(&f, _)| f > 0.0)
        .map(|(&f, w)| f * f.ln() * w)
        .sum())
}

/// Maxwell–Boltzmann speed CDF with scale `a = √(k_B T / m)`.
pub fn mb_speed_cdf(speed: f64, a: f64) -> f64 {
    if speed <= 0.0 {
        return 0.0;
    }
    let x = speed / a;
    libm::erf(x / std::f64::consts::SQRT_2) - (2.0 / PI).sqrt() * x * (-0.5 * x * x).exp()
}

pub const MB_MIN_PARTICLES: usize = 1000;

/// Kolmogorov–Smirnov distance between the empirical speed distribution and
/// the Maxwell–Boltzmann speed law at the temperature implied by the mean
/// kinetic energy.
pub fn mb_distance(sys: &ParticleSystem, mass: f64) -> Result<f64> {
    if sys.len() < MB_MIN_PARTICLES {
        return Err(Error::invalid(format!(
            "Maxwell–Boltzmann distance needs at least {MB_MIN_PARTICLES} particles, got {}",
            sys.len()
        )));
    }
    mb_distance_of_speeds(&sys.speeds(), sys.temperature(mass), mass)
}

pub fn mb_distance_of_speeds(speeds: &[f64], kt: f64, mass: f64) -> Result<f64> {
    if speeds.is_empty() || !(kt > 0.0) {
        return Err(Error::invalid("need speeds and a positive temperature"));
    }
    let a = (kt / mass).sqrt();
    let mut sorted = speeds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (k, &s) in sorted.iter().enumerate() {
        let f = mb_speed_cdf(s, a);
        d = d.max((k as f64 + 1.0) / n - f).max(f - k as f64 / n);
    }
    Ok(d)
}

/// One row of `h_series.csv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HSample {
    pub step: usize,
    pub time: f64,
    pub h: f64,
    /// NaN for systems below [`MB_MIN_PARTICLES`].
    pub mb_distance: f64,
    pub kinetic_energy: f64,
    pub collisions: usize,
}

impl HSample {
    pub const CSV_HEADER: &'static str = "step,time,H,mb_distance,kinetic_energy";

    pub fn csv_row(&self) -> String {
        let mut s = format!("{},", self.step);
        for (k, v) in [self.time, self.h, self.mb_distance, self.kinetic_energy].iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            crate::linalg::write_f64(&mut s, *v);
        }
        s
    }
}

/// H, MB distance and energy of the current state.
pub fn diagnose(sys: &ParticleSystem, cfg: &DsmcConfig, step: usize, collisions: usize) -> Result<HSample> {
    let upper = cfg.hist_max_sigmas * cfg.thermal_speed();
    let hist = VelocityHistogram::from_speeds(&sys.speeds(), cfg.hist_bins, upper)?;
    let mb = if sys.len() >= MB_MIN_PARTICLES {
        mb_distance(sys, cfg.mass)?
    } else {
        f64::NAN
    };
    Ok(HSample {
        step,
        time: step as f64 * cfg.tau,
        h: h_function(&hist)?,
        mb_distance: mb,
        kinetic_energy: sys.total_kinetic_energy(cfg.mass),
        collisions,
    })
}

/// Runs `cfg.n_steps` steps and returns one sample after every step.
/// `on_step` sees the system after each step (used for snapshots).
pub fn run(
    cfg: &DsmcConfig,
    mut on_step: impl FnMut(usize, &ParticleSystem) -> Result<()>,
) -> Result<(ParticleSystem, Vec<HSample>)> {
    let mut sys = ParticleSystem::new(cfg)?;
    let mut series = Vec::with_capacity(cfg.n_steps);
    for step in 1..=cfg.n_steps {
        let stats = sys.step(cfg);
        series.push(diagnose(&sys, cfg, step, stats.accepted)?);
        on_step(step, &sys)?;
    }
    Ok((sys, series))
}

/// Trailing moving average over `window` samples; only full windows are
/// emitted.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(values.len() + 1 - window);
    let mut acc: f64 = values[..window].iter().sum();
    out.push(acc / window as f64);
    for k in window..values.len() {
        acc += values[k] - values[k - window];
        out.push(acc / window as f64);
    }
    out
}

/// Largest rise of a series above its running minimum.
pub fn max_rebound(values: &[f64]) -> f64 {
    let mut lowest = f64::INFINITY;
    let mut worst = 0.0f64;
    for &v in values {
        lowest = lowest.min(v);
        worst = worst.max(v - lowest);
    }
    worst
}
