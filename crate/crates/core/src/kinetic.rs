//! Collision-based gradient transforms.
//!
//! A dense layer's `N` neurons are particles: row `i` of the weight matrix is
//! the position of neuron `i` and row `i` of the gradient is its velocity.
//! The transforms only ever rewrite gradients; weights stay where they are.
//!
//! **Hard collision.** For every pair the centre-of-mass frame is formed,
//! `(w_r)_ij = ‖w_i − w_j‖`, `(g_r)_ij = ‖g_i − g_j‖`,
//! `(g_cm)_ij = (g_i + g_j)/2`. A pair collides when
//!
//! ```text
//! (g_r)_ij · exp(−(w_r)_ij) / max(g_r)  >  1 − coll_coef
//! ```
//!
//! and an accepted pair scatters like two hard spheres: with `n_ij` uniform
//! on the unit sphere (`n_ji = −n_ij`),
//! `Δg_ij = g_cm + ½ (g_r)_ij n_ij − g_i`, and every neuron receives the sum
//! of the `Δg` of all its accepted pairs, each computed from the
//! pre-collision gradients.
//!
//! **Soft collision.** With `C_w`, `C_g` the row cosine matrices of `w` and
//! `g`, `g ← g + coll_coef · K g` where `K = −C_w ⊙ C_g`.

use crate::linalg::{dot, fill_unit_sphere, Matrix, Rng};
use crate::metrics::normalized_rows;
use crate::{Error, Result};

pub const DEFAULT_COLL_COEF: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CollisionMode {
    Hard,
    Soft,
}

impl CollisionMode {
    pub fn name(self) -> &'static str {
        match self {
            CollisionMode::Hard => "hard",
            CollisionMode::Soft => "soft",
        }
    }
}

impl std::str::FromStr for CollisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hard" => Ok(CollisionMode::Hard),
            "soft" => Ok(CollisionMode::Soft),
            other => Err(Error::invalid(format!("unknown collision mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KineticConfig {
    pub mode: CollisionMode,
    /// In `[0, 1]`. Acceptance threshold for hard collisions, repulsion
    /// strength for soft ones.
    pub coll_coef: f64,
    /// Drop the self term `K_ii = −1` of the soft repulsion matrix.
    pub soft_zero_diagonal: bool,
    /// Greedy matching: visit pairs by decreasing acceptance score and skip
    /// any pair whose neurons already collided, so each neuron scatters at
    /// most once and the layer's total momentum and energy are conserved.
    pub hard_max_one_collision_per_neuron: bool,
    pub rng_stream_label: String,
}

impl Default for KineticConfig {
    fn default() -> Self {
        KineticConfig {
            mode: CollisionMode::Soft,
            coll_coef: DEFAULT_COLL_COEF,
            soft_zero_diagonal: false,
            hard_max_one_collision_per_neuron: false,
            rng_stream_label: "kinetic".to_string(),
        }
    }
}

impl KineticConfig {
    pub fn hard(coll_coef: f64) -> Self {
        KineticConfig {
            mode: CollisionMode::Hard,
            coll_coef,
            ..Default::default()
        }
    }

    pub fn soft(coll_coef: f64) -> Self {
        KineticConfig {
            mode: CollisionMode::Soft,
            coll_coef,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.coll_coef) {
            return Err(Error::config(
                "kinetic.coll_coef",
                format!("must lie in [0, 1], got {}", self.coll_coef),
            ));
        }
        Ok(())
    }
}

/// Centre-of-mass quantities for every pair of rows.
#[derive(Clone, Debug)]
pub struct PairwiseRelatives<'a> {
    /// `‖w_i − w_j‖`, symmetric with zero diagonal.
    pub w_r: Matrix,
    /// `‖g_i − g_j‖`, symmetric with zero diagonal.
    pub g_r: Matrix,
    /// Largest entry of `g_r`; 0 when `N < 2`.
    pub g_r_max: f64,
    grads: &'a Matrix,
}

impl PairwiseRelatives<'_> {
    pub fn len(&self) -> usize {
        self.w_r.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.w_r.rows() == 0
    }

    /// `(g_i + g_j) / 2`.
    pub fn g_cm(&self, i: usize, j: usize) -> Vec<f64> {
        self.grads
            .row(i)
            .iter()
            .zip(self.grads.row(j))
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Left-hand side of the acceptance test; 0 when all gradient rows agree.
    #[inline]
    pub fn score(&self, i: usize, j: usize) -> f64 {
        acceptance_score(self.g_r.get(i, j), self.w_r.get(i, j), self.g_r_max)
    }
}

#[inline]
fn acceptance_score(g_r: f64, w_r: f64, g_r_max: f64) -> f64 {
    if g_r_max > 0.0 {
        g_r * (-w_r).exp() / g_r_max
    } else {
        0.0
    }
}

fn pair_distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

fn check_layer(w: &Matrix, g: &Matrix) -> Result<()> {
    w.ensure_same_shape(g, "collision")?;
    if w.rows() == 0 {
        return Err(Error::invalid("collision needs at least one neuron"));
    }
    Ok(())
}

pub fn pairwise_relatives<'a>(w: &Matrix, g: &'a Matrix) -> Result<PairwiseRelatives<'a>> {
    check_layer(w, g)?;
    let n = w.rows();
    let mut w_r = Matrix::zeros(n, n);
    let mut g_r = Matrix::zeros(n, n);
    let mut g_r_max = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dw = pair_distance(w.row(i), w.row(j));
            let dg = pair_distance(g.row(i), g.row(j));
            w_r.set(i, j, dw);
            w_r.set(j, i, dw);
            g_r.set(i, j, dg);
            g_r.set(j, i, dg);
            g_r_max = g_r_max.max(dg);
        }
    }
    Ok(PairwiseRelatives {
        w_r,
        g_r,
        g_r_max,
        grads: g,
    })
}

/// Symmetric boolean pair matrix with an empty diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollisionMask {
    n: usize,
    bits: Vec<bool>,
}

impl CollisionMask {
    pub fn empty(n: usize) -> Self {
        CollisionMask {
            n,
            bits: vec![false; n * n],
        }
    }

    fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut mask = CollisionMask::empty(n);
        for &(i, j) in pairs {
            mask.bits[i * n + j] = true;
            mask.bits[j * n + i] = true;
        }
        mask
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    /// Accepted pairs `(i, j)` with `i < j`, in row-major order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn count(&self) -> usize {
        self.pairs().len()
    }

    pub fn is_subset_of(&self, other: &CollisionMask) -> bool {
        self.n == other.n && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// All pairs passing the acceptance test.
pub fn collision_mask(rel: &PairwiseRelatives<'_>, coll_coef: f64) -> CollisionMask {
    let n = rel.len();
    let threshold = 1.0 - coll_coef;
    let mut mask = CollisionMask::empty(n);
    if rel.g_r_max <= 0.0 {
        return mask;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rel.score(i, j) > threshold {
                mask.bits[i * n + j] = true;
                mask.bits[j * n + i] = true;
            }
        }
    }
    mask
}

/// Reduces a pair list to a matching: highest score first, ties by index.
fn greedy_matching(n: usize, mut scored: Vec<(f64, usize, usize)>) -> Vec<(usize, usize)> {
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut used = vec![false; n];
    let mut pairs = Vec::new();
    for (_, i, j) in scored {
        if !used[i] && !used[j] {
            used[i] = true;
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Mask actually used by [`hard_collision`] under `cfg`, including the
/// one-collision-per-neuron reduction when enabled.
pub fn effective_mask(rel: &PairwiseRelatives<'_>, cfg: &KineticConfig) -> CollisionMask {
    let mask = collision_mask(rel, cfg.coll_coef);
    if !cfg.hard_max_one_collision_per_neuron {
        return mask;
    }
    let scored = mask
        .pairs()
        .into_iter()
        .map(|(i, j)| (rel.score(i, j), i, j))
        .collect();
    CollisionMask::from_pairs(rel.len(), &greedy_matching(rel.len(), scored))
}

/// Accepted pairs `(i, j, g_r)`, with decisions identical to
/// [`collision_mask`] but exact distances computed only for pairs that can
/// still pass.
fn accepted_pairs(w: &Matrix, g: &Matrix, cfg: &KineticConfig) -> Vec<(usize, usize, f64)> {
    let n = g.rows();
    if cfg.coll_coef <= 0.0 || n < 2 {
        return Vec::new();
    }
    // Screening: ‖g_i − g_j‖² ≈ ‖g_i‖² + ‖g_j‖² − 2 g_i·g_j from one Gram
    // product. `tol` bounds its rounding error, so every decision below that
    // could go either way is settled on the exact `pair_distance` value.
    let sq: Vec<f64> = g.iter_rows().map(|r| dot(r, r)).collect();
    let scale = sq.iter().copied().fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Vec::new();
    }
    let tol = 16.0 * (g.cols() as f64 + 2.0) * f64::EPSILON * scale;
    let mut approx = g.matmul_t(g).expect("square Gram product");
    let threshold = 1.0 - cfg.coll_coef;
    let t2 = threshold * threshold;
    // One pass keeps every pair that could still be maximal or pass the
    // g_r test against the running maximum; both sets only shrink as the
    // maximum grows, so the kept list is a superset of either.
    let mut lanes = [0.0f64; 4];
    let mut kept = Vec::new();
    for i in 0..n {
        let row = &mut approx.row_mut(i)[i + 1..];
        for (v, &sj) in row.iter_mut().zip(&sq[i + 1..]) {
            *v = sq[i] + sj - 2.0 * *v;
        }
        let running = lanes.iter().copied().fold(0.0f64, f64::max);
        let keep = t2 * running - 8.0 * tol;
        for chunk in row.chunks(4) {
            for (l, &v) in lanes.iter_mut().zip(chunk) {
                *l = l.max(v);
            }
        }
        for (off, &a) in row.iter().enumerate() {
            if a > keep {
                kept.push((i, i + 1 + off, a));
            }
        }
    }
    let approx_max = lanes.iter().copied().fold(0.0f64, f64::max);
    // the maximal pair is among those within 2·tol of the screened maximum
    let mut g_r_max = 0.0f64;
    for &(i, j, a) in &kept {
        if a >= approx_max - 2.0 * tol {
            g_r_max = g_r_max.max(pair_distance(g.row(i), g.row(j)));
        }
    }
    if g_r_max <= 0.0 {
        return Vec::new();
    }
    // since exp(−w_r) ≤ 1, g_r / g_r_max ≤ 1 − coll_coef rules a pair out
    let cut2 = t2 * g_r_max * g_r_max - 2.0 * tol;
    let mut scored = Vec::new();
    for (i, j, a) in kept {
        if a <= cut2 {
            continue;
        }
        let dg = pair_distance(g.row(i), g.row(j));
        if dg / g_r_max <= threshold {
            continue;
        }
        let score = acceptance_score(dg, pair_distance(w.row(i), w.row(j)), g_r_max);
        if score > threshold {
            scored.push((score, i, j));
        }
    }
    let g_r = |i: usize, j: usize| pair_distance(g.row(i), g.row(j));
    if cfg.hard_max_one_collision_per_neuron {
        let pairs = greedy_matching(n, scored);
        pairs
            .into_iter()
            .map(|(i, j)| (i, j, g_r(i, j)))
            .collect()
    } else {
        scored
            .into_iter()
            .map(|(_, i, j)| (i, j, g_r(i, j)))
            .collect()
    }
}

/// Source of scattering directions for hard collisions.
pub trait DirectionSource {
    /// Overwrites `out` with a unit vector.
    fn unit_vector(&mut self, out: &mut [f64]);
}

impl DirectionSource for Rng {
    fn unit_vector(&mut self, out: &mut [f64]) {
        fill_unit_sphere(self, out);
    }
}

/// Replays a fixed list of directions, cycling when exhausted.
#[derive(Clone, Debug)]
pub struct FixedDirections {
    dirs: Vec<Vec<f64>>,
    next: usize,
}

impl FixedDirections {
    pub fn new(dirs: Vec<Vec<f64>>) -> Self {
        assert!(!dirs.is_empty(), "need at least one direction");
        FixedDirections { dirs, next: 0 }
    }
}

impl DirectionSource for FixedDirections {
    fn unit_vector(&mut self, out: &mut [f64]) {
        out.copy_from_slice(&self.dirs[self.next % self.dirs.len()]);
        self.next += 1;
    }
}

/// Hard-collision gradient transform, scattering directions from `rng`.
pub fn hard_collision(w: &Matrix, g: &Matrix, cfg: &KineticConfig, rng: &mut Rng) -> Result<Matrix> {
    hard_collision_with(w, g, cfg, rng)
}

/// [`hard_collision`] with an explicit direction source. One direction is
/// drawn per accepted pair, in ascending `(i, j)` order.
pub fn hard_collision_with(
    w: &Matrix,
    g: &Matrix,
    cfg: &KineticConfig,
    dirs: &mut dyn DirectionSource,
) -> Result<Matrix> {
    check_layer(w, g)?;
    cfg.validate()?;
    let mut pairs = accepted_pairs(w, g, cfg);
    let mut out = g.clone();
    if pairs.is_empty() {
        return Ok(out);
    }
    pairs.sort_unstable_by_key(|&(i, j, _)| (i, j));

    let d = g.cols();
    let mut n = vec![0.0; d];
    let mut delta_i = vec![0.0; d];
    let mut delta_j = vec![0.0; d];
    for (i, j, g_r) in pairs {
        dirs.unit_vector(&mut n);
        let half = 0.5 * g_r;
        let (gi, gj) = (g.row(i), g.row(j));
        for k in 0..d {
            let cm = 0.5 * (gi[k] + gj[k]);
            delta_i[k] = cm + half * n[k] - gi[k];
            delta_j[k] = cm - half * n[k] - gj[k];
        }
        out.row_mut(i).iter_mut().zip(&delta_i).for_each(|(o, x)| *o += x);
        out.row_mut(j).iter_mut().zip(&delta_j).for_each(|(o, x)| *o += x);
    }
    Ok(out)
}

/// Soft-collision gradient transform.
pub fn soft_collision(w: &Matrix, g: &Matrix, cfg: &KineticConfig) -> Result<Matrix> {
    check_layer(w, g)?;
    cfg.validate()?;
    if cfg.coll_coef == 0.0 {
        return Ok(g.clone());
    }
    let (n, d) = g.shape();
    let kg = if d * d < n {
        low_rank_kg(w, g, cfg.soft_zero_diagonal)?
    } else {
        repulsion_matrix(w, g, cfg.soft_zero_diagonal).matmul(g)?
    };
    let c = cfg.coll_coef;
    let mut out = g.clone();
    for (o, &v) in out.as_mut_slice().iter_mut().zip(kg.as_slice()) {
        *o += c * v;
    }
    debug_assert_eq!(out.shape(), (n, d));
    Ok(out)
}

/// `K g` through the factorization `C_w ⊙ C_g = Z Zᵀ` with `z_i = ŵ_i ⊗ ĝ_i`,
/// costing O(N·D³) instead of O(N²·D).
fn low_rank_kg(w: &Matrix, g: &Matrix, zero_diagonal: bool) -> Result<Matrix> {
    let (n, d) = w.shape();
    let (uw, _) = normalized_rows(w);
    let (ug, _) = normalized_rows(g);
    let mut z = Matrix::zeros(n, d * d);
    for i in 0..n {
        let b = ug.row(i);
        for (chunk, &x) in z.row_mut(i).chunks_exact_mut(d).zip(uw.row(i)) {
            for (o, &y) in chunk.iter_mut().zip(b) {
                *o = x * y;
            }
        }
    }
    let mut kg = z.matmul(&z.t_matmul(g)?)?;
    for i in 0..n {
        // z_i·z_i is 1 for a live pair of rows and 0 otherwise
        let keep_self = if zero_diagonal { dot(z.row(i), z.row(i)) } else { 0.0 };
        for (o, &v) in kg.row_mut(i).iter_mut().zip(g.row(i)) {
            *o = keep_self * v - *o;
        }
    }
    Ok(kg)
}

/// `K = −C_w ⊙ C_g`, zero-norm rows contributing zero cosines.
pub fn repulsion_matrix(w: &Matrix, g: &Matrix, zero_diagonal: bool) -> Matrix {
    const PANEL: usize = 128;
    let n = w.rows();
    let (uw, alive_w) = normalized_rows(w);
    let (ug, alive_g) = normalized_rows(g);
    let mut k = Matrix::zeros(n, n);
    let data = k.as_mut_slice();
    // Each row panel is multiplied only against itself and the rows below;
    // strictly upper entries are mirrored, so K is exactly symmetric.
    for r0 in (0..n).step_by(PANEL) {
        let rows = r0..(r0 + PANEL).min(n);
        let cw = uw.gram_block(rows.clone(), r0..n);
        let cg = ug.gram_block(rows.clone(), r0..n);
        for (bi, i) in rows.enumerate() {
            let w_row = &cw.row(bi)[i + 1 - r0..];
            let g_row = &cg.row(bi)[i + 1 - r0..];
            for ((o, &a), &b) in data[i * n + i + 1..(i + 1) * n].iter_mut().zip(w_row).zip(g_row) {
                *o = -(a.clamp(-1.0, 1.0) * b.clamp(-1.0, 1.0));
            }
        }
    }
    const TILE: usize = 32;
    for i0 in (0..n).step_by(TILE) {
        for j0 in (i0..n).step_by(TILE) {
            for i in i0..(i0 + TILE).min(n) {
                for j in j0.max(i + 1)..(j0 + TILE).min(n) {
                    data[j * n + i] = data[i * n + j];
                }
            }
        }
    }
    for i in 0..n {
        data[i * n + i] = if !zero_diagonal && alive_w[i] && alive_g[i] { -1.0 } else { 0.0 };
    }
    k
}

/// Applies the transform selected by `cfg.mode`.
pub fn kinetic_transform(w: &Matrix, g: &Matrix, cfg: &KineticConfig, rng: &mut Rng) -> Result<Matrix> {
    match cfg.mode {
        CollisionMode::Hard => hard_collision(w, g, cfg, rng),
        CollisionMode::Soft => soft_collision(w, g, cfg),
    }
}

/// Result of one descent step on a neuron pair with and without collision.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityStepReport {
    /// `|cos(w_i, w_j)|` before the step.
    pub before: f64,
    /// `|cos|` after `w − η g`.
    pub plain: f64,
    /// `|cos|` after `w − η g*`, averaged over `draws` scattering directions
    /// for hard collisions.
    pub collision: f64,
    pub draws: usize,
}

impl SimilarityStepReport {
    /// `collision − plain`; negative when collision lowered similarity.
    pub fn delta(&self) -> f64 {
        self.collision - self.plain
    }

    pub fn plain_change(&self) -> f64 {
        self.plain - self.before
    }

    pub fn collision_change(&self) -> f64 {
        self.collision - self.before
    }
}

/// Checks the stable-training-phase conditions under which collisions are
/// expected to lower pair similarity: `w_iᵀg_i < 0`, `w_jᵀg_j < 0`,
/// `cos(w_i, w_j) > 0`, and for hard mode `(w_j − w_i)ᵀ(g_j − g_i) > 0`.
pub fn check_stable_phase(w: &Matrix, g: &Matrix, mode: CollisionMode) -> Result<()> {
    w.ensure_same_shape(g, "stable phase check")?;
    if w.rows() != 2 {
        return Err(Error::invalid(format!(
            "similarity step oracle works on a neuron pair, got {} rows",
            w.rows()
        )));
    }
    let (wi, wj, gi, gj) = (w.row(0), w.row(1), g.row(0), g.row(1));
    if dot(wi, gi) >= 0.0 {
        return Err(Error::Precondition("w_i·g_i < 0".into()));
    }
    if dot(wj, gj) >= 0.0 {
        return Err(Error::Precondition("w_j·g_j < 0".into()));
    }
    if crate::linalg::cosine(wi, wj) <= 0.0 {
        return Err(Error::Precondition("cos(w_i, w_j) > 0".into()));
    }
    if mode == CollisionMode::Hard {
        let approach: f64 = (0..wi.len()).map(|k| (wj[k] - wi[k]) * (gj[k] - gi[k])).sum();
        if approach <= 0.0 {
            return Err(Error::Precondition("(w_j − w_i)·(g_j − g_i) > 0".into()));
        }
    }
    Ok(())
}

/// Brute-force check that a collision step lowers the similarity of a
/// neuron pair relative to the plain gradient step.
///
/// `w` and `g` are `2 × D`. The plain step is `w − η g`; the collision step
/// is `w − η g*` with `g*` from the configured transform. Hard collisions are
/// averaged over `draws` scattering directions (first-order effects of the
/// random direction vanish in expectation); soft collisions are
/// deterministic and use a single evaluation.
pub fn thm3_oracle(
    w: &Matrix,
    g: &Matrix,
    eta: f64,
    cfg: &KineticConfig,
    rng: &mut Rng,
    draws: usize,
) -> Result<SimilarityStepReport> {
    check_stable_phase(w, g, cfg.mode)?;
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {eta}")));
    }
    let abs_cos_after = |update: &Matrix| -> f64 {
        let wi: Vec<f64> = w.row(0).iter().zip(update.row(0)).map(|(a, b)| a - eta * b).collect();
        let wj: Vec<f64> = w.row(1).iter().zip(update.row(1)).map(|(a, b)| a - eta * b).collect();
        crate::linalg::cosine(&wi, &wj).abs()
    };
    let before = crate::linalg::cosine(w.row(0), w.row(1)).abs();
    let plain = abs_cos_after(g);
    let (collision, draws) = match cfg.mode {
        CollisionMode::Soft => (abs_cos_after(&soft_collision(w, g, cfg)?), 1),
        CollisionMode::Hard => {
            let draws = draws.max(1);
            let mut total = 0.0;
            for _ in 0..draws {
                total += abs_cos_after(&hard_collision(w, g, cfg, rng)?);
            }
            (total / draws as f64, draws)
        }
    };
    Ok(SimilarityStepReport {
        before,
        plain,
        collision,
        draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    fn m<const D: usize>(rows: &[[f64; D]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_rows_have_zero_distance() {
        let w = m(&[[1.0, 2.0], [1.0, 2.0]]);
        let g = m(&[[0.0, 1.0], [1.0, 0.0]]);
        let rel = pairwise_relatives(&w, &g).unwrap();
        assert_eq!(rel.w_r.get(0, 1), 0.0);
    }

    #[test]
    fn relatives_of_unit_gradients() {
        let w = Matrix::zeros(2, 2);
        let g = m(&[[1.0, 0.0], [0.0, 1.0]]);
        let rel = pairwise_relatives(&w, &g).unwrap();
        assert!((rel.g_r.get(0, 1) - SQRT_2).abs() < 1e-15);
        assert_eq!(rel.g_r.get(1, 0), rel.g_r.get(0, 1));
        assert_eq!(rel.g_cm(0, 1), vec![0.5, 0.5]);
        assert_eq!(rel.g_r_max, rel.g_r.get(0, 1));
    }

    #[test]
    fn single_neuron_has_no_pairs() {
        let w = m(&[[1.0, 2.0]]);
        let g = m(&[[3.0, 4.0]]);
        let rel = pairwise_relatives(&w, &g).unwrap();
        assert_eq!(rel.g_r_max, 0.0);
        assert_eq!(collision_mask(&rel, 1.0).count(), 0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let w = Matrix::zeros(2, 3);
        let g = Matrix::zeros(3, 2);
        assert!(pairwise_relatives(&w, &g).is_err());
        assert!(soft_collision(&w, &g, &KineticConfig::soft(0.1)).is_err());
        assert!(hard_collision(&w, &g, &KineticConfig::hard(0.1), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn zero_coef_mask_is_empty() {
        let w = m(&[[0.0, 0.0], [0.0, 0.0]]);
        let g = m(&[[1.0, 0.0], [0.0, 1.0]]);
        let rel = pairwise_relatives(&w, &g).unwrap();
        assert_eq!(collision_mask(&rel, 0.0).count(), 0);
    }

    #[test]
    fn coincident_fastest_pair_is_accepted_at_half() {
        let w = m(&[[0.5, 0.5], [0.5, 0.5]]);
        let g = m(&[[1.0, 0.0], [0.0, 1.0]]);
        let rel = pairwise_relatives(&w, &g).unwrap();
        assert_eq!(rel.score(0, 1), 1.0);
        let mask = collision_mask(&rel, 0.5);
        assert!(mask.get(0, 1) && mask.get(1, 0));
        assert!(!mask.get(0, 0));
    }

    #[test]
    fn equal_gradients_never_collide() {
        let w = m(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let g = m(&[[0.3, 0.3], [0.3, 0.3], [0.3, 0.3]]);
        let rel = pairwise_relatives(&w, &g).unwrap();
        assert_eq!(rel.g_r_max, 0.0);
        assert_eq!(collision_mask(&rel, 1.0).count(), 0);
        let out = hard_collision(&w, &g, &KineticConfig::hard(1.0), &mut Rng::new(1)).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn worked_hard_collision() {
        let w = Matrix::zeros(2, 2);
        let g = m(&[[1.0, 0.0], [0.0, 1.0]]);
        let mut dirs = FixedDirections::new(vec![vec![0.0, 1.0]]);
        let out = hard_collision_with(&w, &g, &KineticConfig::hard(0.5), &mut dirs).unwrap();
        let h = SQRT_2 / 2.0;
        assert!((out.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((out.get(0, 1) - (0.5 + h)).abs() < 1e-15);
        assert!((out.get(1, 0) - 0.5).abs() < 1e-15);
        assert!((out.get(1, 1) - (0.5 - h)).abs() < 1e-15);
        assert!((out.get(0, 1) - 1.207_106_781_186_547_5).abs() < 1e-12);
        let sum = [out.get(0, 0) + out.get(1, 0), out.get(0, 1) + out.get(1, 1)];
        assert!((sum[0] - 1.0).abs() < 1e-15 && (sum[1] - 1.0).abs() < 1e-15);
        let energy: f64 = out.as_slice().iter().map(|x| x * x).sum();
        assert!((energy - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejected_pairs_leave_gradients_alone() {
        // far apart in weight space: score = exp(−10) ≪ 1 − 0.5
        let w = m(&[[0.0, 0.0], [10.0, 0.0]]);
        let g = m(&[[1.0, 0.0], [0.0, 1.0]]);
        let out = hard_collision(&w, &g, &KineticConfig::hard(0.5), &mut Rng::new(0)).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn hard_leaves_weights_and_is_seeded() {
        let w = m(&[[0.0, 0.1, 0.0], [0.1, 0.0, 0.0], [0.0, 0.0, 0.1]]);
        let g = m(&[[1.0, -2.0, 0.5], [0.0, 1.0, 3.0], [-1.0, 0.0, 0.0]]);
        let cfg = KineticConfig::hard(0.9);
        let a = hard_collision(&w, &g, &cfg, &mut Rng::new(4)).unwrap();
        let b = hard_collision(&w, &g, &cfg, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, g);
    }

    #[test]
    fn greedy_matching_uses_each_neuron_once() {
        let w = Matrix::zeros(4, 2);
        let g = m(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]);
        let cfg = KineticConfig {
            hard_max_one_collision_per_neuron: true,
            ..KineticConfig::hard(1.0)
        };
        let rel = pairwise_relatives(&w, &g).unwrap();
        let mask = effective_mask(&rel, &cfg);
        assert_eq!(mask.count(), 2);
        let pairs = mask.pairs();
        // the two opposite pairs have the top score 1
        assert_eq!(pairs, vec![(0, 2), (1, 3)]);
        let out = hard_collision(&w, &g, &cfg, &mut Rng::new(2)).unwrap();
        for k in 0..2 {
            let before: f64 = (0..4).map(|i| g.get(i, k)).sum();
            let after: f64 = (0..4).map(|i| out.get(i, k)).sum();
            assert!((before - after).abs() < 1e-12);
        }
        let e0: f64 = g.as_slice().iter().map(|x| x * x).sum();
        let e1: f64 = out.as_slice().iter().map(|x| x * x).sum();
        assert!((e0 - e1).abs() < 1e-12 * e0);
    }

    fn random_layer(rng: &mut Rng, n: usize, d: usize, scale: f64) -> Matrix {
        Matrix::from_fn(n, d, |_, _| scale * rng.normal())
    }

    #[test]
    fn screened_pairs_match_the_mask() {
        let mut rng = Rng::new(42);
        for trial in 0..400 {
            let n = 2 + trial % 30;
            let d = 1 + trial % 7;
            let w = random_layer(&mut rng, n, d, 0.5);
            let mut g = random_layer(&mut rng, n, d, 10f64.powi(trial as i32 % 9 - 4));
            if trial % 5 == 0 {
                // duplicated rows and ties
                let first = g.row(0).to_vec();
                g.row_mut(n - 1).copy_from_slice(&first);
            }
            for c in [0.05, 0.1, 0.5, 1.0] {
                for greedy in [false, true] {
                    let cfg = KineticConfig {
                        hard_max_one_collision_per_neuron: greedy,
                        ..KineticConfig::hard(c)
                    };
                    let rel = pairwise_relatives(&w, &g).unwrap();
                    let want = effective_mask(&rel, &cfg).pairs();
                    let got: Vec<_> = accepted_pairs(&w, &g, &cfg).into_iter().map(|(i, j, _)| (i, j)).collect();
                    let mut got = got;
                    got.sort_unstable();
                    assert_eq!(got, want, "trial {trial} c {c} greedy {greedy}");
                }
            }
        }
    }

    #[test]
    fn low_rank_path_matches_dense() {
        let mut rng = Rng::new(8);
        for (n, d) in [(40, 3), (50, 5), (9, 2), (30, 1)] {
            let w = random_layer(&mut rng, n, d, 1.0);
            let mut g = random_layer(&mut rng, n, d, 1.0);
            g.row_mut(3).fill(0.0);
            for zero_diagonal in [false, true] {
                let fast = low_rank_kg(&w, &g, zero_diagonal).unwrap();
                let dense = repulsion_matrix(&w, &g, zero_diagonal).matmul(&g).unwrap();
                assert!(fast.max_abs_diff(&dense) < 1e-12, "{n}x{d}");
            }
        }
    }

    #[test]
    fn soft_single_neuron_damps() {
        let w = m(&[[0.3, -0.4]]);
        let g = m(&[[2.0, 1.0]]);
        let out = soft_collision(&w, &g, &KineticConfig::soft(0.25)).unwrap();
        assert_eq!(out.as_slice(), &[1.5, 0.75]);
    }

    #[test]
    fn soft_orthogonal_weights_zero_diagonal_is_identity() {
        let w = m(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, -1.0]]);
        let g = m(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]]);
        let cfg = KineticConfig {
            soft_zero_diagonal: true,
            ..KineticConfig::soft(0.7)
        };
        assert_eq!(soft_collision(&w, &g, &cfg).unwrap(), g);
    }

    #[test]
    fn soft_identical_pair() {
        let w = m(&[[1.0, 1.0], [1.0, 1.0]]);
        let g = m(&[[0.5, -2.0], [0.5, -2.0]]);
        let c = 0.2;
        let out = soft_collision(&w, &g, &KineticConfig::soft(c)).unwrap();
        for i in 0..2 {
            assert!((out.get(i, 0) - (1.0 - 2.0 * c) * 0.5).abs() < 1e-15);
            assert!((out.get(i, 1) - (1.0 - 2.0 * c) * -2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn soft_dead_neuron_is_ignored() {
        let w = m(&[[0.0, 0.0], [1.0, 1.0]]);
        let g = m(&[[1.0, 0.0], [1.0, 0.0]]);
        let out = soft_collision(&w, &g, &KineticConfig::soft(0.5)).unwrap();
        assert!(out.is_finite());
        // row 0 has no defined cosine: untouched; row 1 only self-damped
        assert_eq!(out.row(0), &[1.0, 0.0]);
        assert_eq!(out.row(1), &[0.5, 0.0]);
    }

    #[test]
    fn coll_coef_out_of_range_is_rejected() {
        let w = Matrix::zeros(2, 2);
        assert!(soft_collision(&w, &w, &KineticConfig::soft(1.5)).is_err());
        assert!(hard_collision(&w, &w, &KineticConfig::hard(-0.1), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn oracle_reports_violated_condition() {
        let w = m(&[[1.0, 0.0], [1.0, 0.1]]);
        let g = m(&[[1.0, 0.0], [-1.0, 0.0]]);
        let err = thm3_oracle(&w, &g, 1e-6, &KineticConfig::soft(0.1), &mut Rng::new(0), 1).unwrap_err();
        assert!(err.to_string().contains("w_i·g_i < 0"), "{err}");
        let w = m(&[[1.0, 0.0], [-1.0, 0.1]]);
        let g = m(&[[-1.0, 0.0], [1.0, 0.0]]);
        let err = thm3_oracle(&w, &g, 1e-6, &KineticConfig::soft(0.1), &mut Rng::new(0), 1).unwrap_err();
        assert!(err.to_string().contains("cos(w_i, w_j) > 0"), "{err}");
    }

    #[test]
    fn oracle_without_collision_matches_plain_step() {
        let w = m(&[[1.0, 0.2], [0.8, 0.5]]);
        let g = m(&[[-0.3, 0.1], [-0.5, 0.3]]);
        for cfg in [KineticConfig::soft(0.0), KineticConfig::hard(0.0)] {
            let r = thm3_oracle(&w, &g, 1e-3, &cfg, &mut Rng::new(0), 16).unwrap();
            assert_eq!(r.delta(), 0.0);
            assert_eq!(r.collision_change(), r.plain_change());
        }
    }
}
