//! Kinetics-inspired neural optimization.
//!
//! Neurons of a dense layer are treated as particles: a neuron's input-weight
//! row is its position and its gradient row is its velocity. Two gradient
//! transforms act on that picture before a base optimizer step:
//!
//! * **hard collision** exchanges gradient "momentum" between selected pairs
//!   of neurons with hard-sphere scattering, conserving pair momentum and
//!   energy;
//! * **soft collision** adds a repulsion term weighted by the elementwise
//!   product of the weight and gradient cosine-similarity matrices.
//!
//! Both aim to slow down parameter condensation (neurons of one layer
//! collapsing onto shared directions), which [`metrics`] measures.
//!
//! The crate also ships a small MLP with manual backprop ([`net`]), SGD /
//! Adam / AdamW ([`optim`]), a direct simulation Monte Carlo gas simulator
//! with H-function diagnostics ([`dsmc`]), and the experiment harness and
//! CLI plumbing behind the `kinopt` binary ([`exp`], [`config`], [`cli`]).

pub mod cli;
pub mod config;
pub mod dsmc;
mod error;
pub mod exp;
pub mod kinetic;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod optim;

pub use error::{Error, Result};
pub use linalg::{Matrix, Rng};
