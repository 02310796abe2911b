//! Deterministic multi-agent collaborative-perception simulator at the
//! detection-output level: a synthetic BEV world, adversarial message
//! scheduling and blind-area-guided perturbation, and a spatial-temporal
//! defense that scores collaborators with a confidence-scaled concordance
//! loss plus LSTM-autoencoder flow reconstruction, fused through a conformal
//! Benjamini-Hochberg test.
//!
//! Batch entry points (seed sweeps, calibration, parameter grids) are
//! data-parallel over rayon by default; building with
//! `--no-default-features` falls back to sequential execution with
//! identical results.

pub mod attack;
pub mod exec;
pub mod geom;
pub mod rng;
pub mod scene;
pub mod harness;
pub mod spatial;
pub mod stattest;
pub mod temporal;
