//! # gazelab
//!
//! A privacy attack and privacy defense laboratory for eye-tracking data.
//!
//! Raw gaze features (gaze coordinates, pupil diameters, head pose) carry a
//! stable per-person biometric signature. This crate demonstrates both sides
//! of that fact:
//!
//! * **Phase 1 — attacks.** Four re-identification scenarios driven by
//!   from-scratch tree ensembles ([`trees`]), nearest-neighbour matching,
//!   K-Means novelty detection, PCA projection and isolation forests
//!   ([`cluster`], [`iforest`]), plus six identity-assignment strategies
//!   ([`id_assign`]) that recover student identities or flag new ones.
//! * **Phase 2 — defenses.** A keyed, epoch-rotating pseudonym vault
//!   ([`vault`]) that replaces true student IDs with short-lived dummy IDs,
//!   and federated training ([`federated`]) of a residual dense network
//!   ([`nn`]) so that raw labels never leave a client.
//!
//! The [`data`] module generates seeded synthetic gaze datasets with
//! controllable per-student signature separation, standing in for private
//! eye-tracking corpora so every experiment here is reproducible from a
//! single seed. The [`experiments`] module wires everything into the CLI
//! (`gazelab synth|scenario1..4|phase2|resolve|report`).
//!
//! All randomness flows from one top-level seed through named sub-streams
//! (see [`rng`]), so each stage of an experiment is independently
//! reproducible.

pub mod cluster;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod federated;
pub mod id_assign;
pub mod iforest;
pub mod nn;
pub mod preprocess;
pub mod report;
pub mod rng;
pub mod trees;
pub mod vault;

pub use error::{Error, Result};
