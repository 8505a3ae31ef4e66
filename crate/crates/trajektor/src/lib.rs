//! Behavioral typing of longitudinal categorical event streams.
//!
//! The pipeline ingests labeled events, rescales time into equal-event
//! windows, summarizes each user's behavior per window, fits a categorical
//! latent Markov model by EM, clusters decoded state trajectories with
//! k-modes, and scores the resulting types against the cohort.
//!
//! Modules follow the stages:
//!
//! - [`corpus`]: event parsing, cohort statistics, bot-like user filtering
//! - [`binning`]: equal-event windows and per-window summaries
//! - [`lmm`]: latent Markov model likelihood, EM fitting, decoding, sampling
//! - [`typing`]: pre-separation, k-modes clustering, type naming
//! - [`metrics`]: cohort-relative scores, Gini coefficients, summary tables
//! - [`stats`]: Kruskal–Wallis and pairwise Wilcoxon rank-sum tests
//! - [`synth`]: planted seven-type corpora for end-to-end validation

pub mod binning;
pub mod corpus;
pub mod error;
pub mod lmm;
pub mod metrics;
pub mod stats;
pub mod synth;
pub mod typing;

pub use error::{Error, Result};
