//! Discrete-time random matching with mutation, directed matching, and
//! break-up.
//!
//! A population of agents carries types from a finite set `S = {1..K}`; each
//! agent is either unmatched or paired with exactly one partner. Every period
//! runs three sub-steps:
//!
//! 1. **mutation** — each agent independently redraws its type from the
//!    kernel `eta`, keeping its match;
//! 2. **matching** — unmatched agents of type k pair with unmatched agents of
//!    type l with probability `theta[k][l]`, existing matches persist;
//! 3. **break-up** — each matched pair dissolves with probability
//!    `xi[k][l]`; persisting pairs redraw their types jointly from `sigma`,
//!    dissolving sides redraw independently from `varsigma`.
//!
//! All intensities may depend on a common environment state and on the
//! current cross-sectional distribution of extended types (own type plus
//! partner type or `J` for unmatched).
//!
//! The crate provides three views of the same dynamics and the machinery to
//! check that they agree:
//!
//! - [`meanfield`] — the deterministic recursion for the expected
//!   extended-type distribution, one period being the composition of the
//!   three sub-step maps;
//! - [`markov`] — the per-agent extended-type Markov chain, as a
//!   row-stochastic transition matrix per period, consistent with the
//!   mean-field map by construction;
//! - [`agentsim`] — a finite-N simulator with explicit agents and an
//!   involutive partial matching, whose empirical distributions converge to
//!   the mean-field trajectory at the usual N^(-1/2) Monte Carlo rate.
//!
//! [`harness`] orchestrates scenario files, comparison runs, and CSV/JSON
//! exports; [`compare`] holds the distance metrics and replication plumbing.

pub mod agentsim;
pub mod compare;
pub mod config;
pub mod error;
pub mod export;
pub mod harness;
pub mod markov;
pub mod meanfield;
pub mod rng;
pub mod types;

pub use error::{Error, Result, ValidationReport, Violation, ViolationKind};
pub use types::{
    validate_distribution, validate_inputs, ExtendedType, ExtendedTypeDistribution, InputMatrices,
    PairKernel, Partner, SideKernel, SquareMatrix, TypeSpace,
};
