//! Latent recall and heaping model for retrospectively reported daily counts.
//!
//! A reported count `y` is modelled as the coarsening of a latent remembered
//! count `w` (Poisson, log-linear in the log of the true count with a subject
//! random intercept) by a latent rounding class `g` (proportional-odds in `w`
//! with its own subject random intercept). The crate provides:
//!
//! * [`model`]: domain types and the exact probability primitives;
//! * [`likelihood`]: Gauss–Hermite marginal likelihood, priors, BIC;
//! * [`estimation`]: posterior mode / MLE by quasi-Newton search, observed
//!   information, Wald and parametric-bootstrap intervals;
//! * [`sampling`]: multivariate-t importance sampling and SIR;
//! * [`imputation`]: acceptance–rejection draws of the latent counts and of
//!   true counts when those are unobserved;
//! * [`simulation`]: synthetic data and simulation-study harness;
//! * [`diagnostics`]: heap-fraction tables and fitted curves;
//! * [`io`], [`config`], [`commands`]: files, configuration and CLI plumbing.
//!
//! Data-parallel loops (subjects, replicates, proposal draws, imputations) run
//! on rayon when the `parallel` feature is enabled and fall back to plain
//! iterators otherwise; see [`par`].

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod imputation;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod optim;
pub mod par;
pub mod quadrature;
pub mod rng;
pub mod sampling;
pub mod simulation;

pub use error::{Error, Result};
pub use model::{
    coarsen, heaping_pmf, inverse_coarsen, obs_prob_given_effects, recall_log_mean,
    CovariateLayout, Dataset, HeapingClass, ModelSpec, ObservationDay, PriorConfig, SubjectRecord,
    Theta,
};
