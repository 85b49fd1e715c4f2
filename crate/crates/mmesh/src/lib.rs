//! Binary Markov mesh models with Bayesian structure learning.
//!
//! A Markov mesh model describes a binary field on a rectangular lattice through
//! the factorization f(x) = prod_v f(x_v | x_{nu_v}), where every neighborhood
//! nu_v is the in-lattice translation of one fixed template of "past" offsets.
//! The conditional log-odds at a node is a pseudo-Boolean function of the active
//! neighbor pattern, parameterized by a dense set of interactions.
//!
//! This crate learns the full model specification from an observed scene: the
//! template, the interaction set, and the parameter values are all treated as
//! unknowns and sampled jointly by reversible-jump MCMC, with unobserved lattice
//! cells handled as auxiliary variables. It also simulates scenes from fitted
//! models and summarizes posterior samples (neighbor and interaction marginals,
//! model clusters, block-configuration statistics).
//!
//! Module layout mirrors the pipeline:
//! * [`lattice`]: grid geometry, raster order, scene storage and text format.
//! * [`pbf`]: pseudo-Boolean functions over dense interaction sets, Moebius
//!   inversion between value and coefficient form.
//! * [`model`]: conditional probabilities, likelihood, single-site flip ratios,
//!   ancestral simulation.
//! * [`prior`]: the three-factor prior over (template, interactions, parameters).
//! * [`ars`]: adaptive rejection sampling and the alpha full conditional.
//! * [`rjmcmc`]: parameter Gibbs updates, trans-dimensional add/remove moves,
//!   the site-update schedule, and the chain driver.
//! * [`analysis`]: posterior summaries computed from chain traces.
//! * [`cli`]: the `mmesh` command-line interface.

pub mod analysis;
pub mod ars;
pub mod cli;
pub mod lattice;
pub mod model;
pub mod pbf;
pub mod prior;
pub mod rjmcmc;
