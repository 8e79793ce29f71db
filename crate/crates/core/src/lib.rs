//! Sound adversarial perturbations for SAT and TSP neural solvers.
//!
//! This crate provides the building blocks for attacking small differentiable
//! combinatorial solvers with perturbations whose effect on the true
//! label/solution is known *without re-solving the perturbed instance*:
//!
//! - [`instances`]: CNF formulas, TSP instances, tours and the losses used by
//!   the attacks.
//! - [`sat_oracle`] / [`tsp_oracle`]: exact small-scale solvers (DPLL,
//!   Held-Karp) used to label data and to certify perturbation soundness.
//! - [`sat_perturb`]: the three sound CNF edit models (SAT / DEL / ADC) as
//!   relaxed masks over the literal-clause adjacency, with budget projection
//!   and discrete sampling.
//! - [`tsp_perturb`]: sound node insertion for TSP with the detour-margin
//!   constraint, convex-hull exemption and constraint-restoring projection.
//! - [`autodiff`] / [`surrogate`]: a small reverse-mode tape and three toy
//!   graph networks (SAT vote, decision TSP, edge-probability TSP) that the
//!   attacks differentiate through, plus Adam training and adversarial
//!   fine-tuning.
//! - [`attack`]: the PGD loop with Adam and early stopping, the random
//!   baseline, the samples-until-match harness and the evaluation suite.
//! - [`datagen`]: seeded instance generators (paired SAT formulas, unit-square
//!   TSP with dual decision labels).
//! - [`io`]: DIMACS CNF, TSP JSON, checkpoints, experiment config and CSV
//!   reports.

pub mod attack;
pub mod autodiff;
pub mod datagen;
pub mod instances;
pub mod io;
pub mod sat_oracle;
pub mod sat_perturb;
pub mod surrogate;
pub mod tsp_oracle;
pub mod tsp_perturb;
