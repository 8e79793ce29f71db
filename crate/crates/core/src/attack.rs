//! Projected-gradient attacks with Adam and early stopping, the random
//! baseline, the samples-until-match efficiency harness, and the evaluation
//! suite.
//!
//! One attack follows the generic loop: initialize the perturbation
//! variables, then for `s` steps ascend the loss, project back into the
//! feasible set, and keep the best-loss iterate seen (early stopping);
//! postprocessing turns the best relaxed iterate into a discrete instance
//! (SAT: sampling; TSP: masking invalid nodes, splicing, cost-query update).
//! Every emitted instance carries its label or solution from the sound
//! perturbation model and is re-verified against the exact oracles whenever
//! they are feasible.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Adam, Tape, Tensor};
use crate::instances::{
    optimality_gap, tour_cost, Assignment, CnfFormula, InstanceError, Tour, TspDecisionInstance,
    TspInstance,
};
use crate::sat_oracle;
use crate::sat_perturb::{
    admissible_entries, apply_flips, build_adc_extension, build_protection_mask,
    enforce_feasibility, project_budget, relaxed_on_tape, sample_discrete, BipartiteAdjacency,
    PerturbError, PerturbMode, PerturbationMask,
};
use crate::surrogate::{
    bce, bce_value, edge_bce, edge_bce_value, forward_convtsp, forward_dtsp, forward_sat,
    greedy_decode, predict_convtsp, predict_dtsp, predict_sat, BoundParams, SurrogateError,
    SurrogateParams, SurrogateRole,
};
use crate::tsp_oracle::{self, HELD_KARP_MAX_NODES};
use crate::tsp_perturb::{
    assign_and_check, initialize_nodes, restore_constraint, update_cost_query, TspPerturbError,
    DEFAULT_DECISION_MARGIN, DEFAULT_PROJECTION_RATE, DEFAULT_PROJECTION_STEPS,
};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    TspPerturb(#[from] TspPerturbError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("SAT-mode attacks require a witness assignment")]
    WitnessRequired,
    #[error("attack mode does not match the instance label")]
    ModeLabelMismatch,
    #[error("model role {0:?} does not fit this attack")]
    WrongRole(SurrogateRole),
}

/// How unsatisfiable instances pick their edit model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnsatModeSelector {
    /// Seeded coin flip between DEL and ADC per instance.
    Random,
    Del,
    Adc,
}

/// Attack hyperparameters. `Default` carries the SAT table defaults
/// (500 steps, rate 0.1, 5% edge budget, 25% extra clauses, 20 samples,
/// temperature 5); [`AttackConfig::dtsp`] and [`AttackConfig::convtsp`]
/// carry the TSP table defaults (5 nodes, 200/500 steps, rates 0.001/0.01,
/// projection rate 0.002 with 3 steps).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// SAT/DEL budget as a fraction of the literal count.
    pub budget_fraction: f64,
    /// ADC appended-clause count as a fraction of the clause count.
    pub adc_clause_fraction: f64,
    pub num_samples: usize,
    pub temperature: f64,
    /// Maximum number of adversarial TSP nodes.
    pub node_budget: usize,
    pub projection_rate: f64,
    pub projection_steps: usize,
    /// Decision margin d for TSP cost queries.
    pub decision_margin: f64,
    /// Optimality-gap threshold counting a route-model attack as a success.
    pub gap_threshold: f64,
    /// Edit model for unsatisfiable instances in the evaluation suite.
    pub unsat_mode: UnsatModeSelector,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            steps: 500,
            learning_rate: 0.1,
            budget_fraction: 0.05,
            adc_clause_fraction: 0.25,
            num_samples: 20,
            temperature: 5.0,
            node_budget: 5,
            projection_rate: DEFAULT_PROJECTION_RATE,
            projection_steps: DEFAULT_PROJECTION_STEPS,
            decision_margin: DEFAULT_DECISION_MARGIN,
            gap_threshold: 0.02,
            unsat_mode: UnsatModeSelector::Random,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn dtsp() -> Self {
        AttackConfig { steps: 200, learning_rate: 0.001, ..AttackConfig::default() }
    }

    pub fn convtsp() -> Self {
        AttackConfig { steps: 500, learning_rate: 0.01, ..AttackConfig::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.steps == 0 {
            return Err("steps must be positive".into());
        }
        if self.learning_rate <= 0.0 || self.projection_rate <= 0.0 {
            return Err("learning rates must be positive".into());
        }
        if self.num_samples == 0 {
            return Err("num_samples must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return Err("budget_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// A SAT instance with its verified label (and witness when satisfiable).
#[derive(Debug, Clone)]
pub struct SatItem {
    pub formula: CnfFormula,
    pub label: bool,
    pub witness: Option<Assignment>,
}

/// A TSP instance with its (near-)optimal reference tour.
#[derive(Debug, Clone)]
pub struct TspItem {
    pub instance: TspInstance,
    pub tour: Tour,
    /// Decision label for the decision model (ignored by the route model).
    pub label: bool,
}

/// The perturbed instance an attack emits, with its certified label/solution.
#[derive(Debug, Clone)]
pub enum PerturbedInstance {
    Sat { formula: CnfFormula, label: bool },
    TspDecision { decision: TspDecisionInstance, tour: Tour },
    TspRoute { instance: TspInstance, tour: Tour },
}

/// Outcome of one attack on one instance.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub mode: String,
    pub perturbed: PerturbedInstance,
    pub clean_pred: f64,
    pub adv_pred: f64,
    pub clean_loss: f64,
    /// Loss of the final discrete perturbed instance.
    pub adv_loss: f64,
    /// Best relaxed iterate loss; equals the max of `loss_trace`.
    pub best_loss: f64,
    pub loss_trace: Vec<f64>,
    pub success: bool,
    /// Flips (SAT) or valid adversarial nodes (TSP).
    pub edits: usize,
    /// Oracle verdict on the emitted label/solution; None when the exact
    /// oracle is infeasible at this size.
    pub verified: Option<bool>,
    pub wall_ms: f64,
}

fn derive_seed(root: u64, index: u64) -> u64 {
    root ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// L0 budget for SAT/DEL: fraction of the literal count, rounded half-up.
fn sat_budget(adjacency: &BipartiteAdjacency, fraction: f64) -> f64 {
    (fraction * adjacency.num_edges() as f64 + 0.5).floor()
}

fn verify_sat(formula: &CnfFormula, label: bool) -> Option<bool> {
    sat_oracle::solve(formula, None).ok().map(|r| r.satisfiable == label)
}

fn verify_tsp(instance: &TspInstance, tour: &Tour) -> Option<bool> {
    if instance.num_nodes() > HELD_KARP_MAX_NODES {
        return None;
    }
    let exact = tsp_oracle::solve_exact(instance).ok()?;
    let claimed = tour_cost(instance, tour).ok()?;
    Some((claimed - exact.cost).abs() < 1e-9)
}

/// PGD attack over the relaxed literal-clause mask (the SAT, DEL and ADC
/// drivers share this loop; `mode` picks the edit model).
pub fn pgd_attack_sat(
    params: &SurrogateParams,
    item: &SatItem,
    mode: PerturbMode,
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    if params.role() != SurrogateRole::Sat {
        return Err(AttackError::WrongRole(params.role()));
    }
    if mode.expected_label() != item.label {
        return Err(AttackError::ModeLabelMismatch);
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let adjacency = BipartiteAdjacency::from_formula(&item.formula);
    let protection = match mode {
        PerturbMode::Sat => {
            let witness = item.witness.as_ref().ok_or(AttackError::WitnessRequired)?;
            Some(build_protection_mask(&adjacency, witness.values())?)
        }
        _ => None,
    };
    let (mask_cols, budget) = match mode {
        PerturbMode::Sat | PerturbMode::Del => {
            (adjacency.num_clauses(), sat_budget(&adjacency, config.budget_fraction))
        }
        PerturbMode::Adc => {
            let (extra, budget) = build_adc_extension(&adjacency, config.adc_clause_fraction);
            (extra, budget)
        }
    };
    let clean_pred = predict_sat(params, adjacency.tensor())?;
    let clean_loss = bce_value(clean_pred, item.label);

    let mut mask = PerturbationMask::zeros(mode, adjacency.rows(), mask_cols);
    let mut adam = Adam::new(config.learning_rate, &[(adjacency.rows(), mask_cols)]);
    let mut trace = Vec::with_capacity(config.steps);
    let mut best: Option<(f64, PerturbationMask)> = None;

    for step in 0..=config.steps {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, params, false);
        let m_leaf = tape.leaf(mask.tensor().clone());
        let relaxed = relaxed_on_tape(&mut tape, &adjacency, m_leaf, mode);
        let pred = forward_sat(&mut tape, &bound, relaxed)?;
        let loss = bce(&mut tape, pred, item.label);
        let value = tape.value(loss).item();
        if step > 0 {
            // post-update iterates enter the early-stopping trace
            if value.is_finite() {
                trace.push(value);
                if best.as_ref().is_none_or(|(b, _)| value > *b) {
                    best = Some((value, mask.clone()));
                }
            } else {
                trace.push(f64::NEG_INFINITY);
            }
        }
        if step == config.steps {
            break;
        }
        let grads = tape.backward(loss);
        let grad = match grads.get(m_leaf) {
            Some(g) if g.is_finite() => g.scaled(-1.0), // ascend
            _ => break,
        };
        let mut tensors = vec![std::mem::replace(mask.tensor_mut(), Tensor::zeros(1, 1))];
        adam.step(&mut tensors, &[&grad]);
        *mask.tensor_mut() = tensors.pop().unwrap();
        project_budget(&mut mask, budget);
        enforce_feasibility(&mut mask, &adjacency, protection.as_ref())?;
    }

    let best_mask = best.as_ref().map(|(_, m)| m.clone()).unwrap_or(mask);
    let best_loss = best.map(|(v, _)| v).unwrap_or(clean_loss);
    let mut loss_fn = |f: &CnfFormula| -> f64 {
        let adj = BipartiteAdjacency::from_formula(f);
        match predict_sat(params, adj.tensor()) {
            Ok(p) => bce_value(p, item.label),
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let sampled = sample_discrete(
        &best_mask,
        &adjacency,
        protection.as_ref(),
        &mut loss_fn,
        config.num_samples,
        config.temperature,
        budget,
        &mut rng,
    )?;
    let adv_adj = BipartiteAdjacency::from_formula(&sampled.formula);
    let adv_pred = predict_sat(params, adv_adj.tensor())?;
    let adv_loss = bce_value(adv_pred, item.label);
    let verified = verify_sat(&sampled.formula, item.label);
    Ok(AttackResult {
        mode: mode.as_str().to_string(),
        perturbed: PerturbedInstance::Sat { formula: sampled.formula, label: item.label },
        clean_pred,
        adv_pred,
        clean_loss,
        adv_loss,
        best_loss,
        loss_trace: trace,
        success: (adv_pred > 0.5) != item.label,
        edits: sampled.flips,
        verified,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Uniform random baseline at full budget: one admissible realization,
/// evaluated once.
pub fn random_attack_sat(
    params: &SurrogateParams,
    item: &SatItem,
    mode: PerturbMode,
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    if mode.expected_label() != item.label {
        return Err(AttackError::ModeLabelMismatch);
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let adjacency = BipartiteAdjacency::from_formula(&item.formula);
    let clean_pred = predict_sat(params, adjacency.tensor())?;
    let clean_loss = bce_value(clean_pred, item.label);
    let (formula, flips) = draw_random_sat_perturbation(&adjacency, item, mode, config, &mut rng)?;
    let adv_adj = BipartiteAdjacency::from_formula(&formula);
    let adv_pred = predict_sat(params, adv_adj.tensor())?;
    let adv_loss = bce_value(adv_pred, item.label);
    let verified = verify_sat(&formula, item.label);
    Ok(AttackResult {
        mode: format!("{}-random", mode.as_str()),
        perturbed: PerturbedInstance::Sat { formula, label: item.label },
        clean_pred,
        adv_pred,
        clean_loss,
        adv_loss,
        best_loss: adv_loss,
        loss_trace: vec![adv_loss],
        success: (adv_pred > 0.5) != item.label,
        edits: flips,
        verified,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// One admissible uniform perturbation exhausting the budget.
fn draw_random_sat_perturbation(
    adjacency: &BipartiteAdjacency,
    item: &SatItem,
    mode: PerturbMode,
    config: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(CnfFormula, usize), AttackError> {
    let protection = match mode {
        PerturbMode::Sat => {
            let witness = item.witness.as_ref().ok_or(AttackError::WitnessRequired)?;
            Some(build_protection_mask(adjacency, witness.values())?)
        }
        _ => None,
    };
    let (mask_cols, budget) = match mode {
        PerturbMode::Sat | PerturbMode::Del => {
            (adjacency.num_clauses(), sat_budget(adjacency, config.budget_fraction))
        }
        PerturbMode::Adc => build_adc_extension(adjacency, config.adc_clause_fraction),
    };
    let want = budget.ceil() as usize;
    let mut candidates = admissible_entries(adjacency, protection.as_ref(), mode, mask_cols);
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    // per-column live literal counts for DEL's no-empty-clause constraint
    let mut col_count: Vec<usize> = (0..adjacency.num_clauses())
        .map(|j| (0..adjacency.rows()).filter(|&r| adjacency.entry(r, j)).count())
        .collect();
    while chosen.len() < want && !candidates.is_empty() {
        let pick = rng.random_range(0..candidates.len());
        let (r, c) = candidates.swap_remove(pick);
        match mode {
            PerturbMode::Sat => {
                // adding one polarity forbids adding the other
                if !adjacency.entry(r, c) {
                    let opp = adjacency.opposite_row(r);
                    candidates.retain(|&(rr, cc)| !(rr == opp && cc == c));
                }
                chosen.push((r, c));
            }
            PerturbMode::Del => {
                if col_count[c] < 2 {
                    continue; // deleting would empty the clause
                }
                col_count[c] -= 1;
                chosen.push((r, c));
            }
            PerturbMode::Adc => {
                let opp = adjacency.opposite_row(r);
                candidates.retain(|&(rr, cc)| !(rr == opp && cc == c));
                chosen.push((r, c));
            }
        }
    }
    let zero_mask = PerturbationMask::zeros(mode, adjacency.rows(), mask_cols);
    let flips: Vec<(usize, usize, f64)> = chosen.iter().map(|&(r, c)| (r, c, 0.0)).collect();
    let (formula, applied) = apply_flips(adjacency, &zero_mask, &flips);
    Ok((formula, applied))
}

/// Which TSP model the node attack drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TspAttackKind {
    Decision,
    Route,
}

/// PGD attack inserting adversarial nodes into a metric TSP instance.
pub fn pgd_attack_tsp(
    params: &SurrogateParams,
    item: &TspItem,
    kind: TspAttackKind,
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    match (kind, params.role()) {
        (TspAttackKind::Decision, SurrogateRole::Dtsp) => {}
        (TspAttackKind::Route, SurrogateRole::ConvTsp) => {}
        _ => return Err(AttackError::WrongRole(params.role())),
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = item.instance.num_nodes();
    let clean_cost = tour_cost(&item.instance, &item.tour)?;
    let margin = config.decision_margin;
    let clean_query = clean_cost * if item.label { 1.0 + margin } else { 1.0 - margin };
    let weights_tensor = |inst: &TspInstance| -> Tensor {
        let k = inst.num_nodes();
        let mut t = Tensor::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                t.set(i, j, inst.weight(i, j));
            }
        }
        t
    };
    let (clean_pred, clean_loss) = match kind {
        TspAttackKind::Decision => {
            let p = predict_dtsp(params, &weights_tensor(&item.instance), clean_query)?;
            (p, bce_value(p, item.label))
        }
        TspAttackKind::Route => {
            let h = predict_convtsp(params, &weights_tensor(&item.instance))?;
            let decoded = greedy_decode(&h);
            let gap = optimality_gap(&decoded, &item.tour, &item.instance)?;
            let target = indicator_tensor(&item.tour);
            (gap, edge_bce_value(&h, &target))
        }
    };

    let init = initialize_nodes(&item.instance, &item.tour, config.node_budget, &mut rng)?;
    let mut points = init.points;
    let mut adam = Adam::new(config.learning_rate, &[(config.node_budget, 2)]);
    let mut trace = Vec::with_capacity(config.steps);
    let mut best: Option<(f64, Vec<[f64; 2]>)> = None;

    for step in 0..=config.steps {
        let plan = assign_and_check(&item.instance, &item.tour, &points, true)?;
        let coords: Vec<[f64; 2]> = plan
            .augmented_instance
            .coords()
            .expect("metric instance keeps coordinates")
            .to_vec();
        let aug_cost = tour_cost(&plan.augmented_instance, &plan.augmented_tour)?;
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, params, false);
        let coords_leaf = tape.leaf(Tensor::from_vec(
            coords.len(),
            2,
            coords.iter().flat_map(|p| [p[0], p[1]]).collect(),
        ));
        let weights = tape.pairwise_dist(coords_leaf);
        let loss = match kind {
            TspAttackKind::Decision => {
                let query = aug_cost * if item.label { 1.0 + margin } else { 1.0 - margin };
                let pred = forward_dtsp(&mut tape, &bound, weights, query)?;
                bce(&mut tape, pred, item.label)
            }
            TspAttackKind::Route => {
                let h = forward_convtsp(&mut tape, &bound, weights)?;
                let target = indicator_tensor(&plan.augmented_tour);
                edge_bce(&mut tape, h, &target)
            }
        };
        let value = tape.value(loss).item();
        if step > 0 {
            if value.is_finite() {
                trace.push(value);
                if best.as_ref().is_none_or(|(b, _)| value > *b) {
                    best = Some((value, points.clone()));
                }
            } else {
                trace.push(f64::NEG_INFINITY);
            }
        }
        if step == config.steps {
            break;
        }
        let grads = tape.backward(loss);
        let mut grad = Tensor::zeros(config.node_budget, 2);
        if let Some(g) = grads.get(coords_leaf) {
            if !g.is_finite() {
                break;
            }
            for (k, compact) in plan.compact_ids.iter().enumerate() {
                if let Some(c) = compact {
                    grad.set(k, 0, -g.get(*c, 0)); // ascend
                    grad.set(k, 1, -g.get(*c, 1));
                }
            }
        }
        let mut z = Tensor::from_vec(
            config.node_budget,
            2,
            points.iter().flat_map(|p| [p[0], p[1]]).collect(),
        );
        let mut tensors = vec![std::mem::replace(&mut z, Tensor::zeros(1, 1))];
        adam.step(&mut tensors, &[&grad]);
        let z = tensors.pop().unwrap();
        for (k, p) in points.iter_mut().enumerate() {
            p[0] = z.get(k, 0).clamp(0.0, 1.0);
            p[1] = z.get(k, 1).clamp(0.0, 1.0);
        }
        // constraint-restoring projection for nodes that now violate
        let replan = assign_and_check(&item.instance, &item.tour, &points, true)?;
        let mut all_coords: Vec<[f64; 2]> =
            item.instance.coords().expect("metric instance").to_vec();
        all_coords.extend_from_slice(&points);
        for k in 0..points.len() {
            if replan.nodes.valid[k] {
                continue;
            }
            let mut active: Vec<usize> = (0..n).collect();
            for j in 0..k {
                if replan.nodes.valid[j] {
                    active.push(n + j);
                }
            }
            points[k] = restore_constraint(
                &all_coords,
                &active,
                replan.nodes.host_segments[k],
                points[k],
                config.projection_rate,
                config.projection_steps,
            );
            all_coords[n + k] = points[k];
        }
    }

    let best_points = best.as_ref().map(|(_, p)| p.clone()).unwrap_or(points);
    let best_loss = best.map(|(v, _)| v).unwrap_or(clean_loss);
    let plan = assign_and_check(&item.instance, &item.tour, &best_points, true)?;
    let adv_cost = tour_cost(&plan.augmented_instance, &plan.augmented_tour)?;
    let adv_weights = weights_tensor(&plan.augmented_instance);
    let (adv_pred, adv_loss, success, perturbed) = match kind {
        TspAttackKind::Decision => {
            let base = TspDecisionInstance {
                instance: plan.augmented_instance.clone(),
                cost_query: clean_query,
                label: item.label,
            };
            let decision = update_cost_query(&base, adv_cost, margin)?;
            let p = predict_dtsp(params, &adv_weights, decision.cost_query)?;
            let loss = bce_value(p, item.label);
            let success = (p > 0.5) != item.label;
            (
                p,
                loss,
                success,
                PerturbedInstance::TspDecision { decision, tour: plan.augmented_tour.clone() },
            )
        }
        TspAttackKind::Route => {
            let h = predict_convtsp(params, &adv_weights)?;
            let decoded = greedy_decode(&h);
            let gap = optimality_gap(&decoded, &plan.augmented_tour, &plan.augmented_instance)?;
            let target = indicator_tensor(&plan.augmented_tour);
            let loss = edge_bce_value(&h, &target);
            (
                gap,
                loss,
                gap > config.gap_threshold,
                PerturbedInstance::TspRoute {
                    instance: plan.augmented_instance.clone(),
                    tour: plan.augmented_tour.clone(),
                },
            )
        }
    };
    let verified = verify_tsp(&plan.augmented_instance, &plan.augmented_tour);
    Ok(AttackResult {
        mode: match kind {
            TspAttackKind::Decision => "dtsp".to_string(),
            TspAttackKind::Route => "convtsp".to_string(),
        },
        perturbed,
        clean_pred,
        adv_pred,
        clean_loss,
        adv_loss,
        best_loss,
        loss_trace: trace,
        success,
        edits: plan.nodes.num_valid(),
        verified,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Random TSP baseline: `node_budget` random allowed points, evaluated once.
pub fn random_attack_tsp(
    params: &SurrogateParams,
    item: &TspItem,
    kind: TspAttackKind,
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let nodes = initialize_nodes(&item.instance, &item.tour, config.node_budget, &mut rng)?;
    let mut result = evaluate_tsp_points(params, item, kind, config, &nodes.points)?;
    result.mode = format!("{}-random", result.mode);
    result.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(result)
}

/// Evaluates a fixed set of adversarial points (no optimization).
fn evaluate_tsp_points(
    params: &SurrogateParams,
    item: &TspItem,
    kind: TspAttackKind,
    config: &AttackConfig,
    points: &[[f64; 2]],
) -> Result<AttackResult, AttackError> {
    let margin = config.decision_margin;
    let clean_cost = tour_cost(&item.instance, &item.tour)?;
    let clean_query = clean_cost * if item.label { 1.0 + margin } else { 1.0 - margin };
    let weights_tensor = |inst: &TspInstance| -> Tensor {
        let k = inst.num_nodes();
        let mut t = Tensor::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                t.set(i, j, inst.weight(i, j));
            }
        }
        t
    };
    let (clean_pred, clean_loss) = match kind {
        TspAttackKind::Decision => {
            let p = predict_dtsp(params, &weights_tensor(&item.instance), clean_query)?;
            (p, bce_value(p, item.label))
        }
        TspAttackKind::Route => {
            let h = predict_convtsp(params, &weights_tensor(&item.instance))?;
            let decoded = greedy_decode(&h);
            let gap = optimality_gap(&decoded, &item.tour, &item.instance)?;
            (gap, edge_bce_value(&h, &indicator_tensor(&item.tour)))
        }
    };
    let plan = assign_and_check(&item.instance, &item.tour, points, true)?;
    let adv_cost = tour_cost(&plan.augmented_instance, &plan.augmented_tour)?;
    let adv_weights = weights_tensor(&plan.augmented_instance);
    let (adv_pred, adv_loss, success, perturbed, mode) = match kind {
        TspAttackKind::Decision => {
            let base = TspDecisionInstance {
                instance: plan.augmented_instance.clone(),
                cost_query: clean_query,
                label: item.label,
            };
            let decision = update_cost_query(&base, adv_cost, margin)?;
            let p = predict_dtsp(params, &adv_weights, decision.cost_query)?;
            (
                p,
                bce_value(p, item.label),
                (p > 0.5) != item.label,
                PerturbedInstance::TspDecision { decision, tour: plan.augmented_tour.clone() },
                "dtsp",
            )
        }
        TspAttackKind::Route => {
            let h = predict_convtsp(params, &adv_weights)?;
            let decoded = greedy_decode(&h);
            let gap = optimality_gap(&decoded, &plan.augmented_tour, &plan.augmented_instance)?;
            let loss = edge_bce_value(&h, &indicator_tensor(&plan.augmented_tour));
            (
                gap,
                loss,
                gap > config.gap_threshold,
                PerturbedInstance::TspRoute {
                    instance: plan.augmented_instance.clone(),
                    tour: plan.augmented_tour.clone(),
                },
                "convtsp",
            )
        }
    };
    let verified = verify_tsp(&plan.augmented_instance, &plan.augmented_tour);
    Ok(AttackResult {
        mode: mode.to_string(),
        perturbed,
        clean_pred,
        adv_pred,
        clean_loss,
        adv_loss,
        best_loss: adv_loss,
        loss_trace: vec![adv_loss],
        success,
        edits: plan.nodes.num_valid(),
        verified,
        wall_ms: 0.0,
    })
}

fn indicator_tensor(tour: &Tour) -> Tensor {
    let ind = tour.edge_indicator();
    let n = ind.len();
    Tensor::from_vec(n, n, ind.into_iter().flatten().collect())
}

/// Outcome of the random-samples-until-match harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleCount {
    Matched(usize),
    CutoffExceeded,
}

impl SampleCount {
    /// Count with the cutoff standing in for censored runs.
    pub fn count_or(&self, cutoff: usize) -> usize {
        match self {
            SampleCount::Matched(k) => *k,
            SampleCount::CutoffExceeded => cutoff,
        }
    }
}

/// Draws admissible random perturbations until one reaches `target_loss`;
/// returns the draw count or the cutoff marker.
pub fn samples_until_match(
    params: &SurrogateParams,
    item: &SatItem,
    mode: PerturbMode,
    config: &AttackConfig,
    target_loss: f64,
    cutoff: usize,
) -> Result<SampleCount, AttackError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let adjacency = BipartiteAdjacency::from_formula(&item.formula);
    for i in 1..=cutoff {
        let (formula, _) =
            draw_random_sat_perturbation(&adjacency, item, mode, config, &mut rng)?;
        let adj = BipartiteAdjacency::from_formula(&formula);
        let pred = predict_sat(params, adj.tensor())?;
        if bce_value(pred, item.label) >= target_loss {
            return Ok(SampleCount::Matched(i));
        }
    }
    Ok(SampleCount::CutoffExceeded)
}

/// One per-instance evaluation row; the per-instance CSV is these in
/// instance order.
#[derive(Debug, Clone)]
pub struct InstanceRow {
    pub instance_id: usize,
    pub mode: String,
    pub label: bool,
    pub clean_pred: f64,
    pub adv_pred: f64,
    pub clean_loss: f64,
    pub adv_loss: f64,
    pub best_loss: f64,
    pub edits: usize,
    pub verified: Option<bool>,
    pub wall_ms: f64,
}

/// Accuracy summary per class and overall, plus the soundness rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSummary {
    pub count: usize,
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
    pub random_accuracy: f64,
    pub per_class: Vec<(String, usize, f64, f64, f64)>,
    /// Mean decoded optimality gaps (route model only).
    pub mean_gap_clean: Option<f64>,
    pub mean_gap_adv: Option<f64>,
    pub soundness_rate: f64,
}

/// One perturbed artifact a suite run emitted, keyed like its CSV row.
#[derive(Debug, Clone)]
pub struct SuiteOutput {
    pub instance_id: usize,
    pub mode: String,
    pub perturbed: PerturbedInstance,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub rows: Vec<InstanceRow>,
    pub summary: SuiteSummary,
    pub outputs: Vec<SuiteOutput>,
}

fn class_of(mode: &str, label: bool) -> String {
    if mode.starts_with("dtsp") || mode.starts_with("convtsp") {
        if label { "route-exists" } else { "route-absent" }.to_string()
    } else if label {
        "satisfiable".to_string()
    } else {
        "unsatisfiable".to_string()
    }
}

/// Correctness of a prediction for summary purposes. Decision models score
/// the thresholded class; the route model scores gap <= threshold.
fn is_correct(mode: &str, pred: f64, label: bool, gap_threshold: f64) -> bool {
    if mode.starts_with("convtsp") {
        pred <= gap_threshold
    } else {
        (pred > 0.5) == label
    }
}

/// Builds the summary from raw rows; the report CSV carries exactly these
/// rows, so summaries are reproducible from the file alone.
pub fn summarize_rows(rows: &[InstanceRow], gap_threshold: f64) -> SuiteSummary {
    let pgd: Vec<&InstanceRow> = rows.iter().filter(|r| !r.mode.ends_with("-random")).collect();
    let random: Vec<&InstanceRow> = rows.iter().filter(|r| r.mode.ends_with("-random")).collect();
    let frac = |hits: usize, total: usize| if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    let clean_hits = pgd
        .iter()
        .filter(|r| is_correct(&r.mode, r.clean_pred, r.label, gap_threshold))
        .count();
    let adv_hits = pgd
        .iter()
        .filter(|r| is_correct(&r.mode, r.adv_pred, r.label, gap_threshold))
        .count();
    let rnd_hits = random
        .iter()
        .filter(|r| is_correct(&r.mode, r.adv_pred, r.label, gap_threshold))
        .count();
    let mut classes: Vec<String> = pgd.iter().map(|r| class_of(&r.mode, r.label)).collect();
    classes.sort();
    classes.dedup();
    let per_class = classes
        .iter()
        .map(|class| {
            let in_class = |r: &&&InstanceRow| class_of(&r.mode, r.label) == *class;
            let p: Vec<&&InstanceRow> = pgd.iter().filter(in_class).collect();
            let q: Vec<&&InstanceRow> = random.iter().filter(in_class).collect();
            (
                class.clone(),
                p.len(),
                frac(
                    p.iter()
                        .filter(|r| is_correct(&r.mode, r.clean_pred, r.label, gap_threshold))
                        .count(),
                    p.len(),
                ),
                frac(
                    p.iter()
                        .filter(|r| is_correct(&r.mode, r.adv_pred, r.label, gap_threshold))
                        .count(),
                    p.len(),
                ),
                frac(
                    q.iter()
                        .filter(|r| is_correct(&r.mode, r.adv_pred, r.label, gap_threshold))
                        .count(),
                    q.len(),
                ),
            )
        })
        .collect();
    let gaps: Vec<(f64, f64)> = pgd
        .iter()
        .filter(|r| r.mode.starts_with("convtsp"))
        .map(|r| (r.clean_pred, r.adv_pred))
        .collect();
    let (mean_gap_clean, mean_gap_adv) = if gaps.is_empty() {
        (None, None)
    } else {
        let n = gaps.len() as f64;
        (
            Some(gaps.iter().map(|g| g.0).sum::<f64>() / n),
            Some(gaps.iter().map(|g| g.1).sum::<f64>() / n),
        )
    };
    let verifiable = rows.iter().filter(|r| r.verified.is_some()).count();
    let sound = rows.iter().filter(|r| r.verified == Some(true)).count();
    SuiteSummary {
        count: pgd.len(),
        clean_accuracy: frac(clean_hits, pgd.len()),
        adversarial_accuracy: frac(adv_hits, pgd.len()),
        random_accuracy: frac(rnd_hits, random.len()),
        per_class,
        mean_gap_clean,
        mean_gap_adv,
        soundness_rate: frac(sound, verifiable),
    }
}

fn result_to_row(id: usize, label: bool, r: &AttackResult) -> InstanceRow {
    InstanceRow {
        instance_id: id,
        mode: r.mode.clone(),
        label,
        clean_pred: r.clean_pred,
        adv_pred: r.adv_pred,
        clean_loss: r.clean_loss,
        adv_loss: r.adv_loss,
        best_loss: r.best_loss,
        edits: r.edits,
        verified: r.verified,
        wall_ms: r.wall_ms,
    }
}

/// Attacks every SAT item with PGD and the random baseline (satisfiable
/// items use the SAT model; unsatisfiable items flip a seeded coin between
/// DEL and ADC) and aggregates clean/adversarial/random accuracy with a
/// per-class breakdown.
pub fn evaluate_sat_suite(
    params: &SurrogateParams,
    items: &[SatItem],
    config: &AttackConfig,
) -> Result<SuiteReport, AttackError> {
    let results: Result<Vec<Vec<(InstanceRow, PerturbedInstance)>>, AttackError> = items
        .par_iter()
        .enumerate()
        .map(|(id, item)| {
            let seed = derive_seed(config.seed, id as u64);
            let mut mode_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xC011));
            let mode = if item.label {
                PerturbMode::Sat
            } else {
                match config.unsat_mode {
                    UnsatModeSelector::Del => PerturbMode::Del,
                    UnsatModeSelector::Adc => PerturbMode::Adc,
                    UnsatModeSelector::Random => {
                        if mode_rng.random::<bool>() {
                            PerturbMode::Del
                        } else {
                            PerturbMode::Adc
                        }
                    }
                }
            };
            let cfg = AttackConfig { seed, ..config.clone() };
            let pgd = pgd_attack_sat(params, item, mode, &cfg)?;
            let rnd_cfg = AttackConfig { seed: derive_seed(seed, 0xBA5E), ..config.clone() };
            let rnd = random_attack_sat(params, item, mode, &rnd_cfg)?;
            Ok(vec![
                (result_to_row(id, item.label, &pgd), pgd.perturbed),
                (result_to_row(id, item.label, &rnd), rnd.perturbed),
            ])
        })
        .collect();
    Ok(assemble_report(results?, config.gap_threshold))
}

fn assemble_report(
    results: Vec<Vec<(InstanceRow, PerturbedInstance)>>,
    gap_threshold: f64,
) -> SuiteReport {
    let mut entries: Vec<(InstanceRow, PerturbedInstance)> =
        results.into_iter().flatten().collect();
    entries.sort_by(|a, b| (a.0.instance_id, &a.0.mode).cmp(&(b.0.instance_id, &b.0.mode)));
    let rows: Vec<InstanceRow> = entries.iter().map(|(r, _)| r.clone()).collect();
    let outputs: Vec<SuiteOutput> = entries
        .into_iter()
        .map(|(r, p)| SuiteOutput { instance_id: r.instance_id, mode: r.mode, perturbed: p })
        .collect();
    let summary = summarize_rows(&rows, gap_threshold);
    SuiteReport { rows, summary, outputs }
}

/// TSP counterpart of [`evaluate_sat_suite`] for either TSP model.
pub fn evaluate_tsp_suite(
    params: &SurrogateParams,
    items: &[TspItem],
    kind: TspAttackKind,
    config: &AttackConfig,
) -> Result<SuiteReport, AttackError> {
    let results: Result<Vec<Vec<(InstanceRow, PerturbedInstance)>>, AttackError> = items
        .par_iter()
        .enumerate()
        .map(|(id, item)| {
            let seed = derive_seed(config.seed, id as u64);
            let cfg = AttackConfig { seed, ..config.clone() };
            let pgd = pgd_attack_tsp(params, item, kind, &cfg)?;
            let rnd_cfg = AttackConfig { seed: derive_seed(seed, 0xBA5E), ..config.clone() };
            let rnd = random_attack_tsp(params, item, kind, &rnd_cfg)?;
            Ok(vec![
                (result_to_row(id, item.label, &pgd), pgd.perturbed),
                (result_to_row(id, item.label, &rnd), rnd.perturbed),
            ])
        })
        .collect();
    Ok(assemble_report(results?, config.gap_threshold))
}
