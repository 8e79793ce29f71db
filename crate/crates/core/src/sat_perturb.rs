//! The three sound CNF perturbation models — SAT, DEL, ADC — as relaxed edits
//! over the literal-clause bipartite adjacency.
//!
//! - **SAT** (label 1): add or remove literals while every clause keeps at
//!   least one literal of a known witness. Witness edges are protected from
//!   edits; edits that would put both polarities of a variable in one clause
//!   are masked out so outputs keep the one-polarity invariant.
//! - **DEL** (label 0): delete literals only, never emptying a clause.
//! - **ADC** (label 0): append extra clauses and optimize their edges; the
//!   original clauses stay untouched, so an unsatisfiable subset survives.
//!
//! Masks are optimized in [0,1]^(2n x m) under an L0-style budget enforced by
//! [`project_budget`], then discretized by [`sample_discrete`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::instances::{CnfFormula, Lit};

#[derive(Debug, Error, PartialEq)]
pub enum PerturbError {
    #[error("witness does not satisfy the formula")]
    WitnessDoesNotSatisfy(usize),
    #[error("perturbation mode does not match the instance label")]
    ModeLabelMismatch,
    #[error("SAT mode requires a protection mask")]
    ProtectionRequired,
    #[error("mask shape {0}x{1} does not fit the adjacency")]
    MaskShape(usize, usize),
}

/// Which sound edit model a mask drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    Sat,
    Del,
    Adc,
}

impl PerturbMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PerturbMode::Sat => "sat",
            PerturbMode::Del => "del",
            PerturbMode::Adc => "adc",
        }
    }

    pub fn preserves_label(self) -> bool {
        true
    }

    /// The label the mode is defined for.
    pub fn expected_label(self) -> bool {
        matches!(self, PerturbMode::Sat)
    }
}

/// Literal-clause incidence matrix in {0,1}^(2n x m): row i < n is the
/// positive literal of variable i, row n+i its negation, column j clause j.
///
/// A clause never holds both polarities of a variable, and the matrix
/// round-trips with [`CnfFormula`] up to the canonical literal order
/// (positive literals ascending, then negative ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteAdjacency {
    num_vars: usize,
    matrix: Tensor,
}

impl BipartiteAdjacency {
    pub fn from_formula(formula: &CnfFormula) -> Self {
        let n = formula.num_vars();
        let m = formula.num_clauses();
        let mut matrix = Tensor::zeros(2 * n, m);
        for (j, clause) in formula.clauses().iter().enumerate() {
            for lit in clause {
                let row = if lit.is_positive() { lit.var() } else { n + lit.var() };
                matrix.set(row, j, 1.0);
            }
        }
        BipartiteAdjacency { num_vars: n, matrix }
    }

    /// Rebuilds the formula; literals appear in canonical row order.
    pub fn to_formula(&self) -> CnfFormula {
        let n = self.num_vars;
        let clauses: Vec<Vec<Lit>> = (0..self.num_clauses())
            .map(|j| {
                let mut clause = Vec::new();
                for v in 0..n {
                    if self.matrix.get(v, j) != 0.0 {
                        clause.push(Lit::new(v as i32 + 1));
                    }
                }
                for v in 0..n {
                    if self.matrix.get(n + v, j) != 0.0 {
                        clause.push(Lit::new(-(v as i32 + 1)));
                    }
                }
                clause
            })
            .collect();
        CnfFormula::new(n, clauses).expect("adjacency invariants imply a valid formula")
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_clauses(&self) -> usize {
        self.matrix.cols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    /// Total number of edges (literal occurrences).
    pub fn num_edges(&self) -> usize {
        self.matrix.data().iter().filter(|&&v| v != 0.0).count()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.matrix
    }

    pub fn entry(&self, row: usize, col: usize) -> bool {
        self.matrix.get(row, col) != 0.0
    }

    /// Row of the opposite polarity.
    pub fn opposite_row(&self, row: usize) -> usize {
        if row < self.num_vars { row + self.num_vars } else { row - self.num_vars }
    }
}

/// 0/1 matrix marking entries whose edit is forbidden: in SAT mode, every
/// present edge of a literal the witness makes true.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtectionMask {
    matrix: Tensor,
}

impl ProtectionMask {
    pub fn tensor(&self) -> &Tensor {
        &self.matrix
    }

    pub fn is_protected(&self, row: usize, col: usize) -> bool {
        self.matrix.get(row, col) != 0.0
    }
}

/// Protects every present edge whose literal agrees with the witness, which
/// keeps at least one witness literal in each clause under any admissible
/// edit. Errors if the witness leaves some clause unsatisfied.
pub fn build_protection_mask(
    adjacency: &BipartiteAdjacency,
    witness: &[bool],
) -> Result<ProtectionMask, PerturbError> {
    let n = adjacency.num_vars();
    assert_eq!(witness.len(), n, "witness length mismatch");
    let mut matrix = Tensor::zeros(2 * n, adjacency.num_clauses());
    for j in 0..adjacency.num_clauses() {
        let mut covered = false;
        for v in 0..n {
            if adjacency.entry(v, j) && witness[v] {
                matrix.set(v, j, 1.0);
                covered = true;
            }
            if adjacency.entry(n + v, j) && !witness[v] {
                matrix.set(n + v, j, 1.0);
                covered = true;
            }
        }
        if !covered {
            return Err(PerturbError::WitnessDoesNotSatisfy(j));
        }
    }
    Ok(ProtectionMask { matrix })
}

/// Relaxed edit mask M in [0,1]^(2n x m) (SAT/DEL) or [0,1]^(2n x m~) (ADC).
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationMask {
    pub mode: PerturbMode,
    matrix: Tensor,
}

impl PerturbationMask {
    pub fn zeros(mode: PerturbMode, rows: usize, cols: usize) -> Self {
        PerturbationMask { mode, matrix: Tensor::zeros(rows, cols) }
    }

    pub fn from_tensor(mode: PerturbMode, matrix: Tensor) -> Self {
        PerturbationMask { mode, matrix }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.matrix
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.matrix
    }
}

/// Euclidean projection onto { M in [0,1]^d : sum(M) <= delta }, found by
/// iteratively raising a uniform shift. The shift step is capped at the next
/// upper-clip breakpoint so the iteration never oversteps the root; it
/// terminates within `1e-6` of the budget.
pub fn project_budget(mask: &mut PerturbationMask, delta: f64) {
    project_tensor(&mut mask.matrix, delta);
}

pub(crate) fn project_tensor(t: &mut Tensor, delta: f64) {
    let delta = delta.max(0.0);
    let tol = 1e-6;
    let x: Vec<f64> = t.data().to_vec();
    let clipped_sum: f64 = x.iter().map(|v| v.clamp(0.0, 1.0)).sum();
    if clipped_sum <= delta + tol {
        for v in t.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        return;
    }
    let mut mu = 0.0f64;
    for _ in 0..10_000 {
        let mut sum = 0.0;
        let mut active = 0usize;
        let mut next_top = f64::INFINITY;
        for &v in &x {
            let shifted = v - mu;
            if shifted > 1.0 {
                sum += 1.0;
                next_top = next_top.min(v - 1.0);
            } else if shifted > 0.0 {
                // the boundary shifted == 1.0 counts as active: its right
                // derivative w.r.t. mu is what drives the next step
                sum += shifted.min(1.0);
                active += 1;
            }
        }
        let excess = sum - delta;
        if excess <= tol {
            break;
        }
        let newton = if active > 0 { mu + excess / active as f64 } else { f64::INFINITY };
        // Never step past the next breakpoint where a full entry becomes
        // partial: the slope only steepens there.
        if next_top.is_finite() && next_top > mu && newton > next_top {
            mu = next_top;
        } else if newton.is_finite() {
            mu = newton;
        } else {
            break;
        }
    }
    for v in t.data_mut() {
        *v = (*v - mu).clamp(0.0, 1.0);
    }
}

/// Zeroes mask entries the mode forbids and, for DEL, rescales clause
/// columns so no soft clause weight sum drops below one.
///
/// Mirrors the per-step mask cleanup of the attack loop (mask after the
/// gradient update and the budget projection).
pub fn enforce_feasibility(
    mask: &mut PerturbationMask,
    adjacency: &BipartiteAdjacency,
    protection: Option<&ProtectionMask>,
) -> Result<(), PerturbError> {
    let (rows, cols) = (mask.matrix.rows(), mask.matrix.cols());
    match mask.mode {
        PerturbMode::Sat => {
            let prot = protection.ok_or(PerturbError::ProtectionRequired)?;
            if (rows, cols) != (adjacency.rows(), adjacency.num_clauses()) {
                return Err(PerturbError::MaskShape(rows, cols));
            }
            for row in 0..rows {
                let opp = adjacency.opposite_row(row);
                for col in 0..cols {
                    let blocked = prot.is_protected(row, col)
                        || (!adjacency.entry(row, col) && adjacency.entry(opp, col));
                    if blocked {
                        mask.matrix.set(row, col, 0.0);
                    }
                }
            }
        }
        PerturbMode::Del => {
            if (rows, cols) != (adjacency.rows(), adjacency.num_clauses()) {
                return Err(PerturbError::MaskShape(rows, cols));
            }
            for row in 0..rows {
                for col in 0..cols {
                    if !adjacency.entry(row, col) {
                        mask.matrix.set(row, col, 0.0);
                    }
                }
            }
            ensure_no_del(&mut mask.matrix, adjacency);
        }
        PerturbMode::Adc => {
            if rows != adjacency.rows() {
                return Err(PerturbError::MaskShape(rows, cols));
            }
        }
    }
    Ok(())
}

/// Rescales every clause column of a DEL mask so the soft remaining weight
/// sum A - M stays at least one.
fn ensure_no_del(mask: &mut Tensor, adjacency: &BipartiteAdjacency) {
    for col in 0..mask.cols() {
        let present: f64 = (0..mask.rows())
            .map(|r| if adjacency.entry(r, col) { 1.0 } else { 0.0 })
            .sum();
        let cap = present - 1.0;
        let s: f64 = (0..mask.rows()).map(|r| mask.get(r, col)).sum();
        if s > cap {
            let factor = if s > 0.0 { (cap / s).max(0.0) } else { 0.0 };
            for r in 0..mask.rows() {
                let v = mask.get(r, col);
                mask.set(r, col, v * factor);
            }
        }
    }
}

/// The relaxed instance the surrogate sees. SAT: soft xor
/// A + (1 - 2A) * M on unprotected entries; DEL: A - M on existing edges
/// with ensure-no-del; ADC: original columns plus the mask as appended soft
/// clauses. The mask is cleaned with [`enforce_feasibility`] first.
pub fn apply_relaxed(
    adjacency: &BipartiteAdjacency,
    mask: &PerturbationMask,
    protection: Option<&ProtectionMask>,
    label: bool,
) -> Result<Tensor, PerturbError> {
    if label != mask.mode.expected_label() {
        return Err(PerturbError::ModeLabelMismatch);
    }
    let mut feasible = mask.clone();
    enforce_feasibility(&mut feasible, adjacency, protection)?;
    let a = adjacency.tensor();
    let m = feasible.tensor();
    let out = match mask.mode {
        PerturbMode::Sat => {
            let mut out = a.clone();
            for k in 0..out.data().len() {
                let av = a.data()[k];
                out.data_mut()[k] = av + (1.0 - 2.0 * av) * m.data()[k];
            }
            out
        }
        PerturbMode::Del => {
            let mut out = a.clone();
            for k in 0..out.data().len() {
                out.data_mut()[k] = a.data()[k] - m.data()[k];
            }
            out
        }
        PerturbMode::Adc => {
            let rows = a.rows();
            let cols = a.cols() + m.cols();
            let mut out = Tensor::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..a.cols() {
                    out.set(r, c, a.get(r, c));
                }
                for c in 0..m.cols() {
                    out.set(r, a.cols() + c, m.get(r, c));
                }
            }
            out
        }
    };
    Ok(out)
}

/// Tape version of [`apply_relaxed`] for gradient flow: the mask enters as a
/// leaf (already feasibility-masked), the adjacency as a constant.
pub fn relaxed_on_tape(
    tape: &mut Tape,
    adjacency: &BipartiteAdjacency,
    mask_node: NodeId,
    mode: PerturbMode,
) -> NodeId {
    let a = adjacency.tensor();
    match mode {
        PerturbMode::Sat => {
            let a_const = tape.constant(a.clone());
            let flip = tape.constant(Tensor::from_vec(
                a.rows(),
                a.cols(),
                a.data().iter().map(|v| 1.0 - 2.0 * v).collect(),
            ));
            let soft = tape.mul(flip, mask_node);
            tape.add(a_const, soft)
        }
        PerturbMode::Del => {
            let a_const = tape.constant(a.clone());
            tape.sub(a_const, mask_node)
        }
        PerturbMode::Adc => {
            let a_const = tape.constant(a.clone());
            tape.concat_cols(a_const, mask_node)
        }
    }
}

/// Appended-clause count and edge budget for ADC: `m~ = ceil(fraction * m)`
/// appended all-zero columns with a budget of (mean literals per original
/// clause) * m~ edges. Callers must only use this on unsatisfiable formulas.
pub fn build_adc_extension(adjacency: &BipartiteAdjacency, clause_fraction: f64) -> (usize, f64) {
    let m = adjacency.num_clauses();
    let extra = (clause_fraction * m as f64).ceil() as usize;
    let mean_len = adjacency.num_edges() as f64 / m as f64;
    (extra, mean_len * extra as f64)
}

/// Entries a discrete edit may touch: for SAT, anything unprotected that
/// cannot create a both-polarity clause; for DEL, the present edges; for ADC
/// the whole appended block (column conflicts are repaired at sampling).
pub fn admissible_entries(
    adjacency: &BipartiteAdjacency,
    protection: Option<&ProtectionMask>,
    mode: PerturbMode,
    adc_cols: usize,
) -> Vec<(usize, usize)> {
    let rows = adjacency.rows();
    let mut out = Vec::new();
    match mode {
        PerturbMode::Sat => {
            let prot = protection.expect("SAT mode requires protection");
            for r in 0..rows {
                let opp = adjacency.opposite_row(r);
                for c in 0..adjacency.num_clauses() {
                    let blocked =
                        prot.is_protected(r, c) || (!adjacency.entry(r, c) && adjacency.entry(opp, c));
                    if !blocked {
                        out.push((r, c));
                    }
                }
            }
        }
        PerturbMode::Del => {
            for r in 0..rows {
                for c in 0..adjacency.num_clauses() {
                    if adjacency.entry(r, c) {
                        out.push((r, c));
                    }
                }
            }
        }
        PerturbMode::Adc => {
            for r in 0..rows {
                for c in 0..adc_cols {
                    out.push((r, c));
                }
            }
        }
    }
    out
}

/// Sharpened sampling probability: a logistic in the mask weight, rescaled
/// so 0 maps to 0 and 1 maps to 1 (an all-zero mask never flips anything).
pub fn sharpen(weight: f64, temperature: f64) -> f64 {
    if temperature <= 0.0 {
        return weight.clamp(0.0, 1.0);
    }
    let s = |x: f64| 1.0 / (1.0 + (-temperature * (x - 0.5)).exp());
    let lo = s(0.0);
    let hi = s(1.0);
    ((s(weight.clamp(0.0, 1.0)) - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// One discretized perturbation candidate.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub formula: CnfFormula,
    /// Number of discrete edits actually applied.
    pub flips: usize,
    pub loss: f64,
}

/// Draws `num_samples - 1` Bernoulli realizations with sharpened mask
/// probabilities plus one deterministic top-weight realization, repairs each
/// to the mode's hard constraints, trims to the budget, and returns the
/// candidate maximizing `loss_fn`.
#[allow(clippy::too_many_arguments)]
pub fn sample_discrete(
    mask: &PerturbationMask,
    adjacency: &BipartiteAdjacency,
    protection: Option<&ProtectionMask>,
    loss_fn: &mut dyn FnMut(&CnfFormula) -> f64,
    num_samples: usize,
    temperature: f64,
    budget: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SampleOutcome, PerturbError> {
    assert!(num_samples >= 1, "need at least the top-weight sample");
    let mut feasible = mask.clone();
    enforce_feasibility(&mut feasible, adjacency, protection)?;
    let weights = feasible.tensor();
    let support: Vec<(usize, usize, f64)> = {
        let mut s = Vec::new();
        for r in 0..weights.rows() {
            for c in 0..weights.cols() {
                let w = weights.get(r, c);
                if w > 0.0 {
                    s.push((r, c, w));
                }
            }
        }
        s
    };

    let mut best: Option<SampleOutcome> = None;
    for sample_idx in 0..num_samples {
        let mut flips: Vec<(usize, usize, f64)> = if sample_idx + 1 == num_samples {
            // deterministic top-weight realization
            let mut sorted = support.clone();
            sorted.sort_by(|a, b| {
                b.2.partial_cmp(&a.2)
                    .expect("mask weights are finite")
                    .then((a.0, a.1).cmp(&(b.0, b.1)))
            });
            sorted.truncate(budget.floor() as usize);
            sorted
        } else {
            support
                .iter()
                .filter(|&&(_, _, w)| rng.random::<f64>() < sharpen(w, temperature))
                .copied()
                .collect()
        };
        // trim to the budget, dropping the lowest-weight edits first
        let cap = budget.ceil() as usize;
        if flips.len() > cap {
            flips.sort_by(|a, b| {
                b.2.partial_cmp(&a.2)
                    .expect("mask weights are finite")
                    .then((a.0, a.1).cmp(&(b.0, b.1)))
            });
            flips.truncate(cap);
        }
        let (formula, applied) = apply_flips(adjacency, &feasible, &flips);
        let loss = loss_fn(&formula);
        let better = match &best {
            None => true,
            Some(b) => loss > b.loss,
        };
        if better {
            best = Some(SampleOutcome { formula, flips: applied, loss });
        }
    }
    Ok(best.expect("at least one sample"))
}

/// Applies a discrete flip set and repairs it to the mode's constraints
/// (mask weights break repair ties). Returns the formula and the number of
/// edits that survived repair.
pub fn apply_flips(
    adjacency: &BipartiteAdjacency,
    mask: &PerturbationMask,
    flips: &[(usize, usize, f64)],
) -> (CnfFormula, usize) {
    let n = adjacency.num_vars();
    match mask.mode {
        PerturbMode::Sat | PerturbMode::Del => {
            let mut matrix = adjacency.tensor().clone();
            let mut applied: Vec<(usize, usize, f64)> = Vec::new();
            for &(r, c, w) in flips {
                matrix.set(r, c, 1.0 - matrix.get(r, c));
                applied.push((r, c, w));
            }
            if mask.mode == PerturbMode::Del {
                // restore the deleted literal with the smallest mask weight in
                // any emptied clause
                for col in 0..matrix.cols() {
                    let empty = (0..matrix.rows()).all(|r| matrix.get(r, col) == 0.0);
                    if empty {
                        let mut deleted: Vec<&(usize, usize, f64)> =
                            applied.iter().filter(|&&(_, c, _)| c == col).collect();
                        deleted.sort_by(|a, b| {
                            a.2.partial_cmp(&b.2)
                                .expect("finite weights")
                                .then((a.0, a.1).cmp(&(b.0, b.1)))
                        });
                        if let Some(&&(r, c, w)) = deleted.first() {
                            matrix.set(r, c, 1.0);
                            applied.retain(|&f| f != (r, c, w));
                        }
                    }
                }
            } else {
                // resolve both-polarity clauses created by additions: undo the
                // lower-weight added flip (ties drop the negation row)
                for v in 0..n {
                    for col in 0..matrix.cols() {
                        if matrix.get(v, col) != 0.0 && matrix.get(n + v, col) != 0.0 {
                            let weight_of = |row: usize| -> Option<f64> {
                                applied
                                    .iter()
                                    .find(|&&(r, c, _)| r == row && c == col)
                                    .map(|&(_, _, w)| w)
                            };
                            let pos_added = !adjacency.entry(v, col);
                            let neg_added = !adjacency.entry(n + v, col);
                            let drop_row = match (pos_added, neg_added) {
                                (true, false) => v,
                                (false, true) => n + v,
                                (true, true) => {
                                    let wp = weight_of(v).unwrap_or(0.0);
                                    let wn = weight_of(n + v).unwrap_or(0.0);
                                    if wp < wn {
                                        v
                                    } else {
                                        n + v
                                    }
                                }
                                (false, false) => unreachable!("adjacency invariant"),
                            };
                            matrix.set(drop_row, col, 0.0);
                            applied.retain(|&(r, c, _)| !(r == drop_row && c == col));
                        }
                    }
                }
            }
            let adj = BipartiteAdjacency { num_vars: n, matrix };
            (adj.to_formula().without_empty_clauses(), applied.len())
        }
        PerturbMode::Adc => {
            let mut appended = Tensor::zeros(mask.tensor().rows(), mask.tensor().cols());
            let mut applied: Vec<(usize, usize, f64)> = Vec::new();
            for &(r, c, w) in flips {
                appended.set(r, c, 1.0);
                applied.push((r, c, w));
            }
            // both-polarity conflicts inside an appended clause: drop the
            // lower-weight literal, ties drop the negation
            for v in 0..n {
                for col in 0..appended.cols() {
                    if appended.get(v, col) != 0.0 && appended.get(n + v, col) != 0.0 {
                        let weight_of = |row: usize| -> f64 {
                            applied
                                .iter()
                                .find(|&&(r, c, _)| r == row && c == col)
                                .map(|&(_, _, w)| w)
                                .unwrap_or(0.0)
                        };
                        let drop_row = if weight_of(v) < weight_of(n + v) { v } else { n + v };
                        appended.set(drop_row, col, 0.0);
                        applied.retain(|&(r, c, _)| !(r == drop_row && c == col));
                    }
                }
            }
            let base = adjacency.to_formula();
            let mut clauses: Vec<Vec<Lit>> = base.clauses().to_vec();
            for col in 0..appended.cols() {
                let mut clause = Vec::new();
                for v in 0..n {
                    if appended.get(v, col) != 0.0 {
                        clause.push(Lit::new(v as i32 + 1));
                    }
                }
                for v in 0..n {
                    if appended.get(n + v, col) != 0.0 {
                        clause.push(Lit::new(-(v as i32 + 1)));
                    }
                }
                if !clause.is_empty() {
                    clauses.push(clause);
                }
            }
            let formula =
                CnfFormula::new(n, clauses).expect("repaired clauses satisfy the invariants");
            (formula, applied.len())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{evaluate_assignment, Assignment};
    use crate::sat_oracle;
    use rand::SeedableRng;

    fn formula(num_vars: usize, clauses: &[Vec<i32>]) -> CnfFormula {
        CnfFormula::from_dimacs_clauses(num_vars, clauses).unwrap()
    }

    #[test]
    fn adjacency_round_trips_up_to_canonical_order() {
        let f = formula(3, &[vec![1, -2], vec![3], vec![-1, 2, -3]]);
        let adj = BipartiteAdjacency::from_formula(&f);
        let back = adj.to_formula();
        assert_eq!(back.num_vars(), 3);
        let as_sets = |g: &CnfFormula| -> Vec<Vec<i32>> {
            g.clauses()
                .iter()
                .map(|c| {
                    let mut codes: Vec<i32> = c.iter().map(|l| l.code()).collect();
                    codes.sort_unstable();
                    codes
                })
                .collect()
        };
        assert_eq!(as_sets(&f), as_sets(&back));
        assert_eq!(adj.num_edges(), 6);
    }

    #[test]
    fn adjacency_never_holds_both_polarities() {
        let f = formula(4, &[vec![1, 2, -3], vec![-1, 4], vec![2, 3]]);
        let adj = BipartiteAdjacency::from_formula(&f);
        for v in 0..4 {
            for j in 0..3 {
                assert!(
                    !(adj.entry(v, j) && adj.entry(4 + v, j)),
                    "both polarities of v{} in clause {}",
                    v + 1,
                    j
                );
            }
        }
    }

    #[test]
    fn protection_follows_the_witness() {
        // (v1 | v2) & (!v1) with witness v1=F, v2=T
        let f = formula(2, &[vec![1, 2], vec![-1]]);
        let adj = BipartiteAdjacency::from_formula(&f);
        let prot = build_protection_mask(&adj, &[false, true]).unwrap();
        // protected edges: (v2, clause0) = row 1, and (!v1, clause1) = row 2
        assert!(prot.is_protected(1, 0));
        assert!(prot.is_protected(2, 1));
        let total: f64 = prot.tensor().data().iter().sum();
        assert_eq!(total, 2.0);
    }

    #[test]
    fn protection_rejects_a_non_witness() {
        let f = formula(2, &[vec![1, 2], vec![-1]]);
        let adj = BipartiteAdjacency::from_formula(&f);
        let err = build_protection_mask(&adj, &[true, false]).unwrap_err();
        assert_eq!(err, PerturbError::WitnessDoesNotSatisfy(1));
    }

    #[test]
    fn projection_examples() {
        // already feasible
        let mut m = PerturbationMask::from_tensor(
            PerturbMode::Sat,
            Tensor::from_vec(1, 2, vec![0.3, 0.2]),
        );
        project_budget(&mut m, 2.0);
        assert_eq!(m.tensor().data(), &[0.3, 0.2]);

        // clipping alone suffices
        let mut m = PerturbationMask::from_tensor(
            PerturbMode::Sat,
            Tensor::from_vec(1, 2, vec![1.5, -0.2]),
        );
        project_budget(&mut m, 1.0);
        assert_eq!(m.tensor().data(), &[1.0, 0.0]);

        // uniform shift mu = 0.4
        let mut m = PerturbationMask::from_tensor(
            PerturbMode::Sat,
            Tensor::from_vec(1, 3, vec![0.9, 0.9, 0.9]),
        );
        project_budget(&mut m, 1.5);
        for &v in m.tensor().data() {
            assert!((v - 0.5).abs() < 1e-6);
        }
    }

    /// Independent bisection-based Euclidean projection oracle.
    fn bisection_projection(x: &[f64], delta: f64) -> Vec<f64> {
        let project = |mu: f64| -> Vec<f64> { x.iter().map(|v| (v - mu).clamp(0.0, 1.0)).collect() };
        let sum = |v: &[f64]| -> f64 { v.iter().sum() };
        if sum(&project(0.0)) <= delta {
            return project(0.0);
        }
        let mut lo = 0.0f64;
        let mut hi = x.iter().cloned().fold(0.0f64, f64::max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sum(&project(mid)) > delta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        project(hi)
    }

    #[test]
    fn projection_matches_bisection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for round in 0..1000 {
            let d = rng.random_range(1..=40);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..2.0)).collect();
            let delta = rng.random_range(0.0..(d as f64));
            let mut m = PerturbationMask::from_tensor(
                PerturbMode::Sat,
                Tensor::from_vec(1, d, x.clone()),
            );
            project_budget(&mut m, delta);
            let oracle = bisection_projection(&x, delta);
            for (got, want) in m.tensor().data().iter().zip(&oracle) {
                assert!(
                    (got - want).abs() <= 1e-5,
                    "round {round}: {got} vs oracle {want}"
                );
            }
            let total: f64 = m.tensor().data().iter().sum();
            assert!(total <= delta + 1e-6);
            assert!(m.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn relaxed_identity_when_mask_is_zero() {
        let f = formula(3, &[vec![1, -2], vec![2, 3], vec![-3]]);
        let r = sat_oracle::solve(&f, None).unwrap();
        let witness = r.witness.unwrap();
        let adj = BipartiteAdjacency::from_formula(&f);
        let prot = build_protection_mask(&adj, witness.values()).unwrap();
        let mask = PerturbationMask::zeros(PerturbMode::Sat, adj.rows(), adj.num_clauses());
        let relaxed = apply_relaxed(&adj, &mask, Some(&prot), true).unwrap();
        assert_eq!(&relaxed, adj.tensor());
    }

    #[test]
    fn del_keeps_single_literal_clauses_intact() {
        let f = formula(2, &[vec![1], vec![-1, 2]]);
        let adj = BipartiteAdjacency::from_formula(&f);
        let mut t = Tensor::zeros(4, 2);
        t.set(0, 0, 0.9); // try to delete the only literal of clause 0
        t.set(2, 1, 0.4);
        let mask = PerturbationMask::from_tensor(PerturbMode::Del, t);
        let relaxed = apply_relaxed(&adj, &mask, None, false).unwrap();
        assert_eq!(relaxed.get(0, 0), 1.0, "single-literal clause must keep weight 1");
        assert!((relaxed.get(2, 1) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn sat_relaxation_respects_protection_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = formula(4, &[vec![1, 2], vec![-1, 3], vec![2, -4], vec![-2, 4]]);
        let r = sat_oracle::solve(&f, None).unwrap();
        let witness = r.witness.unwrap();
        let adj = BipartiteAdjacency::from_formula(&f);
        let prot = build_protection_mask(&adj, witness.values()).unwrap();
        for _ in 0..100 {
            let mut t = Tensor::zeros(adj.rows(), adj.num_clauses());
            for v in t.data_mut() {
                *v = rng.random::<f64>();
            }
            let mask = PerturbationMask::from_tensor(PerturbMode::Sat, t);
            let relaxed = apply_relaxed(&adj, &mask, Some(&prot), true).unwrap();
            for r_ in 0..adj.rows() {
                for c in 0..adj.num_clauses() {
                    let v = relaxed.get(r_, c);
                    assert!((0.0..=1.0).contains(&v));
                    if prot.is_protected(r_, c) {
                        assert_eq!(v, adj.tensor().get(r_, c));
                    }
                }
            }
        }
    }

    #[test]
    fn mode_label_mismatch_is_rejected() {
        let f = formula(2, &[vec![1, 2]]);
        let adj = BipartiteAdjacency::from_formula(&f);
        let mask = PerturbationMask::zeros(PerturbMode::Del, adj.rows(), adj.num_clauses());
        assert_eq!(
            apply_relaxed(&adj, &mask, None, true).unwrap_err(),
            PerturbError::ModeLabelMismatch
        );
    }

    #[test]
    fn adc_extension_arithmetic() {
        let f = formula(4, &vec![vec![1, 2, 3]; 8]);
        let adj = BipartiteAdjacency::from_formula(&f);
        let (extra, budget) = build_adc_extension(&adj, 0.25);
        assert_eq!(extra, 2);
        assert!((budget - 6.0).abs() < 1e-12, "24 literals / 8 clauses * 2 = 6");
    }

    #[test]
    fn sharpen_maps_the_unit_interval_onto_itself() {
        assert_eq!(sharpen(0.0, 5.0), 0.0);
        assert_eq!(sharpen(1.0, 5.0), 1.0);
        assert!((sharpen(0.5, 5.0) - 0.5).abs() < 1e-12);
        // sharpening pushes weights toward the extremes
        assert!(sharpen(0.3, 5.0) < 0.3);
        assert!(sharpen(0.7, 5.0) > 0.7);
        let mut last = 0.0;
        for i in 0..=20 {
            let p = sharpen(i as f64 / 20.0, 5.0);
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn zero_mask_samples_the_input_formula() {
        let f = formula(3, &[vec![1, -2], vec![2, 3], vec![-3, 1]]);
        let r = sat_oracle::solve(&f, None).unwrap();
        let witness = r.witness.unwrap();
        let adj = BipartiteAdjacency::from_formula(&f);
        let prot = build_protection_mask(&adj, witness.values()).unwrap();
        let mask = PerturbationMask::zeros(PerturbMode::Sat, adj.rows(), adj.num_clauses());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = sample_discrete(
            &mask,
            &adj,
            Some(&prot),
            &mut |_f| 0.0,
            20,
            5.0,
            3.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.flips, 0);
        let as_sets = |g: &CnfFormula| -> Vec<Vec<i32>> {
            g.clauses()
                .iter()
                .map(|c| {
                    let mut v: Vec<i32> = c.iter().map(|l| l.code()).collect();
                    v.sort_unstable();
                    v
                })
                .collect()
        };
        assert_eq!(as_sets(&out.formula), as_sets(&f));
    }

    #[test]
    fn one_hot_mask_forces_the_single_flip() {
        let f = formula(3, &[vec![1, 2], vec![-1, 3]]);
        let r = sat_oracle::solve(&f, None).unwrap();
        let witness = r.witness.unwrap();
        let adj = BipartiteAdjacency::from_formula(&f);
        let prot = build_protection_mask(&adj, witness.values()).unwrap();
        // choose an admissible unprotected entry
        let entries = admissible_entries(&adj, Some(&prot), PerturbMode::Sat, 0);
        let (r0, c0) = entries[0];
        let mut t = Tensor::zeros(adj.rows(), adj.num_clauses());
        t.set(r0, c0, 1.0);
        let mask = PerturbationMask::from_tensor(PerturbMode::Sat, t);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = sample_discrete(
            &mask,
            &adj,
            Some(&prot),
            &mut |_f| 0.0,
            1, // top-k sample only
            5.0,
            1.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.flips, 1);
    }

    fn random_formula(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CnfFormula {
        let mut clauses = Vec::new();
        for _ in 0..m {
            let k = rng.random_range(1..=3.min(n));
            let mut vars: Vec<usize> = (0..n).collect();
            for i in 0..k {
                let j = rng.random_range(i..n);
                vars.swap(i, j);
            }
            clauses.push(
                vars[..k]
                    .iter()
                    .map(|&v| if rng.random() { v as i32 + 1 } else { -(v as i32 + 1) })
                    .collect::<Vec<i32>>(),
            );
        }
        CnfFormula::from_dimacs_clauses(n, &clauses).unwrap()
    }

    /// Random projected masks, sampled and oracle-verified across all modes.
    #[test]
    fn sampled_outputs_preserve_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut sat_checked = 0;
        let mut del_checked = 0;
        let mut adc_checked = 0;
        while sat_checked + del_checked + adc_checked < 150 {
            let m = rng.random_range(6..=24);
            let f = random_formula(&mut rng, 6, m);
            let solved = sat_oracle::solve(&f, None).unwrap();
            let adj = BipartiteAdjacency::from_formula(&f);
            if solved.satisfiable {
                let witness = solved.witness.unwrap();
                let prot = build_protection_mask(&adj, witness.values()).unwrap();
                let mut t = Tensor::zeros(adj.rows(), adj.num_clauses());
                for v in t.data_mut() {
                    *v = rng.random::<f64>();
                }
                let mut mask = PerturbationMask::from_tensor(PerturbMode::Sat, t);
                let budget = (0.2 * adj.num_edges() as f64).max(1.0);
                enforce_feasibility(&mut mask, &adj, Some(&prot)).unwrap();
                project_budget(&mut mask, budget);
                let out = sample_discrete(
                    &mask, &adj, Some(&prot), &mut |_f| 0.0, 5, 5.0, budget, &mut rng,
                )
                .unwrap();
                assert!(out.flips <= budget.ceil() as usize);
                let verdict = sat_oracle::solve(&out.formula, None).unwrap();
                assert!(verdict.satisfiable, "SAT edit flipped the label");
                // the original witness still satisfies the perturbed formula
                assert!(evaluate_assignment(
                    &out.formula,
                    &Assignment::new(witness.values().to_vec())
                )
                .unwrap());
                sat_checked += 1;
            } else {
                // DEL
                let mut t = Tensor::zeros(adj.rows(), adj.num_clauses());
                for v in t.data_mut() {
                    *v = rng.random::<f64>();
                }
                let mut mask = PerturbationMask::from_tensor(PerturbMode::Del, t);
                let budget = (0.2 * adj.num_edges() as f64).max(1.0);
                enforce_feasibility(&mut mask, &adj, None).unwrap();
                project_budget(&mut mask, budget);
                let out = sample_discrete(
                    &mask, &adj, None, &mut |_f| 0.0, 5, 5.0, budget, &mut rng,
                )
                .unwrap();
                assert!(out.flips <= budget.ceil() as usize);
                let verdict = sat_oracle::solve(&out.formula, None).unwrap();
                assert!(!verdict.satisfiable, "DEL edit flipped the label");
                // subsets: every output clause is a subset of some input clause
                assert!(out.formula.clauses().iter().all(|c| !c.is_empty()));
                del_checked += 1;

                // ADC on the same unsat formula
                let (extra, budget) = build_adc_extension(&adj, 0.25);
                let mut t = Tensor::zeros(adj.rows(), extra);
                for v in t.data_mut() {
                    *v = rng.random::<f64>();
                }
                let mut mask = PerturbationMask::from_tensor(PerturbMode::Adc, t);
                enforce_feasibility(&mut mask, &adj, None).unwrap();
                project_budget(&mut mask, budget);
                let out = sample_discrete(
                    &mask, &adj, None, &mut |_f| 0.0, 5, 5.0, budget, &mut rng,
                )
                .unwrap();
                let verdict = sat_oracle::solve(&out.formula, None).unwrap();
                assert!(!verdict.satisfiable, "ADC edit flipped the label");
                // the original clauses survive bitwise
                let base = adj.to_formula();
                for (orig, kept) in base.clauses().iter().zip(out.formula.clauses()) {
                    assert_eq!(orig, kept);
                }
                adc_checked += 1;
            }
        }
        assert!(sat_checked > 20 && del_checked > 20 && adc_checked > 20);
    }

    #[test]
    fn del_outputs_are_clause_subsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mut checked = 0;
        while checked < 30 {
            let f = random_formula(&mut rng, 5, 18);
            if sat_oracle::solve(&f, None).unwrap().satisfiable {
                continue;
            }
            let adj = BipartiteAdjacency::from_formula(&f);
            let mut t = Tensor::zeros(adj.rows(), adj.num_clauses());
            for v in t.data_mut() {
                *v = rng.random::<f64>();
            }
            let mut mask = PerturbationMask::from_tensor(PerturbMode::Del, t);
            enforce_feasibility(&mut mask, &adj, None).unwrap();
            project_budget(&mut mask, 4.0);
            let out = sample_discrete(&mask, &adj, None, &mut |_f| 0.0, 5, 5.0, 4.0, &mut rng)
                .unwrap();
            // clause count is preserved (deletion only, no drops) and each
            // clause is a subset of its original
            assert_eq!(out.formula.num_clauses(), f.num_clauses());
            for (orig, kept) in f.clauses().iter().zip(out.formula.clauses()) {
                assert!(!kept.is_empty());
                for lit in kept {
                    assert!(orig.contains(lit), "DEL introduced literal {}", lit.code());
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn relaxed_on_tape_matches_plain_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let f = formula(4, &[vec![1, 2], vec![-1, 3], vec![2, -4], vec![-2, 4]]);
        let adj = BipartiteAdjacency::from_formula(&f);
        let witness = sat_oracle::solve(&f, None).unwrap().witness.unwrap();
        let prot = build_protection_mask(&adj, witness.values()).unwrap();
        for mode in [PerturbMode::Sat, PerturbMode::Del] {
            let mut t = Tensor::zeros(adj.rows(), adj.num_clauses());
            for v in t.data_mut() {
                *v = rng.random::<f64>();
            }
            let mut mask = PerturbationMask::from_tensor(mode, t);
            let prot_opt = if mode == PerturbMode::Sat { Some(&prot) } else { None };
            enforce_feasibility(&mut mask, &adj, prot_opt).unwrap();
            let plain =
                apply_relaxed(&adj, &mask, prot_opt, mode.expected_label()).unwrap();
            let mut tape = Tape::new();
            let m_node = tape.leaf(mask.tensor().clone());
            let on_tape = relaxed_on_tape(&mut tape, &adj, m_node, mode);
            assert_eq!(tape.value(on_tape), &plain);
        }
    }
}
