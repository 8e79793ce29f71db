//! Exact small-scale SAT solving used to label generated data and to certify
//! perturbation soundness.
//!
//! The solver is a plain DPLL with unit propagation and pure-literal
//! elimination, branching on the most frequent unassigned variable (ties
//! broken by lowest index). It is deterministic, adequate for a few dozen
//! variables, and every witness is verified internally before it is returned.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::instances::{evaluate_assignment, Assignment, CnfFormula, Lit};

#[derive(Debug, Error, PartialEq)]
pub enum SatOracleError {
    #[error("decision limit of {0} exceeded")]
    DecisionLimitExceeded(u64),
    #[error("operation requires an unsatisfiable formula")]
    FormulaSatisfiable,
}

/// Search statistics for one `solve` call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub decisions: u64,
    pub propagations: u64,
}

/// Outcome of an exact solve: verdict, witness (iff satisfiable), counters
/// and wall time.
#[derive(Debug, Clone)]
pub struct SatResult {
    pub satisfiable: bool,
    pub witness: Option<Assignment>,
    pub stats: SolveStats,
    pub elapsed: Duration,
}

#[derive(Clone, Copy, PartialEq)]
enum Value {
    Unset,
    True,
    False,
}

struct Searcher<'a> {
    clauses: &'a [Vec<Lit>],
    values: Vec<Value>,
    stats: SolveStats,
    decision_limit: Option<u64>,
}

enum Search {
    Sat,
    Unsat,
    LimitHit,
}

impl<'a> Searcher<'a> {
    fn lit_value(&self, lit: Lit) -> Value {
        match (self.values[lit.var()], lit.is_positive()) {
            (Value::Unset, _) => Value::Unset,
            (Value::True, pos) => {
                if pos {
                    Value::True
                } else {
                    Value::False
                }
            }
            (Value::False, pos) => {
                if pos {
                    Value::False
                } else {
                    Value::True
                }
            }
        }
    }

    /// Propagates unit clauses and pure literals to fixpoint. Pushes every
    /// assignment onto `trail` for undo. Returns false on conflict.
    fn propagate(&mut self, trail: &mut Vec<usize>) -> bool {
        loop {
            let mut changed = false;
            for clause in self.clauses {
                if clause.is_empty() {
                    continue; // empty clauses count as true
                }
                let mut unassigned = None;
                let mut satisfied = false;
                let mut unset = 0usize;
                for &lit in clause {
                    match self.lit_value(lit) {
                        Value::True => {
                            satisfied = true;
                            break;
                        }
                        Value::Unset => {
                            unset += 1;
                            unassigned = Some(lit);
                        }
                        Value::False => {}
                    }
                }
                if satisfied {
                    continue;
                }
                if unset == 0 {
                    return false;
                }
                if unset == 1 {
                    self.assign(unassigned.unwrap(), trail);
                    changed = true;
                }
            }
            if !changed {
                // Pure literals: variables occurring with a single polarity
                // among not-yet-satisfied clauses.
                let n = self.values.len();
                let mut pos = vec![false; n];
                let mut neg = vec![false; n];
                for clause in self.clauses {
                    if clause.iter().any(|&l| self.lit_value(l) == Value::True) {
                        continue;
                    }
                    for &lit in clause {
                        if self.lit_value(lit) == Value::Unset {
                            if lit.is_positive() {
                                pos[lit.var()] = true;
                            } else {
                                neg[lit.var()] = true;
                            }
                        }
                    }
                }
                for v in 0..n {
                    if self.values[v] == Value::Unset && (pos[v] ^ neg[v]) {
                        let lit = if pos[v] {
                            Lit::new(v as i32 + 1)
                        } else {
                            Lit::new(-(v as i32 + 1))
                        };
                        self.assign(lit, trail);
                        changed = true;
                    }
                }
            }
            if !changed {
                return true;
            }
        }
    }

    fn assign(&mut self, lit: Lit, trail: &mut Vec<usize>) {
        self.values[lit.var()] = if lit.is_positive() { Value::True } else { Value::False };
        self.stats.propagations += 1;
        trail.push(lit.var());
    }

    fn all_clauses_satisfied(&self) -> bool {
        self.clauses.iter().all(|clause| {
            clause.is_empty() || clause.iter().any(|&l| self.lit_value(l) == Value::True)
        })
    }

    /// Most frequent unassigned variable over unsatisfied clauses, ties
    /// broken by lowest index.
    fn pick_branch_var(&self) -> Option<usize> {
        let n = self.values.len();
        let mut count = vec![0u32; n];
        for clause in self.clauses {
            if clause.iter().any(|&l| self.lit_value(l) == Value::True) {
                continue;
            }
            for &lit in clause {
                if self.lit_value(lit) == Value::Unset {
                    count[lit.var()] += 1;
                }
            }
        }
        (0..n)
            .filter(|&v| self.values[v] == Value::Unset && count[v] > 0)
            .max_by(|&a, &b| count[a].cmp(&count[b]).then(b.cmp(&a)))
    }

    fn search(&mut self) -> Search {
        let mut trail = Vec::new();
        if !self.propagate(&mut trail) {
            self.undo(&trail);
            return Search::Unsat;
        }
        if self.all_clauses_satisfied() {
            return Search::Sat;
        }
        let var = match self.pick_branch_var() {
            Some(v) => v,
            None => return Search::Sat,
        };
        if let Some(limit) = self.decision_limit {
            if self.stats.decisions >= limit {
                self.undo(&trail);
                return Search::LimitHit;
            }
        }
        self.stats.decisions += 1;
        for lit in [Lit::new(var as i32 + 1), Lit::new(-(var as i32 + 1))] {
            let mut branch_trail = Vec::new();
            self.assign(lit, &mut branch_trail);
            match self.search() {
                Search::Sat => return Search::Sat,
                Search::Unsat => self.undo(&branch_trail),
                Search::LimitHit => {
                    self.undo(&branch_trail);
                    self.undo(&trail);
                    return Search::LimitHit;
                }
            }
        }
        self.undo(&trail);
        Search::Unsat
    }

    fn undo(&mut self, trail: &[usize]) {
        for &v in trail {
            self.values[v] = Value::Unset;
        }
    }
}

/// Solves a formula exactly, optionally bounded by a decision limit.
///
/// Deterministic given the fixed branching order; the witness is checked
/// against the formula before it is returned.
pub fn solve(formula: &CnfFormula, budget: Option<u64>) -> Result<SatResult, SatOracleError> {
    let start = Instant::now();
    let mut searcher = Searcher {
        clauses: formula.clauses(),
        values: vec![Value::Unset; formula.num_vars()],
        stats: SolveStats::default(),
        decision_limit: budget,
    };
    match searcher.search() {
        Search::LimitHit => Err(SatOracleError::DecisionLimitExceeded(budget.unwrap_or(0))),
        Search::Sat => {
            let values: Vec<bool> = searcher
                .values
                .iter()
                .map(|v| matches!(v, Value::True))
                .collect();
            let witness = Assignment::new(values);
            debug_assert!(evaluate_assignment(formula, &witness).unwrap());
            Ok(SatResult {
                satisfiable: true,
                witness: Some(witness),
                stats: searcher.stats,
                elapsed: start.elapsed(),
            })
        }
        Search::Unsat => Ok(SatResult {
            satisfiable: false,
            witness: None,
            stats: searcher.stats,
            elapsed: start.elapsed(),
        }),
    }
}

/// Returns clause indices whose conjunction is unsatisfiable, shrunk by a
/// single deletion pass: drop a clause, re-solve, keep it only if dropping
/// makes the rest satisfiable. Not necessarily minimal.
pub fn find_unsat_core_clauses(formula: &CnfFormula) -> Result<Vec<usize>, SatOracleError> {
    let verdict = solve(formula, None)?;
    if verdict.satisfiable {
        return Err(SatOracleError::FormulaSatisfiable);
    }
    let mut core: Vec<usize> = (0..formula.num_clauses()).collect();
    for candidate in 0..formula.num_clauses() {
        let without: Vec<Vec<Lit>> = core
            .iter()
            .filter(|&&i| i != candidate)
            .map(|&i| formula.clauses()[i].clone())
            .collect();
        let sub = CnfFormula::new(formula.num_vars(), without).expect("subset of valid formula");
        if !solve(&sub, None)?.satisfiable {
            core.retain(|&i| i != candidate);
        }
    }
    Ok(core)
}
