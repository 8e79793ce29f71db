//! Core domain types for SAT and TSP problems, solutions and decision labels.
//!
//! Variables are 1-indexed in serialized form (DIMACS convention) and
//! 0-indexed internally; the sign of a literal encodes its polarity. All types
//! are immutable value objects after construction and safe to share across
//! workers.

use thiserror::Error;

/// Absolute tolerance for real comparisons in invariant checks.
pub const REAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum InstanceError {
    #[error("literal {0} references a variable outside [1, {1}]")]
    LiteralOutOfRange(i32, usize),
    #[error("clause {0} contains variable {1} more than once")]
    DuplicateVariable(usize, usize),
    #[error("assignment has {0} values but the formula has {1} variables")]
    AssignmentLength(usize, usize),
    #[error("tour has {0} nodes but the instance has {1}")]
    TourLength(usize, usize),
    #[error("tour is not a permutation: node {0} repeated or missing")]
    NotAPermutation(usize),
    #[error("weight matrix must be square and symmetric with zero diagonal")]
    MalformedWeights,
    #[error("weights disagree with coordinates at ({0}, {1})")]
    WeightsCoordsMismatch(usize, usize),
    #[error("coordinate ({0}, {1}) outside the unit square")]
    CoordOutOfRange(f64, f64),
    #[error("optimal tour cost must be positive")]
    ZeroOptimalCost,
    #[error("instance needs at least {0} nodes")]
    TooFewNodes(usize),
}

/// A literal: a 1-indexed variable with a polarity, stored as a nonzero `i32`
/// whose sign is the polarity (DIMACS encoding).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Lit(i32);

impl Lit {
    /// Builds a literal from its DIMACS encoding. Panics on zero.
    pub fn new(code: i32) -> Self {
        assert!(code != 0, "literal code must be nonzero");
        Lit(code)
    }

    /// 0-indexed variable.
    pub fn var(self) -> usize {
        self.0.unsigned_abs() as usize - 1
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    /// DIMACS encoding (signed, 1-indexed).
    pub fn code(self) -> i32 {
        self.0
    }

    pub fn negated(self) -> Self {
        Lit(-self.0)
    }

    /// True iff the assignment makes this literal true.
    pub fn satisfied_by(self, values: &[bool]) -> bool {
        values[self.var()] == self.is_positive()
    }
}

/// A boolean formula in conjunctive normal form.
///
/// Invariants: every literal references a variable in `[1, num_vars]` and no
/// clause mentions the same variable twice in either polarity. Empty clauses
/// may exist only transiently inside perturbation ops; serialized formulas
/// carry none (an empty clause counts as true and is dropped).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnfFormula {
    num_vars: usize,
    clauses: Vec<Vec<Lit>>,
}

impl CnfFormula {
    pub fn new(num_vars: usize, clauses: Vec<Vec<Lit>>) -> Result<Self, InstanceError> {
        for (ci, clause) in clauses.iter().enumerate() {
            let mut seen = vec![false; num_vars];
            for lit in clause {
                if lit.var() >= num_vars {
                    return Err(InstanceError::LiteralOutOfRange(lit.code(), num_vars));
                }
                if seen[lit.var()] {
                    return Err(InstanceError::DuplicateVariable(ci, lit.var() + 1));
                }
                seen[lit.var()] = true;
            }
        }
        Ok(CnfFormula { num_vars, clauses })
    }

    /// Convenience constructor from DIMACS-encoded literals.
    pub fn from_dimacs_clauses(num_vars: usize, clauses: &[Vec<i32>]) -> Result<Self, InstanceError> {
        let clauses = clauses
            .iter()
            .map(|c| c.iter().map(|&l| Lit::new(l)).collect())
            .collect();
        Self::new(num_vars, clauses)
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }

    /// Total number of literal occurrences (edges of the bipartite view).
    pub fn num_literals(&self) -> usize {
        self.clauses.iter().map(Vec::len).sum()
    }

    pub fn clauses(&self) -> &[Vec<Lit>] {
        &self.clauses
    }

    /// Drops empty clauses (they evaluate to true).
    pub fn without_empty_clauses(&self) -> CnfFormula {
        CnfFormula {
            num_vars: self.num_vars,
            clauses: self.clauses.iter().filter(|c| !c.is_empty()).cloned().collect(),
        }
    }
}

/// A truth assignment, one value per variable of the paired formula.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    values: Vec<bool>,
}

impl Assignment {
    pub fn new(values: Vec<bool>) -> Self {
        Assignment { values }
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Decision label for the satisfiability problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SatDecisionLabel {
    pub satisfiable: bool,
}

/// True iff every nonempty clause contains at least one satisfied literal.
/// Empty clauses count as true.
pub fn evaluate_assignment(
    formula: &CnfFormula,
    assignment: &Assignment,
) -> Result<bool, InstanceError> {
    if assignment.len() != formula.num_vars() {
        return Err(InstanceError::AssignmentLength(
            assignment.len(),
            formula.num_vars(),
        ));
    }
    Ok(formula.clauses().iter().all(|clause| {
        clause.is_empty() || clause.iter().any(|lit| lit.satisfied_by(assignment.values()))
    }))
}

/// A weighted TSP instance: optional unit-square coordinates plus a full
/// symmetric nonnegative weight matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TspInstance {
    coords: Option<Vec<[f64; 2]>>,
    weights: Vec<Vec<f64>>,
    metric: bool,
}

impl TspInstance {
    /// Euclidean instance from unit-square coordinates; weights are derived.
    pub fn from_coords(coords: Vec<[f64; 2]>) -> Result<Self, InstanceError> {
        if coords.len() < 3 {
            return Err(InstanceError::TooFewNodes(3));
        }
        for &[x, y] in &coords {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(InstanceError::CoordOutOfRange(x, y));
            }
        }
        let n = coords.len();
        let mut weights = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = euclidean(coords[i], coords[j]);
                weights[i][j] = d;
                weights[j][i] = d;
            }
        }
        Ok(TspInstance { coords: Some(coords), weights, metric: true })
    }

    /// Non-euclidean instance from an explicit weight matrix.
    pub fn from_weights(weights: Vec<Vec<f64>>, metric: bool) -> Result<Self, InstanceError> {
        let n = weights.len();
        if n < 3 {
            return Err(InstanceError::TooFewNodes(3));
        }
        for (i, row) in weights.iter().enumerate() {
            if row.len() != n || weights[i][i] != 0.0 {
                return Err(InstanceError::MalformedWeights);
            }
            for (j, &w) in row.iter().enumerate() {
                if w < 0.0 || (weights[j][i] - w).abs() > REAL_TOL {
                    return Err(InstanceError::MalformedWeights);
                }
            }
        }
        Ok(TspInstance { coords: None, weights, metric })
    }

    pub fn num_nodes(&self) -> usize {
        self.weights.len()
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i][j]
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn is_metric(&self) -> bool {
        self.metric
    }

    /// Checks the triangle inequality over all triples (on demand; O(n^3)).
    pub fn triangle_inequality_holds(&self) -> bool {
        let n = self.num_nodes();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if self.weights[i][j] > self.weights[i][k] + self.weights[k][j] + REAL_TOL {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// New instance with `point` appended; euclidean instances extend their
    /// weight matrix from the coordinates.
    pub fn with_extra_coord(&self, point: [f64; 2]) -> Result<Self, InstanceError> {
        let mut coords = self
            .coords
            .clone()
            .expect("with_extra_coord requires a coordinate instance");
        coords.push(point);
        Self::from_coords(coords)
    }

    /// New instance with one node appended via its weights to existing nodes.
    pub fn with_extra_weights(&self, to_existing: &[f64], metric: bool) -> Result<Self, InstanceError> {
        let n = self.num_nodes();
        assert_eq!(to_existing.len(), n, "need one weight per existing node");
        let mut weights = self.weights.clone();
        for (row, &w) in weights.iter_mut().zip(to_existing) {
            row.push(w);
        }
        let mut last = to_existing.to_vec();
        last.push(0.0);
        weights.push(last);
        Self::from_weights(weights, metric)
    }
}

fn euclidean(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// A closed tour: a permutation of the node indices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tour {
    order: Vec<usize>,
}

impl Tour {
    pub fn new(order: Vec<usize>) -> Result<Self, InstanceError> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &node in &order {
            if node >= n || seen[node] {
                return Err(InstanceError::NotAPermutation(node));
            }
            seen[node] = true;
        }
        Ok(Tour { order })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Consecutive node pairs including the closing edge.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.order.len();
        (0..n).map(move |i| (self.order[i], self.order[(i + 1) % n]))
    }

    /// Symmetric 0/1 edge indicator matrix of the closed tour.
    pub fn edge_indicator(&self) -> Vec<Vec<f64>> {
        let n = self.order.len();
        let mut m = vec![vec![0.0; n]; n];
        for (a, b) in self.edges() {
            m[a][b] = 1.0;
            m[b][a] = 1.0;
        }
        m
    }
}

/// Decision variant of a TSP instance: does a tour of cost at most
/// `cost_query` exist?
#[derive(Debug, Clone, PartialEq)]
pub struct TspDecisionInstance {
    pub instance: TspInstance,
    pub cost_query: f64,
    pub label: bool,
}

/// Cost of the closed cycle visiting the nodes in tour order.
pub fn tour_cost(instance: &TspInstance, tour: &Tour) -> Result<f64, InstanceError> {
    if tour.len() != instance.num_nodes() {
        return Err(InstanceError::TourLength(tour.len(), instance.num_nodes()));
    }
    Ok(tour.edges().map(|(a, b)| instance.weight(a, b)).sum())
}

/// Relative excess cost of `predicted` over `optimal`: |c(pred) - c(opt)| / c(opt).
pub fn optimality_gap(
    predicted: &Tour,
    optimal: &Tour,
    instance: &TspInstance,
) -> Result<f64, InstanceError> {
    let c_pred = tour_cost(instance, predicted)?;
    let c_opt = tour_cost(instance, optimal)?;
    if c_opt <= 0.0 {
        return Err(InstanceError::ZeroOptimalCost);
    }
    Ok((c_pred - c_opt).abs() / c_opt)
}
