//! Reproducible instance generators: paired SAT formulas (greedily add
//! random clauses until unsatisfiable; dropping the last clause gives the
//! satisfiable twin) and unit-square TSP instances with dual decision labels.
//!
//! Generation is deterministic under a fixed seed: every instance draws from
//! its own stream derived from the root seed and its index, so datasets are
//! reproducible regardless of work order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::{Assignment, CnfFormula, Lit, Tour, TspDecisionInstance, TspInstance};
use crate::sat_oracle;
use crate::tsp_oracle::{self, HELD_KARP_MAX_NODES};

/// Decision budget per oracle call during generation; exceeding it retries
/// the whole pair with a fresh draw.
const GEN_DECISION_LIMIT: u64 = 200_000;
const GEN_MAX_RETRIES: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum DatagenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("oracle budget exhausted {0} times; raise the limit or shrink the range")]
    RetriesExhausted(usize),
}

/// Paired-formula generator settings. Clause sizes follow
/// base + Bernoulli(p_bernoulli) + Geometric(p_geometric), capped at the
/// variable count.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SatGenConfig {
    pub var_range: (usize, usize),
    pub clause_size_base: usize,
    pub clause_size_bernoulli: f64,
    pub clause_size_geometric: f64,
    pub pair_count: usize,
    pub seed: u64,
}

impl Default for SatGenConfig {
    fn default() -> Self {
        SatGenConfig {
            var_range: (10, 20),
            clause_size_base: 2,
            clause_size_bernoulli: 0.3,
            clause_size_geometric: 0.4,
            pair_count: 100,
            seed: 0,
        }
    }
}

impl SatGenConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.var_range.0 < 1 || self.var_range.0 > self.var_range.1 {
            return Err(DatagenError::InvalidConfig("var_range must satisfy 1 <= lo <= hi".into()));
        }
        if !(0.0..=1.0).contains(&self.clause_size_bernoulli) {
            return Err(DatagenError::InvalidConfig("bernoulli parameter outside [0, 1]".into()));
        }
        if !(0.0 < self.clause_size_geometric && self.clause_size_geometric <= 1.0) {
            return Err(DatagenError::InvalidConfig("geometric parameter outside (0, 1]".into()));
        }
        Ok(())
    }
}

/// A generated pair: the first unsatisfiable formula and its satisfiable
/// twin (the same formula minus its last clause), with a verified witness.
#[derive(Debug, Clone, PartialEq)]
pub struct SatPair {
    pub unsatisfiable: CnfFormula,
    pub satisfiable: CnfFormula,
    pub witness: Assignment,
}

/// Failures before the first success of a Bernoulli(p) sequence.
fn sample_geometric(rng: &mut ChaCha8Rng, p: f64) -> usize {
    if p >= 1.0 {
        return 0;
    }
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    (u.ln() / (1.0 - p).ln()).floor() as usize
}

fn random_clause(rng: &mut ChaCha8Rng, n: usize, config: &SatGenConfig) -> Vec<Lit> {
    let mut k = config.clause_size_base
        + usize::from(rng.random::<f64>() < config.clause_size_bernoulli)
        + sample_geometric(rng, config.clause_size_geometric);
    k = k.clamp(1, n);
    let mut vars: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        vars.swap(i, j);
    }
    vars[..k]
        .iter()
        .map(|&v| {
            let code = v as i32 + 1;
            Lit::new(if rng.random::<bool>() { code } else { -code })
        })
        .collect()
}

/// Draws one pair: append random clauses, re-solving after each, until the
/// formula turns unsatisfiable.
pub fn generate_sat_pair(
    config: &SatGenConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SatPair, DatagenError> {
    config.validate()?;
    'retry: for _ in 0..GEN_MAX_RETRIES {
        let n = rng.random_range(config.var_range.0..=config.var_range.1);
        let mut clauses: Vec<Vec<Lit>> = Vec::new();
        loop {
            clauses.push(random_clause(rng, n, config));
            let formula = CnfFormula::new(n, clauses.clone())
                .expect("random clauses satisfy the invariants");
            match sat_oracle::solve(&formula, Some(GEN_DECISION_LIMIT)) {
                Ok(result) if result.satisfiable => continue,
                Ok(_) => {
                    let sat_clauses = clauses[..clauses.len() - 1].to_vec();
                    let satisfiable = CnfFormula::new(n, sat_clauses).expect("valid prefix");
                    let witness = sat_oracle::solve(&satisfiable, Some(GEN_DECISION_LIMIT))
                        .ok()
                        .and_then(|r| r.witness);
                    match witness {
                        Some(w) => {
                            return Ok(SatPair { unsatisfiable: formula, satisfiable, witness: w })
                        }
                        None => continue 'retry,
                    }
                }
                Err(_) => continue 'retry,
            }
        }
    }
    Err(DatagenError::RetriesExhausted(GEN_MAX_RETRIES))
}

fn derive_seed(root: u64, index: u64) -> u64 {
    root ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Generates `pair_count` pairs, each from its own derived stream.
pub fn generate_sat_dataset(config: &SatGenConfig) -> Result<Vec<SatPair>, DatagenError> {
    config.validate()?;
    (0..config.pair_count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, i as u64));
            generate_sat_pair(config, &mut rng)
        })
        .collect()
}

/// Unit-square TSP generator settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TspGenConfig {
    pub node_range: (usize, usize),
    /// Decision margin d: queries are optimal cost times (1 +- d).
    pub decision_margin: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for TspGenConfig {
    fn default() -> Self {
        TspGenConfig { node_range: (8, 12), decision_margin: 0.02, count: 100, seed: 0 }
    }
}

impl TspGenConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.node_range.0 < 4 || self.node_range.0 > self.node_range.1 {
            return Err(DatagenError::InvalidConfig("node_range must satisfy 4 <= lo <= hi".into()));
        }
        if !(0.0 < self.decision_margin && self.decision_margin < 1.0) {
            return Err(DatagenError::InvalidConfig("decision_margin must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// A generated TSP sample: the instance, a reference tour (exact up to the
/// Held-Karp cutoff, 2-opt beyond it), and the dual decision instances.
#[derive(Debug, Clone)]
pub struct TspSample {
    pub instance: TspInstance,
    pub tour: Tour,
    pub cost: f64,
    /// Whether the reference tour is exactly optimal.
    pub exact: bool,
    pub decision_true: TspDecisionInstance,
    pub decision_false: TspDecisionInstance,
}

/// Draws one sample: uniform unit-square coordinates, a labeled tour, and
/// the two cost queries c * (1 + d) (route exists) and c * (1 - d) (absent).
pub fn generate_tsp(config: &TspGenConfig, rng: &mut ChaCha8Rng) -> Result<TspSample, DatagenError> {
    config.validate()?;
    let n = rng.random_range(config.node_range.0..=config.node_range.1);
    let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
    let instance = TspInstance::from_coords(coords).expect("unit-square draw");
    let solved = if n <= HELD_KARP_MAX_NODES {
        tsp_oracle::solve_exact(&instance).expect("within the exact cutoff")
    } else {
        tsp_oracle::solve_heuristic(&instance)
    };
    let d = config.decision_margin;
    let decision_true = TspDecisionInstance {
        instance: instance.clone(),
        cost_query: solved.cost * (1.0 + d),
        label: true,
    };
    let decision_false = TspDecisionInstance {
        instance: instance.clone(),
        cost_query: solved.cost * (1.0 - d),
        label: false,
    };
    Ok(TspSample {
        instance,
        tour: solved.tour,
        cost: solved.cost,
        exact: solved.exact,
        decision_true,
        decision_false,
    })
}

/// Generates `count` samples, each from its own derived stream.
pub fn generate_tsp_dataset(config: &TspGenConfig) -> Result<Vec<TspSample>, DatagenError> {
    config.validate()?;
    (0..config.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, i as u64));
            generate_tsp(config, &mut rng)
        })
        .collect()
}
