//! DIMACS CNF reading and writing. Parsing is strict: a well-formed
//! `p cnf <vars> <clauses>` header, zero-terminated clauses, comment lines
//! starting with 'c', no out-of-range literals, no variable repeated within
//! a clause, no empty clauses. Clause and literal order are preserved, so
//! write-then-read is the identity up to canonical whitespace.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::instances::{Assignment, CnfFormula, Lit};

use super::write_atomic;

#[derive(Debug, Error)]
pub enum DimacsError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn err(line: usize, message: impl Into<String>) -> DimacsError {
    DimacsError::Parse { line, message: message.into() }
}

/// Parses a DIMACS CNF document.
pub fn parse_dimacs(text: &str) -> Result<CnfFormula, DimacsError> {
    let mut header: Option<(usize, usize)> = None;
    let mut clauses: Vec<Vec<Lit>> = Vec::new();
    let mut current: Vec<Lit> = Vec::new();
    let mut current_vars: Vec<usize> = Vec::new();
    let mut header_line = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('c') {
            continue;
        }
        if line.starts_with('p') {
            if header.is_some() {
                return Err(err(line_no, "duplicate header"));
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "p" || parts[1] != "cnf" {
                return Err(err(line_no, format!("malformed header '{line}'")));
            }
            let vars: usize = parts[2]
                .parse()
                .map_err(|_| err(line_no, format!("bad variable count '{}'", parts[2])))?;
            let count: usize = parts[3]
                .parse()
                .map_err(|_| err(line_no, format!("bad clause count '{}'", parts[3])))?;
            header = Some((vars, count));
            header_line = line_no;
            continue;
        }
        let (num_vars, _) = header.ok_or_else(|| err(line_no, "clause before 'p cnf' header"))?;
        for token in line.split_whitespace() {
            let value: i64 = token
                .parse()
                .map_err(|_| err(line_no, format!("bad literal '{token}'")))?;
            if value == 0 {
                if current.is_empty() {
                    return Err(err(line_no, "empty clause"));
                }
                clauses.push(std::mem::take(&mut current));
                current_vars.clear();
                continue;
            }
            let var = value.unsigned_abs() as usize;
            if var > num_vars {
                return Err(err(
                    line_no,
                    format!("literal {value} outside the declared {num_vars} variables"),
                ));
            }
            if current_vars.contains(&var) {
                return Err(err(
                    line_no,
                    format!("variable {var} appears twice in one clause"),
                ));
            }
            current_vars.push(var);
            current.push(Lit::new(value as i32));
        }
    }
    let (num_vars, declared) = header.ok_or_else(|| err(text.lines().count(), "missing header"))?;
    if !current.is_empty() {
        return Err(err(text.lines().count(), "unterminated clause (missing trailing 0)"));
    }
    if clauses.len() != declared {
        return Err(err(
            header_line,
            format!("header declares {declared} clauses, found {}", clauses.len()),
        ));
    }
    CnfFormula::new(num_vars, clauses)
        .map_err(|e| err(header_line, format!("invalid formula: {e}")))
}

/// Canonical serialization: header then one clause per line.
pub fn dimacs_string(formula: &CnfFormula) -> String {
    let mut out = format!("p cnf {} {}\n", formula.num_vars(), formula.num_clauses());
    for clause in formula.clauses() {
        for lit in clause {
            out.push_str(&lit.code().to_string());
            out.push(' ');
        }
        out.push_str("0\n");
    }
    out
}

pub fn read_dimacs_file(path: &Path) -> Result<CnfFormula, DimacsError> {
    let text = fs::read_to_string(path)?;
    parse_dimacs(&text)
}

pub fn write_dimacs_file(path: &Path, formula: &CnfFormula) -> Result<(), DimacsError> {
    write_atomic(path, dimacs_string(formula).as_bytes())?;
    Ok(())
}

/// Witness serialization: the satisfied literal of each variable in index
/// order, zero-terminated ("1 -2 3 0").
pub fn witness_string(witness: &Assignment) -> String {
    let mut out = String::new();
    for (i, &value) in witness.values().iter().enumerate() {
        let code = if value { i as i32 + 1 } else { -(i as i32 + 1) };
        out.push_str(&code.to_string());
        out.push(' ');
    }
    out.push_str("0\n");
    out
}

pub fn parse_witness(text: &str) -> Result<Assignment, DimacsError> {
    let mut values: Vec<(usize, bool)> = Vec::new();
    for token in text.split_whitespace() {
        let value: i64 = token
            .parse()
            .map_err(|_| err(1, format!("bad witness literal '{token}'")))?;
        if value == 0 {
            break;
        }
        values.push((value.unsigned_abs() as usize, value > 0));
    }
    let n = values.len();
    let mut out = vec![false; n];
    for (var, positive) in values {
        if var == 0 || var > n {
            return Err(err(1, format!("witness variable {var} out of range")));
        }
        out[var - 1] = positive;
    }
    Ok(Assignment::new(out))
}
