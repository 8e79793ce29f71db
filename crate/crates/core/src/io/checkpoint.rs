//! Parameter checkpoints: a versioned textual tensor dump. One header line,
//! the architecture descriptor, then per tensor a shape line followed by its
//! row-major values with shortest round-trip decimal encoding, so identical
//! parameters produce byte-identical files.
//!
//! ```text
//! advsolve-checkpoint 1
//! role sat
//! embed_dim 16
//! rounds 8
//! tensor lit_init 1 16
//! -0.07 0.21 ...
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::surrogate::{SurrogateError, SurrogateParams, SurrogateRole};

use super::write_atomic;

pub const CHECKPOINT_MAGIC: &str = "advsolve-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error(transparent)]
    Params(#[from] SurrogateError),
}

fn err(line: usize, message: impl Into<String>) -> CheckpointError {
    CheckpointError::Parse(line, message.into())
}

pub fn checkpoint_string(params: &SurrogateParams) -> String {
    let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
    out.push_str(&format!("role {}\n", params.role().as_str()));
    out.push_str(&format!("embed_dim {}\n", params.embed_dim()));
    out.push_str(&format!("rounds {}\n", params.rounds()));
    for (name, tensor) in params.role().tensor_names().iter().zip(params.tensors()) {
        out.push_str(&format!("tensor {name} {} {}\n", tensor.rows(), tensor.cols()));
        let mut first = true;
        for v in tensor.data() {
            if !first {
                out.push(' ');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        out.push('\n');
    }
    out
}

pub fn read_checkpoint(text: &str) -> Result<SurrogateParams, CheckpointError> {
    let mut lines = text.lines().enumerate();
    let (i, header) = lines.next().ok_or_else(|| err(1, "empty checkpoint"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 2 || parts[0] != CHECKPOINT_MAGIC {
        return Err(err(i + 1, "not an advsolve checkpoint"));
    }
    let version: u32 = parts[1].parse().map_err(|_| err(i + 1, "bad version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(err(i + 1, format!("unsupported version {version}")));
    }
    let mut role = None;
    let mut embed_dim = None;
    let mut rounds = None;
    for _ in 0..3 {
        let (i, line) = lines.next().ok_or_else(|| err(0, "truncated header"))?;
        let mut it = line.split_whitespace();
        match (it.next(), it.next()) {
            (Some("role"), Some(r)) => {
                role = Some(
                    SurrogateRole::parse(r).ok_or_else(|| err(i + 1, format!("unknown role {r}")))?,
                )
            }
            (Some("embed_dim"), Some(v)) => {
                embed_dim = Some(v.parse().map_err(|_| err(i + 1, "bad embed_dim"))?)
            }
            (Some("rounds"), Some(v)) => {
                rounds = Some(v.parse().map_err(|_| err(i + 1, "bad rounds"))?)
            }
            _ => return Err(err(i + 1, format!("unexpected header line '{line}'"))),
        }
    }
    let role = role.ok_or_else(|| err(2, "missing role"))?;
    let embed_dim = embed_dim.ok_or_else(|| err(3, "missing embed_dim"))?;
    let rounds = rounds.ok_or_else(|| err(4, "missing rounds"))?;

    let mut tensors: Vec<Tensor> = Vec::new();
    let expected = role.tensor_names();
    while let Some((i, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(err(i + 1, format!("expected a tensor line, got '{line}'")));
        }
        let which = tensors.len();
        if which >= expected.len() {
            return Err(err(i + 1, "too many tensors"));
        }
        if parts[1] != expected[which] {
            return Err(err(
                i + 1,
                format!("expected tensor '{}', got '{}'", expected[which], parts[1]),
            ));
        }
        let rows: usize = parts[2].parse().map_err(|_| err(i + 1, "bad row count"))?;
        let cols: usize = parts[3].parse().map_err(|_| err(i + 1, "bad column count"))?;
        let (j, values_line) = lines.next().ok_or_else(|| err(i + 2, "missing tensor values"))?;
        let values: Result<Vec<f64>, _> =
            values_line.split_whitespace().map(str::parse::<f64>).collect();
        let values = values.map_err(|_| err(j + 1, "bad tensor value"))?;
        if values.len() != rows * cols {
            return Err(err(
                j + 1,
                format!("expected {} values, found {}", rows * cols, values.len()),
            ));
        }
        tensors.push(Tensor::from_vec(rows, cols, values));
    }
    Ok(SurrogateParams::from_tensors(role, embed_dim, rounds, tensors)?)
}

pub fn write_checkpoint_file(path: &Path, params: &SurrogateParams) -> Result<(), CheckpointError> {
    write_atomic(path, checkpoint_string(params).as_bytes())?;
    Ok(())
}

pub fn read_checkpoint_file(path: &Path) -> Result<SurrogateParams, CheckpointError> {
    let text = fs::read_to_string(path)?;
    read_checkpoint(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoints_round_trip_bitwise() {
        for role in [SurrogateRole::Sat, SurrogateRole::Dtsp, SurrogateRole::ConvTsp] {
            let params = SurrogateParams::init(role, 8, 4, 42);
            let text = checkpoint_string(&params);
            let back = read_checkpoint(&text).unwrap();
            assert_eq!(back, params);
            assert_eq!(checkpoint_string(&back), text, "byte-identical re-serialization");
        }
    }

    #[test]
    fn header_and_shape_errors_are_reported() {
        assert!(matches!(read_checkpoint(""), Err(CheckpointError::Parse(1, _))));
        assert!(matches!(
            read_checkpoint("other-format 1\n"),
            Err(CheckpointError::Parse(1, _))
        ));
        let params = SurrogateParams::init(SurrogateRole::Sat, 8, 4, 0);
        let text = checkpoint_string(&params);
        // corrupt one tensor's declared shape
        let bad = text.replace("tensor lit_init 1 8", "tensor lit_init 2 8");
        assert!(read_checkpoint(&bad).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = SurrogateParams::init(SurrogateRole::Dtsp, 8, 4, 3);
        write_checkpoint_file(&path, &params).unwrap();
        assert_eq!(read_checkpoint_file(&path).unwrap(), params);
    }
}
