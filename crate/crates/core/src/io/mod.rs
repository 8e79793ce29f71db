//! File formats and experiment configuration: DIMACS CNF, TSP JSON,
//! parameter checkpoints, the TOML experiment config, CSV reports, and
//! dataset manifests. All writes are atomic (write-temp-then-rename) and all
//! outputs are deterministic functions of their inputs.

pub mod checkpoint;
pub mod config;
pub mod dimacs;
pub mod report;
pub mod tspjson;

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, read_checkpoint_file, write_checkpoint_file, CheckpointError};
pub use config::{read_config_file, ConfigError, ExperimentConfig, ModelConfig};
pub use dimacs::{
    dimacs_string, parse_dimacs, parse_witness, read_dimacs_file, witness_string,
    write_dimacs_file, DimacsError,
};
pub use report::{instance_rows_csv, parse_instance_rows, strip_wall_ms, summary_csv, summary_text, ReportError};
pub use tspjson::{read_tsp_file, tsp_json_string, write_tsp_file, TspDocument, TspJsonError};

/// Writes via a temp file in the target directory plus a rename, so readers
/// never observe partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = Path::new(&tmp).to_path_buf();
    fs::write(&tmp_path, bytes)?;
    fs::rename(&tmp_path, path)?;
    Ok(())
}

/// Dataset / run manifest: enough to reproduce the artifact byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub kind: String,
    pub seed: u64,
    pub count: usize,
    /// Canonical TOML of the generating config.
    pub config: String,
    pub tool_version: String,
}

impl Manifest {
    pub fn new(kind: &str, seed: u64, count: usize, config: String) -> Self {
        Manifest {
            kind: kind.to_string(),
            seed,
            count,
            config,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> io::Result<()> {
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_atomic(path, body.as_bytes())
}

pub fn read_manifest(path: &Path) -> io::Result<Manifest> {
    let body = fs::read_to_string(path)?;
    serde_json::from_str(&body).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert!(!path.with_extension("txt.tmp").exists());
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = Manifest::new("sat-dataset", 7, 100, "seed = 7".into());
        write_manifest(&path, &m).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);
    }
}
