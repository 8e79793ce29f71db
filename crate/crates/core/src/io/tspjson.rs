//! TSP instance JSON: unit-square coordinates plus optional reference tour,
//! cost, decision queries and exactness flag. Doubles round-trip at full
//! precision (shortest round-trip decimals).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::TspSample;
use crate::instances::{InstanceError, Tour, TspInstance};

use super::write_atomic;

#[derive(Debug, Error)]
pub enum TspJsonError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid instance: {0}")]
    Instance(#[from] InstanceError),
}

/// On-disk TSP document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TspDocument {
    pub coords: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tour: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c0_true: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c0_false: Option<f64>,
}

impl TspDocument {
    pub fn from_sample(sample: &TspSample) -> Self {
        TspDocument {
            coords: sample.instance.coords().expect("generated instances carry coords").to_vec(),
            tour: Some(sample.tour.order().to_vec()),
            cost: Some(sample.cost),
            exact: Some(sample.exact),
            c0_true: Some(sample.decision_true.cost_query),
            c0_false: Some(sample.decision_false.cost_query),
        }
    }

    pub fn from_instance(instance: &TspInstance, tour: Option<&Tour>) -> Self {
        TspDocument {
            coords: instance.coords().expect("coordinate instance").to_vec(),
            tour: tour.map(|t| t.order().to_vec()),
            cost: None,
            exact: None,
            c0_true: None,
            c0_false: None,
        }
    }

    /// Validated instance and optional tour.
    pub fn into_parts(self) -> Result<(TspInstance, Option<Tour>), TspJsonError> {
        let instance = TspInstance::from_coords(self.coords.clone())?;
        let tour = match self.tour {
            Some(order) => Some(Tour::new(order)?),
            None => None,
        };
        if let Some(t) = &tour {
            if t.len() != instance.num_nodes() {
                return Err(TspJsonError::Parse(format!(
                    "tour length {} does not match {} nodes",
                    t.len(),
                    instance.num_nodes()
                )));
            }
        }
        Ok((instance, tour))
    }
}

pub fn tsp_json_string(doc: &TspDocument) -> String {
    serde_json::to_string_pretty(doc).expect("document serializes")
}

pub fn parse_tsp_json(text: &str) -> Result<TspDocument, TspJsonError> {
    serde_json::from_str(text).map_err(|e| TspJsonError::Parse(e.to_string()))
}

pub fn write_tsp_file(path: &Path, doc: &TspDocument) -> Result<(), TspJsonError> {
    write_atomic(path, tsp_json_string(doc).as_bytes())?;
    Ok(())
}

pub fn read_tsp_file(path: &Path) -> Result<TspDocument, TspJsonError> {
    let text = fs::read_to_string(path)?;
    parse_tsp_json(&text)
}
