//! Dataset directory layout and loading.
//!
//! SAT datasets: `manifest.json` plus, per pair i, `pair_{i:04}.unsat.cnf`,
//! `pair_{i:04}.sat.cnf` and `pair_{i:04}.witness`.
//! TSP datasets: `manifest.json` plus `inst_{i:04}.json`.

use std::path::{Path, PathBuf};

use advsolve::attack::{SatItem, TspItem};
use advsolve::autodiff::Tensor;
use advsolve::datagen::{SatPair, TspSample};
use advsolve::instances::{tour_cost, CnfFormula, Tour, TspInstance};
use advsolve::io::{
    self, parse_witness, read_dimacs_file, read_manifest, read_tsp_file, witness_string,
    write_dimacs_file, write_manifest, Manifest, TspDocument,
};
use advsolve::sat_perturb::BipartiteAdjacency;
use advsolve::surrogate::TrainItem;

use crate::{CliError, CliResult};

pub fn validation<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Validation(e.to_string())
}

pub fn internal<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Internal(e.to_string())
}

fn pair_paths(dir: &Path, i: usize) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("pair_{i:04}.unsat.cnf")),
        dir.join(format!("pair_{i:04}.sat.cnf")),
        dir.join(format!("pair_{i:04}.witness")),
    )
}

pub fn write_sat_dataset(
    dir: &Path,
    pairs: &[SatPair],
    manifest: &Manifest,
) -> CliResult<()> {
    for (i, pair) in pairs.iter().enumerate() {
        let (unsat, sat, witness) = pair_paths(dir, i);
        write_dimacs_file(&unsat, &pair.unsatisfiable).map_err(internal)?;
        write_dimacs_file(&sat, &pair.satisfiable).map_err(internal)?;
        io::write_atomic(&witness, witness_string(&pair.witness).as_bytes()).map_err(internal)?;
    }
    write_manifest(&dir.join("manifest.json"), manifest).map_err(internal)?;
    Ok(())
}

pub fn load_sat_pairs(dir: &Path) -> CliResult<Vec<SatPair>> {
    let manifest = read_manifest(&dir.join("manifest.json")).map_err(validation)?;
    if manifest.kind != "sat-dataset" {
        return Err(CliError::Validation(format!(
            "expected a sat-dataset directory, found kind '{}'",
            manifest.kind
        )));
    }
    let mut pairs = Vec::with_capacity(manifest.count);
    for i in 0..manifest.count {
        let (unsat, sat, witness) = pair_paths(dir, i);
        let unsatisfiable = read_dimacs_file(&unsat).map_err(validation)?;
        let satisfiable = read_dimacs_file(&sat).map_err(validation)?;
        let witness_text = std::fs::read_to_string(&witness).map_err(validation)?;
        let witness = parse_witness(&witness_text).map_err(validation)?;
        pairs.push(SatPair { unsatisfiable, satisfiable, witness });
    }
    Ok(pairs)
}

/// Attack items in a fixed order: pair i yields item 2i (satisfiable, with
/// witness) and item 2i+1 (unsatisfiable).
pub fn sat_items_from_pairs(pairs: &[SatPair]) -> Vec<SatItem> {
    let mut items = Vec::with_capacity(2 * pairs.len());
    for pair in pairs {
        items.push(SatItem {
            formula: pair.satisfiable.clone(),
            label: true,
            witness: Some(pair.witness.clone()),
        });
        items.push(SatItem {
            formula: pair.unsatisfiable.clone(),
            label: false,
            witness: None,
        });
    }
    items
}

pub fn adjacency_tensor(formula: &CnfFormula) -> Tensor {
    BipartiteAdjacency::from_formula(formula).tensor().clone()
}

pub fn weights_tensor(instance: &TspInstance) -> Tensor {
    let n = instance.num_nodes();
    let mut t = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            t.set(i, j, instance.weight(i, j));
        }
    }
    t
}

pub fn indicator_tensor(tour: &Tour) -> Tensor {
    let ind = tour.edge_indicator();
    let n = ind.len();
    Tensor::from_vec(n, n, ind.into_iter().flatten().collect())
}

pub fn write_tsp_dataset(
    dir: &Path,
    samples: &[TspSample],
    manifest: &Manifest,
) -> CliResult<()> {
    for (i, sample) in samples.iter().enumerate() {
        let doc = TspDocument::from_sample(sample);
        io::write_tsp_file(&dir.join(format!("inst_{i:04}.json")), &doc).map_err(internal)?;
    }
    write_manifest(&dir.join("manifest.json"), manifest).map_err(internal)?;
    Ok(())
}

/// A loaded TSP sample: instance, reference tour, and the two cost queries.
pub struct LoadedTsp {
    pub instance: TspInstance,
    pub tour: Tour,
    pub c0_true: f64,
    pub c0_false: f64,
}

pub fn load_tsp_dataset(dir: &Path) -> CliResult<Vec<LoadedTsp>> {
    let manifest = read_manifest(&dir.join("manifest.json")).map_err(validation)?;
    if manifest.kind != "tsp-dataset" {
        return Err(CliError::Validation(format!(
            "expected a tsp-dataset directory, found kind '{}'",
            manifest.kind
        )));
    }
    let mut out = Vec::with_capacity(manifest.count);
    for i in 0..manifest.count {
        let doc = read_tsp_file(&dir.join(format!("inst_{i:04}.json"))).map_err(validation)?;
        let c0_true = doc.c0_true.ok_or_else(|| {
            CliError::Validation(format!("instance {i} is missing the c0_true query"))
        })?;
        let c0_false = doc.c0_false.ok_or_else(|| {
            CliError::Validation(format!("instance {i} is missing the c0_false query"))
        })?;
        let (instance, tour) = doc.into_parts().map_err(validation)?;
        let tour = tour.ok_or_else(|| {
            CliError::Validation(format!("instance {i} is missing its reference tour"))
        })?;
        out.push(LoadedTsp { instance, tour, c0_true, c0_false });
    }
    Ok(out)
}

/// Decision items in a fixed order: sample i yields item 2i (label true) and
/// item 2i+1 (label false).
pub fn dtsp_items(samples: &[LoadedTsp]) -> Vec<TspItem> {
    let mut items = Vec::with_capacity(2 * samples.len());
    for s in samples {
        items.push(TspItem { instance: s.instance.clone(), tour: s.tour.clone(), label: true });
        items.push(TspItem { instance: s.instance.clone(), tour: s.tour.clone(), label: false });
    }
    items
}

pub fn convtsp_items(samples: &[LoadedTsp]) -> Vec<TspItem> {
    samples
        .iter()
        .map(|s| TspItem { instance: s.instance.clone(), tour: s.tour.clone(), label: true })
        .collect()
}

pub fn sat_train_items(pairs: &[SatPair]) -> Vec<TrainItem> {
    sat_items_from_pairs(pairs)
        .into_iter()
        .map(|item| TrainItem::Sat { adjacency: adjacency_tensor(&item.formula), label: item.label })
        .collect()
}

pub fn dtsp_train_items(samples: &[LoadedTsp]) -> Vec<TrainItem> {
    let mut items = Vec::with_capacity(2 * samples.len());
    for s in samples {
        let w = weights_tensor(&s.instance);
        items.push(TrainItem::Dtsp { weights: w.clone(), cost_query: s.c0_true, label: true });
        items.push(TrainItem::Dtsp { weights: w, cost_query: s.c0_false, label: false });
    }
    items
}

pub fn convtsp_train_items(samples: &[LoadedTsp]) -> Vec<TrainItem> {
    samples
        .iter()
        .map(|s| TrainItem::ConvTsp {
            weights: weights_tensor(&s.instance),
            target: indicator_tensor(&s.tour),
        })
        .collect()
}

/// The perturbed-instance file of one attack row.
pub fn adv_file_name(instance_id: usize, mode: &str, kind: &str) -> String {
    let ext = if kind == "attack-sat" { "cnf" } else { "json" };
    format!("adv/{instance_id:04}_{mode}.{ext}")
}

/// Document for a perturbed TSP payload, with the cost query stored on the
/// side matching the label.
pub fn tsp_adv_document(
    instance: &TspInstance,
    tour: &Tour,
    cost_query: Option<(f64, bool)>,
) -> TspDocument {
    let mut doc = TspDocument::from_instance(instance, Some(tour));
    doc.cost = Some(tour_cost(instance, tour).expect("tour fits the instance"));
    doc.exact = Some(true);
    if let Some((c0, label)) = cost_query {
        if label {
            doc.c0_true = Some(c0);
        } else {
            doc.c0_false = Some(c0);
        }
    }
    doc
}
