//! Subcommand implementations.

use std::path::Path;

use advsolve::attack::{
    evaluate_sat_suite, evaluate_tsp_suite, pgd_attack_sat, AttackConfig, PerturbedInstance,
    SuiteReport, TspAttackKind, UnsatModeSelector,
};
use advsolve::datagen::{generate_sat_dataset, generate_tsp_dataset};
use advsolve::instances::tour_cost;
use advsolve::io::{
    self, instance_rows_csv, parse_instance_rows, read_checkpoint_file, read_config_file,
    read_dimacs_file, read_manifest, read_tsp_file, summary_csv, summary_text,
    write_checkpoint_file, write_dimacs_file, ExperimentConfig, Manifest,
};
use advsolve::sat_oracle;
use advsolve::sat_perturb::PerturbMode;
use advsolve::surrogate::{
    adversarial_finetune, train as train_params, SurrogateParams, SurrogateRole, TrainItem,
};
use advsolve::tsp_oracle::{self, HELD_KARP_MAX_NODES};

use crate::data::{self, internal, validation};
use crate::{CliError, CliResult};

pub fn load_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    match path {
        Some(p) => read_config_file(p).map_err(validation),
        None => Ok(ExperimentConfig::default()),
    }
}

pub fn gen_sat(
    config: &ExperimentConfig,
    out: &Path,
    seed: Option<u64>,
    count: Option<usize>,
) -> CliResult<()> {
    let mut gen = config.sat_gen.clone();
    if let Some(s) = seed {
        gen.seed = s;
    }
    if let Some(c) = count {
        gen.pair_count = c;
    }
    let pairs = generate_sat_dataset(&gen).map_err(validation)?;
    let manifest = Manifest::new(
        "sat-dataset",
        gen.seed,
        pairs.len(),
        toml::to_string(&gen).unwrap_or_default(),
    );
    data::write_sat_dataset(out, &pairs, &manifest)?;
    println!("wrote {} pairs to {}", pairs.len(), out.display());
    Ok(())
}

pub fn gen_tsp(
    config: &ExperimentConfig,
    out: &Path,
    seed: Option<u64>,
    count: Option<usize>,
) -> CliResult<()> {
    let mut gen = config.tsp_gen.clone();
    if let Some(s) = seed {
        gen.seed = s;
    }
    if let Some(c) = count {
        gen.count = c;
    }
    let samples = generate_tsp_dataset(&gen).map_err(validation)?;
    let manifest = Manifest::new(
        "tsp-dataset",
        gen.seed,
        samples.len(),
        toml::to_string(&gen).unwrap_or_default(),
    );
    data::write_tsp_dataset(out, &samples, &manifest)?;
    println!("wrote {} instances to {}", samples.len(), out.display());
    Ok(())
}

fn parse_role(text: &str) -> CliResult<SurrogateRole> {
    SurrogateRole::parse(text)
        .ok_or_else(|| CliError::Validation(format!("unknown role '{text}' (sat|dtsp|convtsp)")))
}

fn load_train_items(role: SurrogateRole, dir: &Path) -> CliResult<Vec<TrainItem>> {
    match role {
        SurrogateRole::Sat => Ok(data::sat_train_items(&data::load_sat_pairs(dir)?)),
        SurrogateRole::Dtsp => Ok(data::dtsp_train_items(&data::load_tsp_dataset(dir)?)),
        SurrogateRole::ConvTsp => Ok(data::convtsp_train_items(&data::load_tsp_dataset(dir)?)),
    }
}

pub fn train(
    config: &ExperimentConfig,
    dataset: &Path,
    out: &Path,
    role: Option<&str>,
    seed: Option<u64>,
    epochs: Option<usize>,
) -> CliResult<()> {
    let role = match role {
        Some(r) => parse_role(r)?,
        None => config.model.role,
    };
    let mut train_config = config.train.clone();
    if let Some(s) = seed {
        train_config.seed = s;
    }
    if let Some(e) = epochs {
        train_config.epochs = e;
    }
    let items = load_train_items(role, dataset)?;
    let mut params = SurrogateParams::init(
        role,
        config.model.embed_dim,
        config.model.rounds,
        train_config.seed,
    );
    let report = train_params(&mut params, &items, &train_config).map_err(internal)?;
    for (epoch, (acc, loss)) in
        report.epoch_accuracy.iter().zip(&report.epoch_loss).enumerate()
    {
        println!("epoch {epoch:>3}  accuracy {acc:.4}  loss {loss:.4}");
    }
    write_checkpoint_file(out, &params).map_err(internal)?;
    println!("wrote checkpoint to {}", out.display());
    Ok(())
}

pub fn finetune(
    config: &ExperimentConfig,
    dataset: &Path,
    model: &Path,
    out: &Path,
    seed: Option<u64>,
) -> CliResult<()> {
    let mut params = read_checkpoint_file(model).map_err(validation)?;
    if params.role() != SurrogateRole::Sat {
        return Err(CliError::Validation(
            "adversarial fine-tuning is defined for the sat role".into(),
        ));
    }
    let mut train_config = config.train.clone();
    if let Some(s) = seed {
        train_config.seed = s;
    }
    let pairs = data::load_sat_pairs(dataset)?;
    let attack_items = data::sat_items_from_pairs(&pairs);
    let items = data::sat_train_items(&pairs);
    let attack_config = config.attack.clone();
    let sat_budget = train_config.finetune_sat_budget;
    let unsat_budget = train_config.finetune_unsat_budget;
    let mut handle = |params: &SurrogateParams,
                      idx: usize,
                      seed: u64|
     -> Result<TrainItem, advsolve::surrogate::SurrogateError> {
        let item = &attack_items[idx];
        let mode = if item.label {
            PerturbMode::Sat
        } else if seed % 2 == 0 {
            PerturbMode::Del
        } else {
            PerturbMode::Adc
        };
        let cfg = AttackConfig {
            budget_fraction: if item.label { sat_budget } else { unsat_budget },
            seed,
            ..attack_config.clone()
        };
        let result = pgd_attack_sat(params, item, mode, &cfg).map_err(|e| {
            advsolve::surrogate::SurrogateError::ShapeMismatch(format!("attack failed: {e}"))
        })?;
        match result.perturbed {
            PerturbedInstance::Sat { formula, label } => Ok(TrainItem::Sat {
                adjacency: data::adjacency_tensor(&formula),
                label,
            }),
            _ => unreachable!("sat attack emits sat payloads"),
        }
    };
    adversarial_finetune(&mut params, &items, &train_config, &mut handle).map_err(internal)?;
    write_checkpoint_file(out, &params).map_err(internal)?;
    println!("wrote fine-tuned checkpoint to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn attack(
    config: &ExperimentConfig,
    dataset: &Path,
    model: &Path,
    out: &Path,
    mode: Option<&str>,
    budget: Option<f64>,
    steps: Option<usize>,
    seed: Option<u64>,
) -> CliResult<()> {
    let params = read_checkpoint_file(model).map_err(validation)?;
    let role = params.role();
    let mut attack_config = match role {
        SurrogateRole::Sat => config.attack.clone(),
        SurrogateRole::Dtsp => config.attack_dtsp.clone(),
        SurrogateRole::ConvTsp => config.attack_convtsp.clone(),
    };
    if let Some(s) = steps {
        attack_config.steps = s;
    }
    if let Some(s) = seed {
        attack_config.seed = s;
    }
    if let Some(b) = budget {
        match role {
            SurrogateRole::Sat => attack_config.budget_fraction = b,
            _ => attack_config.node_budget = b.round() as usize,
        }
    }
    if let Some(m) = mode {
        attack_config.unsat_mode = match m {
            "auto" => UnsatModeSelector::Random,
            "del" => UnsatModeSelector::Del,
            "adc" => UnsatModeSelector::Adc,
            other => {
                return Err(CliError::Validation(format!(
                    "unknown mode '{other}' (auto|del|adc)"
                )))
            }
        };
    }
    attack_config.validate().map_err(CliError::Validation)?;

    let (kind, report) = match role {
        SurrogateRole::Sat => {
            let items = data::sat_items_from_pairs(&data::load_sat_pairs(dataset)?);
            let report = evaluate_sat_suite(&params, &items, &attack_config).map_err(internal)?;
            ("attack-sat", report)
        }
        SurrogateRole::Dtsp => {
            let items = data::dtsp_items(&data::load_tsp_dataset(dataset)?);
            let report =
                evaluate_tsp_suite(&params, &items, TspAttackKind::Decision, &attack_config)
                    .map_err(internal)?;
            ("attack-dtsp", report)
        }
        SurrogateRole::ConvTsp => {
            let items = data::convtsp_items(&data::load_tsp_dataset(dataset)?);
            let report = evaluate_tsp_suite(&params, &items, TspAttackKind::Route, &attack_config)
                .map_err(internal)?;
            ("attack-convtsp", report)
        }
    };
    write_attack_outputs(out, kind, &attack_config, &report)?;
    print!("{}", summary_text(&report.summary));
    Ok(())
}

fn write_attack_outputs(
    out: &Path,
    kind: &str,
    attack_config: &AttackConfig,
    report: &SuiteReport,
) -> CliResult<()> {
    io::write_atomic(&out.join("rows.csv"), instance_rows_csv(&report.rows).as_bytes())
        .map_err(internal)?;
    io::write_atomic(&out.join("summary.csv"), summary_csv(&report.summary).as_bytes())
        .map_err(internal)?;
    io::write_atomic(&out.join("summary.txt"), summary_text(&report.summary).as_bytes())
        .map_err(internal)?;
    let manifest = Manifest::new(
        kind,
        attack_config.seed,
        report.summary.count,
        toml::to_string(attack_config).unwrap_or_default(),
    );
    io::write_manifest(&out.join("manifest.json"), &manifest).map_err(internal)?;
    for output in &report.outputs {
        let name = data::adv_file_name(output.instance_id, &output.mode, kind);
        let path = out.join(&name);
        match &output.perturbed {
            PerturbedInstance::Sat { formula, .. } => {
                write_dimacs_file(&path, formula).map_err(internal)?;
            }
            PerturbedInstance::TspDecision { decision, tour } => {
                let doc = data::tsp_adv_document(
                    &decision.instance,
                    tour,
                    Some((decision.cost_query, decision.label)),
                );
                io::write_tsp_file(&path, &doc).map_err(internal)?;
            }
            PerturbedInstance::TspRoute { instance, tour } => {
                let doc = data::tsp_adv_document(instance, tour, None);
                io::write_tsp_file(&path, &doc).map_err(internal)?;
            }
        }
    }
    Ok(())
}

/// Re-checks every perturbed instance against the oracles. Returns whether
/// all of them passed.
pub fn verify(attacks: &Path) -> CliResult<bool> {
    let manifest = read_manifest(&attacks.join("manifest.json")).map_err(validation)?;
    let rows_text = std::fs::read_to_string(attacks.join("rows.csv")).map_err(validation)?;
    let rows = parse_instance_rows(&rows_text).map_err(validation)?;
    let mut checked = 0usize;
    let mut sound = 0usize;
    for row in &rows {
        let path = attacks.join(data::adv_file_name(row.instance_id, &row.mode, &manifest.kind));
        let ok = match manifest.kind.as_str() {
            "attack-sat" => {
                let formula = read_dimacs_file(&path).map_err(validation)?;
                let verdict = sat_oracle::solve(&formula, None).map_err(internal)?;
                verdict.satisfiable == row.label
            }
            "attack-dtsp" | "attack-convtsp" => {
                let doc = read_tsp_file(&path).map_err(validation)?;
                let c0 = if row.label { doc.c0_true } else { doc.c0_false };
                let (instance, tour) = doc.into_parts().map_err(validation)?;
                let tour = tour.ok_or_else(|| {
                    CliError::Validation(format!("{} is missing its tour", path.display()))
                })?;
                if instance.num_nodes() > HELD_KARP_MAX_NODES {
                    return Err(CliError::Validation(format!(
                        "{} exceeds the exact-verification cutoff",
                        path.display()
                    )));
                }
                let exact = tsp_oracle::solve_exact(&instance).map_err(internal)?;
                let claimed = tour_cost(&instance, &tour).map_err(internal)?;
                let tour_optimal = (claimed - exact.cost).abs() < 1e-9;
                let label_consistent = match (manifest.kind.as_str(), c0) {
                    ("attack-dtsp", Some(c0)) => (exact.cost <= c0) == row.label,
                    ("attack-dtsp", None) => false,
                    _ => true,
                };
                tour_optimal && label_consistent
            }
            other => {
                return Err(CliError::Validation(format!(
                    "unknown attack kind '{other}' in manifest"
                )))
            }
        };
        checked += 1;
        if ok {
            sound += 1;
        } else {
            eprintln!(
                "error[verification]: instance {} mode {} failed the oracle check",
                row.instance_id, row.mode
            );
        }
    }
    let rate = if checked == 0 { 1.0 } else { sound as f64 / checked as f64 };
    println!("soundness rate: {sound}/{checked} = {rate}");
    Ok(sound == checked)
}

pub fn report(attacks: &Path, out: Option<&Path>) -> CliResult<()> {
    let manifest = read_manifest(&attacks.join("manifest.json")).map_err(validation)?;
    let attack_config: AttackConfig =
        toml::from_str(&manifest.config).map_err(|e| validation(format!("bad stored config: {e}")))?;
    let rows_text = std::fs::read_to_string(attacks.join("rows.csv")).map_err(validation)?;
    let rows = parse_instance_rows(&rows_text).map_err(validation)?;
    let summary = advsolve::attack::summarize_rows(&rows, attack_config.gap_threshold);
    if let Some(path) = out {
        io::write_atomic(path, summary_csv(&summary).as_bytes()).map_err(internal)?;
    }
    print!("{}", summary_text(&summary));
    Ok(())
}
