//! The work behind each subcommand.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use mbcgcn::cascade::{CascadeParams, ModelConfig};
use mbcgcn::checkpoint::{load_checkpoint, save_checkpoint};
use mbcgcn::data::{leave_one_out_split, IdMap, MultiBehaviorDataset, SplitDataset};
use mbcgcn::eval::evaluate_split;
use mbcgcn::train::{build_graphs, fit, TrainingLog};
use mbcgcn::MetricsReport;
use serde_json::{json, Value};

use crate::config::{label_for, AblationGrid, RunConfig};
use crate::report::{write_metrics, write_report, ReportFormat};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.json";
pub const LOG_FILE: &str = "train.log";
pub const CONFIG_FILE: &str = "config.txt";
pub const USERS_FILE: &str = "users.tsv";
pub const ITEMS_FILE: &str = "items.tsv";
pub const STATS_FILE: &str = "stats.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const FAILURES_FILE: &str = "ablation_failures.tsv";

pub fn load_dataset(cfg: &RunConfig) -> Result<MultiBehaviorDataset> {
    Ok(MultiBehaviorDataset::load(&cfg.behaviors, &cfg.inputs)?)
}

/// The configured chain of `dataset`, split for training.
pub fn split_for(dataset: &MultiBehaviorDataset, cfg: &RunConfig) -> Result<SplitDataset> {
    let chained = dataset.select_chain(&cfg.chain)?;
    Ok(leave_one_out_split(&chained))
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_id_maps(dataset: &MultiBehaviorDataset, dir: &Path) -> Result<()> {
    for (name, map) in [(USERS_FILE, &dataset.users), (ITEMS_FILE, &dataset.items)] {
        let path = dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        map.write_tsv(BufWriter::new(file))?;
    }
    Ok(())
}

pub fn dataset_stats(dataset: &MultiBehaviorDataset, split: &SplitDataset) -> Value {
    let behaviors: Vec<Value> = dataset
        .chain
        .iter()
        .zip(&dataset.sets)
        .map(|(name, set)| json!({"behavior": name, "interactions": set.len()}))
        .collect();
    json!({
        "users": dataset.num_users,
        "items": dataset.num_items,
        "behaviors": behaviors,
        "train_target_interactions": split.train.target().len(),
        "validation_users": split.validation.len(),
        "test_users": split.test.len(),
    })
}

/// Ingests and splits the data and writes ID maps and statistics.
pub fn run_prepare(cfg: &RunConfig) -> Result<Value> {
    let dataset = load_dataset(cfg)?;
    let split = split_for(&dataset, cfg)?;
    let stats = dataset_stats(&dataset, &split);
    create_out_dir(&cfg.out)?;
    write_id_maps(&dataset, &cfg.out)?;
    let path = cfg.out.join(STATS_FILE);
    fs::write(&path, serde_json::to_string_pretty(&stats)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(stats)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: ModelConfig,
    pub params: CascadeParams<f32>,
    pub log: TrainingLog,
    pub report: MetricsReport,
}

/// Trains the configured variant on an already loaded dataset and scores
/// the returned parameters on the test split.
pub fn train_variant(dataset: &MultiBehaviorDataset, cfg: &RunConfig) -> Result<TrainOutput> {
    let split = split_for(dataset, cfg)?;
    ensure!(
        !split.test.is_empty(),
        "no user has enough target interactions for a test item"
    );
    let outcome = fit::<f32>(&split, &cfg.model, &cfg.train)?;
    let report = evaluate_split(&outcome.params, &cfg.model, &outcome.graphs, &split, &cfg.ks)?.with_label(cfg.label());
    Ok(TrainOutput {
        model: cfg.model.clone(),
        params: outcome.params,
        log: outcome.log,
        report,
    })
}

pub fn run_train(cfg: &RunConfig) -> Result<TrainOutput> {
    let dataset = load_dataset(cfg)?;
    let out = train_variant(&dataset, cfg)?;
    create_out_dir(&cfg.out)?;
    save_checkpoint(cfg.out.join(CHECKPOINT_FILE), &out.model, &out.params)?;
    write_metrics(&out.report, &cfg.out.join(METRICS_FILE))?;
    let log_path = cfg.out.join(LOG_FILE);
    let log_file = File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    out.log.write_lines(BufWriter::new(log_file))?;
    fs::write(cfg.out.join(CONFIG_FILE), cfg.to_settings_text())?;
    write_id_maps(&dataset, &cfg.out)?;
    info!(
        "best epoch {} of {}; test {}",
        out.log.best_epoch,
        out.log.records.len(),
        summary(&out.report)
    );
    Ok(out)
}

/// Refuses checkpoints trained on a differently indexed dataset.
fn check_id_maps(dataset: &MultiBehaviorDataset, checkpoint: &Path) -> Result<()> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    for (name, map) in [(USERS_FILE, &dataset.users), (ITEMS_FILE, &dataset.items)] {
        let path = dir.join(name);
        if !path.exists() {
            warn!(
                "{} not found; assuming the checkpoint matches the inputs",
                path.display()
            );
            continue;
        }
        let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let saved = IdMap::read_tsv(BufReader::new(file)).with_context(|| format!("in {}", path.display()))?;
        ensure!(
            &saved == map,
            "{} does not match the ID table built from the inputs",
            path.display()
        );
    }
    Ok(())
}

/// Scores a saved checkpoint on the test split of the configured data.
pub fn run_evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<MetricsReport> {
    let dataset = load_dataset(cfg)?;
    check_id_maps(&dataset, checkpoint)?;
    let split = split_for(&dataset, cfg)?;
    let (model, params) = load_checkpoint(checkpoint)?;
    ensure!(
        model.num_behaviors() == cfg.chain.len(),
        "checkpoint has {} behaviors but the chain has {}",
        model.num_behaviors(),
        cfg.chain.len()
    );
    ensure!(
        (params.num_users(), params.num_items()) == (split.num_users(), split.num_items()),
        "checkpoint covers {}x{} users and items, data has {}x{}",
        params.num_users(),
        params.num_items(),
        split.num_users(),
        split.num_items()
    );
    let graphs = build_graphs(&split)?;
    let label = RunConfig {
        model: model.clone(),
        ..cfg.clone()
    }
    .label();
    let report = evaluate_split(&params, &model, &graphs, &split, &cfg.ks)?.with_label(label);
    create_out_dir(&cfg.out)?;
    write_metrics(&report, &cfg.out.join(METRICS_FILE))?;
    info!("test {}", summary(&report));
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub result: std::result::Result<MetricsReport, String>,
}

/// Labeled run configurations of every grid variant, in row order.
pub fn grid_variants(base: &RunConfig, grid: &AblationGrid) -> Vec<(String, RunConfig)> {
    let orders: Vec<String> = if grid.orders.is_empty() {
        vec![base.chain.join(">")]
    } else {
        grid.orders.clone()
    };
    let transforms = if grid.transforms.is_empty() {
        vec![base.model.transform]
    } else {
        grid.transforms.clone()
    };
    let aggregations = if grid.aggregations.is_empty() {
        vec![base.model.aggregation]
    } else {
        grid.aggregations.clone()
    };
    let layers: Vec<Option<usize>> = if grid.layers.is_empty() {
        vec![None]
    } else {
        grid.layers.iter().copied().map(Some).collect()
    };

    let mut variants = Vec::with_capacity(grid.num_variants());
    for order in &orders {
        for &transform in &transforms {
            for &aggregation in &aggregations {
                for &depth in &layers {
                    let chain: Vec<String> = order.split('>').map(|s| s.trim().to_owned()).collect();
                    let layers = match depth {
                        Some(l) => vec![l; chain.len()],
                        None => base.model.layers.clone(),
                    };
                    let model = ModelConfig {
                        dim: base.model.dim,
                        layers,
                        transform,
                        aggregation,
                    };
                    // Labels carry the order text as given.
                    let label = label_for(order, &model);
                    variants.push((
                        label,
                        RunConfig {
                            chain,
                            model,
                            ..base.clone()
                        },
                    ));
                }
            }
        }
    }
    variants
}

/// Trains and evaluates every variant in turn with the base seed. A failing
/// variant is recorded in its row and the grid carries on.
pub fn run_ablation(base: &RunConfig, grid: &AblationGrid) -> Result<Vec<AblationRow>> {
    let dataset = load_dataset(base)?;
    let variants = grid_variants(base, grid);
    let mut rows = Vec::with_capacity(variants.len());
    for (n, (label, cfg)) in variants.into_iter().enumerate() {
        info!("variant {}/{}: {label}", n + 1, grid.num_variants());
        let result = check_variant(&cfg)
            .and_then(|_| train_variant(&dataset, &cfg))
            .map(|out| out.report.with_label(label.clone()))
            .map_err(|e| format!("{e:#}"));
        if let Err(e) = &result {
            warn!("variant {label} failed: {e}");
        }
        rows.push(AblationRow { label, result });
    }

    create_out_dir(&base.out)?;
    let reports: Vec<MetricsReport> = rows.iter().filter_map(|r| r.result.clone().ok()).collect();
    if !reports.is_empty() {
        write_report(&reports, ReportFormat::Csv, &base.out.join(ABLATION_FILE))?;
    }
    let failures: Vec<String> = rows
        .iter()
        .filter_map(|r| {
            r.result
                .as_ref()
                .err()
                .map(|e| format!("{}\t{}\n", r.label, e.replace(['\t', '\n'], " ")))
        })
        .collect();
    let failures_path = base.out.join(FAILURES_FILE);
    if failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path)?;
        }
    } else {
        fs::write(&failures_path, failures.concat())?;
    }
    Ok(rows)
}

fn check_variant(cfg: &RunConfig) -> Result<()> {
    if cfg.model.layers.len() != cfg.chain.len() {
        bail!(
            "layer list has {} entries for {} behaviors; give uniform grid layers",
            cfg.model.layers.len(),
            cfg.chain.len()
        );
    }
    Ok(())
}

/// Merges metric files into one table.
pub fn run_report(inputs: &[PathBuf], format: ReportFormat, out: &Path) -> Result<usize> {
    let reports = inputs
        .iter()
        .map(|p| crate::report::read_metrics(p))
        .collect::<Result<Vec<_>>>()?;
    write_report(&reports, format, out)?;
    Ok(reports.len())
}

pub fn summary(report: &MetricsReport) -> String {
    let parts: Vec<String> = report
        .ks
        .iter()
        .enumerate()
        .map(|(p, k)| format!("R@{k} {:.4} N@{k} {:.4}", report.recall[p], report.ndcg[p]))
        .collect();
    parts.join("  ")
}
