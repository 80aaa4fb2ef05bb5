//! Experiment pipelines shared by the command-line tool and the tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use graspkg_core::dataset::{Dataset, EmbeddingTable, PairKey};
use graspkg_core::evaluation::{make_splits, map_report, EvalReport, Prediction, SplitMode, SplitPlan};
use graspkg_core::model::{
    crossval, fold_items, group_of, predict, prepare_samples, train, GcnGraspModel, GcnScorer, GraphContext, History,
    Method, PreparedSample, TrainConfig,
};
use graspkg_core::rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// Printed with every held-out-task report.
pub const TASK_MODE_NOTE: &str = "Published held-out-task results on the real TaskGrasp data (task-mAP 76.01 for \
the graph model versus 63.35 for the shape-only baseline) are not reproducible at desk scale; only the relative \
ordering of methods on this data is meaningful.";

/// A dataset with everything a model run needs precomputed.
pub struct Prepared<'a> {
    pub dataset: &'a Dataset,
    pub embeddings: EmbeddingTable,
    pub samples: Vec<PreparedSample>,
}

impl<'a> Prepared<'a> {
    pub fn new(dataset: &'a Dataset, embeddings: EmbeddingTable, cfg: &RunConfig) -> Result<Self> {
        if embeddings.dim() != cfg.model.embedding_dim() {
            return Err(Error::usage(format!(
                "word vectors have dimension {}, the config sets embedding_dim={}",
                embeddings.dim(),
                cfg.model.embedding_dim()
            )));
        }
        let samples = prepare_samples(dataset, &cfg.model.encoder, cfg.target_points)?;
        Ok(Prepared {
            dataset,
            embeddings,
            samples,
        })
    }

    /// Uses pseudo-embeddings for the whole vocabulary.
    pub fn with_pseudo_embeddings(dataset: &'a Dataset, cfg: &RunConfig) -> Result<Self> {
        let table = EmbeddingTable::pseudo(
            dataset.ontology.vocabulary(),
            cfg.model.embedding_dim(),
            cfg.embedding_seed,
        )?;
        Self::new(dataset, table, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Maps {
    pub instance: Option<f64>,
    pub class: Option<f64>,
    pub task: Option<f64>,
}

impl Maps {
    pub fn of(r: &EvalReport) -> Self {
        Maps {
            instance: r.instance_map(),
            class: r.class_map(),
            task: r.task_map(),
        }
    }

    /// Mean of each column over the values that are defined.
    pub fn mean(all: &[Maps]) -> Self {
        let avg = |f: fn(&Maps) -> Option<f64>| {
            let v: Vec<f64> = all.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Maps {
            instance: avg(|m| m.instance),
            class: avg(|m| m.class),
            task: avg(|m| m.task),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub objects: usize,
    pub grasps: usize,
    pub pairs: usize,
    pub positives: usize,
    /// Hex SHA-256 of the dataset's JSON serialization.
    pub hash: String,
}

impl DatasetSummary {
    pub fn of(ds: &Dataset) -> Self {
        let pairs = ds.labeled_pairs();
        let json = serde_json::to_vec(ds).expect("datasets serialize");
        DatasetSummary {
            objects: ds.objects.len(),
            grasps: ds.grasp_count(),
            pairs: pairs.len(),
            positives: pairs.iter().filter(|p| p.1).count(),
            hash: format!("{:x}", Sha256::digest(&json)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub embedding: u64,
    /// Training (or random-score) seed of each run.
    pub runs: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub held_out: Vec<String>,
    pub maps: Maps,
    pub history: Option<History>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub seed: u64,
    pub report: EvalReport,
    pub folds: Vec<FoldResult>,
}

/// Versioned JSON artifact of `crossval`, `baseline` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub command: String,
    pub method: String,
    pub mode: SplitMode,
    pub k: usize,
    pub dataset: DatasetSummary,
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub seeds: Seeds,
    /// Mean over runs.
    pub maps: Maps,
    pub note: Option<String>,
    pub runs: Vec<Run>,
}

impl RunReport {
    pub const VERSION: u32 = 1;

    pub fn to_json(&self) -> String {
        crate::layout::to_json(self)
    }

    /// Aligned text table of the mAPs in percent, one row per fold and a
    /// summary row.
    pub fn table(&self) -> String {
        let pct = |m: Option<f64>| m.map_or_else(|| String::from("n/a"), |v| format!("{:.2}", 100.0 * v));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} {} | held-out {} | k={} | config {}",
            self.command,
            self.method,
            self.mode.name(),
            self.k,
            &self.config_hash[..12.min(self.config_hash.len())]
        );
        let w = self.method.len().max(12);
        let _ = writeln!(s, "{:<w$}  {:>12}  {:>12}  {:>12}", "", "instance-mAP", "class-mAP", "task-mAP");
        let row = |s: &mut String, name: &str, m: &Maps| {
            let _ = writeln!(s, "{name:<w$}  {:>12}  {:>12}  {:>12}", pct(m.instance), pct(m.class), pct(m.task));
        };
        for run in &self.runs {
            for f in &run.folds {
                row(&mut s, &format!("seed {} fold {}", run.seed, f.fold), &f.maps);
            }
        }
        row(&mut s, &self.method, &self.maps);
        if let Some(note) = &self.note {
            let _ = writeln!(s, "note: {note}");
        }
        s
    }
}

/// Copy of `ds` keeping only the labels accepted by `keep`.
pub fn restrict(ds: &Dataset, keep: impl Fn(&PairKey) -> bool) -> Dataset {
    let mut out = ds.clone();
    for (oid, grasps) in out.grasps.iter_mut() {
        for g in grasps.iter_mut() {
            let gid = g.grasp_id;
            g.labels.retain(|task, _| {
                keep(&PairKey {
                    object_id: oid.clone(),
                    grasp_id: gid,
                    task: task.clone(),
                })
            });
        }
    }
    out
}

pub fn plan_splits(ds: &Dataset, cfg: &RunConfig, mode: SplitMode, k: usize) -> Result<SplitPlan> {
    Ok(make_splits(ds, mode, k, cfg.split_seed, cfg.val_fraction)?)
}

fn fold_results(ds: &Dataset, plan: &SplitPlan, preds: &[Prediction], histories: &[History]) -> Result<Vec<FoldResult>> {
    (0..plan.folds.len())
        .map(|fold| {
            let fp: Vec<Prediction> = preds.iter().filter(|p| p.fold == fold).cloned().collect();
            let keys: std::collections::BTreeSet<PairKey> = fp.iter().map(Prediction::key).collect();
            let sub = restrict(ds, |k| keys.contains(k));
            let maps = if fp.is_empty() {
                Maps {
                    instance: None,
                    class: None,
                    task: None,
                }
            } else {
                Maps::of(&map_report(&fp, &sub)?)
            };
            Ok(FoldResult {
                fold,
                held_out: plan.folds[fold].held_out.clone(),
                maps,
                history: histories.get(fold).cloned(),
            })
        })
        .collect()
}

fn header(command: &str, method: &str, mode: SplitMode, k: usize, prep: &Prepared, cfg: &RunConfig, seeds: Vec<u64>) -> RunReport {
    RunReport {
        version: RunReport::VERSION,
        command: command.to_string(),
        method: method.to_string(),
        mode,
        k,
        dataset: DatasetSummary::of(prep.dataset),
        config: cfg.entries(),
        config_hash: cfg.hash(),
        seeds: Seeds {
            split: cfg.split_seed,
            embedding: cfg.embedding_seed,
            runs: seeds,
        },
        maps: Maps {
            instance: None,
            class: None,
            task: None,
        },
        note: (mode == SplitMode::Task).then(|| TASK_MODE_NOTE.to_string()),
        runs: Vec::new(),
    }
}

/// Cross-validates `method` `runs` times with consecutive training seeds
/// starting at the configured one.
pub fn run_crossval(
    command: &str,
    prep: &Prepared,
    cfg: &RunConfig,
    mode: SplitMode,
    k: usize,
    method: Method,
    runs: usize,
) -> Result<RunReport> {
    if runs == 0 {
        return Err(Error::usage("at least one run is required"));
    }
    let plan = plan_splits(prep.dataset, cfg, mode, k)?;
    let seeds: Vec<u64> = (0..runs as u64).map(|i| cfg.train.seed.wrapping_add(i)).collect();
    let mut report = header(command, method.name(), mode, k, prep, cfg, seeds.clone());
    for &seed in &seeds {
        log::info!("{} crossval, held-out {}, k={k}, seed {seed}", method.name(), mode.name());
        let tc = TrainConfig { seed, ..cfg.train };
        let out = crossval(prep.dataset, &prep.samples, &prep.embeddings, &plan, method, &cfg.model, &tc)?;
        let eval = map_report(&out.predictions, prep.dataset)?;
        let folds = fold_results(prep.dataset, &plan, &out.predictions, &out.histories)?;
        report.runs.push(Run {
            seed,
            report: eval,
            folds,
        });
    }
    let maps: Vec<Maps> = report.runs.iter().map(|r| Maps::of(&r.report)).collect();
    report.maps = Maps::mean(&maps);
    Ok(report)
}

fn context(prep: &Prepared, model: &GcnGraspModel) -> Result<GraphContext> {
    let c = model.config();
    Ok(GraphContext::new(&prep.dataset.ontology, &prep.embeddings, c.variant, c.include_instances)?)
}

/// Trains the graph model on one fold's training categories.
pub fn train_fold(
    prep: &Prepared,
    cfg: &RunConfig,
    mode: SplitMode,
    k: usize,
    fold: usize,
) -> Result<(GcnGraspModel, History)> {
    let plan = plan_splits(prep.dataset, cfg, mode, k)?;
    let items = fold_items(&prep.samples, &plan, fold).map_err(|e| Error::usage(e.to_string()))?;
    let init = rng::derive_seed(cfg.train.seed, &[fold as u64, 0x6d6f64656c]);
    let model = GcnGraspModel::new(cfg.model.clone(), init)?;
    let ctx = context(prep, &model)?;
    let mut scorer = GcnScorer { model, ctx: &ctx };
    let tc = TrainConfig {
        seed: rng::derive_seed(cfg.train.seed, &[fold as u64]),
        ..cfg.train
    };
    let samples = &prep.samples;
    let history = train(
        &mut scorer,
        samples,
        &cfg.model.encoder,
        &items.train,
        &items.validation,
        |i, t| group_of(mode, &samples[i], t),
        &tc,
    )?;
    Ok((scorer.model, history))
}

/// Scores one fold's held-out pairs with a trained graph model.
pub fn eval_fold(
    prep: &Prepared,
    cfg: &RunConfig,
    model: GcnGraspModel,
    mode: SplitMode,
    k: usize,
    fold: usize,
) -> Result<RunReport> {
    if model.config().encoder != cfg.model.encoder {
        return Err(Error::usage("checkpoint encoder differs from the config; samples would be grouped differently"));
    }
    let plan = plan_splits(prep.dataset, cfg, mode, k)?;
    let items = fold_items(&prep.samples, &plan, fold).map_err(|e| Error::usage(e.to_string()))?;
    let ctx = context(prep, &model)?;
    let scorer = GcnScorer { model, ctx: &ctx };
    let mut preds = Vec::new();
    for item in &items.test {
        let s = &prep.samples[item.sample];
        let tasks: Vec<&str> = item.tasks.iter().map(String::as_str).collect();
        for (task, score) in tasks.iter().zip(predict(&scorer, s, &tasks)?) {
            preds.push(Prediction {
                object_id: s.object_id.clone(),
                grasp_id: s.grasp_id,
                task: task.to_string(),
                score,
                label: s.labels[*task],
                fold,
            });
        }
    }
    if preds.is_empty() {
        return Err(Error::usage(format!("fold {fold} has no held-out pairs")));
    }
    let keys: std::collections::BTreeSet<PairKey> = preds.iter().map(Prediction::key).collect();
    let sub = restrict(prep.dataset, |key| keys.contains(key));
    let eval = map_report(&preds, &sub)?;
    let mut report = header("eval", Method::Gcn.name(), mode, k, prep, cfg, vec![cfg.train.seed]);
    report.maps = Maps::of(&eval);
    report.runs.push(Run {
        seed: cfg.train.seed,
        report: eval.clone(),
        folds: vec![FoldResult {
            fold,
            held_out: plan.folds[fold].held_out.clone(),
            maps: Maps::of(&eval),
            history: None,
        }],
    });
    Ok(report)
}
