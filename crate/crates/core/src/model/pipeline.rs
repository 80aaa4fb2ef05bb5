use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{train, GcnGraspModel, GcnScorer, GraphContext, GraspScorer, History, ModelConfig, SgnMode, SgnModel};
use super::{predict, TrainConfig, TrainItem};
use crate::dataset::{Dataset, EmbeddingTable};
use crate::encoder::{EncoderConfig, EncoderPlan};
use crate::evaluation::{Prediction, SplitMode, SplitPlan};
use crate::pointcloud::{fuse_in_frame, preprocess_with_frame, FusedCloud};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gcn,
    /// Shape encoder with learned task and class embeddings.
    Sgn,
    /// Shape encoder with frozen word embeddings.
    SgnWe,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gcn => "gcn",
            Method::Sgn => "sgn",
            Method::SgnWe => "sgn-we",
            Method::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Method::Gcn),
            "sgn" => Ok(Method::Sgn),
            "sgn-we" => Ok(Method::SgnWe),
            "random" => Ok(Method::Random),
            other => Err(Error::arg(format!("unknown method `{other}`"))),
        }
    }
}

/// One grasp, normalized with its object and grouped for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub object_id: String,
    pub grasp_id: u32,
    pub class: String,
    pub fused: FusedCloud,
    pub plan: EncoderPlan,
    pub labels: BTreeMap<String, bool>,
}

/// Preprocesses every object to `target_n` points and fuses each grasp,
/// mapped into the object's normalized frame. Canonical order.
pub fn prepare_samples(dataset: &Dataset, encoder: &EncoderConfig, target_n: usize) -> Result<Vec<PreparedSample>> {
    let mut out = Vec::with_capacity(dataset.grasp_count());
    for (oid, grasps) in &dataset.grasps {
        let cloud = &dataset.objects[oid];
        let (norm, frame) = preprocess_with_frame(cloud, target_n)?;
        let class = dataset.class_of(oid)?;
        let mut grasps: Vec<_> = grasps.iter().collect();
        grasps.sort_by_key(|g| g.grasp_id);
        for g in grasps {
            let fused = fuse_in_frame(&norm, &frame, &g.pose)?;
            let plan = EncoderPlan::new(&fused, encoder)?;
            out.push(PreparedSample {
                object_id: oid.clone(),
                grasp_id: g.grasp_id,
                class: String::from(class),
                fused,
                plan,
                labels: g.labels.clone(),
            });
        }
    }
    Ok(out)
}

fn category<'a>(mode: SplitMode, s: &'a PreparedSample, task: &'a str) -> &'a str {
    match mode {
        SplitMode::Instance => &s.object_id,
        SplitMode::Class => &s.class,
        SplitMode::Task => task,
    }
}

/// Training, validation and test items of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldItems {
    pub train: Vec<TrainItem>,
    pub validation: Vec<TrainItem>,
    pub test: Vec<TrainItem>,
}

/// Splits each sample's tasks between the partitions of `fold` by category.
pub fn fold_items(samples: &[PreparedSample], plan: &SplitPlan, fold: usize) -> Result<FoldItems> {
    let f = plan
        .folds
        .get(fold)
        .ok_or_else(|| Error::arg(format!("fold {fold} out of range for {} folds", plan.folds.len())))?;
    let mode = plan.mode;
    let held: BTreeSet<&str> = f.held_out.iter().map(String::as_str).collect();
    let val: BTreeSet<&str> = f.validation.iter().map(String::as_str).collect();
    let train: BTreeSet<&str> = f.train.iter().map(String::as_str).collect();
    let mut p = FoldItems {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (i, s) in samples.iter().enumerate() {
        let mut parts: [Vec<String>; 3] = Default::default();
        for task in s.labels.keys() {
            let c = category(mode, s, task);
            let slot = if held.contains(c) {
                2
            } else if val.contains(c) {
                1
            } else if train.contains(c) {
                0
            } else {
                continue;
            };
            parts[slot].push(task.clone());
        }
        let [tr, va, te] = parts;
        for (dst, tasks) in [(&mut p.train, tr), (&mut p.validation, va), (&mut p.test, te)] {
            if !tasks.is_empty() {
                dst.push(TrainItem { sample: i, tasks });
            }
        }
    }
    Ok(p)
}

/// AP group of a (sample, task) pair under `mode`.
pub fn group_of(mode: SplitMode, sample: &PreparedSample, task: &str) -> String {
    String::from(category(mode, sample, task))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalOutput {
    pub predictions: Vec<Prediction>,
    pub histories: Vec<History>,
}

/// Trains and tests `method` on every fold of `plan`; predictions are
/// pooled in canonical order.
#[allow(clippy::too_many_arguments)]
pub fn crossval(
    dataset: &Dataset,
    samples: &[PreparedSample],
    embeddings: &EmbeddingTable,
    plan: &SplitPlan,
    method: Method,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<CrossvalOutput> {
    if method == Method::Random {
        return Ok(CrossvalOutput {
            predictions: random_baseline(dataset, plan, cfg.seed)?,
            histories: Vec::new(),
        });
    }
    if embeddings.dim() != model.embedding_dim() {
        return Err(Error::arg(format!(
            "word embeddings have dimension {}, the model uses {}",
            embeddings.dim(),
            model.embedding_dim()
        )));
    }
    let ctx = match method {
        Method::Gcn => Some(GraphContext::new(
            &dataset.ontology,
            embeddings,
            model.variant,
            model.include_instances,
        )?),
        _ => None,
    };
    let mut predictions = Vec::new();
    let mut histories = Vec::new();
    for fold in 0..plan.folds.len() {
        let part = fold_items(samples, plan, fold)?;
        let init_seed = rng::derive_seed(cfg.seed, &[fold as u64, 0x6d6f64656c]);
        let fold_cfg = TrainConfig {
            seed: rng::derive_seed(cfg.seed, &[fold as u64]),
            ..*cfg
        };
        let mut scorer: alloc::boxed::Box<dyn GraspScorer + '_> = match method {
            Method::Gcn => alloc::boxed::Box::new(GcnScorer {
                model: GcnGraspModel::new(model.clone(), init_seed)?,
                ctx: ctx.as_ref().expect("graph context"),
            }),
            Method::Sgn | Method::SgnWe => {
                let mode = if method == Method::Sgn {
                    SgnMode::Learned
                } else {
                    SgnMode::Frozen
                };
                alloc::boxed::Box::new(SgnModel::new(
                    model.encoder,
                    model.gcn_width,
                    mode,
                    &dataset.ontology,
                    embeddings,
                    init_seed,
                )?)
            }
            Method::Random => unreachable!(),
        };
        let mode = plan.mode;
        let history = train(
            scorer.as_mut(),
            samples,
            &model.encoder,
            &part.train,
            &part.validation,
            |i, t| String::from(category(mode, &samples[i], t)),
            &fold_cfg,
        )?;
        for item in &part.test {
            let s = &samples[item.sample];
            let tasks: Vec<&str> = item.tasks.iter().map(String::as_str).collect();
            for (task, score) in tasks.iter().zip(predict(scorer.as_ref(), s, &tasks)?) {
                predictions.push(Prediction {
                    object_id: s.object_id.clone(),
                    grasp_id: s.grasp_id,
                    task: String::from(*task),
                    score,
                    label: s.labels[*task],
                    fold,
                });
            }
        }
        histories.push(history);
    }
    predictions.sort_by(|a, b| (&a.object_id, a.grasp_id, &a.task).cmp(&(&b.object_id, b.grasp_id, &b.task)));
    Ok(CrossvalOutput { predictions, histories })
}

/// Independent Uniform(0,1) scores for every held-out labeled pair, drawn
/// in canonical pair order.
pub fn random_baseline(dataset: &Dataset, plan: &SplitPlan, seed: u64) -> Result<Vec<Prediction>> {
    let mut fold_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, f) in plan.folds.iter().enumerate() {
        for c in &f.held_out {
            fold_of.insert(c, i);
        }
    }
    let mut r = rng::seeded(seed);
    let mut out = Vec::new();
    for (key, label) in dataset.labeled_pairs() {
        let c = plan.mode.category(dataset, &key)?;
        let Some(&fold) = fold_of.get(c) else {
            continue;
        };
        out.push(Prediction {
            object_id: key.object_id,
            grasp_id: key.grasp_id,
            task: key.task,
            score: rng::uniform(&mut r),
            label,
            fold,
        });
    }
    Ok(out)
}
