use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::PreparedSample;
use crate::encoder::{EncoderConfig, EncoderPlan};
use crate::evaluation::average_precision;
use crate::pointcloud::{augment_fused, AugmentParams};
use crate::rng;
use crate::tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::{Error, Result};

/// A model that scores grasps for tasks and can be trained with ADAM.
pub trait GraspScorer {
    fn params(&self) -> &[Tensor];
    fn params_mut(&mut self) -> &mut [Tensor];
    /// Which parameters receive updates; frozen ones enter the tape as constants.
    fn trainable(&self) -> Vec<bool>;
    /// Records one `1×1` probability per task for a single grasp.
    fn record(
        &self,
        tape: &mut Tape,
        params: &[Var],
        plan: &EncoderPlan,
        object_id: &str,
        class: &str,
        tasks: &[&str],
    ) -> Result<Vec<Var>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Grasps per mini-batch; each grasp brings all its selected tasks.
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Reweight each batch so positives and negatives carry equal loss mass.
    pub balance: bool,
    pub augment: AugmentParams,
    /// Validation is scored every this many epochs (and after the last).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch: 16,
            adam: AdamConfig::default(),
            seed: 0,
            balance: true,
            augment: AugmentParams::OFF,
            val_every: 1,
        }
    }
}

/// One grasp with the tasks it contributes to a partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainItem {
    pub sample: usize,
    pub tasks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean AP over validation groups, when scored this epoch.
    pub val_map: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

fn leaves<S: GraspScorer + ?Sized>(tape: &mut Tape, scorer: &S, trainable: &[bool]) -> Vec<Var> {
    scorer
        .params()
        .iter()
        .zip(trainable)
        .map(|(p, &t)| if t { tape.param(p.clone()) } else { tape.constant(p.clone()) })
        .collect()
}

fn class_weights(labels: &[f64], balance: bool) -> Vec<f64> {
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    let neg = labels.len() - pos;
    if !balance || pos == 0 || neg == 0 {
        return vec![1.0; labels.len()];
    }
    let n = labels.len() as f64;
    let (wp, wn) = (n / (2.0 * pos as f64), n / (2.0 * neg as f64));
    labels.iter().map(|&y| if y == 1.0 { wp } else { wn }).collect()
}

/// Trains `scorer` on `items` with mini-batch ADAM and weighted BCE.
/// `group_of` maps a validation (sample, task) to its AP group.
pub fn train<S, G>(
    scorer: &mut S,
    samples: &[PreparedSample],
    encoder: &EncoderConfig,
    items: &[TrainItem],
    validation: &[TrainItem],
    group_of: G,
    cfg: &TrainConfig,
) -> Result<History>
where
    S: GraspScorer + ?Sized,
    G: Fn(usize, &str) -> String,
{
    let items: Vec<&TrainItem> = items.iter().filter(|i| !i.tasks.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    if cfg.batch == 0 || cfg.val_every == 0 {
        return Err(Error::arg("batch and val_every must be positive"));
    }
    let trainable = scorer.trainable();
    let mut state = AdamState::new(cfg.adam, scorer.params())?;
    let mut history = History::default();
    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut r = rng::seeded(rng::derive_seed(cfg.seed, &[epoch as u64]));
        rng::shuffle(&mut r, &mut order);
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch) {
            let mut tape = Tape::new();
            let vars = leaves(&mut tape, scorer, &trainable);
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for &bi in batch {
                let item = items[bi];
                let s = &samples[item.sample];
                let aug_plan;
                let plan = if cfg.augment.is_off() {
                    &s.plan
                } else {
                    let seed = rng::derive_seed(cfg.seed, &[epoch as u64, item.sample as u64, 1]);
                    aug_plan = EncoderPlan::new(&augment_fused(&s.fused, &cfg.augment, seed)?, encoder)?;
                    &aug_plan
                };
                let tasks: Vec<&str> = item.tasks.iter().map(String::as_str).collect();
                scores.extend(scorer.record(&mut tape, &vars, plan, &s.object_id, &s.class, &tasks)?);
                for t in &tasks {
                    let y = *s.labels.get(*t).ok_or_else(|| {
                        Error::validation(format!("grasp {} of {} has no label for {t}", s.grasp_id, s.object_id))
                    })?;
                    labels.push(if y { 1.0 } else { 0.0 });
                }
            }
            let pred = tape.concat_rows(&scores)?;
            let weights = class_weights(&labels, cfg.balance);
            let loss = tape.weighted_bce(pred, &labels, &weights)?;
            let value = tape.value(loss).data()[0];
            loss_sum += value * labels.len() as f64;
            loss_n += labels.len();
            let mut grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars
                .iter()
                .zip(scorer.params())
                .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
                .collect();
            adam_step(scorer.params_mut(), &g, &mut state)?;
        }
        let last = epoch + 1 == cfg.epochs;
        let val_map = if !validation.is_empty() && ((epoch + 1) % cfg.val_every == 0 || last) {
            validation_map(scorer, samples, validation, &group_of)?
        } else {
            None
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / loss_n as f64,
            val_map,
        });
    }
    Ok(history)
}

fn validation_map<S, G>(scorer: &S, samples: &[PreparedSample], items: &[TrainItem], group_of: &G) -> Result<Option<f64>>
where
    S: GraspScorer + ?Sized,
    G: Fn(usize, &str) -> String,
{
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for item in items {
        let s = &samples[item.sample];
        let tasks: Vec<&str> = item.tasks.iter().map(String::as_str).collect();
        for (t, p) in tasks.iter().zip(predict(scorer, s, &tasks)?) {
            let e = groups.entry(group_of(item.sample, t)).or_default();
            e.0.push(p);
            e.1.push(s.labels[*t]);
        }
    }
    let mut aps = Vec::new();
    for (scores, labels) in groups.values() {
        if let Some(ap) = average_precision(scores, labels)? {
            aps.push(ap);
        }
    }
    Ok((!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64))
}

/// Scores `tasks` for one prepared grasp without recording gradients.
pub fn predict<S: GraspScorer + ?Sized>(scorer: &S, sample: &PreparedSample, tasks: &[&str]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = scorer.params().iter().map(|p| tape.constant(p.clone())).collect();
    let out = scorer.record(&mut tape, &vars, &sample.plan, &sample.object_id, &sample.class, tasks)?;
    Ok(out.iter().map(|&v| tape.value(v).data()[0]).collect())
}
