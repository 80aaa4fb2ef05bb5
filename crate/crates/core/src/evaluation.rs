//! Held-out cross-validation splits, average precision and mAP reports.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PairKey};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Instance,
    Class,
    Task,
}

impl SplitMode {
    pub fn name(self) -> &'static str {
        match self {
            SplitMode::Instance => "instance",
            SplitMode::Class => "class",
            SplitMode::Task => "task",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "instance" => Ok(SplitMode::Instance),
            "class" => Ok(SplitMode::Class),
            "task" => Ok(SplitMode::Task),
            other => Err(Error::arg(format!("unknown split mode `{other}`"))),
        }
    }

    /// Category of a labeled pair under this mode.
    pub fn category<'a>(self, dataset: &'a Dataset, key: &'a PairKey) -> Result<&'a str> {
        Ok(match self {
            SplitMode::Instance => &key.object_id,
            SplitMode::Class => dataset.class_of(&key.object_id)?,
            SplitMode::Task => &key.task,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub held_out: Vec<String>,
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub version: u32,
    pub mode: SplitMode,
    pub k: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    pub const VERSION: u32 = 1;
}

/// Categories that carry at least one labeled pair, sorted.
pub fn categories(dataset: &Dataset, mode: SplitMode) -> Result<Vec<String>> {
    let mut set = BTreeSet::new();
    for (key, _) in dataset.labeled_pairs() {
        set.insert(mode.category(dataset, &key)?.to_string());
    }
    Ok(set.into_iter().collect())
}

/// Shuffles `categories` by `seed` and deals them round-robin into `k`
/// held-out sets. In each fold `max(1, ceil(val_fraction·remaining))` of the
/// remaining categories become validation (none when `val_fraction` is 0),
/// always leaving at least one for training.
pub fn make_splits_from(
    categories: &[String],
    mode: SplitMode,
    k: usize,
    seed: u64,
    val_fraction: f64,
) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::arg("k must be at least 2"));
    }
    if k > categories.len() {
        return Err(Error::arg(format!(
            "k = {k} exceeds the {} available {} categories",
            categories.len(),
            mode.name()
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::arg("val_fraction must be in [0, 1)"));
    }
    let mut sorted: Vec<String> = categories.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != categories.len() {
        return Err(Error::arg("duplicate categories"));
    }
    let mut shuffled = sorted.clone();
    let mut r = rng::seeded(seed);
    rng::shuffle(&mut r, &mut shuffled);

    let mut held: Vec<Vec<String>> = (0..k).map(|_| Vec::new()).collect();
    for (i, c) in shuffled.iter().enumerate() {
        held[i % k].push(c.clone());
    }
    let mut folds = Vec::with_capacity(k);
    for (f, mut held_out) in held.into_iter().enumerate() {
        let out: BTreeSet<&String> = held_out.iter().collect();
        let mut rest: Vec<String> = shuffled.iter().filter(|c| !out.contains(c)).cloned().collect();
        let n_val = if val_fraction > 0.0 {
            (libm::ceil(val_fraction * rest.len() as f64) as usize)
                .max(1)
                .min(rest.len() - 1)
        } else {
            0
        };
        let mut fr = rng::seeded(rng::derive_seed(seed, &[f as u64]));
        rng::shuffle(&mut fr, &mut rest);
        let mut validation: Vec<String> = rest.drain(..n_val).collect();
        validation.sort();
        rest.sort();
        held_out.sort();
        folds.push(Fold {
            held_out,
            train: rest,
            validation,
        });
    }
    Ok(SplitPlan {
        version: SplitPlan::VERSION,
        mode,
        k,
        seed,
        val_fraction,
        folds,
    })
}

pub fn make_splits(dataset: &Dataset, mode: SplitMode, k: usize, seed: u64, val_fraction: f64) -> Result<SplitPlan> {
    make_splits_from(&categories(dataset, mode)?, mode, k, seed, val_fraction)
}

/// Non-interpolated average precision. Ranks by descending score with ties
/// kept in input order. `None` when there is no positive label.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!(
            "average_precision: {} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::arg("average_precision: NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(if hits == 0 { None } else { Some(total / hits as f64) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub object_id: String,
    pub grasp_id: u32,
    pub task: String,
    pub score: f64,
    pub label: bool,
    pub fold: usize,
}

impl Prediction {
    pub fn key(&self) -> PairKey {
        PairKey {
            object_id: self.object_id.clone(),
            grasp_id: self.grasp_id,
            task: self.task.clone(),
        }
    }
}

/// AP per group plus the mean over groups whose AP is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub ap: BTreeMap<String, f64>,
    /// Groups without a positive label, excluded from the mean.
    pub excluded: Vec<String>,
    pub map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub predictions: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub instance: GroupReport,
    pub class: GroupReport,
    pub task: GroupReport,
    pub folds: Vec<FoldSummary>,
}

impl EvalReport {
    pub const VERSION: u32 = 1;

    pub fn instance_map(&self) -> Option<f64> {
        self.instance.map
    }

    pub fn class_map(&self) -> Option<f64> {
        self.class.map
    }

    pub fn task_map(&self) -> Option<f64> {
        self.task.map
    }

    /// Aligned three-column table (percent) of the mAPs.
    pub fn table(&self, title: &str) -> String {
        let fmt = |m: Option<f64>| match m {
            Some(v) => format!("{:.2}", 100.0 * v),
            None => String::from("n/a"),
        };
        let mut s = String::new();
        let w = title.len().max(6);
        let _ = writeln!(s, "{:<w$}  {:>12}  {:>12}  {:>12}", "method", "instance-mAP", "class-mAP", "task-mAP");
        let _ = writeln!(
            s,
            "{:<w$}  {:>12}  {:>12}  {:>12}",
            title,
            fmt(self.instance.map),
            fmt(self.class.map),
            fmt(self.task.map)
        );
        s
    }
}

fn group_report(groups: &BTreeMap<String, (Vec<f64>, Vec<bool>)>) -> Result<GroupReport> {
    let mut ap = BTreeMap::new();
    let mut excluded = Vec::new();
    for (name, (scores, labels)) in groups {
        match average_precision(scores, labels)? {
            Some(v) => {
                ap.insert(name.clone(), v);
            }
            None => excluded.push(name.clone()),
        }
    }
    let map = if ap.is_empty() {
        None
    } else {
        Some(ap.values().sum::<f64>() / ap.len() as f64)
    };
    Ok(GroupReport { ap, excluded, map })
}

/// Pools predictions from every fold and reports AP per instance, class and
/// task. Every labeled pair of `dataset` must be predicted exactly once, with
/// the dataset's label.
pub fn map_report(predictions: &[Prediction], dataset: &Dataset) -> Result<EvalReport> {
    let truth: BTreeMap<PairKey, bool> = dataset.labeled_pairs().into_iter().collect();
    let mut sorted: Vec<&Prediction> = predictions.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.object_id, a.grasp_id, &a.task).cmp(&(&b.object_id, b.grasp_id, &b.task))
    });
    for w in sorted.windows(2) {
        if w[0].key() == w[1].key() {
            return Err(Error::validation(format!(
                "duplicate prediction for object {} grasp {} task {}",
                w[0].object_id, w[0].grasp_id, w[0].task
            )));
        }
    }
    for p in &sorted {
        if !(0.0..=1.0).contains(&p.score) {
            return Err(Error::validation(format!("score {} outside [0, 1]", p.score)));
        }
        match truth.get(&p.key()) {
            None => {
                return Err(Error::validation(format!(
                    "prediction for unlabeled pair: object {} grasp {} task {}",
                    p.object_id, p.grasp_id, p.task
                )))
            }
            Some(&l) if l != p.label => {
                return Err(Error::validation(format!(
                    "label mismatch for object {} grasp {} task {}",
                    p.object_id, p.grasp_id, p.task
                )))
            }
            _ => {}
        }
    }
    if sorted.len() != truth.len() {
        let seen: BTreeSet<PairKey> = sorted.iter().map(|p| p.key()).collect();
        let missing = truth.keys().find(|k| !seen.contains(*k)).expect("a missing pair");
        return Err(Error::validation(format!(
            "{} labeled pairs have no prediction, e.g. object {} grasp {} task {}",
            truth.len() - sorted.len(),
            missing.object_id,
            missing.grasp_id,
            missing.task
        )));
    }

    let mut by_instance: BTreeMap<String, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    let mut by_class: BTreeMap<String, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    let mut by_task: BTreeMap<String, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    let mut folds: BTreeMap<usize, FoldSummary> = BTreeMap::new();
    for p in &sorted {
        let class = dataset.class_of(&p.object_id)?;
        for (map, key) in [
            (&mut by_instance, p.object_id.as_str()),
            (&mut by_class, class),
            (&mut by_task, p.task.as_str()),
        ] {
            let e = map.entry(key.to_string()).or_default();
            e.0.push(p.score);
            e.1.push(p.label);
        }
        let f = folds.entry(p.fold).or_insert(FoldSummary {
            fold: p.fold,
            predictions: 0,
            positives: 0,
        });
        f.predictions += 1;
        f.positives += p.label as usize;
    }
    Ok(EvalReport {
        version: EvalReport::VERSION,
        instance: group_report(&by_instance)?,
        class: group_report(&by_class)?,
        task: group_report(&by_task)?,
        folds: folds.into_values().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.3, 0.2], &[true, true]).unwrap(), Some(1.0));
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap().unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.9, 0.1], &[false, true]).unwrap(), Some(0.5));
        assert_eq!(average_precision(&[0.9, 0.1], &[false, false]).unwrap(), None);
    }

    #[test]
    fn ties_follow_input_order() {
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), Some(0.5));
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]).unwrap(), Some(1.0));
    }

    #[test]
    fn class_folds_partition() {
        let cats: Vec<String> = (0..8).map(|i| format!("c{i}")).collect();
        let plan = make_splits_from(&cats, SplitMode::Class, 4, 3, 0.1).unwrap();
        let mut all = Vec::new();
        for f in &plan.folds {
            assert_eq!(f.held_out.len(), 2);
            assert_eq!(f.validation.len(), 1);
            assert_eq!(f.train.len(), 5);
            all.extend(f.held_out.iter().cloned());
        }
        all.sort();
        assert_eq!(all, cats);
        assert_eq!(plan, make_splits_from(&cats, SplitMode::Class, 4, 3, 0.1).unwrap());
    }

    #[test]
    fn task_folds_of_fourteen() {
        let cats: Vec<String> = (0..56).map(|i| format!("t{i:02}")).collect();
        let plan = make_splits_from(&cats, SplitMode::Task, 4, 0, 0.1).unwrap();
        assert!(plan.folds.iter().all(|f| f.held_out.len() == 14));
        assert!(plan.folds.iter().all(|f| f.validation.len() == 5));
    }

    #[test]
    fn too_many_folds() {
        let cats = vec![String::from("a"), String::from("b")];
        assert!(make_splits_from(&cats, SplitMode::Instance, 3, 0, 0.1).is_err());
        let plan = make_splits_from(&cats, SplitMode::Instance, 2, 0, 0.5).unwrap();
        assert!(plan.folds.iter().all(|f| f.train.len() == 1 && f.validation.is_empty()));
    }
}
