//! Crowdsourced label aggregation: gold-question qualification, majority
//! vote and Randolph's free-marginal multirater kappa.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Annotated item: an (object, task) pair for stage 1, plus a grasp for stage 2.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemKey {
    pub object_id: String,
    pub task: String,
    pub grasp_id: Option<u32>,
}

impl ItemKey {
    /// Parses `object/task` or `object/task/grasp`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        let bad = || Error::arg(format!("item key `{s}` is not object/task[/grasp]"));
        match parts.as_slice() {
            [o, t] if !o.is_empty() && !t.is_empty() => Ok(ItemKey {
                object_id: String::from(*o),
                task: String::from(*t),
                grasp_id: None,
            }),
            [o, t, g] if !o.is_empty() && !t.is_empty() => Ok(ItemKey {
                object_id: String::from(*o),
                task: String::from(*t),
                grasp_id: Some(g.parse().map_err(|_| bad())?),
            }),
            _ => Err(bad()),
        }
    }

    pub fn stage(&self) -> u8 {
        if self.grasp_id.is_some() {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for ItemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.grasp_id {
            Some(g) => write!(f, "{}/{}/{}", self.object_id, self.task, g),
            None => write!(f, "{}/{}", self.object_id, self.task),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub item: ItemKey,
    pub annotator: String,
    pub vote: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualificationMode {
    /// Keep annotators with gold accuracy at least this value.
    AccuracyThreshold(f64),
    /// Keep the `ceil(f · A)` most accurate annotators, ties by id.
    TopFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qualification {
    pub qualified: BTreeSet<String>,
    pub accuracy: BTreeMap<String, f64>,
    /// Annotators excluded because they answered no gold item.
    pub no_gold: Vec<String>,
}

/// Scores annotators on the gold items they answered and keeps the ones that
/// pass `mode`.
pub fn filter_annotators(
    votes: &[VoteRecord],
    gold: &BTreeMap<ItemKey, bool>,
    mode: QualificationMode,
) -> Result<Qualification> {
    match mode {
        QualificationMode::AccuracyThreshold(t) if t.is_nan() => return Err(Error::arg("threshold is NaN")),
        QualificationMode::TopFraction(f) if !(0.0..=1.0).contains(&f) => {
            return Err(Error::arg("top fraction must be in [0, 1]"))
        }
        _ => {}
    }
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for v in votes {
        let e = tally.entry(v.annotator.as_str()).or_default();
        if let Some(&truth) = gold.get(&v.item) {
            e.0 += (truth == v.vote) as usize;
            e.1 += 1;
        }
    }
    let mut accuracy = BTreeMap::new();
    let mut no_gold = Vec::new();
    for (&a, &(correct, answered)) in &tally {
        if answered == 0 {
            no_gold.push(String::from(a));
        } else {
            accuracy.insert(String::from(a), correct as f64 / answered as f64);
        }
    }
    let qualified = match mode {
        QualificationMode::AccuracyThreshold(t) => accuracy
            .iter()
            .filter(|(_, &acc)| acc >= t)
            .map(|(a, _)| a.clone())
            .collect(),
        QualificationMode::TopFraction(f) => {
            let keep = libm::ceil(f * accuracy.len() as f64) as usize;
            let mut ranked: Vec<(&String, f64)> = accuracy.iter().map(|(a, &acc)| (a, acc)).collect();
            ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(y.0)));
            ranked.into_iter().take(keep).map(|(a, _)| a.clone()).collect()
        }
    };
    Ok(Qualification {
        qualified,
        accuracy,
        no_gold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityOutcome {
    pub label: bool,
    /// Set when the vote split exactly evenly; the label is then `false`.
    pub tie: bool,
}

pub fn majority_vote(votes: &[bool]) -> Result<MajorityOutcome> {
    if votes.is_empty() {
        return Err(Error::Empty("majority_vote"));
    }
    let yes = votes.iter().filter(|&&v| v).count();
    let no = votes.len() - yes;
    Ok(MajorityOutcome {
        label: yes > no,
        tie: yes == no,
    })
}

fn by_item<'a>(
    votes: &'a [VoteRecord],
    keep: Option<&BTreeSet<String>>,
) -> Result<BTreeMap<&'a ItemKey, BTreeMap<&'a str, bool>>> {
    let mut items: BTreeMap<&ItemKey, BTreeMap<&str, bool>> = BTreeMap::new();
    for v in votes {
        if keep.is_some_and(|k| !k.contains(&v.annotator)) {
            continue;
        }
        if items
            .entry(&v.item)
            .or_default()
            .insert(v.annotator.as_str(), v.vote)
            .is_some()
        {
            return Err(Error::validation(format!("annotator {} voted twice on {}", v.annotator, v.item)));
        }
    }
    Ok(items)
}

/// Majority label per item, optionally restricted to `qualified` annotators.
pub fn aggregate(
    votes: &[VoteRecord],
    qualified: Option<&BTreeSet<String>>,
) -> Result<BTreeMap<ItemKey, MajorityOutcome>> {
    let items = by_item(votes, qualified)?;
    if items.is_empty() {
        return Err(Error::validation("no votes left to aggregate"));
    }
    items
        .into_iter()
        .map(|(k, v)| {
            let ballots: Vec<bool> = v.values().copied().collect();
            Ok((k.clone(), majority_vote(&ballots)?))
        })
        .collect()
}

/// Per-item category counts with a constant number of raters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KappaInput {
    counts: Vec<Vec<usize>>,
    raters: usize,
    categories: usize,
}

impl KappaInput {
    pub fn new(counts: Vec<Vec<usize>>, categories: usize) -> Result<Self> {
        if categories < 2 {
            return Err(Error::arg("kappa needs at least two categories"));
        }
        let first = counts.first().ok_or(Error::Empty("kappa items"))?;
        let raters: usize = first.iter().sum();
        if raters < 2 {
            return Err(Error::arg("kappa needs at least two raters per item"));
        }
        for (i, c) in counts.iter().enumerate() {
            if c.len() != categories {
                return Err(Error::arg(format!("item {i} has {} category counts, expected {categories}", c.len())));
            }
            let n: usize = c.iter().sum();
            if n != raters {
                return Err(Error::arg(format!("item {i} has {n} ratings, expected {raters}")));
            }
        }
        Ok(KappaInput {
            counts,
            raters,
            categories,
        })
    }

    /// Binary input from per-item vote lists.
    pub fn from_binary<I, V>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = V>,
        V: AsRef<[bool]>,
    {
        let counts = items
            .into_iter()
            .map(|v| {
                let yes = v.as_ref().iter().filter(|&&b| b).count();
                alloc::vec![v.as_ref().len() - yes, yes]
            })
            .collect();
        Self::new(counts, 2)
    }

    pub fn raters(&self) -> usize {
        self.raters
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn items(&self) -> &[Vec<usize>] {
        &self.counts
    }
}

/// Randolph's free-marginal multirater kappa.
pub fn randolph_kappa(input: &KappaInput) -> f64 {
    let n = input.raters as f64;
    let observed = input
        .counts
        .iter()
        .map(|c| c.iter().map(|&k| (k * k.saturating_sub(1)) as f64).sum::<f64>() / (n * (n - 1.0)))
        .sum::<f64>()
        / input.counts.len() as f64;
    let chance = 1.0 / input.categories as f64;
    (observed - chance) / (1.0 - chance)
}

/// Kappa of raw binary votes, one item per key.
pub fn vote_kappa(votes: &[VoteRecord]) -> Result<f64> {
    let items = by_item(votes, None)?;
    let input = KappaInput::from_binary(items.values().map(|v| v.values().copied().collect::<Vec<bool>>()))?;
    Ok(randolph_kappa(&input))
}

/// Agreement between tasks on one object: tasks act as raters, grasps as
/// items, with two categories.
pub fn task_agreement_kappa(labels: &BTreeMap<String, BTreeMap<u32, bool>>) -> Result<f64> {
    if labels.len() < 2 {
        return Err(Error::arg("task agreement needs at least two tasks"));
    }
    let mut tasks = labels.iter();
    let (t0, first) = tasks.next().expect("two tasks");
    let grasps: Vec<u32> = first.keys().copied().collect();
    for (t, l) in tasks {
        if !l.keys().copied().eq(grasps.iter().copied()) {
            return Err(Error::validation(format!("tasks {t0} and {t} label different grasp sets")));
        }
    }
    let items = grasps.iter().map(|g| labels.values().map(|l| l[g]).collect::<Vec<bool>>());
    Ok(randolph_kappa(&KappaInput::from_binary(items)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn majority_examples() {
        assert_eq!(majority_vote(&[true, true, false]).unwrap().label, true);
        assert_eq!(majority_vote(&[false, false, true]).unwrap().label, false);
        assert_eq!(
            majority_vote(&[true, false]).unwrap(),
            MajorityOutcome {
                label: false,
                tie: true
            }
        );
        assert!(majority_vote(&[]).is_err());
    }

    #[test]
    fn kappa_examples() {
        let k = randolph_kappa(&KappaInput::new(vec![vec![1, 2]], 2).unwrap());
        assert!((k + 1.0 / 3.0).abs() < 1e-15);
        let k = randolph_kappa(&KappaInput::new(vec![vec![3, 0], vec![0, 3]], 2).unwrap());
        assert_eq!(k, 1.0);
        assert!(KappaInput::new(vec![vec![3, 0], vec![1, 1]], 2).is_err());
    }

    #[test]
    fn task_agreement() {
        let a: BTreeMap<u32, bool> = (0..25).map(|g| (g, g % 3 == 0)).collect();
        let b: BTreeMap<u32, bool> = a.iter().map(|(&g, &l)| (g, !l)).collect();
        let same = BTreeMap::from([(String::from("pour"), a.clone()), (String::from("stir"), a.clone())]);
        assert_eq!(task_agreement_kappa(&same).unwrap(), 1.0);
        let opposite = BTreeMap::from([(String::from("pour"), a.clone()), (String::from("stir"), b)]);
        assert_eq!(task_agreement_kappa(&opposite).unwrap(), -1.0);
        let mut short = a.clone();
        short.remove(&0);
        let bad = BTreeMap::from([(String::from("pour"), a), (String::from("stir"), short)]);
        assert!(task_agreement_kappa(&bad).is_err());
    }

    fn vote(item: &str, who: &str, v: bool) -> VoteRecord {
        VoteRecord {
            item: ItemKey::parse(item).unwrap(),
            annotator: String::from(who),
            vote: v,
        }
    }

    #[test]
    fn qualification_modes() {
        let gold = BTreeMap::from([(ItemKey::parse("m/pour").unwrap(), true), (ItemKey::parse("m/stir").unwrap(), false)]);
        let votes = vec![
            vote("m/pour", "a", true),
            vote("m/stir", "a", false),
            vote("m/pour", "b", true),
            vote("m/stir", "b", true),
            vote("m/pour", "c", false),
            vote("m/stir", "c", true),
            vote("m/cut", "d", true),
        ];
        let q = filter_annotators(&votes, &gold, QualificationMode::AccuracyThreshold(0.0)).unwrap();
        assert_eq!(q.qualified.len(), 3);
        assert_eq!(q.no_gold, vec![String::from("d")]);
        let q = filter_annotators(&votes, &gold, QualificationMode::AccuracyThreshold(1.01)).unwrap();
        assert!(q.qualified.is_empty());
        assert!(aggregate(&votes, Some(&q.qualified)).is_err());
        let q = filter_annotators(&votes, &gold, QualificationMode::TopFraction(0.5)).unwrap();
        assert_eq!(q.qualified, BTreeSet::from([String::from("a"), String::from("b")]));
    }

    #[test]
    fn double_vote_rejected() {
        let votes = vec![vote("m/pour/1", "a", true), vote("m/pour/1", "a", false)];
        assert!(aggregate(&votes, None).is_err());
    }

    #[test]
    fn item_key_round_trip() {
        for s in ["mug/pour", "mug/pour/7"] {
            assert_eq!(ItemKey::parse(s).unwrap().to_string(), s);
        }
        assert!(ItemKey::parse("mug").is_err());
        assert!(ItemKey::parse("mug/pour/x").is_err());
    }
}
