//! Data model: ontology, labeled grasps and datasets, plus word-embedding
//! tables and the procedural synthetic dataset.

mod embedding;
mod synthetic;

pub use embedding::{fnv1a64, lemma, pseudo_embedding, EmbeddingTable};
pub use synthetic::{generate_synthetic, HeadShape, SyntheticConfig, SYNTHETIC_TASKS};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::pointcloud::{GraspPose, PointCloud};
use crate::{Error, Result};

/// Semantic knowledge: object classes, hypernym concepts with Is-A edges,
/// tasks with Used-For edges, and object instances.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub classes: Vec<String>,
    pub concepts: Vec<String>,
    /// `(child, parent)` Is-A pairs; the child is a class or a concept.
    pub hypernym_edges: Vec<(String, String)>,
    pub tasks: Vec<String>,
    /// `(class, task)` Used-For pairs.
    pub used_for: Vec<(String, String)>,
    /// Instance id to class token.
    #[serde(default)]
    pub instances: BTreeMap<String, String>,
}

impl Ontology {
    /// Checks declared endpoints, instance classes and Is-A acyclicity.
    pub fn validate(&self) -> Result<()> {
        let classes: BTreeSet<&str> = self.classes.iter().map(String::as_str).collect();
        let concepts: BTreeSet<&str> = self.concepts.iter().map(String::as_str).collect();
        let tasks: BTreeSet<&str> = self.tasks.iter().map(String::as_str).collect();
        for (child, parent) in &self.hypernym_edges {
            if !classes.contains(child.as_str()) && !concepts.contains(child.as_str()) {
                return Err(Error::Dangling(child.clone()));
            }
            if !concepts.contains(parent.as_str()) {
                return Err(Error::Dangling(parent.clone()));
            }
        }
        for (class, task) in &self.used_for {
            if !classes.contains(class.as_str()) {
                return Err(Error::Dangling(class.clone()));
            }
            if !tasks.contains(task.as_str()) {
                return Err(Error::Dangling(task.clone()));
            }
        }
        for (inst, class) in &self.instances {
            if !classes.contains(class.as_str()) {
                return Err(Error::Dangling(format!("{class} (class of instance {inst})")));
            }
        }
        self.check_acyclic()
    }

    fn check_acyclic(&self) -> Result<()> {
        let mut parents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (c, p) in &self.hypernym_edges {
            parents.entry(c.as_str()).or_default().push(p.as_str());
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state: BTreeMap<&str, u8> = BTreeMap::new();
        for &start in parents.keys() {
            if state.get(start).copied().unwrap_or(0) != 0 {
                continue;
            }
            let mut stack: Vec<(&str, usize)> = Vec::from([(start, 0)]);
            state.insert(start, 1);
            while let Some((node, next)) = stack.pop() {
                let ps = parents.get(node).map(Vec::as_slice).unwrap_or(&[]);
                if next < ps.len() {
                    stack.push((node, next + 1));
                    let p = ps[next];
                    match state.get(p).copied().unwrap_or(0) {
                        1 => return Err(Error::Cycle(String::from(p))),
                        0 => {
                            state.insert(p, 1);
                            stack.push((p, 0));
                        }
                        _ => {}
                    }
                } else {
                    state.insert(node, 2);
                }
            }
        }
        Ok(())
    }

    pub fn class_of(&self, instance: &str) -> Option<&str> {
        self.instances.get(instance).map(String::as_str)
    }

    /// Tasks linked to `class` by Used-For.
    pub fn valid_tasks(&self, class: &str) -> BTreeSet<&str> {
        self.used_for
            .iter()
            .filter(|(c, _)| c == class)
            .map(|(_, t)| t.as_str())
            .collect()
    }

    /// Every token that becomes a graph node (instances excluded).
    pub fn vocabulary(&self) -> BTreeSet<&str> {
        self.classes
            .iter()
            .chain(&self.concepts)
            .chain(&self.tasks)
            .map(String::as_str)
            .collect()
    }
}

/// One grasp candidate with its task labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledGrasp {
    pub object_id: String,
    pub grasp_id: u32,
    pub pose: GraspPose,
    /// Task token to label.
    pub labels: BTreeMap<String, bool>,
}

/// A labeled (object, grasp, task) triple, the unit of evaluation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PairKey {
    pub object_id: String,
    pub grasp_id: u32,
    pub task: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub ontology: Ontology,
    pub objects: BTreeMap<String, PointCloud>,
    pub grasps: BTreeMap<String, Vec<LabeledGrasp>>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.ontology.validate()?;
        if self.objects.is_empty() {
            return Err(Error::validation("dataset has no objects"));
        }
        for id in self.objects.keys() {
            if self.ontology.class_of(id).is_none() {
                return Err(Error::validation(format!("object {id} has no class in ontology instances")));
            }
        }
        for (id, grasps) in &self.grasps {
            if !self.objects.contains_key(id) {
                return Err(Error::Dangling(format!("object {id} referenced by grasps")));
            }
            let class = self.ontology.class_of(id).unwrap_or_default();
            let valid = self.ontology.valid_tasks(class);
            let mut seen = BTreeSet::new();
            for g in grasps {
                if g.object_id != *id {
                    return Err(Error::validation(format!(
                        "grasp {} lists object {} but is stored under {id}",
                        g.grasp_id, g.object_id
                    )));
                }
                if !seen.insert(g.grasp_id) {
                    return Err(Error::validation(format!("duplicate grasp id {} on object {id}", g.grasp_id)));
                }
                for task in g.labels.keys() {
                    if !valid.contains(task.as_str()) {
                        return Err(Error::validation(format!(
                            "object {id} (class {class}) grasp {}: task {task} is not Used-For this class",
                            g.grasp_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn class_of(&self, object_id: &str) -> Result<&str> {
        self.ontology
            .class_of(object_id)
            .ok_or_else(|| Error::UnknownToken(String::from(object_id)))
    }

    /// Every labeled triple in canonical order.
    pub fn labeled_pairs(&self) -> Vec<(PairKey, bool)> {
        let mut out = Vec::new();
        for (oid, grasps) in &self.grasps {
            for g in grasps {
                for (task, &label) in &g.labels {
                    out.push((
                        PairKey {
                            object_id: oid.clone(),
                            grasp_id: g.grasp_id,
                            task: task.clone(),
                        },
                        label,
                    ));
                }
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn grasp_count(&self) -> usize {
        self.grasps.values().map(Vec::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn s(x: &str) -> String {
        x.to_string()
    }

    fn mini() -> Ontology {
        Ontology {
            classes: vec![s("mug.n.04")],
            concepts: vec![s("vessel.n.03"), s("container.n.01")],
            hypernym_edges: vec![(s("mug.n.04"), s("vessel.n.03")), (s("vessel.n.03"), s("container.n.01"))],
            tasks: vec![s("pour")],
            used_for: vec![(s("mug.n.04"), s("pour"))],
            instances: BTreeMap::from([(s("m1"), s("mug.n.04"))]),
        }
    }

    #[test]
    fn valid_ontology_passes() {
        mini().validate().unwrap();
    }

    #[test]
    fn dangling_endpoint_names_token() {
        let mut o = mini();
        o.used_for.push((s("mug.n.04"), s("stir")));
        assert_eq!(o.validate(), Err(Error::Dangling(s("stir"))));
    }

    #[test]
    fn cycle_is_rejected() {
        let mut o = mini();
        o.hypernym_edges.push((s("container.n.01"), s("vessel.n.03")));
        assert!(matches!(o.validate(), Err(Error::Cycle(_))));
    }

    #[test]
    fn invalid_task_label_is_rejected() {
        let ontology = Ontology {
            tasks: vec![s("pour"), s("cut")],
            ..mini()
        };
        let cloud = PointCloud::new(vec![[0.0; 3]]).unwrap();
        let grasp = LabeledGrasp {
            object_id: s("m1"),
            grasp_id: 0,
            pose: GraspPose::identity(),
            labels: BTreeMap::from([(s("cut"), true)]),
        };
        let ds = Dataset {
            ontology,
            objects: BTreeMap::from([(s("m1"), cloud)]),
            grasps: BTreeMap::from([(s("m1"), vec![grasp])]),
        };
        assert!(matches!(ds.validate(), Err(Error::Validation(_))));
    }
}
