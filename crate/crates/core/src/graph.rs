//! Knowledge graph over tasks, object classes and hypernym concepts.
//!
//! Nodes are kept in canonical order (kind, then token) so adjacency
//! matrices are reproducible. Grasp nodes are transient: they are attached
//! to a copy of the graph for a single forward pass.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingTable, Ontology};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Class,
    Concept,
    Instance,
    Task,
    Grasp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    pub token: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    TasksOnly,
    WordnetOnly,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::TasksOnly => "tasks_only",
            Variant::WordnetOnly => "wordnet_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "tasks_only" => Ok(Variant::TasksOnly),
            "wordnet_only" => Ok(Variant::WordnetOnly),
            other => Err(Error::arg(format!("unknown graph variant `{other}`"))),
        }
    }
}

/// Undirected graph with a cached Kipf-normalized adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    nodes: Vec<Node>,
    /// Pairs `(i, j)` with `i < j`.
    edges: BTreeSet<(usize, usize)>,
    normalized: Tensor,
}

/// Kipf renormalization `D̃^{-1/2}(A+I)D̃^{-1/2}` of a binary symmetric
/// adjacency with zero diagonal.
pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    let (n, m) = a.dims2().ok_or_else(|| Error::arg("adjacency must be a matrix"))?;
    if n != m || a.shape().len() != 2 {
        return Err(Error::arg(format!("adjacency must be square, got {:?}", a.shape())));
    }
    let d = a.data();
    for i in 0..n {
        if d[i * n + i] != 0.0 {
            return Err(Error::arg(format!("adjacency has a self-edge at node {i}")));
        }
        for j in 0..i {
            if d[i * n + j] != d[j * n + i] {
                return Err(Error::arg(format!("adjacency is not symmetric at ({i}, {j})")));
            }
        }
    }
    let deg: Vec<f64> = (0..n)
        .map(|i| 1.0 + d[i * n..(i + 1) * n].iter().sum::<f64>())
        .collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let aij = if i == j { 1.0 } else { d[i * n + j] };
            if aij != 0.0 {
                out[i * n + j] = aij / libm::sqrt(deg[i] * deg[j]);
            }
        }
    }
    Tensor::matrix(n, n, out)
}

fn dense(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for &(i, j) in edges {
        a[i * n + j] = 1.0;
        a[j * n + i] = 1.0;
    }
    a
}

/// Builds the graph for `variant`. Tasks-only drops concepts and Is-A edges;
/// WordNet-only drops tasks and Used-For edges. Instances, when included,
/// connect to their class.
pub fn build_graph(ontology: &Ontology, variant: Variant, include_instances: bool) -> Result<KnowledgeGraph> {
    ontology.validate()?;
    let with_concepts = variant != Variant::TasksOnly;
    let with_tasks = variant != Variant::WordnetOnly;

    let mut nodes: BTreeSet<Node> = BTreeSet::new();
    let add = |nodes: &mut BTreeSet<Node>, kind, token: &str| {
        nodes.insert(Node {
            kind,
            token: token.to_string(),
        });
    };
    for c in &ontology.classes {
        add(&mut nodes, NodeKind::Class, c);
    }
    if with_concepts {
        for c in &ontology.concepts {
            add(&mut nodes, NodeKind::Concept, c);
        }
    }
    if with_tasks {
        for t in &ontology.tasks {
            add(&mut nodes, NodeKind::Task, t);
        }
    }
    if include_instances {
        for i in ontology.instances.keys() {
            add(&mut nodes, NodeKind::Instance, i);
        }
    }
    let nodes: Vec<Node> = nodes.into_iter().collect();
    let mut index: BTreeMap<(NodeKind, &str), usize> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        index.insert((n.kind, n.token.as_str()), i);
    }
    let class_set: BTreeSet<&str> = ontology.classes.iter().map(String::as_str).collect();
    let lookup_hyper = |tok: &str| -> usize {
        let kind = if class_set.contains(tok) {
            NodeKind::Class
        } else {
            NodeKind::Concept
        };
        index[&(kind, tok)]
    };

    let mut edges = BTreeSet::new();
    let mut link = |a: usize, b: usize| {
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    };
    if with_concepts {
        for (child, parent) in &ontology.hypernym_edges {
            link(lookup_hyper(child), lookup_hyper(parent));
        }
    }
    if with_tasks {
        for (class, task) in &ontology.used_for {
            link(index[&(NodeKind::Class, class.as_str())], index[&(NodeKind::Task, task.as_str())]);
        }
    }
    if include_instances {
        for (inst, class) in &ontology.instances {
            link(
                index[&(NodeKind::Instance, inst.as_str())],
                index[&(NodeKind::Class, class.as_str())],
            );
        }
    }
    KnowledgeGraph::from_parts(nodes, edges)
}

impl KnowledgeGraph {
    fn from_parts(nodes: Vec<Node>, edges: BTreeSet<(usize, usize)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("knowledge graph"));
        }
        let n = nodes.len();
        let normalized = normalize_adjacency(&Tensor::matrix(n, n, dense(n, &edges))?)?;
        Ok(KnowledgeGraph {
            nodes,
            edges,
            normalized,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.edges.iter().map(|&(a, b)| (NodeId(a), NodeId(b)))
    }

    pub fn find(&self, kind: NodeKind, token: &str) -> Option<NodeId> {
        self.nodes
            .binary_search_by(|n| (n.kind, n.token.as_str()).cmp(&(kind, token)))
            .ok()
            .map(NodeId)
    }

    pub fn require(&self, kind: NodeKind, token: &str) -> Result<NodeId> {
        self.find(kind, token)
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == id.0 || b == id.0).count()
    }

    /// Binary adjacency, row-major `|V|×|V|`.
    pub fn adjacency(&self) -> Tensor {
        let n = self.nodes.len();
        Tensor::from_parts(vec![n, n], dense(n, &self.edges))
    }

    pub fn normalized_adjacency(&self) -> &Tensor {
        &self.normalized
    }

    /// Copy of the graph with one grasp node linked to `anchor`, which must
    /// be a class or instance node. The grasp node sorts last.
    pub fn attach_grasp_node(&self, anchor: NodeId) -> Result<KnowledgeGraph> {
        let kind = self
            .nodes
            .get(anchor.0)
            .ok_or_else(|| Error::arg(format!("anchor {} out of range", anchor.0)))?
            .kind;
        if !matches!(kind, NodeKind::Class | NodeKind::Instance) {
            return Err(Error::arg(format!("grasp nodes anchor to class or instance nodes, not {kind:?}")));
        }
        let mut nodes = self.nodes.clone();
        let g = nodes.len();
        nodes.push(Node {
            kind: NodeKind::Grasp,
            token: String::from("grasp"),
        });
        let mut edges = self.edges.clone();
        edges.insert((anchor.0, g));
        KnowledgeGraph::from_parts(nodes, edges)
    }

    pub fn grasp_node(&self) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| n.kind == NodeKind::Grasp)
            .map(NodeId)
    }

    pub fn document(&self) -> GraphDocument {
        GraphDocument {
            version: GraphDocument::VERSION,
            nodes: self.nodes.iter().filter(|n| n.kind != NodeKind::Grasp).cloned().collect(),
            edges: self
                .edges
                .iter()
                .filter(|&&(a, b)| self.nodes[a].kind != NodeKind::Grasp && self.nodes[b].kind != NodeKind::Grasp)
                .map(|&(a, b)| [a, b])
                .collect(),
        }
    }

    pub fn from_document(doc: &GraphDocument) -> Result<Self> {
        if doc.version != GraphDocument::VERSION {
            return Err(Error::validation(format!("unsupported graph document version {}", doc.version)));
        }
        if doc.nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("graph nodes are not in canonical order"));
        }
        if doc.nodes.iter().any(|n| n.kind == NodeKind::Grasp) {
            return Err(Error::validation("graph documents never contain grasp nodes"));
        }
        let mut edges = BTreeSet::new();
        for &[a, b] in &doc.edges {
            if a == b || a >= doc.nodes.len() || b >= doc.nodes.len() {
                return Err(Error::validation(format!("invalid edge [{a}, {b}]")));
            }
            edges.insert((a.min(b), a.max(b)));
        }
        KnowledgeGraph::from_parts(doc.nodes.clone(), edges)
    }
}

/// Serializable form of a graph: canonical node list and index pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub version: u32,
    pub nodes: Vec<Node>,
    pub edges: Vec<[usize; 2]>,
}

impl GraphDocument {
    pub const VERSION: u32 = 1;
}

/// Node features `|V|×(D+1)`: embedding then goal-task indicator. The grasp
/// row, if the graph has one, carries `grasp_embedding` and indicator 0.
/// Without a goal task (graphs lacking task nodes) the indicator column is 0.
pub fn init_node_features(
    graph: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    grasp_embedding: Option<&[f64]>,
    goal_task: Option<NodeId>,
) -> Result<Tensor> {
    let d = embeddings.dim();
    if let Some(g) = goal_task {
        match graph.nodes.get(g.0) {
            Some(n) if n.kind == NodeKind::Task => {}
            _ => return Err(Error::arg(format!("goal node {} is not a task node", g.0))),
        }
    }
    let mut out = Vec::with_capacity(graph.node_count() * (d + 1));
    for (i, node) in graph.nodes.iter().enumerate() {
        if node.kind == NodeKind::Grasp {
            let e = grasp_embedding.ok_or_else(|| Error::arg("graph has a grasp node but no grasp embedding"))?;
            if e.len() != d {
                return Err(Error::arg(format!("grasp embedding has {} values, expected {d}", e.len())));
            }
            out.extend_from_slice(e);
            out.push(0.0);
        } else {
            out.extend_from_slice(embeddings.get(&node.token)?);
            out.push(if goal_task == Some(NodeId(i)) { 1.0 } else { 0.0 });
        }
    }
    Tensor::matrix(graph.node_count(), d + 1, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn isolated_node() {
        let a = normalize_adjacency(&Tensor::matrix(1, 1, vec![0.0]).unwrap()).unwrap();
        assert_eq!(a.data(), &[1.0]);
    }

    #[test]
    fn single_edge() {
        let a = normalize_adjacency(&Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap()).unwrap();
        close(a.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn path_of_three() {
        let a = Tensor::matrix(3, 3, vec![0., 1., 0., 1., 0., 1., 0., 1., 0.]).unwrap();
        let n = normalize_adjacency(&a).unwrap();
        assert!((n.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((n.get(0, 1) - 0.408248290463863).abs() < 1e-12);
        assert!((n.get(1, 1) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(n.get(0, 2), 0.0);
    }

    #[test]
    fn asymmetric_rejected() {
        let a = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(normalize_adjacency(&a).is_err());
    }

    fn two_node() -> KnowledgeGraph {
        let o = Ontology {
            classes: vec![String::from("mug.n.04")],
            tasks: vec![String::from("pour")],
            used_for: vec![(String::from("mug.n.04"), String::from("pour"))],
            ..Ontology::default()
        };
        build_graph(&o, Variant::Full, false).unwrap()
    }

    #[test]
    fn attach_on_two_node_graph() {
        let g = two_node();
        let h = g.attach_grasp_node(NodeId(0)).unwrap();
        assert_eq!((h.node_count(), h.edge_count()), (3, 2));
        let n = h.normalized_adjacency();
        // d̃ = (3, 2, 2)
        assert!((n.get(0, 0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((n.get(0, 2) - 1.0 / libm::sqrt(6.0)).abs() < 1e-12);
        assert!((n.get(2, 2) - 0.5).abs() < 1e-12);
        assert_eq!(n.get(1, 2), 0.0);
        assert_eq!(g.node_count(), 2);
        assert!(g.attach_grasp_node(NodeId(1)).is_err());
        assert!(h.attach_grasp_node(NodeId(2)).is_err());
    }

    #[test]
    fn indicator_follows_node_order() {
        let g = two_node().attach_grasp_node(NodeId(0)).unwrap();
        let table = EmbeddingTable::pseudo(["mug.n.04", "pour"], 4, 1).unwrap();
        let goal = g.find(NodeKind::Task, "pour");
        let x = init_node_features(&g, &table, Some(&[0.5; 4]), goal).unwrap();
        assert_eq!(x.shape(), &[3, 5]);
        let ind: Vec<f64> = (0..3).map(|r| x.get(r, 4)).collect();
        assert_eq!(ind, vec![0.0, 1.0, 0.0]);
        assert_eq!(&x.data()[10..14], &[0.5; 4]);
        assert!(init_node_features(&g, &table, Some(&[0.5; 4]), Some(NodeId(0))).is_err());
    }

    #[test]
    fn document_round_trip() {
        let g = two_node();
        let doc = g.document();
        assert_eq!(KnowledgeGraph::from_document(&doc).unwrap(), g);
        let with_grasp = g.attach_grasp_node(NodeId(0)).unwrap();
        assert_eq!(with_grasp.document(), doc);
    }
}
