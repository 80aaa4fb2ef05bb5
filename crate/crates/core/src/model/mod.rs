//! Graph-conditioned grasp evaluator, SGN baselines, training and
//! cross-validation.
//!
//! A grasp is scored by encoding the fused grasp+object cloud, attaching the
//! embedding as a node to the object's class node, running `L` graph
//! convolutions `ReLU(Â·H·W)` and feeding the grasp node's output through a
//! small evaluator MLP with a sigmoid.

mod checkpoint;
mod config;
mod pipeline;
mod sgn;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use pipeline::{
    crossval, fold_items, group_of, prepare_samples, random_baseline, CrossvalOutput, FoldItems, Method, PreparedSample,
};
pub use sgn::{sgn_forward, SgnMode, SgnModel};
pub use train::{predict, train, EpochRecord, GraspScorer, History, TrainConfig, TrainItem};

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{EmbeddingTable, Ontology};
use crate::encoder::{check_shapes, encode_on_tape, init_layers, mlp3, EncoderPlan};
use crate::graph::{build_graph, init_node_features, KnowledgeGraph, NodeId, NodeKind, Variant};
use crate::pointcloud::FusedCloud;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// `ReLU(Â·H·W)`.
pub fn gcn_layer(h: &Tensor, a_hat: &Tensor, w: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (h, a, w) = (tape.constant(h.clone()), tape.constant(a_hat.clone()), tape.constant(w.clone()));
    let out = gcn_layer_on_tape(&mut tape, h, a, w)?;
    Ok(tape.value(out).clone())
}

pub fn gcn_layer_on_tape(tape: &mut Tape, h: Var, a_hat: Var, w: Var) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let ahw = tape.matmul(a_hat, hw)?;
    tape.relu(ahw)
}

/// Encoder, GCN stack and evaluator weights in one flat parameter list:
/// encoder tensors, then `W^(0..L)`, then evaluator `W1 b1 W2 b2 W3 b3`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnGraspModel {
    config: ModelConfig,
    params: Vec<Tensor>,
}

impl GcnGraspModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_layers(&Self::shapes(&config), seed)?;
        Ok(GcnGraspModel { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = Self::shapes(&config).into_iter().map(Tensor::zeros).collect();
        Ok(GcnGraspModel { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        check_shapes("gcn model", &Self::shapes(&config), &params)?;
        Ok(GcnGraspModel { config, params })
    }

    pub fn shapes(config: &ModelConfig) -> Vec<Vec<usize>> {
        let mut s = config.encoder.weight_shapes();
        let (d, k) = (config.embedding_dim(), config.gcn_width);
        for l in 0..config.gcn_layers {
            s.push(vec![if l == 0 { d + 1 } else { k }, k]);
        }
        for (i, o) in [(k, k), (k, k), (k, 1)] {
            s.push(vec![i, o]);
            s.push(vec![1, o]);
        }
        s
    }

    pub fn param_names(config: &ModelConfig) -> Vec<String> {
        let n_enc = config.encoder.weight_shapes().len();
        let mut names: Vec<String> = (0..n_enc)
            .map(|i| {
                let (block, j) = (i / 6, i % 6);
                let stage = if block < 3 {
                    format!("encoder.sa{}", block + 1)
                } else {
                    String::from("encoder.head")
                };
                format!("{stage}.{}{}", if j % 2 == 0 { "w" } else { "b" }, j / 2 + 1)
            })
            .collect();
        names.extend((0..config.gcn_layers).map(|l| format!("gcn.w{l}")));
        for j in 0..6 {
            names.push(format!("evaluator.{}{}", if j % 2 == 0 { "w" } else { "b" }, j / 2 + 1));
        }
        names
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn n_encoder(&self) -> usize {
        self.config.encoder.weight_shapes().len()
    }

    pub fn encoder_weights(&self) -> &[Tensor] {
        &self.params[..self.n_encoder()]
    }

    pub fn gcn_weights(&self) -> &[Tensor] {
        let e = self.n_encoder();
        &self.params[e..e + self.config.gcn_layers]
    }

    pub fn evaluator_weights(&self) -> &[Tensor] {
        &self.params[self.n_encoder() + self.config.gcn_layers..]
    }
}

/// Per-dataset precomputation for GCN scoring: the graph, the
/// grasp-augmented normalized adjacency for every anchor, and base node
/// features for every goal task.
#[derive(Debug, Clone)]
pub struct GraphContext {
    graph: KnowledgeGraph,
    include_instances: bool,
    variant: Variant,
    instances: BTreeMap<String, String>,
    attached: BTreeMap<String, Tensor>,
    features: BTreeMap<String, Tensor>,
    no_goal: Tensor,
}

impl GraphContext {
    pub fn new(
        ontology: &Ontology,
        embeddings: &EmbeddingTable,
        variant: Variant,
        include_instances: bool,
    ) -> Result<Self> {
        let graph = build_graph(ontology, variant, include_instances)?;
        let mut attached = BTreeMap::new();
        for (i, node) in graph.nodes().iter().enumerate() {
            if matches!(node.kind, NodeKind::Class | NodeKind::Instance) {
                let g = graph.attach_grasp_node(NodeId(i))?;
                attached.insert(node.token.clone(), g.normalized_adjacency().clone());
            }
        }
        let mut features = BTreeMap::new();
        for (i, node) in graph.nodes().iter().enumerate() {
            if node.kind == NodeKind::Task {
                features.insert(
                    node.token.clone(),
                    init_node_features(&graph, embeddings, None, Some(NodeId(i)))?,
                );
            }
        }
        let no_goal = init_node_features(&graph, embeddings, None, None)?;
        Ok(GraphContext {
            graph,
            include_instances,
            variant,
            instances: ontology.instances.clone(),
            attached,
            features,
            no_goal,
        })
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn embedding_dim(&self) -> usize {
        self.no_goal.cols() - 1
    }

    /// Node the grasp attaches to for `object_id`: its instance node when
    /// instances are in the graph, else its class.
    pub fn anchor_token<'a>(&'a self, object_id: &'a str, class: &'a str) -> &'a str {
        if self.include_instances && self.instances.contains_key(object_id) {
            object_id
        } else {
            class
        }
    }

    pub fn attached_adjacency(&self, anchor: &str) -> Result<&Tensor> {
        self.attached
            .get(anchor)
            .ok_or_else(|| Error::UnknownToken(anchor.to_string()))
    }

    /// Base features (without the grasp row) with `task` as goal. Graphs
    /// without task nodes get an all-zero indicator column.
    pub fn task_features(&self, task: &str) -> Result<&Tensor> {
        if self.variant == Variant::WordnetOnly {
            return Ok(&self.no_goal);
        }
        self.features
            .get(task)
            .ok_or_else(|| Error::UnknownToken(task.to_string()))
    }
}

/// Scores for `tasks` of one grasp, recorded on `tape` as `1×1` vars.
/// `params` mirror [`GcnGraspModel::params`].
pub(crate) fn gcn_scores_on_tape(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &[Var],
    ctx: &GraphContext,
    plan: &EncoderPlan,
    anchor: &str,
    tasks: &[&str],
) -> Result<Vec<Var>> {
    let n_enc = config.encoder.weight_shapes().len();
    let l = config.gcn_layers;
    let (enc, rest) = params.split_at(n_enc);
    let (gcn, eval) = rest.split_at(l);
    let emb = encode_on_tape(tape, enc, plan)?;
    let zero = tape.constant(Tensor::zeros(vec![1, 1]));
    let grasp_row = tape.concat_cols(&[emb, zero])?;
    let a_hat = ctx.attached_adjacency(anchor)?;
    let g = a_hat.rows() - 1;
    let a_hat = tape.constant(a_hat.clone());
    let mut out = Vec::with_capacity(tasks.len());
    for task in tasks {
        let base = tape.constant(ctx.task_features(task)?.clone());
        let mut h = tape.concat_rows(&[base, grasp_row])?;
        for &w in gcn {
            h = gcn_layer_on_tape(tape, h, a_hat, w)?;
        }
        let z = tape.gather_rows(h, &[g])?;
        let logit = mlp3(tape, z, eval, true)?;
        out.push(tape.sigmoid(logit)?);
    }
    Ok(out)
}

/// Score of one grasp for `goal_task`, following the pipeline step by step:
/// encode, attach to `anchor`, initialize features, propagate, evaluate.
pub fn gcn_forward(
    model: &GcnGraspModel,
    graph: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    fused: &FusedCloud,
    anchor: NodeId,
    goal_task: NodeId,
) -> Result<f64> {
    let cfg = model.config();
    if embeddings.dim() != cfg.embedding_dim() {
        return Err(Error::arg(format!(
            "embedding table has dimension {}, model expects {}",
            embeddings.dim(),
            cfg.embedding_dim()
        )));
    }
    let plan = EncoderPlan::new(fused, &cfg.encoder)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = model.params().iter().map(|p| tape.constant(p.clone())).collect();
    let n_enc = cfg.encoder.weight_shapes().len();
    let emb = encode_on_tape(&mut tape, &vars[..n_enc], &plan)?;
    let emb = tape.value(emb).data().to_vec();
    let g = graph.attach_grasp_node(anchor)?;
    let x = init_node_features(&g, embeddings, Some(&emb), Some(goal_task))?;
    let a_hat = tape.constant(g.normalized_adjacency().clone());
    let mut h = tape.constant(x);
    for &w in &vars[n_enc..n_enc + cfg.gcn_layers] {
        h = gcn_layer_on_tape(&mut tape, h, a_hat, w)?;
    }
    let gi = g.grasp_node().expect("attached grasp node").0;
    let z = tape.gather_rows(h, &[gi])?;
    let logit = mlp3(&mut tape, z, &vars[n_enc + cfg.gcn_layers..], true)?;
    let s = tape.sigmoid(logit)?;
    Ok(tape.value(s).data()[0])
}

/// Trainable GCN model bound to the graph context it scores against.
pub struct GcnScorer<'c> {
    pub model: GcnGraspModel,
    pub ctx: &'c GraphContext,
}

impl GraspScorer for GcnScorer<'_> {
    fn params(&self) -> &[Tensor] {
        self.model.params()
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        self.model.params_mut()
    }

    fn trainable(&self) -> Vec<bool> {
        vec![true; self.model.params().len()]
    }

    fn record(
        &self,
        tape: &mut Tape,
        params: &[Var],
        plan: &EncoderPlan,
        object_id: &str,
        class: &str,
        tasks: &[&str],
    ) -> Result<Vec<Var>> {
        let anchor = self.ctx.anchor_token(object_id, class);
        gcn_scores_on_tape(tape, self.model.config(), params, self.ctx, plan, anchor, tasks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{fuse_grasp_object, GraspPose, PointCloud};

    fn ontology() -> Ontology {
        let s = String::from;
        Ontology {
            classes: vec![s("mug.n.04"), s("pan.n.01")],
            concepts: vec![s("container.n.01")],
            hypernym_edges: vec![(s("mug.n.04"), s("container.n.01")), (s("pan.n.01"), s("container.n.01"))],
            tasks: vec![s("pour"), s("flip")],
            used_for: vec![(s("mug.n.04"), s("pour")), (s("pan.n.01"), s("flip")), (s("pan.n.01"), s("pour"))],
            instances: BTreeMap::from([(s("m0"), s("mug.n.04"))]),
        }
    }

    fn fused() -> FusedCloud {
        let pts = (0..40)
            .map(|i| {
                let t = i as f64 / 40.0;
                [t - 0.5, libm::sin(7.0 * t) * 0.3, libm::cos(5.0 * t) * 0.2]
            })
            .collect();
        fuse_grasp_object(&PointCloud::new(pts).unwrap(), &GraspPose::identity()).unwrap()
    }

    #[test]
    fn gcn_layer_examples() {
        let h = Tensor::matrix(2, 1, vec![2.0, 0.0]).unwrap();
        let a = Tensor::matrix(2, 2, vec![0.5; 4]).unwrap();
        let w = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        assert_eq!(gcn_layer(&h, &a, &w).unwrap().data(), &[1.0, 1.0]);
        let neg = Tensor::matrix(1, 1, vec![-1.0]).unwrap();
        let one = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        assert_eq!(gcn_layer(&neg, &one, &one).unwrap().data(), &[0.0]);
    }

    #[test]
    fn zero_model_scores_half() {
        let cfg = ModelConfig::desk();
        let model = GcnGraspModel::zeros(cfg.clone()).unwrap();
        let o = ontology();
        let table = EmbeddingTable::pseudo(o.vocabulary(), cfg.embedding_dim(), 0).unwrap();
        let g = build_graph(&o, Variant::Full, false).unwrap();
        let anchor = g.find(NodeKind::Class, "mug.n.04").unwrap();
        let task = g.find(NodeKind::Task, "pour").unwrap();
        assert_eq!(gcn_forward(&model, &g, &table, &fused(), anchor, task).unwrap(), 0.5);
    }

    #[test]
    fn context_path_matches_reference() {
        let cfg = ModelConfig::desk();
        let model = GcnGraspModel::new(cfg.clone(), 3).unwrap();
        let o = ontology();
        let table = EmbeddingTable::pseudo(o.vocabulary(), cfg.embedding_dim(), 0).unwrap();
        let g = build_graph(&o, Variant::Full, false).unwrap();
        let anchor = g.find(NodeKind::Class, "pan.n.01").unwrap();
        let ctx = GraphContext::new(&o, &table, Variant::Full, false).unwrap();
        let f = fused();
        let plan = EncoderPlan::new(&f, &cfg.encoder).unwrap();
        let mut tape = Tape::new();
        let vars: Vec<Var> = model.params().iter().map(|p| tape.constant(p.clone())).collect();
        let scores = gcn_scores_on_tape(&mut tape, &cfg, &vars, &ctx, &plan, "pan.n.01", &["flip", "pour"]).unwrap();
        for (s, t) in scores.iter().zip(["flip", "pour"]) {
            let task = g.find(NodeKind::Task, t).unwrap();
            let reference = gcn_forward(&model, &g, &table, &f, anchor, task).unwrap();
            assert_eq!(tape.value(*s).data()[0], reference);
            assert!(reference > 0.0 && reference < 1.0);
        }
    }

    #[test]
    fn names_match_shapes() {
        let cfg = ModelConfig::desk();
        assert_eq!(GcnGraspModel::param_names(&cfg).len(), GcnGraspModel::shapes(&cfg).len());
        assert_eq!(GcnGraspModel::param_names(&cfg)[24], "gcn.w0");
    }
}
