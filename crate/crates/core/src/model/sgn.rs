use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::GraspScorer;
use crate::dataset::{EmbeddingTable, Ontology};
use crate::encoder::{encode_on_tape, init_layers, mlp3, EncoderConfig, EncoderPlan};
use crate::pointcloud::FusedCloud;
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgnMode {
    /// Task and class embeddings are trained from random initialization.
    Learned,
    /// Task and class embeddings are fixed word vectors.
    Frozen,
}

/// Shape encoder plus task and class embeddings, concatenated into an MLP.
///
/// Parameters: encoder tensors, task table `T×E`, class table `C×E`, then
/// head `W1 b1 W2 b2 W3 b3` mapping `D+2E → K → K → 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnModel {
    encoder: EncoderConfig,
    mode: SgnMode,
    tasks: Vec<String>,
    classes: Vec<String>,
    params: Vec<Tensor>,
}

impl SgnModel {
    /// Builds a model whose vocabulary is the ontology's tasks and classes.
    /// Frozen mode copies vectors from `words`; learned mode draws them with
    /// `seed` and only uses `words` for the dimension.
    pub fn new(
        encoder: EncoderConfig,
        hidden: usize,
        mode: SgnMode,
        ontology: &Ontology,
        words: &EmbeddingTable,
        seed: u64,
    ) -> Result<Self> {
        encoder.validate()?;
        if hidden == 0 {
            return Err(Error::arg("hidden width must be positive"));
        }
        let mut tasks = ontology.tasks.clone();
        tasks.sort();
        tasks.dedup();
        let mut classes = ontology.classes.clone();
        classes.sort();
        classes.dedup();
        let e = words.dim();
        let d = encoder.embedding_dim();
        let mut params = encoder.init_weights(rng::derive_seed(seed, &[0]))?;
        let mut r = rng::seeded(rng::derive_seed(seed, &[1]));
        for vocab in [&tasks, &classes] {
            let data: Vec<f64> = match mode {
                SgnMode::Frozen => {
                    let mut v = Vec::with_capacity(vocab.len() * e);
                    for t in vocab.iter() {
                        v.extend_from_slice(words.get(t)?);
                    }
                    v
                }
                SgnMode::Learned => {
                    let std = 1.0 / libm::sqrt(e as f64);
                    (0..vocab.len() * e).map(|_| std * rng::normal(&mut r)).collect()
                }
            };
            params.push(Tensor::matrix(vocab.len(), e, data)?);
        }
        let head_shapes = vec![
            vec![d + 2 * e, hidden],
            vec![1, hidden],
            vec![hidden, hidden],
            vec![1, hidden],
            vec![hidden, 1],
            vec![1, 1],
        ];
        params.extend(init_layers(&head_shapes, rng::derive_seed(seed, &[2]))?);
        Ok(SgnModel {
            encoder,
            mode,
            tasks,
            classes,
            params,
        })
    }

    /// Same architecture with every weight set to zero.
    pub fn zeroed(mut self) -> Self {
        for p in &mut self.params {
            *p = Tensor::zeros(p.shape().to_vec());
        }
        self
    }

    pub fn mode(&self) -> SgnMode {
        self.mode
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.encoder
    }

    fn n_encoder(&self) -> usize {
        self.encoder.weight_shapes().len()
    }

    fn index(vocab: &[String], token: &str) -> Result<usize> {
        vocab
            .binary_search_by(|t| t.as_str().cmp(token))
            .map_err(|_| Error::UnknownToken(token.to_string()))
    }

    fn record_scores(
        &self,
        tape: &mut Tape,
        params: &[Var],
        plan: &EncoderPlan,
        class: &str,
        tasks: &[&str],
    ) -> Result<Vec<Var>> {
        let ne = self.n_encoder();
        let emb = encode_on_tape(tape, &params[..ne], plan)?;
        let ci = Self::index(&self.classes, class)?;
        let c = tape.gather_rows(params[ne + 1], &[ci])?;
        let mut out = Vec::with_capacity(tasks.len());
        for task in tasks {
            let ti = Self::index(&self.tasks, task)?;
            let t = tape.gather_rows(params[ne], &[ti])?;
            let x = tape.concat_cols(&[emb, t, c])?;
            let logit = mlp3(tape, x, &params[ne + 2..], true)?;
            out.push(tape.sigmoid(logit)?);
        }
        Ok(out)
    }
}

/// Score of one fused cloud for `task_token` on an object of `class_token`.
pub fn sgn_forward(model: &SgnModel, fused: &FusedCloud, class_token: &str, task_token: &str) -> Result<f64> {
    let plan = EncoderPlan::new(fused, &model.encoder)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = model.params.iter().map(|p| tape.constant(p.clone())).collect();
    let s = model.record_scores(&mut tape, &vars, &plan, class_token, &[task_token])?;
    let v = tape.value(s[0]).data()[0];
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidTensor(format!("score {v} left (0, 1)")));
    }
    Ok(v)
}

impl GraspScorer for SgnModel {
    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn trainable(&self) -> Vec<bool> {
        let ne = self.n_encoder();
        (0..self.params.len())
            .map(|i| self.mode == SgnMode::Learned || !(i == ne || i == ne + 1))
            .collect()
    }

    fn record(
        &self,
        tape: &mut Tape,
        params: &[Var],
        plan: &EncoderPlan,
        _object_id: &str,
        class: &str,
        tasks: &[&str],
    ) -> Result<Vec<Var>> {
        self.record_scores(tape, params, plan, class, tasks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{fuse_grasp_object, GraspPose, PointCloud};

    fn setup() -> (Ontology, EmbeddingTable, FusedCloud) {
        let s = String::from;
        let o = Ontology {
            classes: vec![s("mug.n.04")],
            tasks: vec![s("pour"), s("handover")],
            used_for: vec![(s("mug.n.04"), s("pour")), (s("mug.n.04"), s("handover"))],
            ..Ontology::default()
        };
        let table = EmbeddingTable::pseudo(o.vocabulary(), 32, 1).unwrap();
        let pts = (0..30).map(|i| [i as f64 * 0.01, (i % 3) as f64 * 0.02, (i % 5) as f64 * 0.01]).collect();
        let f = fuse_grasp_object(&PointCloud::new(pts).unwrap(), &GraspPose::identity()).unwrap();
        (o, table, f)
    }

    #[test]
    fn zero_weights_score_half() {
        let (o, t, f) = setup();
        let m = SgnModel::new(EncoderConfig::desk(), 32, SgnMode::Learned, &o, &t, 0).unwrap().zeroed();
        assert_eq!(sgn_forward(&m, &f, "mug.n.04", "pour").unwrap(), 0.5);
    }

    #[test]
    fn task_token_matters_and_unknown_is_error() {
        let (o, t, f) = setup();
        for seed in 0..10 {
            let m = SgnModel::new(EncoderConfig::desk(), 32, SgnMode::Learned, &o, &t, seed).unwrap();
            let a = sgn_forward(&m, &f, "mug.n.04", "pour").unwrap();
            assert_eq!(a, sgn_forward(&m, &f, "mug.n.04", "pour").unwrap());
            assert_ne!(a, sgn_forward(&m, &f, "mug.n.04", "handover").unwrap());
        }
        let m = SgnModel::new(EncoderConfig::desk(), 32, SgnMode::Frozen, &o, &t, 0).unwrap();
        assert!(sgn_forward(&m, &f, "mug.n.04", "stir").is_err());
        let tr = m.trainable();
        assert_eq!(tr.iter().filter(|&&x| !x).count(), 2);
    }
}
