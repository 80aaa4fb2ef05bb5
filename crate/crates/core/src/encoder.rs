//! Hierarchical set-abstraction encoder for fused grasp+object clouds.
//!
//! Each stage picks centroids by farthest point sampling, groups the k
//! nearest distinct positions around each centroid, runs the re-centered
//! group through a shared three-layer MLP and max-pools per group. A final
//! three-layer head maps the pooled global feature to the embedding.
//!
//! Grouping depends only on geometry, so it is computed once per cloud as an
//! [`EncoderPlan`] and reused across weight updates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use crate::pointcloud::{dist2, farthest_point_sample, sub, FusedCloud, Point3};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Samples {
    Count(usize),
    /// One global group centered at the origin.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetAbstractionConfig {
    pub samples: Samples,
    /// Neighbor count; clamped to the number of available positions.
    pub neighbors: usize,
    pub mlp_widths: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: [SetAbstractionConfig; 3],
    pub head_widths: [usize; 3],
}

/// Weight tensors per MLP: `W1, b1, W2, b2, W3, b3`.
const TENSORS_PER_MLP: usize = 6;

impl EncoderConfig {
    pub fn paper() -> Self {
        EncoderConfig {
            layers: [
                SetAbstractionConfig {
                    samples: Samples::Count(512),
                    neighbors: 32,
                    mlp_widths: [64, 64, 128],
                },
                SetAbstractionConfig {
                    samples: Samples::Count(128),
                    neighbors: 32,
                    mlp_widths: [128, 128, 256],
                },
                SetAbstractionConfig {
                    samples: Samples::All,
                    neighbors: 32,
                    mlp_widths: [256, 512, 1024],
                },
            ],
            head_widths: [1024, 512, 300],
        }
    }

    pub fn desk() -> Self {
        EncoderConfig {
            layers: [
                SetAbstractionConfig {
                    samples: Samples::Count(64),
                    neighbors: 8,
                    mlp_widths: [16, 16, 32],
                },
                SetAbstractionConfig {
                    samples: Samples::Count(16),
                    neighbors: 8,
                    mlp_widths: [32, 32, 64],
                },
                SetAbstractionConfig {
                    samples: Samples::All,
                    neighbors: 8,
                    mlp_widths: [64, 64, 128],
                },
            ],
            head_widths: [128, 64, 32],
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.head_widths[2]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.neighbors == 0 || l.samples == Samples::Count(0) || l.mlp_widths.contains(&0) {
                return Err(Error::arg(format!("set abstraction layer {i}: sizes must be positive")));
            }
        }
        if self.head_widths.contains(&0) {
            return Err(Error::arg("head widths must be positive"));
        }
        Ok(())
    }

    /// Shapes of every weight tensor in canonical order.
    pub fn weight_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut feat = 1;
        for l in &self.layers {
            mlp_shapes(&mut shapes, 3 + feat, l.mlp_widths);
            feat = l.mlp_widths[2];
        }
        mlp_shapes(&mut shapes, feat, self.head_widths);
        shapes
    }

    pub fn init_weights(&self, seed: u64) -> Result<Vec<Tensor>> {
        self.validate()?;
        init_layers(&self.weight_shapes(), seed)
    }

    pub fn check_weights(&self, weights: &[Tensor]) -> Result<()> {
        check_shapes("encoder", &self.weight_shapes(), weights)
    }
}

fn mlp_shapes(out: &mut Vec<Vec<usize>>, input: usize, widths: [usize; 3]) {
    let mut fan_in = input;
    for w in widths {
        out.push(vec![fan_in, w]);
        out.push(vec![1, w]);
        fan_in = w;
    }
}

/// He-normal matrices for `[fan_in, fan_out]` shapes, zero bias rows.
pub(crate) fn init_layers(shapes: &[Vec<usize>], seed: u64) -> Result<Vec<Tensor>> {
    let mut r = rng::seeded(seed);
    shapes
        .iter()
        .map(|s| {
            if s[0] == 1 {
                return Ok(Tensor::zeros(s.clone()));
            }
            let std = libm::sqrt(2.0 / s[0] as f64);
            let data = (0..s[0] * s[1]).map(|_| std * rng::normal(&mut r)).collect();
            Tensor::new(s.clone(), data)
        })
        .collect()
}

pub(crate) fn check_shapes(what: &str, expected: &[Vec<usize>], weights: &[Tensor]) -> Result<()> {
    if weights.len() != expected.len() {
        return Err(Error::arg(format!(
            "{what}: expected {} weight tensors, got {}",
            expected.len(),
            weights.len()
        )));
    }
    for (e, w) in expected.iter().zip(weights) {
        if w.shape() != e.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "weights",
                lhs: e.clone(),
                rhs: w.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// `x·W + b`, optionally followed by ReLU.
pub(crate) fn linear(tape: &mut Tape, x: Var, w: Var, b: Var, relu: bool) -> Result<Var> {
    let h = tape.matmul(x, w)?;
    let h = tape.add(h, b)?;
    if relu {
        tape.relu(h)
    } else {
        Ok(h)
    }
}

/// Three-layer MLP from six consecutive weight vars; ReLU after each layer
/// unless `linear_out` is set, in which case the last layer stays linear.
pub(crate) fn mlp3(tape: &mut Tape, x: Var, p: &[Var], linear_out: bool) -> Result<Var> {
    let h = linear(tape, x, p[0], p[1], true)?;
    let h = linear(tape, h, p[2], p[3], true)?;
    linear(tape, h, p[4], p[5], !linear_out)
}

#[derive(Debug, Clone, PartialEq)]
struct StagePlan {
    /// Input rows per group, concatenated.
    rows: Vec<usize>,
    /// Group boundaries into `rows`.
    offsets: Vec<usize>,
    /// Member position minus group centroid, `rows.len()×3`.
    rel: Vec<f64>,
    centroids: Vec<Point3>,
}

/// Geometry-only part of an encoder pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPlan {
    stages: Vec<StagePlan>,
    indicator: Vec<f64>,
}

impl EncoderPlan {
    pub fn new(fused: &FusedCloud, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        if fused.is_empty() {
            return Err(Error::Empty("fused cloud"));
        }
        let mut points: Vec<Point3> = fused.points().to_vec();
        let mut stages = Vec::with_capacity(3);
        for layer in &cfg.layers {
            let stage = plan_stage(&points, layer)?;
            points = stage.centroids.clone();
            stages.push(stage);
        }
        Ok(EncoderPlan {
            stages,
            indicator: fused.indicator().to_vec(),
        })
    }

    /// Centroid counts per stage.
    pub fn stage_sizes(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.centroids.len()).collect()
    }
}

fn lex(a: &Point3, b: &Point3) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

fn plan_stage(points: &[Point3], cfg: &SetAbstractionConfig) -> Result<StagePlan> {
    // Distinct positions in lexicographic order, each with its member rows.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex(&points[a], &points[b]).then(a.cmp(&b)));
    let mut positions: Vec<Point3> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for i in order {
        if positions.last() == Some(&points[i]) {
            members.last_mut().expect("nonempty").push(i);
        } else {
            positions.push(points[i]);
            members.push(vec![i]);
        }
    }

    let mut plan = StagePlan {
        rows: Vec::new(),
        offsets: vec![0],
        rel: Vec::new(),
        centroids: Vec::new(),
    };
    match cfg.samples {
        Samples::All => {
            let c = [0.0; 3];
            for (pos, m) in positions.iter().zip(&members) {
                for &r in m {
                    plan.rows.push(r);
                    plan.rel.extend_from_slice(&sub(*pos, c));
                }
            }
            plan.offsets.push(plan.rows.len());
            plan.centroids.push(c);
        }
        Samples::Count(s) => {
            let centers = farthest_point_sample(&positions, s.min(positions.len()))?;
            let k = cfg.neighbors.min(positions.len());
            let mut by_dist: Vec<(f64, usize)> = Vec::with_capacity(positions.len());
            for &ci in &centers {
                let c = positions[ci];
                by_dist.clear();
                by_dist.extend(positions.iter().enumerate().map(|(j, p)| (dist2(*p, c), j)));
                // positions are lexicographically sorted, so index order is the tie rule
                by_dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut near: Vec<(f64, usize)> = by_dist[..k].to_vec();
                near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, j) in &near {
                    for &r in &members[j] {
                        plan.rows.push(r);
                        plan.rel.extend_from_slice(&sub(positions[j], c));
                    }
                }
                plan.offsets.push(plan.rows.len());
                plan.centroids.push(c);
            }
        }
    }
    Ok(plan)
}

/// Records the encoder on `tape` and returns the `1×D` embedding.
/// `params` are the encoder weights as vars, in [`EncoderConfig::weight_shapes`] order.
pub fn encode_on_tape(tape: &mut Tape, params: &[Var], plan: &EncoderPlan) -> Result<Var> {
    let n_stages = plan.stages.len();
    if params.len() != (n_stages + 1) * TENSORS_PER_MLP {
        return Err(Error::arg(format!(
            "encoder expects {} weight vars, got {}",
            (n_stages + 1) * TENSORS_PER_MLP,
            params.len()
        )));
    }
    let mut features: Option<Var> = None;
    for (si, stage) in plan.stages.iter().enumerate() {
        let n = stage.rows.len();
        let input = match features {
            None => {
                let mut data = Vec::with_capacity(n * 4);
                for (i, &r) in stage.rows.iter().enumerate() {
                    data.extend_from_slice(&stage.rel[i * 3..i * 3 + 3]);
                    data.push(plan.indicator[r]);
                }
                tape.constant(Tensor::matrix(n, 4, data)?)
            }
            Some(f) => {
                let rel = tape.constant(Tensor::matrix(n, 3, stage.rel.clone())?);
                let gathered = tape.gather_rows(f, &stage.rows)?;
                tape.concat_cols(&[rel, gathered])?
            }
        };
        let p = &params[si * TENSORS_PER_MLP..(si + 1) * TENSORS_PER_MLP];
        let h = mlp3(tape, input, p, false)?;
        features = Some(tape.max_pool_segments(h, &stage.offsets)?);
    }
    let global = features.ok_or(Error::Empty("encoder stages"))?;
    let head = &params[n_stages * TENSORS_PER_MLP..];
    mlp3(tape, global, head, true)
}

/// Embedding of `fused` under fixed weights.
pub fn encode(fused: &FusedCloud, cfg: &EncoderConfig, weights: &[Tensor]) -> Result<Vec<f64>> {
    cfg.check_weights(weights)?;
    let plan = EncoderPlan::new(fused, cfg)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = weights.iter().map(|w| tape.constant(w.clone())).collect();
    let out = encode_on_tape(&mut tape, &vars, &plan)?;
    Ok(tape.value(out).data().to_vec())
}

/// One set-abstraction stage on explicit points and features, returning
/// centroids and pooled features. `weights` are the stage's six MLP tensors.
pub fn set_abstraction(
    points: &[Point3],
    features: &Tensor,
    cfg: &SetAbstractionConfig,
    weights: &[Tensor],
) -> Result<(Vec<Point3>, Tensor)> {
    if points.is_empty() {
        return Err(Error::Empty("set_abstraction points"));
    }
    if features.rows() != points.len() {
        return Err(Error::arg(format!(
            "set_abstraction: {} points but {} feature rows",
            points.len(),
            features.rows()
        )));
    }
    let mut expected = Vec::new();
    mlp_shapes(&mut expected, 3 + features.cols(), cfg.mlp_widths);
    check_shapes("set_abstraction", &expected, weights)?;
    let stage = plan_stage(points, cfg)?;
    let mut tape = Tape::new();
    let p: Vec<Var> = weights.iter().map(|w| tape.constant(w.clone())).collect();
    let f = tape.constant(features.clone());
    let rel = tape.constant(Tensor::matrix(stage.rows.len(), 3, stage.rel.clone())?);
    let gathered = tape.gather_rows(f, &stage.rows)?;
    let input = tape.concat_cols(&[rel, gathered])?;
    let h = mlp3(&mut tape, input, &p, false)?;
    let pooled = tape.max_pool_segments(h, &stage.offsets)?;
    Ok((stage.centroids, tape.value(pooled).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::GraspPose;

    fn cloud(n: usize, seed: u64) -> FusedCloud {
        let mut r = rng::seeded(seed);
        let pts: Vec<Point3> = (0..n)
            .map(|_| {
                [
                    rng::uniform_range(&mut r, -1.0, 1.0),
                    rng::uniform_range(&mut r, -1.0, 1.0),
                    rng::uniform_range(&mut r, -1.0, 1.0),
                ]
            })
            .collect();
        crate::pointcloud::fuse_grasp_object(&crate::pointcloud::PointCloud::new(pts).unwrap(), &GraspPose::identity())
            .unwrap()
    }

    #[test]
    fn desk_embedding_length() {
        let cfg = EncoderConfig::desk();
        let w = cfg.init_weights(1).unwrap();
        let e = encode(&cloud(200, 2), &cfg, &w).unwrap();
        assert_eq!(e.len(), 32);
    }

    #[test]
    fn stage_sizes_follow_samples() {
        let plan = EncoderPlan::new(&cloud(200, 3), &EncoderConfig::desk()).unwrap();
        assert_eq!(plan.stage_sizes(), vec![64, 16, 1]);
    }

    #[test]
    fn global_stage_has_one_centroid() {
        let cfg = SetAbstractionConfig {
            samples: Samples::All,
            neighbors: 4,
            mlp_widths: [3, 3, 2],
        };
        let mut shapes = Vec::new();
        mlp_shapes(&mut shapes, 4, cfg.mlp_widths);
        let w = init_layers(&shapes, 5).unwrap();
        let f = cloud(10, 4);
        let feats = Tensor::column(f.indicator().to_vec()).unwrap();
        let (c, out) = set_abstraction(f.points(), &feats, &cfg, &w).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(out.shape(), &[1, 2]);
    }

    #[test]
    fn weight_mismatch_is_an_error() {
        let cfg = EncoderConfig::desk();
        let mut w = cfg.init_weights(1).unwrap();
        w.pop();
        assert!(encode(&cloud(50, 1), &cfg, &w).is_err());
    }

    #[test]
    fn duplicated_points_give_same_embedding() {
        let cfg = EncoderConfig::desk();
        let w = cfg.init_weights(9).unwrap();
        let f = cloud(120, 6);
        let mut pts = f.points().to_vec();
        pts.extend_from_slice(f.points());
        let mut ind = f.indicator().to_vec();
        ind.extend_from_slice(f.indicator());
        let doubled = FusedCloud::from_raw(pts, ind);
        assert_eq!(encode(&f, &cfg, &w).unwrap(), encode(&doubled, &cfg, &w).unwrap());
    }

    #[test]
    fn paper_shapes_feed_the_head() {
        let s = EncoderConfig::paper().weight_shapes();
        assert_eq!(s.len(), 24);
        assert_eq!(s[0], vec![4, 64]);
        assert_eq!(s[18], vec![1024, 1024]);
        assert_eq!(s[22], vec![512, 300]);
    }
}
