//! Point-set geometry: normalization, farthest point sampling, augmentation,
//! the six-point gripper model, grasp/object fusion and representative-grasp
//! selection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

pub type Point3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Point3) -> f64 {
    libm::sqrt(dot(a, a))
}

pub(crate) fn dist2(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

pub(crate) fn normalize(a: Point3) -> Point3 {
    scale(a, 1.0 / norm(a))
}

pub(crate) fn mat_vec(m: &Mat3, v: Point3) -> Point3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

fn lex_cmp(a: &Point3, b: &Point3) -> Ordering {
    for i in 0..3 {
        match a[i].partial_cmp(&b[i]).unwrap_or(Ordering::Equal) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Ordered point set in meters with optional per-point feature channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
    /// Row-major `N × feature_dim` values.
    features: Option<(usize, Vec<f64>)>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("point cloud"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument(format!("non-finite coordinate in point {i}")));
        }
        Ok(PointCloud { points, features: None })
    }

    pub fn with_features(points: Vec<Point3>, dim: usize, features: Vec<f64>) -> Result<Self> {
        let mut cloud = Self::new(points)?;
        if dim == 0 || features.len() != cloud.len() * dim {
            return Err(Error::arg(format!(
                "feature buffer of {} values does not match {} points × {dim}",
                features.len(),
                cloud.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite feature value"));
        }
        cloud.features = Some((dim, features));
        Ok(cloud)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn features(&self) -> Option<(usize, &[f64])> {
        self.features.as_ref().map(|(d, f)| (*d, f.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        let mut c = [0.0; 3];
        for p in &self.points {
            c = add(c, *p);
        }
        scale(c, 1.0 / self.points.len() as f64)
    }

    fn select(&self, idx: &[usize]) -> PointCloud {
        let points = idx.iter().map(|&i| self.points[i]).collect();
        let features = self.features.as_ref().map(|(d, f)| {
            let d = *d;
            (d, idx.iter().flat_map(|&i| f[i * d..(i + 1) * d].iter().copied()).collect())
        });
        PointCloud { points, features }
    }
}

/// Similarity that maps raw object coordinates into the normalized frame:
/// `p ↦ (p - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub center: Point3,
    pub scale: f64,
}

impl Frame {
    pub const IDENTITY: Frame = Frame {
        center: [0.0; 3],
        scale: 1.0,
    };

    pub fn apply(&self, p: Point3) -> Point3 {
        scale(sub(p, self.center), 1.0 / self.scale)
    }
}

/// Downsamples to at most `target_n` points by farthest point sampling, then
/// centers on the mean and scales the farthest point to unit norm. A cloud
/// that collapses to the origin is left unscaled.
pub fn preprocess(cloud: &PointCloud, target_n: usize) -> Result<PointCloud> {
    preprocess_with_frame(cloud, target_n).map(|(c, _)| c)
}

/// [`preprocess`] that also returns the applied [`Frame`], so grasps given in
/// the raw object frame can be mapped alongside the cloud.
pub fn preprocess_with_frame(cloud: &PointCloud, target_n: usize) -> Result<(PointCloud, Frame)> {
    if target_n == 0 {
        return Err(Error::arg("preprocess: target_n must be at least 1"));
    }
    let mut out = if cloud.len() > target_n {
        let mut idx = farthest_point_sample(cloud.points(), target_n)?;
        idx.sort_unstable();
        cloud.select(&idx)
    } else {
        cloud.clone()
    };
    let center = out.centroid();
    for p in &mut out.points {
        *p = sub(*p, center);
    }
    let max_norm = out.points.iter().map(|p| norm(*p)).fold(0.0, f64::max);
    let s = if max_norm > 0.0 { max_norm } else { 1.0 };
    if max_norm > 0.0 {
        for p in &mut out.points {
            *p = scale(*p, 1.0 / s);
        }
    }
    Ok((out, Frame { center, scale: s }))
}

/// Greedy farthest-first traversal over `n` items.
///
/// Starts at the item that is smallest under `lex`, then repeatedly picks the
/// unselected item with the largest distance to the selected set. Ties go to
/// the `lex`-smaller item, then to the lower index.
pub(crate) fn farthest_first<D, L>(n: usize, k: usize, dist: D, lex: L) -> Result<Vec<usize>>
where
    D: Fn(usize, usize) -> f64,
    L: Fn(usize, usize) -> Ordering,
{
    if k == 0 {
        return Err(Error::arg("farthest point sampling: k must be at least 1"));
    }
    if k > n {
        return Err(Error::arg(format!("farthest point sampling: k = {k} exceeds {n} items")));
    }
    let tie_break = |a: usize, b: usize| lex(a, b).then(a.cmp(&b));
    let start = (1..n).fold(0, |best, i| if tie_break(i, best) == Ordering::Less { i } else { best });
    let mut selected = vec![false; n];
    let mut order = Vec::with_capacity(k);
    let mut min_d: Vec<f64> = (0..n).map(|i| dist(start, i)).collect();
    selected[start] = true;
    order.push(start);
    while order.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            best = Some(match best {
                None => i,
                Some(b) => match min_d[i].partial_cmp(&min_d[b]).unwrap_or(Ordering::Equal) {
                    Ordering::Greater => i,
                    Ordering::Less => b,
                    Ordering::Equal => {
                        if tie_break(i, b) == Ordering::Less {
                            i
                        } else {
                            b
                        }
                    }
                },
            });
        }
        let next = best.expect("k <= n leaves a candidate");
        selected[next] = true;
        order.push(next);
        for i in 0..n {
            if !selected[i] {
                let d = dist(next, i);
                if d < min_d[i] {
                    min_d[i] = d;
                }
            }
        }
    }
    Ok(order)
}

/// Farthest point sampling with a lexicographic-minimum seed. Returns indices
/// in selection order.
pub fn farthest_point_sample(points: &[Point3], k: usize) -> Result<Vec<usize>> {
    farthest_first(
        points.len(),
        k,
        |a, b| dist2(points[a], points[b]),
        |a, b| lex_cmp(&points[a], &points[b]),
    )
}

/// Largest distance from any point to its nearest selected center.
pub fn covering_radius(points: &[Point3], centers: &[usize]) -> f64 {
    let worst = points
        .iter()
        .map(|p| {
            centers
                .iter()
                .map(|&c| dist2(*p, points[c]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    libm::sqrt(worst)
}

/// Rigid transform of a parallel-jaw gripper in the object frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspPose {
    rotation: Mat3,
    translation: Point3,
}

const ROTATION_TOL: f64 = 1e-9;

impl GraspPose {
    pub fn new(rotation: Mat3, translation: Point3) -> Result<Self> {
        check_rotation(&rotation)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite grasp translation"));
        }
        Ok(GraspPose { rotation, translation })
    }

    pub fn identity() -> Self {
        GraspPose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Parses a row-major 4×4 homogeneous matrix with last row `0 0 0 1`.
    pub fn from_matrix(m: &[f64; 16]) -> Result<Self> {
        let last = [m[12], m[13], m[14], m[15]];
        if last != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::arg(format!("pose last row must be 0 0 0 1, got {last:?}")));
        }
        Self::new(
            [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            [m[3], m[7], m[11]],
        )
    }

    pub fn to_matrix(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2], 0.0,
            0.0, 0.0, 1.0,
        ]
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> Point3 {
        self.translation
    }

    pub fn transform(&self, p: Point3) -> Point3 {
        add(mat_vec(&self.rotation, p), self.translation)
    }
}

fn check_rotation(r: &Mat3) -> Result<()> {
    if r.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entry".into()));
    }
    for i in 0..3 {
        for j in 0..3 {
            // (RᵀR)_ij = column i · column j
            let v: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            if (v - target).abs() > ROTATION_TOL {
                return Err(Error::InvalidRotation(format!("RᵀR deviates from identity at ({i},{j}): {v}")));
            }
        }
    }
    let det = dot(r[0], cross(r[1], r[2]));
    if (det - 1.0).abs() > ROTATION_TOL {
        return Err(Error::InvalidRotation(format!("determinant {det}")));
    }
    Ok(())
}

/// Six points rigidly attached to the gripper, in the gripper frame (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperModel {
    pub points: [Point3; 6],
}

impl Default for GripperModel {
    /// An 85 mm class parallel jaw: fingertips, finger bases, wrist, mid-palm.
    fn default() -> Self {
        GripperModel {
            points: [
                [0.041, 0.0, 0.112],
                [-0.041, 0.0, 0.112],
                [0.041, 0.0, 0.066],
                [-0.041, 0.0, 0.066],
                [0.0, 0.0, 0.0],
                [0.0, 0.0, 0.066],
            ],
        }
    }
}

impl GripperModel {
    pub const MID_PALM: usize = 5;

    pub fn control_points(&self, pose: &GraspPose) -> [Point3; 6] {
        self.points.map(|p| pose.transform(p))
    }
}

/// Control points of the default gripper under `pose`.
pub fn gripper_control_points(pose: &GraspPose) -> [Point3; 6] {
    GripperModel::default().control_points(pose)
}

/// Object points (indicator 0) followed by six gripper points (indicator 1).
#[derive(Debug, Clone, PartialEq)]
pub struct FusedCloud {
    points: Vec<Point3>,
    indicator: Vec<f64>,
}

impl FusedCloud {
    pub const GRIPPER_POINTS: usize = 6;

    pub fn from_parts(object: &[Point3], gripper: [Point3; 6]) -> Result<Self> {
        if object.is_empty() {
            return Err(Error::Empty("object cloud"));
        }
        let mut points = object.to_vec();
        points.extend_from_slice(&gripper);
        let mut indicator = vec![0.0; object.len()];
        indicator.extend_from_slice(&[1.0; 6]);
        Ok(FusedCloud { points, indicator })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn indicator(&self) -> &[f64] {
        &self.indicator
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn object_len(&self) -> usize {
        self.points.len() - Self::GRIPPER_POINTS
    }

    /// Reorders points by `perm` (a permutation of `0..len`).
    pub fn permuted(&self, perm: &[usize]) -> FusedCloud {
        FusedCloud {
            points: perm.iter().map(|&i| self.points[i]).collect(),
            indicator: perm.iter().map(|&i| self.indicator[i]).collect(),
        }
    }

    #[cfg(test)]
    pub(crate) fn from_raw(points: Vec<Point3>, indicator: Vec<f64>) -> FusedCloud {
        FusedCloud { points, indicator }
    }
}

/// Fuses a preprocessed object cloud with the default gripper at `pose`,
/// both already in the same frame.
pub fn fuse_grasp_object(object_cloud: &PointCloud, pose: &GraspPose) -> Result<FusedCloud> {
    fuse_in_frame(object_cloud, &Frame::IDENTITY, pose)
}

/// Fuses with a pose given in the raw object frame; the gripper points are
/// mapped through `frame` so they stay consistent with the normalized cloud.
pub fn fuse_in_frame(object_cloud: &PointCloud, frame: &Frame, pose: &GraspPose) -> Result<FusedCloud> {
    let gripper = gripper_control_points(pose).map(|p| frame.apply(p));
    FusedCloud::from_parts(object_cloud.points(), gripper)
}

/// Mean Euclidean distance between corresponding control points.
pub fn grasp_distance(a: &[Point3; 6], b: &[Point3; 6]) -> f64 {
    a.iter().zip(b).map(|(p, q)| libm::sqrt(dist2(*p, *q))).sum::<f64>() / 6.0
}

/// Farthest point sampling in grasp space (see [`grasp_distance`]).
pub fn select_representative_grasps(grasps: &[GraspPose], k: usize) -> Result<Vec<usize>> {
    let gripper = GripperModel::default();
    let cps: Vec<[Point3; 6]> = grasps.iter().map(|g| gripper.control_points(g)).collect();
    farthest_first(
        grasps.len(),
        k,
        |a, b| grasp_distance(&cps[a], &cps[b]),
        |a, b| {
            cps[a]
                .iter()
                .zip(&cps[b])
                .map(|(p, q)| lex_cmp(p, q))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation: bool,
    pub jitter_sigma: f64,
    pub dropout_rate: f64,
}

impl AugmentParams {
    pub const OFF: AugmentParams = AugmentParams {
        rotation: false,
        jitter_sigma: 0.0,
        dropout_rate: 0.0,
    };

    pub fn is_off(&self) -> bool {
        !self.rotation && self.jitter_sigma == 0.0 && self.dropout_rate == 0.0
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) || !(self.jitter_sigma >= 0.0) {
            return Err(Error::arg(format!("invalid augmentation parameters {self:?}")));
        }
        Ok(())
    }
}

/// Dropout never leaves fewer points than this (or all of them, if fewer).
pub const MIN_SURVIVORS: usize = 16;

/// Uniformly distributed rotation (Shoemake's unit quaternion method).
pub fn random_rotation(rng: &mut rng::SeededRng) -> Mat3 {
    use core::f64::consts::TAU;
    let (u1, u2, u3) = (rng::uniform(rng), rng::uniform(rng), rng::uniform(rng));
    let a = libm::sqrt(1.0 - u1);
    let b = libm::sqrt(u1);
    let (x, y, z, w) = (
        a * libm::sin(TAU * u2),
        a * libm::cos(TAU * u2),
        b * libm::sin(TAU * u3),
        b * libm::cos(TAU * u3),
    );
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Which points survive dropout. Points are kept when their uniform draw
/// reaches the rate; if too few survive, the highest draws are reinstated.
fn dropout_mask(rng: &mut rng::SeededRng, n: usize, rate: f64) -> Vec<bool> {
    let draws: Vec<f64> = (0..n).map(|_| rng::uniform(rng)).collect();
    let mut keep: Vec<bool> = draws.iter().map(|&u| u >= rate).collect();
    let floor = MIN_SURVIVORS.min(n);
    if keep.iter().filter(|&&k| k).count() < floor {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| draws[b].partial_cmp(&draws[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        for &i in &order[..floor] {
            keep[i] = true;
        }
    }
    keep
}

struct Augmenter {
    rotation: Option<Mat3>,
    jitter: f64,
    dropout: f64,
    rng: rng::SeededRng,
}

impl Augmenter {
    fn new(params: &AugmentParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = rng::seeded(seed);
        let rotation = params.rotation.then(|| random_rotation(&mut rng));
        Ok(Augmenter {
            rotation,
            jitter: params.jitter_sigma,
            dropout: params.dropout_rate,
            rng,
        })
    }

    fn rotate(&self, p: Point3) -> Point3 {
        match &self.rotation {
            Some(r) => mat_vec(r, p),
            None => p,
        }
    }

    fn jitter(&mut self, p: Point3) -> Point3 {
        if self.jitter == 0.0 {
            return p;
        }
        let j = self.jitter;
        [
            p[0] + j * rng::normal(&mut self.rng),
            p[1] + j * rng::normal(&mut self.rng),
            p[2] + j * rng::normal(&mut self.rng),
        ]
    }

    fn mask(&mut self, n: usize) -> Vec<bool> {
        if self.dropout == 0.0 {
            vec![true; n]
        } else {
            dropout_mask(&mut self.rng, n, self.dropout)
        }
    }
}

/// Random rotation, Gaussian jitter and point dropout, deterministic in `seed`.
pub fn augment(cloud: &PointCloud, params: &AugmentParams, seed: u64) -> Result<PointCloud> {
    let mut aug = Augmenter::new(params, seed)?;
    let keep = aug.mask(cloud.len());
    let idx: Vec<usize> = (0..cloud.len()).filter(|&i| keep[i]).collect();
    let mut out = cloud.select(&idx);
    for p in &mut out.points {
        let r = aug.rotate(*p);
        *p = aug.jitter(r);
    }
    Ok(out)
}

/// Augments a fused cloud. The rotation moves object and gripper jointly;
/// jitter and dropout touch only object points, so the six gripper points
/// always survive.
pub fn augment_fused(fused: &FusedCloud, params: &AugmentParams, seed: u64) -> Result<FusedCloud> {
    if params.is_off() {
        return Ok(fused.clone());
    }
    let mut aug = Augmenter::new(params, seed)?;
    let n_obj = fused.object_len();
    let keep = aug.mask(n_obj);
    let mut points = Vec::with_capacity(fused.len());
    let mut indicator = Vec::with_capacity(fused.len());
    for i in 0..n_obj {
        if keep[i] {
            let r = aug.rotate(fused.points[i]);
            points.push(aug.jitter(r));
            indicator.push(0.0);
        }
    }
    for i in n_obj..fused.len() {
        points.push(aug.rotate(fused.points[i]));
        indicator.push(1.0);
    }
    Ok(FusedCloud { points, indicator })
}
