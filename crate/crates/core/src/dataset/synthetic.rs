//! Procedural tools: a cylindrical handle along +x with a head primitive at
//! its end. Ground truth comes from where the gripper's mid-palm point sits
//! on the object skeleton, so task semantics line up with the ontology
//! (container-only and hook-only tasks).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};
use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledGrasp, Ontology};
use crate::pointcloud::{
    add, cross, dist2, dot, normalize, scale, select_representative_grasps, sub, GraspPose, GripperModel, Point3,
    PointCloud,
};
use crate::rng::{self, SeededRng};
use crate::{Error, Result};

pub const SYNTHETIC_TASKS: [&str; 6] = ["handover", "pound", "scoop", "pour", "flip", "hang"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadShape {
    Disc,
    Box,
    Hook,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Container,
    Tool,
}

struct ClassTemplate {
    synset: &'static str,
    family: Family,
    head: HeadShape,
    tasks: &'static [&'static str],
    /// Hypernym path above the class, most specific first.
    path: &'static [&'static str],
}

const CONTAINER_ROOT: [&str; 3] = ["container.n.01", "instrumentality.n.03", "entity.n.01"];

const TEMPLATES: [ClassTemplate; 8] = [
    ClassTemplate {
        synset: "ladle.n.01",
        family: Family::Container,
        head: HeadShape::Hook,
        tasks: &["handover", "scoop", "pour", "hang"],
        path: &["vessel.n.03"],
    },
    ClassTemplate {
        synset: "spatula.n.01",
        family: Family::Tool,
        head: HeadShape::Disc,
        tasks: &["handover", "flip", "pound", "hang"],
        path: &["turner.n.08", "utensil.n.01"],
    },
    ClassTemplate {
        synset: "saucepan.n.01",
        family: Family::Container,
        head: HeadShape::Box,
        tasks: &["handover", "pour", "scoop", "hang"],
        path: &["pot.n.01", "vessel.n.03"],
    },
    ClassTemplate {
        synset: "hammer.n.02",
        family: Family::Tool,
        head: HeadShape::Hook,
        tasks: &["handover", "pound", "hang"],
        path: &["tool.n.01"],
    },
    ClassTemplate {
        synset: "dipper.n.01",
        family: Family::Container,
        head: HeadShape::Disc,
        tasks: &["handover", "pour", "scoop", "hang"],
        path: &["vessel.n.03"],
    },
    ClassTemplate {
        synset: "mallet.n.01",
        family: Family::Tool,
        head: HeadShape::Box,
        tasks: &["handover", "pound", "flip", "hang"],
        path: &["tool.n.01"],
    },
    ClassTemplate {
        synset: "mug.n.04",
        family: Family::Container,
        head: HeadShape::Hook,
        tasks: &["handover", "pour", "hang"],
        path: &["vessel.n.03"],
    },
    ClassTemplate {
        synset: "crowbar.n.01",
        family: Family::Tool,
        head: HeadShape::Hook,
        tasks: &["handover", "pound", "hang"],
        path: &["lever.n.01"],
    },
];

const TOOL_ROOT: [&str; 3] = ["implement.n.01", "instrumentality.n.03", "entity.n.01"];

impl ClassTemplate {
    fn full_path(&self) -> Vec<&'static str> {
        let root: &[&str] = match self.family {
            Family::Container => &CONTAINER_ROOT,
            Family::Tool => &TOOL_ROOT,
        };
        let mut p = vec![self.synset];
        p.extend_from_slice(self.path);
        p.extend_from_slice(root);
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_objects: usize,
    pub n_classes: usize,
    pub grasps_per_object: usize,
    pub points_per_object: usize,
    /// Raw candidates per kept grasp before farthest-point selection.
    pub candidate_factor: usize,
    /// Fraction of raw candidates placed on the head.
    pub head_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_objects: 12,
            n_classes: 6,
            grasps_per_object: 20,
            points_per_object: 256,
            candidate_factor: 4,
            head_fraction: 0.5,
        }
    }
}

/// Distance from the skeleton to the mid-palm point along the approach axis.
const PALM_STANDOFF: f64 = 0.024;
/// Positive region for pound/scoop/flip: at least this fraction of the
/// handle length away from the head.
const FAR_HANDLE_FRACTION: f64 = 0.4;
const MAX_RETRIES: usize = 64;

#[derive(Debug, Clone, Copy)]
enum Head {
    Disc { radius: f64, thickness: f64 },
    Box { size: Point3 },
    Hook { radius: f64 },
}

#[derive(Debug, Clone, Copy)]
struct ToolShape {
    handle_len: f64,
    handle_radius: f64,
    head: Head,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Region {
    /// Fraction of the handle length between the point and the head.
    Handle { from_head: f64 },
    Head,
}

impl ToolShape {
    fn sample(rng: &mut SeededRng, shape: HeadShape) -> Self {
        let handle_len = rng::uniform_range(rng, 0.12, 0.20);
        let handle_radius = rng::uniform_range(rng, 0.010, 0.016);
        let head = match shape {
            HeadShape::Disc => Head::Disc {
                radius: rng::uniform_range(rng, 0.035, 0.06),
                thickness: 0.008,
            },
            HeadShape::Box => Head::Box {
                size: [
                    rng::uniform_range(rng, 0.05, 0.08),
                    rng::uniform_range(rng, 0.03, 0.05),
                    rng::uniform_range(rng, 0.03, 0.05),
                ],
            },
            HeadShape::Hook => Head::Hook {
                radius: rng::uniform_range(rng, 0.03, 0.05),
            },
        };
        ToolShape {
            handle_len,
            handle_radius,
            head,
        }
    }

    fn hook_point(&self, radius: f64, phi: f64) -> (Point3, Point3) {
        let p = [
            self.handle_len + radius * libm::sin(phi),
            0.0,
            radius * (1.0 - libm::cos(phi)),
        ];
        let t = [libm::cos(phi), 0.0, libm::sin(phi)];
        (p, t)
    }

    /// Point and unit tangent on the head's skeleton at parameter `u ∈ [0,1]`.
    fn head_skeleton(&self, u: f64) -> (Point3, Point3) {
        match self.head {
            Head::Disc { radius, .. } => ([self.handle_len + 2.0 * radius * u, 0.0, 0.0], [1.0, 0.0, 0.0]),
            Head::Box { size } => ([self.handle_len + size[0] * u, 0.0, 0.0], [1.0, 0.0, 0.0]),
            Head::Hook { radius } => self.hook_point(radius, PI * u),
        }
    }

    fn region(&self, p: Point3) -> Region {
        let x = p[0].clamp(0.0, self.handle_len);
        let d_handle = dist2(p, [x, 0.0, 0.0]);
        let samples = 64;
        let d_head = (0..=samples)
            .map(|i| dist2(p, self.head_skeleton(i as f64 / samples as f64).0))
            .fold(f64::INFINITY, f64::min);
        if d_handle <= d_head {
            Region::Handle {
                from_head: (self.handle_len - x) / self.handle_len,
            }
        } else {
            Region::Head
        }
    }

    fn surface_points(&self, rng: &mut SeededRng, n: usize) -> Vec<Point3> {
        let r = self.handle_radius;
        let handle_area = TAU * r * self.handle_len;
        let head_area = match self.head {
            Head::Disc { radius, .. } => 2.0 * PI * radius * radius,
            Head::Box { size } => 2.0 * (size[0] * size[1] + size[1] * size[2] + size[0] * size[2]),
            Head::Hook { radius } => TAU * r * PI * radius,
        };
        let n_handle = ((n as f64) * handle_area / (handle_area + head_area)) as usize;
        let n_handle = n_handle.clamp(1, n.saturating_sub(1).max(1));
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n_handle {
            let x = rng::uniform_range(rng, 0.0, self.handle_len);
            let a = rng::uniform_range(rng, 0.0, TAU);
            pts.push([x, r * libm::cos(a), r * libm::sin(a)]);
        }
        while pts.len() < n {
            let p = match self.head {
                Head::Disc { radius, thickness } => {
                    let rr = radius * libm::sqrt(rng::uniform(rng));
                    let a = rng::uniform_range(rng, 0.0, TAU);
                    let side = if rng::uniform(rng) < 0.5 { -0.5 } else { 0.5 };
                    [
                        self.handle_len + radius + rr * libm::cos(a),
                        rr * libm::sin(a),
                        side * thickness,
                    ]
                }
                Head::Box { size } => {
                    let [a, b, c] = size;
                    let faces = [b * c, b * c, a * c, a * c, a * b, a * b];
                    let total: f64 = faces.iter().sum();
                    let mut pick = rng::uniform(rng) * total;
                    let mut face = 5;
                    for (i, &f) in faces.iter().enumerate() {
                        if pick < f {
                            face = i;
                            break;
                        }
                        pick -= f;
                    }
                    let (u, v) = (rng::uniform(rng) - 0.5, rng::uniform(rng) - 0.5);
                    let local = match face {
                        0 => [-0.5 * a, u * b, v * c],
                        1 => [0.5 * a, u * b, v * c],
                        2 => [u * a, -0.5 * b, v * c],
                        3 => [u * a, 0.5 * b, v * c],
                        4 => [u * a, v * b, -0.5 * c],
                        _ => [u * a, v * b, 0.5 * c],
                    };
                    add(local, [self.handle_len + 0.5 * a, 0.0, 0.0])
                }
                Head::Hook { radius } => {
                    let phi = rng::uniform_range(rng, 0.0, PI);
                    let (c, t) = self.hook_point(radius, phi);
                    let (u, v) = perpendicular_basis(t);
                    let a = rng::uniform_range(rng, 0.0, TAU);
                    add(c, add(scale(u, r * libm::cos(a)), scale(v, r * libm::sin(a))))
                }
            };
            pts.push(p);
        }
        pts
    }
}

fn perpendicular_basis(t: Point3) -> (Point3, Point3) {
    let helper = if t[1].abs() < 0.9 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
    let u = normalize(cross(t, helper));
    let v = cross(t, u);
    (u, v)
}

/// Grasp whose fingers straddle the skeleton at `p` (tangent `t`),
/// approaching along `approach`, which must be perpendicular to `t`.
fn grasp_at(p: Point3, t: Point3, approach: Point3) -> Result<GraspPose> {
    let z = normalize(approach);
    let x = normalize(cross(z, t));
    let y = cross(z, x);
    let rot = [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]];
    let mid_palm = GripperModel::default().points[GripperModel::MID_PALM];
    let target = sub(p, scale(z, PALM_STANDOFF));
    let offset = [dot(rot[0], mid_palm), dot(rot[1], mid_palm), dot(rot[2], mid_palm)];
    GraspPose::new(rot, sub(target, offset))
}

fn label(task: &str, region: Region, head: HeadShape) -> bool {
    match task {
        "handover" => true,
        "pound" | "scoop" | "flip" => matches!(region, Region::Handle { from_head } if from_head >= FAR_HANDLE_FRACTION),
        "pour" => matches!(region, Region::Handle { .. }),
        "hang" => region == Region::Head && head == HeadShape::Hook,
        _ => false,
    }
}

struct GeneratedObject {
    cloud: Vec<Point3>,
    grasps: Vec<LabeledGrasp>,
}

fn generate_object(
    rng: &mut SeededRng,
    id: &str,
    template: &ClassTemplate,
    cfg: &SyntheticConfig,
) -> Result<GeneratedObject> {
    let shape = ToolShape::sample(rng, template.head);
    let cloud = shape.surface_points(rng, cfg.points_per_object);
    let n_cand = cfg.grasps_per_object * cfg.candidate_factor.max(1);
    let mut poses = Vec::with_capacity(n_cand);
    for _ in 0..n_cand {
        let on_head = rng::uniform(rng) < cfg.head_fraction;
        let (p, t) = if on_head {
            shape.head_skeleton(rng::uniform(rng))
        } else {
            // keep clear of the handle's free end cap
            let x = rng::uniform_range(rng, 0.1 * shape.handle_radius, shape.handle_len);
            ([x, 0.0, 0.0], [1.0, 0.0, 0.0])
        };
        let (u, v) = perpendicular_basis(t);
        let a = rng::uniform_range(rng, 0.0, TAU);
        let approach = add(scale(u, libm::cos(a)), scale(v, libm::sin(a)));
        poses.push(grasp_at(p, t, approach)?);
    }
    let keep = select_representative_grasps(&poses, cfg.grasps_per_object)?;
    let gripper = GripperModel::default();
    let grasps = keep
        .iter()
        .enumerate()
        .map(|(gid, &ci)| {
            let pose = poses[ci];
            let mid = gripper.control_points(&pose)[GripperModel::MID_PALM];
            let region = shape.region(mid);
            let labels = template
                .tasks
                .iter()
                .map(|&t| (t.to_string(), label(t, region, template.head)))
                .collect();
            LabeledGrasp {
                object_id: id.to_string(),
                grasp_id: gid as u32,
                pose,
                labels,
            }
        })
        .collect();
    Ok(GeneratedObject { cloud, grasps })
}

/// Tasks with both a positive and a negative grasp.
fn mixed_tasks(grasps: &[LabeledGrasp]) -> usize {
    let mut pos: BTreeSet<&str> = BTreeSet::new();
    let mut neg: BTreeSet<&str> = BTreeSet::new();
    for g in grasps {
        for (t, &l) in &g.labels {
            if l {
                pos.insert(t);
            } else {
                neg.insert(t);
            }
        }
    }
    pos.intersection(&neg).count()
}

/// Builds a synthetic dataset. Object `i` belongs to class `i mod n_classes`.
/// Each object is regenerated (bounded retries) until at least two tasks
/// have both positive and negative grasps.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    if cfg.n_classes < 2 || cfg.n_classes > TEMPLATES.len() {
        return Err(Error::arg(format!("n_classes must be in 2..={}", TEMPLATES.len())));
    }
    if cfg.n_objects < cfg.n_classes {
        return Err(Error::arg("n_objects must be at least n_classes"));
    }
    if cfg.grasps_per_object == 0 || cfg.points_per_object < 2 {
        return Err(Error::arg("need at least one grasp and two points per object"));
    }
    let templates = &TEMPLATES[..cfg.n_classes];

    let mut concepts = BTreeSet::new();
    let mut edges = BTreeSet::new();
    let mut used_for = BTreeSet::new();
    for t in templates {
        let path = t.full_path();
        for w in path.windows(2) {
            edges.insert((w[0].to_string(), w[1].to_string()));
            concepts.insert(w[1].to_string());
        }
        for &task in t.tasks {
            used_for.insert((t.synset.to_string(), task.to_string()));
        }
    }

    let mut ontology = Ontology {
        classes: templates.iter().map(|t| t.synset.to_string()).collect(),
        concepts: concepts.into_iter().collect(),
        hypernym_edges: edges.into_iter().collect(),
        tasks: SYNTHETIC_TASKS.iter().map(|t| t.to_string()).collect(),
        used_for: used_for.into_iter().collect(),
        instances: BTreeMap::new(),
    };
    ontology.classes.sort();

    let mut objects = BTreeMap::new();
    let mut grasps = BTreeMap::new();
    for i in 0..cfg.n_objects {
        let template = &templates[i % cfg.n_classes];
        let id = format!("{i:02}_{}", super::lemma(template.synset));
        let mut obj = None;
        for attempt in 0..MAX_RETRIES {
            let mut r = rng::seeded(rng::derive_seed(seed, &[i as u64, attempt as u64]));
            let g = generate_object(&mut r, &id, template, cfg)?;
            let ok = mixed_tasks(&g.grasps) >= 2;
            obj = Some(g);
            if ok {
                break;
            }
        }
        let obj = obj.expect("at least one attempt");
        ontology.instances.insert(id.clone(), template.synset.to_string());
        objects.insert(id.clone(), PointCloud::new(obj.cloud)?);
        grasps.insert(id, obj.grasps);
    }
    let ds = Dataset {
        ontology,
        objects,
        grasps,
    };
    ds.validate()?;
    Ok(ds)
}
