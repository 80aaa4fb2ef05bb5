//! On-disk dataset layout and word-vector files.
//!
//! ```text
//! root/ontology.json
//! root/objects/<id>/cloud.pts      line 1 "N", then N "x y z" lines
//! root/objects/<id>/grasps.json    [{"grasp_id": 0, "pose": [16 floats, row-major]}]
//! root/objects/<id>/labels.json    {"task": {"grasp_id": 0 | 1}}
//! root/embeddings.txt              optional "token v1 ... vD" lines
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use graspkg_core::dataset::{lemma, Dataset, EmbeddingTable, LabeledGrasp, Ontology};
use graspkg_core::pointcloud::{GraspPose, PointCloud};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ONTOLOGY_FILE: &str = "ontology.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
const OBJECTS_DIR: &str = "objects";

#[derive(Debug, Serialize, Deserialize)]
struct GraspRecord {
    grasp_id: u32,
    pose: Vec<f64>,
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, format!("line {} column {}", e.line(), e.column()), e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory values serialize");
    s.push('\n');
    s
}

pub fn parse_cloud(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::format(path, "line 1", "empty point cloud file"))?;
    let n: usize = header
        .trim()
        .parse()
        .map_err(|_| Error::format(path, "line 1", format!("expected a point count, got `{header}`")))?;
    let mut points = Vec::with_capacity(n);
    for (i, line) in lines {
        let record = format!("line {}", i + 1);
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::format(path, &record, format!("malformed number `{t}`"))))
            .collect::<Result<_>>()?;
        let [x, y, z] = v[..] else {
            return Err(Error::format(path, record, format!("expected 3 coordinates, found {}", v.len())));
        };
        points.push([x, y, z]);
    }
    if points.len() != n {
        return Err(Error::format(path, "line 1", format!("header declares {n} points, file has {}", points.len())));
    }
    PointCloud::new(points).map_err(|e| Error::format(path, "points", e))
}

pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", cloud.len());
    for p in cloud.points() {
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
    s
}

fn load_object(dir: &Path, id: &str) -> Result<(PointCloud, Vec<LabeledGrasp>)> {
    let cloud_path = dir.join("cloud.pts");
    let cloud = parse_cloud(&read_text(&cloud_path)?, &cloud_path)?;

    let grasps_path = dir.join("grasps.json");
    let records: Vec<GraspRecord> = read_json(&grasps_path)?;
    let mut grasps = Vec::with_capacity(records.len());
    let mut index = BTreeMap::new();
    for (i, r) in records.into_iter().enumerate() {
        let record = format!("grasp {} (entry {i})", r.grasp_id);
        let m: [f64; 16] = r
            .pose
            .as_slice()
            .try_into()
            .map_err(|_| Error::format(&grasps_path, &record, format!("pose has {} values, expected 16", r.pose.len())))?;
        let pose = GraspPose::from_matrix(&m).map_err(|e| Error::format(&grasps_path, &record, e))?;
        if index.insert(r.grasp_id, i).is_some() {
            return Err(Error::format(&grasps_path, record, "duplicate grasp id"));
        }
        grasps.push(LabeledGrasp {
            object_id: id.to_string(),
            grasp_id: r.grasp_id,
            pose,
            labels: BTreeMap::new(),
        });
    }

    let labels_path = dir.join("labels.json");
    let labels: BTreeMap<String, BTreeMap<u32, u8>> = read_json(&labels_path)?;
    for (task, per_grasp) in labels {
        for (gid, v) in per_grasp {
            let record = format!("task {task} grasp {gid}");
            let &i = index
                .get(&gid)
                .ok_or_else(|| Error::format(&labels_path, &record, "grasp id not in grasps.json"))?;
            let label = match v {
                0 => false,
                1 => true,
                _ => return Err(Error::format(&labels_path, record, format!("label must be 0 or 1, got {v}"))),
            };
            grasps[i].labels.insert(task.clone(), label);
        }
    }
    Ok((cloud, grasps))
}

/// Reads and validates a dataset directory.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let ontology_path = root.join(ONTOLOGY_FILE);
    let ontology: Ontology = read_json(&ontology_path)?;
    ontology
        .validate()
        .map_err(|e| Error::format(&ontology_path, "ontology", e))?;

    let objects_dir = root.join(OBJECTS_DIR);
    let mut ids = Vec::new();
    for entry in fs::read_dir(&objects_dir).map_err(|e| Error::io(&objects_dir, e))? {
        let entry = entry.map_err(|e| Error::io(&objects_dir, e))?;
        if entry.path().is_dir() {
            let name = entry.file_name();
            let id = name
                .to_str()
                .ok_or_else(|| Error::format(&objects_dir, format!("{name:?}"), "object id is not UTF-8"))?;
            ids.push(id.to_string());
        }
    }
    if ids.is_empty() {
        return Err(Error::format(&objects_dir, "directory", "no objects"));
    }
    ids.sort();

    let mut objects = BTreeMap::new();
    let mut grasps = BTreeMap::new();
    for id in ids {
        let dir = objects_dir.join(&id);
        let Some(class) = ontology.class_of(&id) else {
            return Err(Error::format(&ontology_path, format!("object {id}"), "object is not listed in instances"));
        };
        let valid = ontology.valid_tasks(class);
        let (cloud, gs) = load_object(&dir, &id)?;
        for g in &gs {
            if let Some(t) = g.labels.keys().find(|t| !valid.contains(t.as_str())) {
                return Err(Error::format(
                    &dir.join("labels.json"),
                    format!("task {t} grasp {}", g.grasp_id),
                    format!("task is not Used-For class {class}"),
                ));
            }
        }
        objects.insert(id.clone(), cloud);
        grasps.insert(id, gs);
    }
    let ds = Dataset {
        ontology,
        objects,
        grasps,
    };
    ds.validate().map_err(|e| Error::format(root, "dataset", e))?;
    Ok(ds)
}

/// Writes `ds` under `root`, creating directories as needed. Objects without
/// a grasp list get an empty one.
pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(root)?;
    write_bytes(&root.join(ONTOLOGY_FILE), to_json(&ds.ontology).as_bytes())?;
    for (id, cloud) in &ds.objects {
        let dir = root.join(OBJECTS_DIR).join(id);
        mkdir(&dir)?;
        write_bytes(&dir.join("cloud.pts"), format_cloud(cloud).as_bytes())?;
        let gs = ds.grasps.get(id).map(Vec::as_slice).unwrap_or(&[]);
        let records: Vec<GraspRecord> = gs
            .iter()
            .map(|g| GraspRecord {
                grasp_id: g.grasp_id,
                pose: g.pose.to_matrix().to_vec(),
            })
            .collect();
        write_bytes(&dir.join("grasps.json"), to_json(&records).as_bytes())?;
        let mut labels: BTreeMap<&str, BTreeMap<u32, u8>> = BTreeMap::new();
        for g in gs {
            for (t, &l) in &g.labels {
                labels.entry(t).or_default().insert(g.grasp_id, l as u8);
            }
        }
        write_bytes(&dir.join("labels.json"), to_json(&labels).as_bytes())?;
    }
    Ok(())
}

/// Parses a word-vector file, keeping only `wanted` tokens. Every line must
/// carry `dim` values; a leading "count dim" header line is skipped.
pub fn parse_embeddings(
    text: &str,
    path: &Path,
    dim: usize,
    wanted: &BTreeSet<&str>,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let rest: Vec<&str> = fields.collect();
        if i == 0 && rest.len() == 1 && token.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        let record = format!("line {}", i + 1);
        if rest.len() != dim {
            return Err(Error::format(path, record, format!("{token} has {} values, expected {dim}", rest.len())));
        }
        if !wanted.contains(token) {
            continue;
        }
        let v = rest
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| Error::format(path, &record, format!("malformed number `{t}`"))))
            .collect::<Result<Vec<f64>>>()?;
        out.insert(token.to_string(), v);
    }
    Ok(out)
}

/// Builds a table over `vocab` from a word-vector file; tokens missing from
/// the file get pseudo-embeddings.
pub fn load_embeddings<'a>(
    path: &Path,
    vocab: impl IntoIterator<Item = &'a str> + Clone,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let wanted: BTreeSet<&str> = vocab.clone().into_iter().flat_map(|t| [t, lemma(t)]).collect();
    let source = parse_embeddings(&read_text(path)?, path, dim, &wanted)?;
    Ok(EmbeddingTable::build(vocab, dim, seed, &source)?)
}

/// The dataset's `embeddings.txt` if present, pseudo-embeddings otherwise.
pub fn dataset_embeddings(root: &Path, ds: &Dataset, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let path = root.join(EMBEDDINGS_FILE);
    let vocab = ds.ontology.vocabulary();
    if path.exists() {
        load_embeddings(&path, vocab.iter().copied(), dim, seed)
    } else {
        Ok(EmbeddingTable::pseudo(vocab.iter().copied(), dim, seed)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_text_round_trips() {
        let c = PointCloud::new(vec![[0.1, -2.5e-7, 3.0], [1.0 / 3.0, 0.0, -0.0]]).unwrap();
        let p = Path::new("c.pts");
        assert_eq!(parse_cloud(&format_cloud(&c), p).unwrap(), c);
    }

    #[test]
    fn cloud_errors_name_the_line() {
        let p = Path::new("c.pts");
        let e = parse_cloud("2\n0 0 0\n1 x 2\n", p).unwrap_err().to_string();
        assert!(e.contains("c.pts") && e.contains("line 3") && e.contains("`x`"), "{e}");
        let e = parse_cloud("3\n0 0 0\n", p).unwrap_err().to_string();
        assert!(e.contains("declares 3"), "{e}");
        assert!(parse_cloud("1\n0 0\n", p).is_err());
    }

    #[test]
    fn embeddings_skip_header_and_check_width() {
        let p = Path::new("e.txt");
        let wanted = BTreeSet::from(["pour", "mug"]);
        let t = parse_embeddings("2 3\npour 0.1 0.1 0.1\nladle 1 2 3\n", p, 3, &wanted).unwrap();
        assert_eq!(t["pour"], vec![0.1; 3]);
        assert_eq!(t.len(), 1);
        let e = parse_embeddings("pour 0.1 0.1 0.1\nmug 0.5 0.5\n", p, 3, &wanted).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }
}
