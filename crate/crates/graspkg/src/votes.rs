//! Crowdsourced vote and gold-answer CSV files.
//!
//! Votes: `object_id,task,grasp_id,annotator_id,vote`, with `grasp_id` empty
//! for object-task items. Gold: `item_key,truth`, keys written
//! `object/task` or `object/task/grasp`.

use std::collections::BTreeMap;
use std::path::Path;

use graspkg_core::annotation::{ItemKey, VoteRecord};
use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct VoteRow {
    object_id: String,
    task: String,
    grasp_id: Option<u32>,
    annotator_id: String,
    vote: u8,
}

#[derive(Debug, Deserialize)]
struct GoldRow {
    item_key: String,
    truth: u8,
}

fn binary(path: &Path, record: &str, v: u8) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::format(path, record, format!("expected 0 or 1, got {v}"))),
    }
}

fn rows<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<Vec<(String, T)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::format(path, "header", e))?.clone();
    let mut out = Vec::new();
    for result in reader.records() {
        let rec = result.map_err(|e| {
            let line = e.position().map_or(String::from("record"), |p| format!("line {}", p.line()));
            Error::format(path, line, e)
        })?;
        let line = format!("line {}", rec.position().map_or(0, |p| p.line()));
        let row: T = rec.deserialize(Some(&headers)).map_err(|e| Error::format(path, &line, e))?;
        out.push((line, row));
    }
    Ok(out)
}

pub fn parse_votes(path: &Path, text: &str) -> Result<Vec<VoteRecord>> {
    let mut out = Vec::new();
    for (record, r) in rows::<VoteRow>(path, text)? {
        if r.object_id.is_empty() || r.task.is_empty() || r.annotator_id.is_empty() {
            return Err(Error::format(path, record, "object_id, task and annotator_id must be non-empty"));
        }
        out.push(VoteRecord {
            item: ItemKey {
                object_id: r.object_id,
                task: r.task,
                grasp_id: r.grasp_id,
            },
            annotator: r.annotator_id,
            vote: binary(path, &record, r.vote)?,
        });
    }
    Ok(out)
}

pub fn parse_gold(path: &Path, text: &str) -> Result<BTreeMap<ItemKey, bool>> {
    let mut out = BTreeMap::new();
    for (record, r) in rows::<GoldRow>(path, text)? {
        let key = ItemKey::parse(&r.item_key).map_err(|e| Error::format(path, &record, e))?;
        let truth = binary(path, &record, r.truth)?;
        if out.insert(key, truth).is_some() {
            return Err(Error::format(path, record, format!("duplicate item {}", r.item_key)));
        }
    }
    Ok(out)
}

pub fn read_votes(path: &Path) -> Result<Vec<VoteRecord>> {
    parse_votes(path, &crate::layout::read_text(path)?)
}

pub fn read_gold(path: &Path) -> Result<BTreeMap<ItemKey, bool>> {
    parse_gold(path, &crate::layout::read_text(path)?)
}
