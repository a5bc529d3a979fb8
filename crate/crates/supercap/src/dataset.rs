//! Karpathy-split dataset JSON.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde_json::Value;
use supercap_core::text::tokenize;

use crate::error::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// `restval` counts as training data, as in the usual Karpathy setup.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" | "restval" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionedImage {
    pub id: String,
    /// Relative to the image root (`filepath/filename` when a filepath is given).
    pub path: PathBuf,
    pub split: Split,
    pub captions: Vec<Vec<String>>,
}

impl CaptionedImage {
    /// File stem used to name per-image artifacts such as feature files.
    pub fn stem(&self) -> String {
        self.path.file_stem().map_or_else(|| self.id.clone(), |s| s.to_string_lossy().into_owned())
    }
}

fn schema(id: &str, problem: impl Into<String>) -> DatasetError {
    DatasetError::Schema { id: id.to_string(), problem: problem.into() }
}

fn parse_entry(index: usize, entry: &Value) -> Result<CaptionedImage, DatasetError> {
    let obj = entry.as_object().ok_or_else(|| schema(&format!("#{index}"), "entry is not an object"))?;
    let filename = obj.get("filename").and_then(Value::as_str);
    let id = ["cocoid", "imgid", "id"]
        .iter()
        .find_map(|k| obj.get(*k))
        .map(|v| v.as_str().map_or_else(|| v.to_string(), str::to_string))
        .or_else(|| filename.map(str::to_string))
        .unwrap_or_else(|| format!("#{index}"));
    let filename = filename.ok_or_else(|| schema(&id, "missing \"filename\""))?;
    let path = match obj.get("filepath").and_then(Value::as_str) {
        Some(dir) => Path::new(dir).join(filename),
        None => PathBuf::from(filename),
    };
    let split_name = obj.get("split").and_then(Value::as_str).ok_or_else(|| schema(&id, "missing \"split\""))?;
    let split = Split::parse(split_name).ok_or_else(|| schema(&id, format!("unknown split {split_name:?}")))?;
    let sentences = obj
        .get("sentences")
        .and_then(Value::as_array)
        .ok_or_else(|| schema(&id, "missing \"sentences\""))?;
    let mut captions = Vec::with_capacity(sentences.len());
    for (i, s) in sentences.iter().enumerate() {
        let tokens = s
            .get("tokens")
            .and_then(Value::as_array)
            .ok_or_else(|| schema(&id, format!("sentence {i} has no \"tokens\" array")))?;
        let words: Vec<&str> = tokens
            .iter()
            .map(|t| t.as_str().ok_or_else(|| schema(&id, format!("sentence {i} has a non-string token"))))
            .collect::<Result<_, _>>()?;
        captions.push(tokenize(&words.join(" ")));
    }
    if captions.is_empty() {
        return Err(schema(&id, "no reference captions"));
    }
    Ok(CaptionedImage { id, path, split, captions })
}

pub fn parse_split(json: &str) -> Result<Vec<CaptionedImage>, DatasetError> {
    let root: Value = serde_json::from_str(json)?;
    let images = root
        .get("images")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("<root>", "missing top-level \"images\" array"))?;
    images.iter().enumerate().map(|(i, e)| parse_entry(i, e)).collect()
}

pub fn load_split(path: impl AsRef<Path>) -> Result<Vec<CaptionedImage>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    parse_split(&text)
}

pub fn split_counts(records: &[CaptionedImage]) -> BTreeMap<Split, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.split).or_insert(0) += 1;
    }
    counts
}
