//! Dataset ingestion, label preprocessing and N-way K-shot episodes.

mod episode;
mod labels;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::Tokenizer;
use crate::error::{Error, Result};
use crate::markup::{Demonstration, LabelMap};

pub use episode::{sample_episode, subsample_k_shot, suite_episode_count, Episode, EpisodeSpec};
pub use labels::preprocess_intent_label;
pub use synthetic::SyntheticSpec;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: String,
}

impl Example {
    pub fn demonstration(&self) -> Demonstration {
        Demonstration::new(self.text.clone(), self.label.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Validation,
    Test,
}

/// Preprocessing applied at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Lowercased text; labels through [`preprocess_intent_label`].
    Intent,
    /// Text kept verbatim; labels lowercased.
    News,
    /// Text kept verbatim; labels lowercased.
    Legal,
    /// Nothing changed.
    #[default]
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: String,
    pub role: SplitRole,
    pub examples: Vec<Example>,
    pub label_map: LabelMap,
}

impl DatasetSplit {
    pub fn new(name: impl Into<String>, role: SplitRole, examples: Vec<Example>, label_map: LabelMap) -> Result<Self> {
        for (i, ex) in examples.iter().enumerate() {
            if ex.text.trim().is_empty() || ex.label.trim().is_empty() {
                return Err(Error::Input(format!("example {i} has an empty text or label")));
            }
            label_map.descriptor(&ex.label)?;
        }
        Ok(Self {
            name: name.into(),
            role,
            examples,
            label_map,
        })
    }

    /// Distinct labels in first-appearance order.
    pub fn classes(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.examples
            .iter()
            .filter(|e| seen.insert(e.label.as_str()))
            .map(|e| e.label.as_str())
            .collect()
    }

    pub fn demonstrations(&self) -> Vec<Demonstration> {
        self.examples.iter().map(Example::demonstration).collect()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn with_examples(&self, examples: Vec<Example>) -> Self {
        Self {
            examples,
            ..self.clone()
        }
    }
}

/// One split entry of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: String,
    pub role: SplitRole,
    /// Line-delimited JSON records, relative to the manifest.
    pub path: PathBuf,
    #[serde(default)]
    pub profile: Profile,
    /// Explicit raw label to descriptor map; derived from the data when absent.
    #[serde(default)]
    pub labels: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(rename = "split")]
    pub splits: Vec<SplitEntry>,
}

#[derive(Deserialize)]
struct Record {
    text: Option<String>,
    label: Option<String>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|source| Error::Toml {
        path: path.to_path_buf(),
        source,
    })
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        read_toml(path)
    }

    /// Loads every split, resolving paths against `base`.
    pub fn load_splits(&self, base: &Path) -> Result<Vec<DatasetSplit>> {
        self.splits.iter().map(|s| load_split(s, base)).collect()
    }
}

fn descriptor_for(raw: &str, dataset: &str, profile: Profile) -> String {
    match profile {
        Profile::Intent => preprocess_intent_label(raw, dataset),
        Profile::News | Profile::Legal => raw.to_lowercase(),
        Profile::Raw => raw.to_string(),
    }
}

pub fn load_split(entry: &SplitEntry, base: &Path) -> Result<DatasetSplit> {
    let path = base.join(&entry.path);
    let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut examples = Vec::new();
    for (n, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("{}:{}", path.display(), n + 1);
        let rec: Record =
            serde_json::from_str(line).map_err(|e| Error::Input(format!("{}: {e}", at())))?;
        let text = rec
            .text
            .ok_or_else(|| Error::Input(format!("{}: missing field \"text\"", at())))?;
        let label = rec
            .label
            .ok_or_else(|| Error::Input(format!("{}: missing field \"label\"", at())))?;
        if text.trim().is_empty() || label.trim().is_empty() {
            return Err(Error::Input(format!("{}: empty text or label", at())));
        }
        let text = match entry.profile {
            Profile::Intent => text.to_lowercase(),
            _ => text,
        };
        examples.push(Example { text, label });
    }
    let label_map: LabelMap = match &entry.labels {
        Some(map) => map.clone().into_iter().collect(),
        None => examples
            .iter()
            .map(|e| {
                (
                    e.label.clone(),
                    descriptor_for(&e.label, &entry.name, entry.profile),
                )
            })
            .collect(),
    };
    DatasetSplit::new(entry.name.clone(), entry.role, examples, label_map)
}

/// Loads a manifest that holds exactly one split.
pub fn load_dataset(manifest_path: &Path) -> Result<DatasetSplit> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let [entry] = manifest.splits.as_slice() else {
        return Err(Error::Config(format!(
            "{} lists {} splits, expected 1",
            manifest_path.display(),
            manifest.splits.len()
        )));
    };
    load_split(entry, manifest_path.parent().unwrap_or(Path::new(".")))
}

/// Keeps examples whose text is at most `max_tokens` tokens long.
pub fn ledgar_filter(split: &DatasetSplit, tokenizer: &dyn Tokenizer, max_tokens: usize) -> DatasetSplit {
    split.with_examples(
        split
            .examples
            .iter()
            .filter(|e| tokenizer.encode(&e.text).len() <= max_tokens)
            .cloned()
            .collect(),
    )
}

/// Fails when any two splits share a class.
pub fn check_disjoint_classes(splits: &[&DatasetSplit]) -> Result<()> {
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for s in splits {
        for c in s.classes() {
            if let Some(prev) = owner.insert(c, &s.name) {
                if prev != s.name {
                    return Err(Error::Input(format!(
                        "class {c:?} appears in both {prev:?} and {:?}",
                        s.name
                    )));
                }
            }
        }
    }
    Ok(())
}
