use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markup::TagSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    Random,
    Anneal,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "anneal" => Ok(Self::Anneal),
            other => Err(Error::Config(format!("unknown init strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Anneal => "anneal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankMetadata {
    pub base_model: String,
    pub base_param_digest: String,
    pub seed: u64,
    pub steps: u64,
    pub init: InitStrategy,
}

/// Trainable embedding rows for every soft token of a tag set. These are
/// the only parameters touched by warm-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTokenBank {
    rows: Array2<f64>,
    tag_offsets: BTreeMap<String, Range<usize>>,
    pub metadata: BankMetadata,
}

impl SoftTokenBank {
    pub fn new(
        rows: Array2<f64>,
        tag_offsets: BTreeMap<String, Range<usize>>,
        metadata: BankMetadata,
    ) -> Result<Self> {
        let mut ranges: Vec<&Range<usize>> = tag_offsets.values().collect();
        ranges.sort_by_key(|r| r.start);
        let mut next = 0;
        for r in ranges {
            if r.start != next || r.end <= r.start {
                return Err(Error::Config(format!(
                    "tag row ranges must be disjoint, non-empty and contiguous from 0 (at {r:?})"
                )));
            }
            next = r.end;
        }
        if next != rows.nrows() {
            return Err(Error::Config(format!(
                "tag ranges cover {next} rows but the bank has {}",
                rows.nrows()
            )));
        }
        Ok(Self {
            rows,
            tag_offsets,
            metadata,
        })
    }

    pub fn for_tags(tags: &TagSet, rows: Array2<f64>, metadata: BankMetadata) -> Result<Self> {
        Self::new(rows, tags.offsets().into_iter().collect(), metadata)
    }

    /// A bank with no rows, for templates without tags.
    pub fn empty(embedding_dim: usize, metadata: BankMetadata) -> Self {
        Self {
            rows: Array2::zeros((0, embedding_dim)),
            tag_offsets: BTreeMap::new(),
            metadata,
        }
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut Array2<f64> {
        &mut self.rows
    }

    pub fn tag_offsets(&self) -> &BTreeMap<String, Range<usize>> {
        &self.tag_offsets
    }

    pub fn total_width(&self) -> usize {
        self.rows.nrows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.rows.len()
    }

    /// Bank row for position `position` of `tag`.
    pub fn row_index(&self, tag: &str, position: usize) -> Result<usize> {
        let range = self
            .tag_offsets
            .get(tag)
            .ok_or_else(|| Error::Config(format!("bank has no rows for tag {tag:?}")))?;
        if position >= range.len() {
            return Err(Error::Config(format!(
                "position {position} outside tag {tag:?} of width {}",
                range.len()
            )));
        }
        Ok(range.start + position)
    }

    pub fn matches(&self, tags: &TagSet) -> bool {
        let expected: BTreeMap<String, Range<usize>> = tags.offsets().into_iter().collect();
        expected == self.tag_offsets
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markup::define_default_tagset;

    fn meta() -> BankMetadata {
        BankMetadata {
            base_model: "m".into(),
            base_param_digest: "d".into(),
            seed: 0,
            steps: 0,
            init: InitStrategy::Random,
        }
    }

    #[test]
    fn offsets_follow_tagset() {
        let tags = define_default_tagset(9).unwrap();
        let bank = SoftTokenBank::for_tags(&tags, Array2::zeros((14, 8)), meta()).unwrap();
        assert_eq!(bank.row_index("classification", 8).unwrap(), 8);
        assert_eq!(bank.row_index("options", 1).unwrap(), 10);
        assert_eq!(bank.row_index("label", 0).unwrap(), 13);
        assert!(bank.row_index("label", 1).is_err());
        assert!(bank.row_index("nota", 0).is_err());
        assert_eq!(bank.parameter_count(), 14 * 8);
        assert!(bank.matches(&tags));
        assert!(!bank.matches(&define_default_tagset(10).unwrap()));
    }

    #[test]
    fn rejects_gaps_and_overlap() {
        let mut offsets = BTreeMap::new();
        offsets.insert("a".to_string(), 0..3);
        offsets.insert("b".to_string(), 4..6);
        assert!(SoftTokenBank::new(Array2::zeros((6, 2)), offsets, meta()).is_err());
        let mut offsets = BTreeMap::new();
        offsets.insert("a".to_string(), 0..3);
        offsets.insert("b".to_string(), 2..6);
        assert!(SoftTokenBank::new(Array2::zeros((6, 2)), offsets, meta()).is_err());
        let mut offsets = BTreeMap::new();
        offsets.insert("a".to_string(), 0..3);
        assert!(SoftTokenBank::new(Array2::zeros((4, 2)), offsets, meta()).is_err());
    }
}
