use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLASSIFICATION: &str = "classification";
pub const OPTIONS: &str = "options";
pub const DEMO: &str = "demo";
pub const INPUT: &str = "input";
pub const LABEL: &str = "label";

/// Allowed width of the `classification` tag in the default tag set.
pub const CLASSIFICATION_WIDTHS: RangeInclusive<usize> = 9..=18;
/// Allowed total soft-token count of a tag set.
pub const TOTAL_WIDTHS: RangeInclusive<usize> = 10..=25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TagRole {
    Header,
    OptionsHeader,
    DemoMarker,
    InputMarker,
    LabelMarker,
}

/// A named markup tag backed by `width` consecutive soft tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSpec {
    pub name: String,
    pub width: usize,
    pub role: TagRole,
}

impl TagSpec {
    pub fn new(name: impl Into<String>, width: usize, role: TagRole) -> Self {
        Self {
            name: name.into(),
            width,
            role,
        }
    }
}

/// Ordered collection of uniquely named tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TagSpec>", into = "Vec<TagSpec>")]
pub struct TagSet {
    tags: Vec<TagSpec>,
}

impl TagSet {
    pub fn new(tags: Vec<TagSpec>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for tag in &tags {
            if tag.width == 0 {
                return Err(Error::Config(format!("tag {:?} has zero width", tag.name)));
            }
            if tag.name.is_empty() {
                return Err(Error::Config("tag names must be non-empty".into()));
            }
            if !seen.insert(tag.name.as_str()) {
                return Err(Error::Config(format!("duplicate tag {:?}", tag.name)));
            }
        }
        let set = Self { tags };
        let total = set.total_width();
        if !TOTAL_WIDTHS.contains(&total) {
            return Err(Error::Config(format!(
                "total soft-token width {total} outside {}..={}",
                TOTAL_WIDTHS.start(),
                TOTAL_WIDTHS.end()
            )));
        }
        Ok(set)
    }

    pub fn tags(&self) -> &[TagSpec] {
        &self.tags
    }

    pub fn get(&self, name: &str) -> Option<&TagSpec> {
        self.tags.iter().find(|t| t.name == name)
    }

    pub fn width_of(&self, name: &str) -> Option<usize> {
        self.get(name).map(|t| t.width)
    }

    pub fn total_width(&self) -> usize {
        self.tags.iter().map(|t| t.width).sum()
    }

    /// Row offset of each tag when the tags are laid out contiguously in order.
    pub fn offsets(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut start = 0;
        self.tags
            .iter()
            .map(|t| {
                let range = start..start + t.width;
                start += t.width;
                (t.name.clone(), range)
            })
            .collect()
    }
}

impl TryFrom<Vec<TagSpec>> for TagSet {
    type Error = Error;

    fn try_from(tags: Vec<TagSpec>) -> Result<Self> {
        TagSet::new(tags)
    }
}

impl From<TagSet> for Vec<TagSpec> {
    fn from(set: TagSet) -> Self {
        set.tags
    }
}

/// The five-tag set used by every multiple-choice template in this crate.
pub fn define_default_tagset(classification_width: usize) -> Result<TagSet> {
    if !CLASSIFICATION_WIDTHS.contains(&classification_width) {
        return Err(Error::Config(format!(
            "classification width {classification_width} outside {}..={}",
            CLASSIFICATION_WIDTHS.start(),
            CLASSIFICATION_WIDTHS.end()
        )));
    }
    TagSet::new(vec![
        TagSpec::new(CLASSIFICATION, classification_width, TagRole::Header),
        TagSpec::new(OPTIONS, 2, TagRole::OptionsHeader),
        TagSpec::new(DEMO, 1, TagRole::DemoMarker),
        TagSpec::new(INPUT, 1, TagRole::InputMarker),
        TagSpec::new(LABEL, 1, TagRole::LabelMarker),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_widths() {
        assert_eq!(define_default_tagset(9).unwrap().total_width(), 14);
        assert_eq!(define_default_tagset(18).unwrap().total_width(), 23);
        for w in [0, 8, 19, 20] {
            assert!(matches!(define_default_tagset(w), Err(Error::Config(_))));
        }
    }

    #[test]
    fn offsets_are_contiguous() {
        let set = define_default_tagset(12).unwrap();
        let offsets = set.offsets();
        assert_eq!(offsets[0].1, 0..12);
        assert_eq!(offsets[1].1, 12..14);
        assert_eq!(offsets.last().unwrap().1.end, set.total_width());
    }

    #[test]
    fn rejects_duplicates_and_bad_totals() {
        let dup = vec![
            TagSpec::new("a", 5, TagRole::Header),
            TagSpec::new("a", 5, TagRole::Header),
        ];
        assert!(TagSet::new(dup).is_err());
        let tiny = vec![TagSpec::new("a", 3, TagRole::Header)];
        assert!(TagSet::new(tiny).is_err());
        let big = vec![TagSpec::new("a", 26, TagRole::Header)];
        assert!(TagSet::new(big).is_err());
    }

    #[test]
    fn serde_validates() {
        let set = define_default_tagset(9).unwrap();
        let json = serde_json::to_string(&set).unwrap();
        assert_eq!(serde_json::from_str::<TagSet>(&json).unwrap(), set);
        let bad = r#"[{"name":"x","width":2,"role":"header"}]"#;
        assert!(serde_json::from_str::<TagSet>(bad).is_err());
    }
}
