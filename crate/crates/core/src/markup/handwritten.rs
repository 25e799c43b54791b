//! Handwritten phrase sets for the intent and legal baselines. The same
//! phrases seed the `anneal` initialization of the soft tags.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markup::tags;
use crate::markup::template::{DemoFormat, Marker, Segment, SlotKind, TemplateSpec, TemplateStyle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhraseDomain {
    Intent,
    Legal,
}

impl std::str::FromStr for PhraseDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intent" => Ok(Self::Intent),
            "legal" => Ok(Self::Legal),
            other => Err(Error::Config(format!("unknown phrase domain {other:?}"))),
        }
    }
}

/// The five word choices that replace the five tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseSet {
    pub icl_header: String,
    pub options_header: String,
    pub demo_indicator: String,
    pub input_indicator: String,
    pub label_indicator: String,
}

impl PhraseSet {
    fn from_strs([icl, opts, demo, input, label]: [&str; 5]) -> Self {
        Self {
            icl_header: icl.into(),
            options_header: opts.into(),
            demo_indicator: demo.into(),
            input_indicator: input.into(),
            label_indicator: label.into(),
        }
    }

    /// Handwritten template using these phrases in place of the tags.
    pub fn template(&self) -> TemplateSpec {
        TemplateSpec {
            style: TemplateStyle::Handwritten,
            segments: vec![
                Segment::Literal(self.icl_header.clone()),
                Segment::Literal(self.options_header.clone()),
                Segment::Slot(SlotKind::Options),
                Segment::Slot(SlotKind::Demos),
                Segment::Slot(SlotKind::Query),
            ],
            demo_format: DemoFormat {
                demo: Marker::Literal(self.demo_indicator.clone()),
                input: Marker::Literal(self.input_indicator.clone()),
                label: Marker::Literal(self.label_indicator.clone()),
                separator: "\n".into(),
            },
        }
    }

    /// Tag name to source phrase, for initializing soft tags from these words.
    pub fn tag_phrases(&self) -> BTreeMap<String, String> {
        [
            (tags::CLASSIFICATION, &self.icl_header),
            (tags::OPTIONS, &self.options_header),
            (tags::DEMO, &self.demo_indicator),
            (tags::INPUT, &self.input_indicator),
            (tags::LABEL, &self.label_indicator),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
    }
}

const INTENT: [[&str; 5]; 5] = [
    [
        "Categorize the following user statements according to their intent.",
        "category options:",
        "example",
        "statement:",
        "category:",
    ],
    [
        "Classify the user inquiries below according to their intent.",
        "possible classes:",
        "demonstration",
        "inquiry:",
        "class:",
    ],
    [
        "Label these user requests based on their intent type.",
        "label options:",
        "example",
        "request:",
        "label:",
    ],
    [
        "Classify these user utterances based on their principal intent.",
        "possible classes:",
        "###",
        "utterance:",
        "class:",
    ],
    [
        "Determine the intent of the following incoming user requests.",
        "intent options:",
        "e.g.",
        "request:",
        "intent:",
    ],
];

const LEGAL: [[&str; 5]; 5] = [
    [
        "Categorize the following contract provisions according to their main topic.",
        "category options:",
        "example",
        "provision:",
        "category:",
    ],
    [
        "Classify the contract provisions below according to their main topic.",
        "possible classes:",
        "demonstration",
        "provision:",
        "class:",
    ],
    [
        "Label these contract provisions based on their main topic.",
        "label options:",
        "example",
        "provision:",
        "label:",
    ],
    [
        "Classify these contract provisions based on their primary topic.",
        "possible classes:",
        "###",
        "provision:",
        "class:",
    ],
    [
        "Determine the main topic of the following contract provisions.",
        "topic options:",
        "e.g.",
        "provision:",
        "topic:",
    ],
];

/// Phrase set `index` (1-based, 1..=5) for `domain`.
pub fn phrase_set(index: usize, domain: PhraseDomain) -> Result<PhraseSet> {
    let table = match domain {
        PhraseDomain::Intent => &INTENT,
        PhraseDomain::Legal => &LEGAL,
    };
    if !(1..=table.len()).contains(&index) {
        return Err(Error::Config(format!("handwritten set index {index} outside 1..=5")));
    }
    Ok(PhraseSet::from_strs(table[index - 1]))
}

pub fn load_handwritten_set(index: usize, domain: PhraseDomain) -> Result<TemplateSpec> {
    phrase_set(index, domain).map(|p| p.template())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intent_sets() {
        let one = phrase_set(1, PhraseDomain::Intent).unwrap();
        assert_eq!(
            one.icl_header,
            "Categorize the following user statements according to their intent."
        );
        assert_eq!(phrase_set(4, PhraseDomain::Intent).unwrap().demo_indicator, "###");
        let t = load_handwritten_set(1, PhraseDomain::Intent).unwrap();
        let lits = t.literals();
        assert!(lits.contains(&"statement:"));
        assert!(lits.contains(&"category:"));
        t.validate().unwrap();
    }

    #[test]
    fn legal_sets() {
        assert_eq!(phrase_set(5, PhraseDomain::Legal).unwrap().label_indicator, "topic:");
        for i in 1..=5 {
            assert_eq!(phrase_set(i, PhraseDomain::Legal).unwrap().input_indicator, "provision:");
        }
    }

    #[test]
    fn index_bounds() {
        assert!(phrase_set(0, PhraseDomain::Intent).is_err());
        assert!(phrase_set(6, PhraseDomain::Legal).is_err());
    }

    #[test]
    fn tag_phrases_cover_default_tags() {
        let p = phrase_set(2, PhraseDomain::Intent).unwrap().tag_phrases();
        assert_eq!(p.len(), 5);
        assert_eq!(p["label"], "class:");
    }
}
