use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markup::tags::{self, TagSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateStyle {
    Soft,
    Handwritten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Options,
    Demos,
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Segment {
    Literal(String),
    Tag(String),
    Slot(SlotKind),
}

/// What marks a field inside a demonstration: a soft tag or a handwritten phrase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Marker {
    Literal(String),
    Tag(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DemoFormat {
    pub demo: Marker,
    pub input: Marker,
    pub label: Marker,
    /// Inserted between consecutive demonstrations.
    pub separator: String,
}

impl DemoFormat {
    pub fn soft() -> Self {
        Self {
            demo: Marker::Tag(tags::DEMO.into()),
            input: Marker::Tag(tags::INPUT.into()),
            label: Marker::Tag(tags::LABEL.into()),
            separator: "\n".into(),
        }
    }

    fn markers(&self) -> [&Marker; 3] {
        [&self.demo, &self.input, &self.label]
    }
}

/// An ordered multiple-choice template: literals, tag references and the
/// three content slots, plus the markers used inside the demo/query slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub style: TemplateStyle,
    pub segments: Vec<Segment>,
    pub demo_format: DemoFormat,
}

impl TemplateSpec {
    pub fn new(style: TemplateStyle, segments: Vec<Segment>, demo_format: DemoFormat) -> Result<Self> {
        let spec = Self {
            style,
            segments,
            demo_format,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The template from the markup figure: classification header, options
    /// header, then options, demos and the pending query.
    pub fn default_soft() -> Self {
        Self {
            style: TemplateStyle::Soft,
            segments: vec![
                Segment::Tag(tags::CLASSIFICATION.into()),
                Segment::Tag(tags::OPTIONS.into()),
                Segment::Slot(SlotKind::Options),
                Segment::Slot(SlotKind::Demos),
                Segment::Slot(SlotKind::Query),
            ],
            demo_format: DemoFormat::soft(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let slots: Vec<SlotKind> = self
            .segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(k) => Some(*k),
                _ => None,
            })
            .collect();
        if slots != [SlotKind::Options, SlotKind::Demos, SlotKind::Query] {
            return Err(Error::Config(format!(
                "template needs exactly one options, demos and query slot in that order, found {slots:?}"
            )));
        }
        let tag_count = self.tag_names().count();
        match self.style {
            TemplateStyle::Soft if tag_count == 0 => {
                Err(Error::Config("soft template references no tags".into()))
            }
            TemplateStyle::Handwritten if tag_count > 0 => {
                Err(Error::Config("handwritten template may not reference tags".into()))
            }
            _ => Ok(()),
        }
    }

    /// Every tag name referenced by segments or demo markers, in template order.
    pub fn tag_names(&self) -> impl Iterator<Item = &str> {
        let seg = self.segments.iter().filter_map(|s| match s {
            Segment::Tag(t) => Some(t.as_str()),
            _ => None,
        });
        let markers = self.demo_format.markers().into_iter().filter_map(|m| match m {
            Marker::Tag(t) => Some(t.as_str()),
            Marker::Literal(_) => None,
        });
        seg.chain(markers)
    }

    /// Every literal phrase, segments first, then demo markers.
    pub fn literals(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .segments
            .iter()
            .filter_map(|s| match s {
                Segment::Literal(t) => Some(t.as_str()),
                _ => None,
            })
            .collect();
        out.extend(self.demo_format.markers().into_iter().filter_map(|m| match m {
            Marker::Literal(t) => Some(t.as_str()),
            Marker::Tag(_) => None,
        }));
        out
    }

    pub fn check_tags(&self, tags: &TagSet) -> Result<()> {
        for name in self.tag_names() {
            if tags.get(name).is_none() {
                return Err(Error::Config(format!("template references unknown tag {name:?}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_soft_is_valid() {
        let t = TemplateSpec::default_soft();
        t.validate().unwrap();
        t.check_tags(&tags::define_default_tagset(9).unwrap()).unwrap();
        assert_eq!(
            t.tag_names().collect::<Vec<_>>(),
            ["classification", "options", "demo", "input", "label"]
        );
    }

    #[test]
    fn slot_order_is_enforced() {
        let mut t = TemplateSpec::default_soft();
        t.segments.swap(2, 3);
        assert!(t.validate().is_err());
        let mut t = TemplateSpec::default_soft();
        t.segments.push(Segment::Slot(SlotKind::Query));
        assert!(t.validate().is_err());
    }

    #[test]
    fn style_tag_rules() {
        let mut t = TemplateSpec::default_soft();
        t.style = TemplateStyle::Handwritten;
        assert!(t.validate().is_err());
        let bare = TemplateSpec {
            style: TemplateStyle::Soft,
            segments: vec![
                Segment::Slot(SlotKind::Options),
                Segment::Slot(SlotKind::Demos),
                Segment::Slot(SlotKind::Query),
            ],
            demo_format: DemoFormat {
                demo: Marker::Literal("ex".into()),
                input: Marker::Literal("in:".into()),
                label: Marker::Literal("out:".into()),
                separator: "\n".into(),
            },
        };
        assert!(bare.validate().is_err());
    }

    #[test]
    fn unknown_tag_rejected() {
        let mut t = TemplateSpec::default_soft();
        t.segments.insert(0, Segment::Tag("nota".into()));
        assert!(t.check_tags(&tags::define_default_tagset(9).unwrap()).is_err());
    }

    fn arb_text() -> impl Strategy<Value = String> {
        "[ -~\\n]{0,12}"
    }

    fn arb_marker() -> impl Strategy<Value = Marker> {
        prop_oneof![
            arb_text().prop_map(Marker::Literal),
            "[a-z]{1,8}".prop_map(Marker::Tag)
        ]
    }

    fn arb_extra() -> impl Strategy<Value = Vec<Segment>> {
        prop::collection::vec(
            prop_oneof![
                arb_text().prop_map(Segment::Literal),
                "[a-z]{1,8}".prop_map(Segment::Tag)
            ],
            0..3,
        )
    }

    proptest! {
        #[test]
        fn json_round_trip(
            a in arb_extra(), b in arb_extra(), c in arb_extra(), d in arb_extra(),
            demo in arb_marker(), input in arb_marker(), label in arb_marker(),
            sep in arb_text(), soft in any::<bool>()
        ) {
            let mut segments = a;
            segments.push(Segment::Slot(SlotKind::Options));
            segments.extend(b);
            segments.push(Segment::Slot(SlotKind::Demos));
            segments.extend(c);
            segments.push(Segment::Slot(SlotKind::Query));
            segments.extend(d);
            let style = if soft { TemplateStyle::Soft } else { TemplateStyle::Handwritten };
            let spec = TemplateSpec { style, segments, demo_format: DemoFormat { demo, input, label, separator: sep } };
            if spec.validate().is_ok() {
                let back = TemplateSpec::from_json(&spec.to_json().unwrap()).unwrap();
                prop_assert_eq!(back, spec);
            }
        }
    }
}
