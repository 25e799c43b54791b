use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::tokenizer::{TokenId, Tokenizer};
use crate::error::{Error, Result};
use crate::markup::options::OptionBlock;
use crate::markup::tags::TagSet;
use crate::markup::template::{Marker, Segment, SlotKind, TemplateSpec, TemplateStyle};

/// Class label identifier to human-readable descriptor.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap(BTreeMap<String, String>);

impl LabelMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: impl Into<String>, descriptor: impl Into<String>) {
        self.0.insert(label.into(), descriptor.into());
    }

    pub fn descriptor(&self, label: &str) -> Result<&str> {
        self.0
            .get(label)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.contains_key(label)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl FromIterator<(String, String)> for LabelMap {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// A labelled example shown in the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Demonstration {
    pub text: String,
    pub label: String,
}

impl Demonstration {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Element {
    Base { id: TokenId },
    Soft { tag: String, position: usize },
}

/// A prompt resolved to base tokens and soft-token positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub elements: Vec<Element>,
    /// Human-readable rendering with tags shown as `<name>`.
    pub text: String,
    pub option_block: OptionBlock,
    pub target_letter: Option<char>,
}

impl RenderedPrompt {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn soft_count(&self) -> usize {
        self.elements
            .iter()
            .filter(|e| matches!(e, Element::Soft { .. }))
            .count()
    }

    pub fn base_ids(&self) -> Vec<TokenId> {
        self.elements
            .iter()
            .filter_map(|e| match e {
                Element::Base { id } => Some(*id),
                Element::Soft { .. } => None,
            })
            .collect()
    }

    pub fn with_target(mut self, letter: char) -> Self {
        self.target_letter = Some(letter);
        self
    }
}

enum Piece<'a> {
    Text(&'a str),
    Owned(String),
    Tag(&'a str),
}

/// Renders templates into token-level prompts with a given tokenizer.
pub struct Renderer<'a> {
    tags: Option<&'a TagSet>,
    tokenizer: &'a dyn Tokenizer,
}

impl<'a> Renderer<'a> {
    pub fn new(tags: &'a TagSet, tokenizer: &'a dyn Tokenizer) -> Self {
        Self {
            tags: Some(tags),
            tokenizer,
        }
    }

    /// A renderer for handwritten templates only.
    pub fn without_tags(tokenizer: &'a dyn Tokenizer) -> Self {
        Self {
            tags: None,
            tokenizer,
        }
    }

    pub fn tokenizer(&self) -> &'a dyn Tokenizer {
        self.tokenizer
    }

    pub fn render<'t>(
        &self,
        template: &'t TemplateSpec,
        options: &OptionBlock,
        demos: &[Demonstration],
        query: &str,
        labels: &LabelMap,
    ) -> Result<RenderedPrompt> {
        if let Some(tags) = self.tags {
            template.check_tags(tags)?;
        } else if template.tag_names().next().is_some() {
            return Err(Error::Render("soft template rendered without a tag set".into()));
        }
        let demo_letters = demos
            .iter()
            .map(|d| {
                let descriptor = labels.descriptor(&d.label)?;
                options.letter_of(descriptor).ok_or_else(|| {
                    Error::Render(format!(
                        "demo label {:?} ({descriptor:?}) is not among the options",
                        d.label
                    ))
                })
            })
            .collect::<Result<Vec<char>>>()?;

        let field_sep = match template.style {
            TemplateStyle::Soft => " ",
            TemplateStyle::Handwritten => "\n",
        };
        let fmt = &template.demo_format;
        let marker = |m: &'t Marker| match m {
            Marker::Literal(t) => Piece::Text(t),
            Marker::Tag(t) => Piece::Tag(t),
        };

        let mut blocks: Vec<Vec<Piece<'t>>> = Vec::new();
        for segment in &template.segments {
            let block = match segment {
                Segment::Literal(t) => vec![Piece::Text(t)],
                Segment::Tag(t) => vec![Piece::Tag(t)],
                Segment::Slot(SlotKind::Options) => vec![Piece::Owned(options.lines().join("\n"))],
                Segment::Slot(SlotKind::Demos) => {
                    let mut block = Vec::new();
                    for (i, (demo, letter)) in demos.iter().zip(&demo_letters).enumerate() {
                        if i > 0 {
                            block.push(Piece::Text(&fmt.separator));
                        }
                        block.push(marker(&fmt.demo));
                        block.push(Piece::Text(field_sep));
                        block.push(marker(&fmt.input));
                        block.push(Piece::Owned(format!(" {}", demo.text)));
                        block.push(Piece::Text(field_sep));
                        block.push(marker(&fmt.label));
                        block.push(Piece::Owned(format!(" {letter}")));
                    }
                    block
                }
                Segment::Slot(SlotKind::Query) => vec![
                    marker(&fmt.input),
                    Piece::Owned(format!(" {query}")),
                    Piece::Text(field_sep),
                    marker(&fmt.label),
                ],
            };
            if !block.is_empty() {
                blocks.push(block);
            }
        }

        let mut elements = Vec::new();
        let mut text = String::new();
        let mut pending = String::new();
        for (i, block) in blocks.iter().enumerate() {
            if i > 0 {
                text.push('\n');
                pending.push('\n');
            }
            for piece in block {
                match piece {
                    Piece::Text(t) => {
                        text.push_str(t);
                        pending.push_str(t);
                    }
                    Piece::Owned(t) => {
                        text.push_str(t);
                        pending.push_str(t);
                    }
                    Piece::Tag(name) => {
                        self.flush(&mut pending, &mut elements);
                        let width = self
                            .tags
                            .and_then(|t| t.width_of(name))
                            .ok_or_else(|| Error::Render(format!("unknown tag {name:?}")))?;
                        elements.extend((0..width).map(|position| Element::Soft {
                            tag: (*name).to_string(),
                            position,
                        }));
                        text.push('<');
                        text.push_str(name);
                        text.push('>');
                    }
                }
            }
        }
        self.flush(&mut pending, &mut elements);

        Ok(RenderedPrompt {
            elements,
            text,
            option_block: options.clone(),
            target_letter: None,
        })
    }

    fn flush(&self, pending: &mut String, elements: &mut Vec<Element>) {
        if !pending.is_empty() {
            elements.extend(self.tokenizer.encode(pending).into_iter().map(|id| Element::Base { id }));
            pending.clear();
        }
    }
}
