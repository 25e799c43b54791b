//! The tag markup: tag sets, option blocks, templates and rendering.

pub mod handwritten;
pub mod options;
pub mod render;
pub mod tags;
pub mod template;

pub use handwritten::{load_handwritten_set, phrase_set, PhraseDomain, PhraseSet};
pub use options::{build_option_block, OptionBlock, OptionEntry, NOTA};
pub use render::{Demonstration, Element, LabelMap, RenderedPrompt, Renderer};
pub use tags::{define_default_tagset, TagRole, TagSet, TagSpec};
pub use template::{DemoFormat, Marker, Segment, SlotKind, TemplateSpec, TemplateStyle};
