use serde::{Deserialize, Serialize};

use crate::markup::OptionBlock;

/// How a generated answer maps onto the options shown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resolution {
    Option { letter: char, descriptor: String },
    Nota,
    Invalid,
}

/// The first whitespace-delimited token must be exactly an option letter.
/// Anything else counts as "none of the above" when that option exists and
/// as invalid otherwise.
pub fn resolve_prediction(generated: &str, options: &OptionBlock) -> Resolution {
    let first = generated.split_whitespace().next().unwrap_or("");
    let mut chars = first.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if let Some(entry) = options.entry(c) {
            return if entry.is_nota {
                Resolution::Nota
            } else {
                Resolution::Option {
                    letter: c,
                    descriptor: entry.descriptor.clone(),
                }
            };
        }
    }
    if options.has_nota() {
        Resolution::Nota
    } else {
        Resolution::Invalid
    }
}
