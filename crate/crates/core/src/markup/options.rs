use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const NOTA: &str = "none of the above";
pub const MAX_OPTIONS: usize = 26;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionEntry {
    pub letter: char,
    pub descriptor: String,
    pub is_nota: bool,
}

/// Per-instance mapping from capital letters to class descriptors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionBlock {
    entries: Vec<OptionEntry>,
    permutation_seed: u64,
}

pub fn letter(index: usize) -> char {
    debug_assert!(index < MAX_OPTIONS);
    (b'A' + index as u8) as char
}

impl OptionBlock {
    /// Assigns letters to `descriptors` in the given order, without shuffling.
    pub fn from_ordered(descriptors: Vec<String>, include_nota: bool, seed: u64) -> Result<Self> {
        let count = descriptors.len() + usize::from(include_nota);
        if count == 0 {
            return Err(Error::Input("an option block needs at least one entry".into()));
        }
        if count > MAX_OPTIONS {
            return Err(Error::Capacity {
                count,
                max: MAX_OPTIONS,
            });
        }
        let mut seen = BTreeSet::new();
        for d in &descriptors {
            if d.trim().is_empty() {
                return Err(Error::Input("empty class descriptor".into()));
            }
            if !seen.insert(d.as_str()) || (include_nota && d == NOTA) {
                return Err(Error::Input(format!("duplicate descriptor {d:?}")));
            }
        }
        let mut entries: Vec<OptionEntry> = descriptors
            .into_iter()
            .enumerate()
            .map(|(i, descriptor)| OptionEntry {
                letter: letter(i),
                descriptor,
                is_nota: false,
            })
            .collect();
        if include_nota {
            entries.push(OptionEntry {
                letter: letter(entries.len()),
                descriptor: NOTA.to_string(),
                is_nota: true,
            });
        }
        Ok(Self {
            entries,
            permutation_seed: seed,
        })
    }

    pub fn entries(&self) -> &[OptionEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn permutation_seed(&self) -> u64 {
        self.permutation_seed
    }

    pub fn letters(&self) -> Vec<char> {
        self.entries.iter().map(|e| e.letter).collect()
    }

    pub fn letter_of(&self, descriptor: &str) -> Option<char> {
        self.entries
            .iter()
            .find(|e| !e.is_nota && e.descriptor == descriptor)
            .map(|e| e.letter)
    }

    pub fn entry(&self, letter: char) -> Option<&OptionEntry> {
        self.entries.iter().find(|e| e.letter == letter)
    }

    pub fn nota_letter(&self) -> Option<char> {
        self.entries.iter().find(|e| e.is_nota).map(|e| e.letter)
    }

    pub fn has_nota(&self) -> bool {
        self.nota_letter().is_some()
    }

    /// One `LETTER: descriptor` line per entry.
    pub fn lines(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| format!("{}: {}", e.letter, e.descriptor))
            .collect()
    }
}

/// Shuffles `descriptors` with a generator keyed by `seed`, then letters them A, B, ...
pub fn build_option_block(descriptors: &[String], include_nota: bool, seed: u64) -> Result<OptionBlock> {
    let mut shuffled = descriptors.to_vec();
    shuffled.shuffle(&mut seed::rng(seed));
    OptionBlock::from_ordered(shuffled, include_nota, seed)
}
