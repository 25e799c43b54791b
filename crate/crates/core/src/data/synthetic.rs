//! Seeded synthetic classification data for smoke runs and tests.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{DatasetSplit, Example, SplitRole};
use crate::error::{Error, Result};
use crate::markup::LabelMap;
use crate::seed;

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ten", "ras", "vu", "pel", "dor", "fi", "zan", "qui", "bro", "sa", "gun", "te", "wol",
];
const FILLER: [&str; 8] = ["the", "my", "a", "please", "can", "you", "is", "to"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub words_per_class: usize,
    /// Inclusive range of content words per text.
    pub min_words: usize,
    pub max_words: usize,
    /// Chance that each position holds a shared filler word instead.
    pub filler_rate: f64,
    /// Fixes the class vocabularies, so splits drawn with different sample
    /// seeds describe the same task.
    pub vocab_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 6,
            words_per_class: 6,
            min_words: 3,
            max_words: 6,
            filler_rate: 0.2,
            vocab_seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn word(&self, class: usize, j: usize) -> String {
        let h = seed::derive(seed::derive(self.vocab_seed, class as u64), j as u64);
        let n = SYLLABLES.len() as u64;
        format!(
            "{}{}{}",
            SYLLABLES[(h % n) as usize],
            SYLLABLES[((h / n) % n) as usize],
            SYLLABLES[((h / (n * n)) % n) as usize]
        )
    }

    /// Content words of `class`.
    pub fn vocabulary(&self, class: usize) -> Vec<String> {
        (0..self.words_per_class).map(|j| self.word(class, j)).collect()
    }

    pub fn label(&self, class: usize) -> String {
        format!("{}_{}", self.word(class, 0), self.word(class, 1))
    }

    pub fn label_map(&self) -> LabelMap {
        (0..self.classes)
            .map(|c| (self.label(c), self.label(c).replace('_', " ")))
            .collect()
    }

    /// A text of `class` drawn with `rng`.
    pub fn text(&self, class: usize, rng: &mut seed::Rng) -> String {
        let vocab = self.vocabulary(class);
        let n = rng.gen_range(self.min_words..=self.max_words);
        (0..n)
            .map(|_| {
                if rng.gen_bool(self.filler_rate) {
                    FILLER.choose(rng).expect("non-empty").to_string()
                } else {
                    vocab.choose(rng).expect("non-empty").clone()
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// `per_class` examples of every class, classes interleaved.
    pub fn split(&self, name: &str, role: SplitRole, per_class: usize, sample_seed: u64) -> Result<DatasetSplit> {
        if self.classes == 0 || self.words_per_class < 2 || self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::Config(format!("degenerate synthetic spec {self:?}")));
        }
        if !(0.0..1.0).contains(&self.filler_rate) {
            return Err(Error::Config("filler_rate must lie in [0, 1)".into()));
        }
        let mut rng = seed::rng(sample_seed);
        let mut examples = Vec::with_capacity(self.classes * per_class);
        for _ in 0..per_class {
            for c in 0..self.classes {
                examples.push(Example {
                    text: self.text(c, &mut rng),
                    label: self.label(c),
                });
            }
        }
        DatasetSplit::new(name, role, examples, self.label_map())
    }
}
