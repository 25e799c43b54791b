#![allow(dead_code)]

use std::collections::BTreeMap;

use ndarray::Array1;

use iclmu::backend::{ToyBackend, ToyConfig};
use iclmu::data::{SplitRole, SyntheticSpec};
use iclmu::eval::{Gold, PredictionRecord, Resolution};
use iclmu::markup::{build_option_block, Demonstration, LabelMap};
use iclmu::retrieval::EmbeddingProvider;
use iclmu::seed;
use iclmu::warmup::{WarmupTask, WarmupTaskPool};
use iclmu::Result;
use rand::Rng;

pub fn toy() -> ToyBackend {
    ToyBackend::new(ToyConfig::default()).unwrap()
}

/// Looks texts up in a fixed table; used to pin exact vectors.
pub struct TableEmbedder {
    pub dim: usize,
    pub table: BTreeMap<String, Array1<f64>>,
}

impl EmbeddingProvider for TableEmbedder {
    fn id(&self) -> String {
        "table".into()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn normalize(&self) -> bool {
        false
    }

    fn embed(&self, text: &str) -> Result<Array1<f64>> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| iclmu::Error::Provider {
                text: text.into(),
                reason: "not in table".into(),
            })
    }
}

pub fn synthetic_pool(tasks: usize) -> WarmupTaskPool {
    let tasks = (0..tasks)
        .map(|t| {
            let spec = SyntheticSpec {
                vocab_seed: 100 + t as u64,
                ..SyntheticSpec::default()
            };
            WarmupTask {
                name: format!("synth{t}"),
                inputs: spec.split("inputs", SplitRole::Train, 8, 1).unwrap(),
                demos: spec.split("demos", SplitRole::Train, 8, 2).unwrap(),
                weight: 1.0,
            }
        })
        .collect();
    WarmupTaskPool::new(tasks, &[]).unwrap()
}

/// Random open-world records; every record carries a NOTA probability in (0, 1].
pub fn random_records(seed: u64, n: usize) -> Vec<PredictionRecord> {
    let mut rng = seed::rng(seed);
    (0..n)
        .map(|i| {
            let oos = rng.gen_bool(0.3);
            let greedy_nota = rng.gen_bool(0.2);
            let hit = rng.gen_bool(0.6);
            let gold = if oos { Gold::Oos } else { Gold::Class("c0".into()) };
            let resolved = if greedy_nota {
                Resolution::Nota
            } else {
                Resolution::Option {
                    letter: 'A',
                    descriptor: if hit { "c0".into() } else { "c1".into() },
                }
            };
            PredictionRecord {
                query_id: format!("r{i}"),
                generated_text: String::new(),
                resolved,
                gold,
                task_answerable: !oos,
                nota_probability: Some(1.0 - rng.gen::<f64>()),
            }
        })
        .collect()
}

/// A three-way task whose classes have disjoint vocabularies.
pub struct SeparableTask {
    pub classes: [(&'static str, [&'static str; 5]); 3],
}

impl Default for SeparableTask {
    fn default() -> Self {
        Self {
            classes: [
                ("sport", ["goal", "team", "match", "score", "coach"]),
                ("weather", ["rain", "sunny", "storm", "wind", "cloud"]),
                ("music", ["song", "album", "band", "guitar", "concert"]),
            ],
        }
    }
}

impl SeparableTask {
    pub fn labels(&self) -> LabelMap {
        self.classes.iter().map(|(c, _)| (c.to_string(), c.to_string())).collect()
    }

    pub fn descriptors(&self) -> Vec<String> {
        self.classes.iter().map(|(c, _)| c.to_string()).collect()
    }

    pub fn sentence(&self, rng: &mut seed::Rng, class: usize) -> String {
        (0..3)
            .map(|_| self.classes[class].1[rng.gen_range(0..5)])
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// `(demos, query, gold class)` with a single demonstration of the first class.
    pub fn instance(&self, rng: &mut seed::Rng) -> (Vec<Demonstration>, String, usize) {
        let c = rng.gen_range(0..3);
        let query = self.sentence(rng, c);
        let demo = Demonstration::new(self.sentence(rng, 0), self.classes[0].0);
        (vec![demo], query, c)
    }

    pub fn options(&self) -> iclmu::markup::OptionBlock {
        build_option_block(&self.descriptors(), false, 1).unwrap()
    }
}
