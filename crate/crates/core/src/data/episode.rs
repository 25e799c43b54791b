use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{DatasetSplit, Example};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub ways: usize,
    pub shots: usize,
    #[serde(default = "one")]
    pub queries_per_class: usize,
}

fn one() -> usize {
    1
}

impl EpisodeSpec {
    /// The four news configurations: 5 or 10 ways, 1 or 5 shots.
    pub const NEWS_CONFIGS: [EpisodeSpec; 4] = [
        EpisodeSpec::new(5, 1),
        EpisodeSpec::new(5, 5),
        EpisodeSpec::new(10, 1),
        EpisodeSpec::new(10, 5),
    ];

    pub const fn new(ways: usize, shots: usize) -> Self {
        Self {
            ways,
            shots,
            queries_per_class: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ways == 0 || self.shots == 0 || self.queries_per_class == 0 {
            return Err(Error::Config(format!("degenerate episode spec {self:?}")));
        }
        Ok(())
    }
}

/// Number of episodes that gives `total_queries` queries at `spec`.
pub fn suite_episode_count(spec: &EpisodeSpec, total_queries: usize) -> usize {
    total_queries.div_ceil(spec.ways * spec.queries_per_class)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub classes: Vec<String>,
    pub supports: Vec<Example>,
    /// Query examples; each one's `label` is its gold class.
    pub queries: Vec<Example>,
    pub option_seed: u64,
}

fn by_class(split: &DatasetSplit) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ex) in split.examples.iter().enumerate() {
        groups.entry(ex.label.as_str()).or_default().push(i);
    }
    groups
}

/// Picks the classes, then the queries of each class, then its supports.
pub fn sample_episode(split: &DatasetSplit, spec: &EpisodeSpec, seed: u64) -> Result<Episode> {
    spec.validate()?;
    let groups = by_class(split);
    let need = spec.shots + spec.queries_per_class;
    let eligible: Vec<(&str, &Vec<usize>)> = groups
        .iter()
        .filter(|(_, idx)| idx.len() >= need)
        .map(|(c, idx)| (*c, idx))
        .collect();
    if eligible.len() < spec.ways {
        return Err(Error::Input(format!(
            "{}: {} classes have at least {need} examples, {} needed",
            split.name,
            eligible.len(),
            spec.ways
        )));
    }
    let mut rng = seed::rng(seed);
    let mut chosen = index::sample(&mut rng, eligible.len(), spec.ways).into_vec();
    chosen.sort_unstable();
    chosen.shuffle(&mut rng);
    let mut classes = Vec::with_capacity(spec.ways);
    let mut queries = Vec::new();
    let mut supports = Vec::new();
    for c in chosen {
        let (name, idx) = eligible[c];
        let mut pool = idx.clone();
        pool.shuffle(&mut rng);
        classes.push(name.to_string());
        queries.extend(pool[..spec.queries_per_class].iter().map(|&i| split.examples[i].clone()));
        supports.extend(pool[spec.queries_per_class..need].iter().map(|&i| split.examples[i].clone()));
    }
    Ok(Episode {
        classes,
        supports,
        queries,
        option_seed: rng.gen(),
    })
}

/// `k` examples per class, drawn with a seeded generator.
pub fn subsample_k_shot(split: &DatasetSplit, k: usize, seed: u64) -> Result<DatasetSplit> {
    let mut rng = seed::rng(seed);
    let mut keep = Vec::new();
    for (class, idx) in by_class(split) {
        if idx.len() < k {
            return Err(Error::Input(format!(
                "{}: class {class:?} has {} examples, {k} needed",
                split.name,
                idx.len()
            )));
        }
        keep.extend(idx.choose_multiple(&mut rng, k).copied());
    }
    keep.sort_unstable();
    Ok(split.with_examples(keep.into_iter().map(|i| split.examples[i].clone()).collect()))
}
