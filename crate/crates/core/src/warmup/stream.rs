//! Infinite seeded streams of warm-up prompts.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use serde::{Deserialize, Serialize};

use super::{TrainingInstance, WarmupConfig};
use crate::backend::Seq2SeqBackend;
use crate::data::{sample_episode, DatasetSplit, Episode, EpisodeSpec};
use crate::error::{Error, Result};
use crate::markup::{build_option_block, Renderer};
use crate::retrieval::{
    build_index, mmr_select, Composer, DemoOrder, EmbeddingProvider, RetrievalConfig, VectorIndex,
};
use crate::seed;

/// One warm-up dataset. Queries come from `inputs`; demonstrations from `demos`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmupTask {
    pub name: String,
    pub inputs: DatasetSplit,
    pub demos: DatasetSplit,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmupTaskPool {
    tasks: Vec<WarmupTask>,
}

impl WarmupTaskPool {
    /// Drops every task named in `withheld`.
    pub fn new(tasks: Vec<WarmupTask>, withheld: &[String]) -> Result<Self> {
        let tasks: Vec<WarmupTask> = tasks
            .into_iter()
            .filter(|t| !withheld.contains(&t.name))
            .collect();
        if tasks.is_empty() {
            return Err(Error::Config("warm-up pool has no tasks".into()));
        }
        for t in &tasks {
            if !(t.weight.is_finite() && t.weight > 0.0) {
                return Err(Error::Config(format!("task {:?} has weight {}", t.name, t.weight)));
            }
            if t.inputs.is_empty() || t.demos.is_empty() {
                return Err(Error::Config(format!(
                    "task {:?} needs both inputs and a demonstration pool",
                    t.name
                )));
            }
        }
        Ok(Self { tasks })
    }

    pub fn tasks(&self) -> &[WarmupTask] {
        &self.tasks
    }

    pub fn names(&self) -> Vec<&str> {
        self.tasks.iter().map(|t| t.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamMode {
    /// Each query gets MMR-retrieved demonstrations and re-scoped options.
    Retrieval { retrieval: RetrievalConfig },
    /// Episodes sampled from the input split, cycling over every spec.
    /// Multi-shot episodes keep the `multi_shot_k` MMR picks among the supports.
    Episodic {
        specs: Vec<EpisodeSpec>,
        episodes_per_spec: usize,
        multi_shot_k: usize,
        lambda: f64,
    },
}

impl StreamMode {
    pub fn news() -> Self {
        Self::Episodic {
            specs: EpisodeSpec::NEWS_CONFIGS.to_vec(),
            episodes_per_spec: 5000,
            multi_shot_k: 15,
            lambda: RetrievalConfig::default().lambda,
        }
    }
}

pub struct WarmupStream<'a> {
    backend: &'a dyn Seq2SeqBackend,
    provider: &'a dyn EmbeddingProvider,
    pool: &'a WarmupTaskPool,
    config: &'a WarmupConfig,
    mode: StreamMode,
    indexes: Vec<VectorIndex>,
    weights: WeightedIndex<f64>,
    rng: seed::Rng,
    counter: u64,
    schedule: Vec<(usize, usize, u64)>,
    pending: Vec<TrainingInstance>,
    produced: u64,
    answerable: u64,
}

pub fn build_warmup_stream<'a>(
    pool: &'a WarmupTaskPool,
    backend: &'a dyn Seq2SeqBackend,
    provider: &'a dyn EmbeddingProvider,
    mode: StreamMode,
    config: &'a WarmupConfig,
) -> Result<WarmupStream<'a>> {
    config.validate()?;
    let indexes = match &mode {
        StreamMode::Retrieval { retrieval } => {
            retrieval.validate()?;
            pool.tasks
                .iter()
                .map(|t| build_index(&t.demos.demonstrations(), provider))
                .collect::<Result<_>>()?
        }
        StreamMode::Episodic {
            specs,
            episodes_per_spec,
            multi_shot_k,
            lambda,
        } => {
            if specs.is_empty() || *episodes_per_spec == 0 {
                return Err(Error::Config("episodic stream needs specs and episodes".into()));
            }
            RetrievalConfig::new(*multi_shot_k, *lambda)?;
            for s in specs {
                s.validate()?;
            }
            Vec::new()
        }
    };
    let weights = WeightedIndex::new(pool.tasks.iter().map(|t| t.weight))
        .map_err(|e| Error::Config(format!("task weights: {e}")))?;
    Ok(WarmupStream {
        backend,
        provider,
        pool,
        config,
        mode,
        indexes,
        weights,
        rng: seed::rng(seed::derive(config.seed, 0x5747)),
        counter: 0,
        schedule: Vec::new(),
        pending: Vec::new(),
        produced: 0,
        answerable: 0,
    })
}

impl WarmupStream<'_> {
    /// Fraction of produced prompts whose gold class was among the options.
    pub fn coverage(&self) -> f64 {
        if self.produced == 0 {
            return 0.0;
        }
        self.answerable as f64 / self.produced as f64
    }

    fn composer<'b>(&'b self, task: &'b WarmupTask, order: DemoOrder) -> Composer<'b> {
        Composer {
            backend: self.backend,
            renderer: Renderer::new(&self.config.tagset, self.backend.tokenizer()),
            template: &self.config.template,
            labels: &task.demos.label_map,
            include_nota: self.config.include_nota,
            order,
        }
    }

    fn next_retrieval(&mut self, retrieval: &RetrievalConfig) -> Result<TrainingInstance> {
        const ATTEMPTS: usize = 1000;
        for _ in 0..ATTEMPTS {
            let t = self.weights.sample(&mut self.rng);
            let task = &self.pool.tasks[t];
            let query = &task.inputs.examples[self.rng.gen_range(0..task.inputs.len())];
            let item_seed = seed::derive(self.config.seed, self.counter);
            self.counter += 1;
            let ranked = mmr_select(&self.indexes[t], self.provider, &query.text, retrieval)?;
            let composed = self.composer(task, DemoOrder::Rank).compose(
                &ranked,
                &query.text,
                Some(&query.label),
                item_seed,
            )?;
            if composed.prompt.target_letter.is_some() {
                return TrainingInstance::new(self.backend, composed.prompt, composed.answerable);
            }
        }
        Err(Error::Input(format!(
            "{ATTEMPTS} consecutive prompts had no correct option; enable NOTA or raise k"
        )))
    }

    fn refill_schedule(&mut self, specs: usize, per_spec: usize) {
        let epoch = self.counter;
        self.counter += 1;
        self.schedule = (0..specs)
            .flat_map(|s| (0..per_spec).map(move |e| (s, e)))
            .map(|(s, e)| {
                let task = self.weights.sample(&mut self.rng);
                (s, task, seed::derive(seed::derive(self.config.seed, epoch), (s * per_spec + e) as u64))
            })
            .collect();
        self.schedule.shuffle(&mut self.rng);
    }

    fn episode_instances(
        &self,
        task: &WarmupTask,
        spec: &EpisodeSpec,
        episode: &Episode,
        multi_shot_k: usize,
        lambda: f64,
        ep_seed: u64,
    ) -> Result<Vec<TrainingInstance>> {
        let labels = &task.inputs.label_map;
        let descriptors = episode
            .classes
            .iter()
            .map(|c| labels.descriptor(c).map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        let options = build_option_block(&descriptors, self.config.include_nota, episode.option_seed)?;
        let supports: Vec<_> = episode.supports.iter().map(|e| e.demonstration()).collect();
        let index = if spec.shots > 1 {
            Some(build_index(&supports, self.provider)?)
        } else {
            None
        };
        let cfg = RetrievalConfig::new(multi_shot_k, lambda)?;
        let composer = Composer {
            labels,
            ..self.composer(task, DemoOrder::Shuffled)
        };
        episode
            .queries
            .iter()
            .enumerate()
            .map(|(qi, q)| {
                let ranked = match &index {
                    Some(idx) => mmr_select(idx, self.provider, &q.text, &cfg)?,
                    None => supports.clone(),
                };
                let c = composer.compose_with_options(
                    options.clone(),
                    &ranked,
                    &q.text,
                    Some(&q.label),
                    seed::derive(ep_seed, qi as u64 + 1),
                )?;
                TrainingInstance::new(self.backend, c.prompt, c.answerable)
            })
            .collect()
    }

    fn next_episodic(
        &mut self,
        specs: &[EpisodeSpec],
        per_spec: usize,
        multi_shot_k: usize,
        lambda: f64,
    ) -> Result<TrainingInstance> {
        while self.pending.is_empty() {
            if self.schedule.is_empty() {
                self.refill_schedule(specs.len(), per_spec);
            }
            let (s, t, ep_seed) = self.schedule.pop().expect("schedule refilled");
            let task = &self.pool.tasks[t];
            let episode = sample_episode(&task.inputs, &specs[s], ep_seed)?;
            let mut batch = self.episode_instances(task, &specs[s], &episode, multi_shot_k, lambda, ep_seed)?;
            batch.reverse();
            self.pending = batch;
        }
        Ok(self.pending.pop().expect("non-empty"))
    }
}

impl Iterator for WarmupStream<'_> {
    type Item = Result<TrainingInstance>;

    fn next(&mut self) -> Option<Self::Item> {
        let item = match self.mode.clone() {
            StreamMode::Retrieval { retrieval } => self.next_retrieval(&retrieval),
            StreamMode::Episodic {
                specs,
                episodes_per_spec,
                multi_shot_k,
                lambda,
            } => self.next_episodic(&specs, episodes_per_spec, multi_shot_k, lambda),
        };
        if let Ok(inst) = &item {
            self.produced += 1;
            self.answerable += u64::from(inst.answerable);
        }
        Some(item)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ToyBackend, ToyConfig};
    use crate::data::{Example, SplitRole};
    use crate::markup::LabelMap;
    use crate::retrieval::HashEmbedder;

    const WORDS: [&[&str]; 6] = [
        &["card", "payment", "declined", "refund"],
        &["rain", "weather", "forecast", "sunny"],
        &["song", "music", "play", "album"],
        &["flight", "airport", "ticket", "gate"],
        &["pizza", "restaurant", "book", "table"],
        &["alarm", "wake", "clock", "timer"],
    ];

    fn split(name: &str, classes: usize, per_class: usize, seed: u64) -> DatasetSplit {
        let mut rng = seed::rng(seed);
        let mut ex = Vec::new();
        for c in 0..classes {
            for _ in 0..per_class {
                let text: Vec<&str> = (0..3).map(|_| *WORDS[c].choose(&mut rng).unwrap()).collect();
                ex.push(Example {
                    text: text.join(" "),
                    label: format!("c{c}"),
                });
            }
        }
        let labels: LabelMap = (0..classes).map(|c| (format!("c{c}"), WORDS[c][0].to_string())).collect();
        DatasetSplit::new(name, SplitRole::Train, ex, labels).unwrap()
    }

    fn task(name: &str, classes: usize) -> WarmupTask {
        WarmupTask {
            name: name.into(),
            inputs: split(name, classes, 6, 1),
            demos: split(name, classes, 6, 2),
            weight: 1.0,
        }
    }

    fn backend() -> ToyBackend {
        ToyBackend::new(ToyConfig {
            d_model: 8,
            heads: 2,
            d_ff: 8,
            ..ToyConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn withheld_and_empty_pools() {
        assert!(WarmupTaskPool::new(vec![task("a", 2)], &["a".into()]).is_err());
        let pool = WarmupTaskPool::new(vec![task("a", 2), task("b", 2)], &["b".into()]).unwrap();
        assert_eq!(pool.names(), vec!["a"]);
    }

    #[test]
    fn two_class_pool_without_nota_targets_a_or_b() {
        let backend = backend();
        let provider = HashEmbedder::new(64).unwrap();
        let pool = WarmupTaskPool::new(vec![task("two", 2)], &[]).unwrap();
        let cfg = WarmupConfig {
            include_nota: false,
            ..WarmupConfig::default()
        };
        let mode = StreamMode::Retrieval {
            retrieval: RetrievalConfig::new(3, 0.5).unwrap(),
        };
        let stream = build_warmup_stream(&pool, &backend, &provider, mode, &cfg).unwrap();
        for inst in stream.take(50) {
            let inst = inst.unwrap();
            assert!(matches!(inst.prompt.target_letter, Some('A' | 'B')));
            assert!(inst.answerable);
        }
    }

    #[test]
    fn narrow_retrieval_forces_some_nota_targets() {
        let backend = backend();
        let provider = HashEmbedder::new(64).unwrap();
        let mut six = task("six", 6);
        for (i, ex) in six.inputs.examples.iter_mut().enumerate().filter(|(i, _)| i % 4 == 0) {
            ex.label = format!("c{}", (i / 6 + 1) % 6);
        }
        let pool = WarmupTaskPool::new(vec![six], &[]).unwrap();
        let cfg = WarmupConfig::default();
        let mode = StreamMode::Retrieval {
            retrieval: RetrievalConfig::new(2, 0.0).unwrap(),
        };
        let mut stream = build_warmup_stream(&pool, &backend, &provider, mode, &cfg).unwrap();
        let items: Vec<_> = stream.by_ref().take(200).map(|r| r.unwrap()).collect();
        let nota = items
            .iter()
            .filter(|i| i.prompt.option_block.entry(i.prompt.target_letter.unwrap()).unwrap().is_nota)
            .count();
        assert!(nota > 0);
        assert_eq!(nota, items.iter().filter(|i| !i.answerable).count());
        assert!(stream.coverage() < 1.0);
    }

    #[test]
    fn episodic_mixes_configs_and_is_deterministic() {
        let backend = backend();
        let provider = HashEmbedder::new(64).unwrap();
        let pool = WarmupTaskPool::new(
            vec![WarmupTask {
                inputs: split("news", 6, 8, 3),
                ..task("news", 6)
            }],
            &[],
        )
        .unwrap();
        let cfg = WarmupConfig {
            include_nota: false,
            ..WarmupConfig::default()
        };
        let mode = StreamMode::Episodic {
            specs: vec![EpisodeSpec::new(2, 1), EpisodeSpec::new(3, 5)],
            episodes_per_spec: 3,
            multi_shot_k: 4,
            lambda: 0.5,
        };
        let take = |n| {
            build_warmup_stream(&pool, &backend, &provider, mode.clone(), &cfg)
                .unwrap()
                .take(n)
                .map(|r| r.unwrap())
                .collect::<Vec<_>>()
        };
        let a = take(15);
        assert_eq!(a, take(15));
        let sizes: std::collections::BTreeSet<usize> = a.iter().map(|i| i.prompt.option_block.len()).collect();
        assert_eq!(sizes, [2, 3].into_iter().collect());
        assert!(a.iter().all(|i| i.answerable));
    }

    #[test]
    fn news_default_mode() {
        let StreamMode::Episodic { specs, episodes_per_spec, multi_shot_k, .. } = StreamMode::news() else {
            panic!("episodic");
        };
        assert_eq!(specs.len(), 4);
        assert_eq!(episodes_per_spec, 5000);
        assert_eq!(multi_shot_k, 15);
    }
}
