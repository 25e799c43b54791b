use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    closed_report, open_world_report, resolve_prediction, tune_threshold_records, EvalReport, Gold, OosKind,
    OosReport, PredictionRecord, ThresholdCurve,
};
use crate::backend::{greedy_decode, score_options, Seq2SeqBackend, SoftTokenBank};
use crate::data::{DatasetSplit, Episode};
use crate::error::{Error, Result};
use crate::markup::{build_option_block, Demonstration, LabelMap, Renderer, TagSet, TemplateSpec};
use crate::retrieval::{build_index, mmr_select, Composer, DemoOrder, EmbeddingProvider, RetrievalConfig, VectorIndex};
use crate::seed;

/// Where a query's demonstrations and options come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CaseContext {
    /// MMR over the pipeline's index, options re-scoped from the picks.
    #[default]
    Retrieve,
    /// A fixed support set; options are every class of the episode.
    Episode {
        supports: Vec<Demonstration>,
        classes: Vec<String>,
        option_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCase {
    pub id: String,
    pub text: String,
    /// Raw gold label; `None` marks an out-of-scope query.
    pub gold: Option<String>,
    #[serde(default)]
    pub context: CaseContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub name: String,
    pub seed: u64,
    pub cases: Vec<QueryCase>,
}

impl Suite {
    /// One case per example; examples labelled `oos_label` are out of scope.
    pub fn from_split(split: &DatasetSplit, seed: u64, oos_label: Option<&str>) -> Self {
        let cases = split
            .examples
            .iter()
            .enumerate()
            .map(|(i, e)| QueryCase {
                id: format!("{}-{i}", split.name),
                text: e.text.clone(),
                gold: (Some(e.label.as_str()) != oos_label).then(|| e.label.clone()),
                context: CaseContext::Retrieve,
            })
            .collect();
        Self {
            name: split.name.clone(),
            seed,
            cases,
        }
    }

    pub fn from_episodes(name: &str, episodes: &[Episode], seed: u64) -> Self {
        let mut cases = Vec::new();
        for (e, ep) in episodes.iter().enumerate() {
            let supports: Vec<Demonstration> = ep.supports.iter().map(|x| x.demonstration()).collect();
            for (q, query) in ep.queries.iter().enumerate() {
                cases.push(QueryCase {
                    id: format!("{name}-{e}-{q}"),
                    text: query.text.clone(),
                    gold: Some(query.label.clone()),
                    context: CaseContext::Episode {
                        supports: supports.clone(),
                        classes: ep.classes.clone(),
                        option_seed: ep.option_seed,
                    },
                });
            }
        }
        Self {
            name: name.to_string(),
            seed,
            cases,
        }
    }
}

pub trait Pipeline: Sync {
    /// Prediction for one case; `seed` is derived from the suite seed and the case index.
    fn predict(&self, case: &QueryCase, seed: u64) -> Result<PredictionRecord>;
}

/// Retrieve, re-scope, trim, render, decode and score.
pub struct IclPipeline<'a> {
    pub backend: &'a dyn Seq2SeqBackend,
    pub bank: &'a SoftTokenBank,
    /// `None` for handwritten templates.
    pub tags: Option<&'a TagSet>,
    pub template: &'a TemplateSpec,
    pub provider: &'a dyn EmbeddingProvider,
    pub index: Option<&'a VectorIndex>,
    pub labels: &'a LabelMap,
    pub retrieval: RetrievalConfig,
    pub include_nota: bool,
    pub order: DemoOrder,
    pub max_decode_len: usize,
}

impl IclPipeline<'_> {
    fn renderer(&self) -> Renderer<'_> {
        match self.tags {
            Some(tags) => Renderer::new(tags, self.backend.tokenizer()),
            None => Renderer::without_tags(self.backend.tokenizer()),
        }
    }
}

impl Pipeline for IclPipeline<'_> {
    fn predict(&self, case: &QueryCase, seed: u64) -> Result<PredictionRecord> {
        let composer = Composer {
            backend: self.backend,
            renderer: self.renderer(),
            template: self.template,
            labels: self.labels,
            include_nota: self.include_nota,
            order: self.order,
        };
        let gold = case.gold.as_deref();
        let composed = match &case.context {
            CaseContext::Retrieve => {
                let index = self
                    .index
                    .ok_or_else(|| Error::Config("retrieval case without an index".into()))?;
                let ranked = mmr_select(index, self.provider, &case.text, &self.retrieval)?;
                composer.compose(&ranked, &case.text, gold, seed)?
            }
            CaseContext::Episode {
                supports,
                classes,
                option_seed,
            } => {
                let ranked = if supports.len() > self.retrieval.k {
                    mmr_select(&build_index(supports, self.provider)?, self.provider, &case.text, &self.retrieval)?
                } else {
                    supports.clone()
                };
                let descriptors = classes
                    .iter()
                    .map(|c| self.labels.descriptor(c).map(str::to_string))
                    .collect::<Result<Vec<_>>>()?;
                let options = build_option_block(&descriptors, self.include_nota, *option_seed)?;
                composer.compose_with_options(options, &ranked, &case.text, gold, seed)?
            }
        };
        let prompt = &composed.prompt;
        let generated = greedy_decode(self.backend, self.bank, prompt, self.max_decode_len)?;
        let options = &prompt.option_block;
        let nota_probability = match options.nota_letter() {
            Some(n) => score_options(self.backend, self.bank, prompt, &options.letters())?.get(n),
            None => None,
        };
        Ok(PredictionRecord {
            query_id: case.id.clone(),
            resolved: resolve_prediction(&generated, options),
            generated_text: generated,
            gold: match gold {
                Some(g) => Gold::Class(self.labels.descriptor(g)?.to_string()),
                None => Gold::Oos,
            },
            task_answerable: composed.answerable,
            nota_probability,
        })
    }
}

/// Predictions in case order; identical at any degree of parallelism.
pub fn run_suite(pipeline: &dyn Pipeline, suite: &Suite) -> Result<Vec<PredictionRecord>> {
    suite
        .cases
        .par_iter()
        .enumerate()
        .map(|(i, case)| pipeline.predict(case, seed::derive(suite.seed, i as u64)))
        .collect()
}

pub fn evaluate_closed(pipeline: &dyn Pipeline, suite: &Suite) -> Result<EvalReport> {
    if suite.cases.is_empty() {
        return Err(Error::Input(format!("suite {:?} is empty", suite.name)));
    }
    closed_report(&run_suite(pipeline, suite)?)
}

pub fn evaluate_open_world(
    pipeline: &dyn Pipeline,
    suite: &Suite,
    kind: OosKind,
    threshold: Option<f64>,
) -> Result<OosReport> {
    if kind == OosKind::IdOos && threshold.is_none() {
        return Err(Error::Config("in-domain OOS evaluation needs a threshold".into()));
    }
    open_world_report(&run_suite(pipeline, suite)?, kind, threshold)
}

pub fn tune_threshold(pipeline: &dyn Pipeline, suite: &Suite, grid: &[f64]) -> Result<(f64, ThresholdCurve)> {
    tune_threshold_records(&run_suite(pipeline, suite)?, grid)
}
