//! Demonstration retrieval: embed, index, MMR-select, re-scope the label
//! space and trim to the context budget.

mod embed;
mod index;

use std::collections::BTreeSet;

use ndarray::ArrayView1;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backend::Seq2SeqBackend;
use crate::error::{Error, Result};
use crate::markup::{build_option_block, Demonstration, LabelMap, OptionBlock, RenderedPrompt, Renderer, TemplateSpec};
use crate::seed;

pub use embed::{EmbeddingProvider, HashEmbedder};
pub use index::{build_index, VectorIndex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    /// Weight on query relevance; `1 - lambda` weighs redundancy.
    pub lambda: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: 9, lambda: 0.5 }
    }
}

impl RetrievalConfig {
    pub fn new(k: usize, lambda: f64) -> Result<Self> {
        let cfg = Self { k, lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Row indices chosen by greedy maximal marginal relevance, in selection order.
pub fn mmr_rank(index: &VectorIndex, query: ArrayView1<'_, f64>, cfg: &RetrievalConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    if index.is_empty() {
        return Err(Error::Input("empty index".into()));
    }
    let n = index.len();
    let relevance: Vec<f64> = (0..n).map(|i| cosine(query, index.vector(i))).collect();
    let mut redundancy = vec![f64::NEG_INFINITY; n];
    let mut taken = vec![false; n];
    let mut order = Vec::with_capacity(cfg.k.min(n));
    while order.len() < cfg.k.min(n) {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let score = if order.is_empty() {
                relevance[i]
            } else {
                cfg.lambda * relevance[i] - (1.0 - cfg.lambda) * redundancy[i]
            };
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        let (pick, _) = best.expect("an untaken row remains");
        taken[pick] = true;
        order.push(pick);
        for i in (0..n).filter(|&i| !taken[i]) {
            redundancy[i] = redundancy[i].max(cosine(index.vector(i), index.vector(pick)));
        }
    }
    Ok(order)
}

pub fn mmr_select(
    index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    query: &str,
    cfg: &RetrievalConfig,
) -> Result<Vec<Demonstration>> {
    let q = index.embed_query(provider, query)?;
    Ok(mmr_rank(index, q.view(), cfg)?
        .into_iter()
        .map(|i| index.payloads()[i].clone())
        .collect())
}

/// Options restricted to the labels of the selected demonstrations.
pub fn rescope_options(
    selected: &[Demonstration],
    labels: &LabelMap,
    include_nota: bool,
    seed: u64,
) -> Result<OptionBlock> {
    if selected.is_empty() {
        return Err(Error::Input("no demonstrations to re-scope from".into()));
    }
    let mut seen = BTreeSet::new();
    let mut descriptors = Vec::new();
    for d in selected {
        let desc = labels.descriptor(&d.label)?;
        if seen.insert(desc) {
            descriptors.push(desc.to_string());
        }
    }
    build_option_block(&descriptors, include_nota, seed)
}

/// Drops the lowest-ranked demonstrations until the prompt fits the
/// backend's context budget. The option block is left as given.
#[allow(clippy::too_many_arguments)]
pub fn trim_to_budget(
    renderer: &Renderer<'_>,
    template: &TemplateSpec,
    options: &OptionBlock,
    selected: &[Demonstration],
    query: &str,
    labels: &LabelMap,
    backend: &dyn Seq2SeqBackend,
) -> Result<Vec<Demonstration>> {
    let budget = backend.context_budget();
    let mut keep = selected.len();
    loop {
        let prompt = renderer.render(template, options, &selected[..keep], query, labels)?;
        if prompt.len() <= budget {
            return Ok(selected[..keep].to_vec());
        }
        if keep == 0 {
            return Err(Error::Budget {
                len: prompt.len(),
                budget,
            });
        }
        keep -= 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoOrder {
    /// Retrieval rank order.
    #[default]
    Rank,
    /// Seeded shuffle of the kept demonstrations.
    Shuffled,
}

/// A fully assembled multiple-choice prompt for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedPrompt {
    pub prompt: RenderedPrompt,
    pub demos: Vec<Demonstration>,
    /// Whether the gold descriptor is among the options.
    pub answerable: bool,
}

/// Everything needed to build one prompt.
pub struct Composer<'a> {
    pub backend: &'a dyn Seq2SeqBackend,
    pub renderer: Renderer<'a>,
    pub template: &'a TemplateSpec,
    pub labels: &'a LabelMap,
    pub include_nota: bool,
    pub order: DemoOrder,
}

impl Composer<'_> {
    /// Re-scopes options from the full `ranked` selection, trims it to the
    /// budget, orders the survivors and renders. The target letter is the
    /// gold option when shown, the NOTA letter when not, and unset when
    /// neither exists.
    pub fn compose(
        &self,
        ranked: &[Demonstration],
        query: &str,
        gold_label: Option<&str>,
        seed: u64,
    ) -> Result<ComposedPrompt> {
        let options = rescope_options(ranked, self.labels, self.include_nota, seed::derive(seed, 0))?;
        self.compose_with_options(options, ranked, query, gold_label, seed)
    }

    /// Like [`Composer::compose`] with a caller-supplied option block.
    pub fn compose_with_options(
        &self,
        options: OptionBlock,
        ranked: &[Demonstration],
        query: &str,
        gold_label: Option<&str>,
        seed: u64,
    ) -> Result<ComposedPrompt> {
        let mut demos = trim_to_budget(
            &self.renderer,
            self.template,
            &options,
            ranked,
            query,
            self.labels,
            self.backend,
        )?;
        if self.order == DemoOrder::Shuffled {
            demos.shuffle(&mut seed::rng(seed::derive(seed, 1)));
        }
        let gold_letter = match gold_label {
            Some(label) => options.letter_of(self.labels.descriptor(label)?),
            None => None,
        };
        let mut prompt = self
            .renderer
            .render(self.template, &options, &demos, query, self.labels)?;
        prompt.target_letter = gold_letter.or(options.nota_letter());
        Ok(ComposedPrompt {
            prompt,
            demos,
            answerable: gold_letter.is_some(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ToyBackend, ToyConfig};
    use crate::markup::define_default_tagset;
    use ndarray::{arr1, arr2};

    fn demos(n: usize) -> Vec<Demonstration> {
        (0..n).map(|i| Demonstration::new(format!("d{i}"), format!("l{i}"))).collect()
    }

    fn index(rows: ndarray::Array2<f64>) -> VectorIndex {
        let n = rows.nrows();
        VectorIndex::from_parts(rows, demos(n), "test".into()).unwrap()
    }

    #[test]
    fn k1_is_nearest_neighbour_for_any_lambda() {
        let idx = index(arr2(&[[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]]));
        let q = arr1(&[0.5, 0.9]);
        for lambda in [0.0, 0.5, 1.0] {
            let cfg = RetrievalConfig::new(1, lambda).unwrap();
            assert_eq!(mmr_rank(&idx, q.view(), &cfg).unwrap(), vec![1]);
        }
    }

    #[test]
    fn exhausts_small_pool() {
        let idx = index(arr2(&[[1.0, 0.0], [0.0, 1.0]]));
        let cfg = RetrievalConfig::new(5, 0.5).unwrap();
        let mut got = mmr_rank(&idx, arr1(&[1.0, 1.0]).view(), &cfg).unwrap();
        assert_eq!(got, vec![0, 1]);
        got.sort();
        assert_eq!(got, vec![0, 1]);
    }

    #[test]
    fn diversity_beats_duplicate() {
        let idx = index(arr2(&[[1.0, 0.0], [1.0, 0.0], [0.8, 0.6]]));
        let cfg = RetrievalConfig::new(2, 0.5).unwrap();
        assert_eq!(mmr_rank(&idx, arr1(&[1.0, 0.1]).view(), &cfg).unwrap(), vec![0, 2]);
        let cfg = RetrievalConfig::new(2, 1.0).unwrap();
        assert_eq!(mmr_rank(&idx, arr1(&[1.0, 0.1]).view(), &cfg).unwrap(), vec![0, 1]);
    }

    #[test]
    fn config_bounds() {
        assert!(RetrievalConfig::new(0, 0.5).is_err());
        assert!(RetrievalConfig::new(3, 1.5).is_err());
        assert_eq!(RetrievalConfig::default().lambda, 0.5);
    }

    fn labels() -> LabelMap {
        (0..6).map(|i| (format!("l{i}"), format!("class {i}"))).collect()
    }

    #[test]
    fn rescope_dedups_and_adds_nota() {
        let sel: Vec<Demonstration> = [0, 1, 1, 2, 3, 3, 4, 0, 2]
            .iter()
            .map(|i| Demonstration::new("t", format!("l{i}")))
            .collect();
        let block = rescope_options(&sel, &labels(), true, 5).unwrap();
        assert_eq!(block.len(), 6);
        assert!(block.entries()[5].is_nota);
        let same: Vec<_> = (0..4).map(|_| Demonstration::new("t", "l2")).collect();
        assert_eq!(rescope_options(&same, &labels(), false, 5).unwrap().len(), 1);
        let bad = vec![Demonstration::new("t", "zz")];
        assert!(matches!(
            rescope_options(&bad, &labels(), false, 1),
            Err(Error::UnknownLabel(_))
        ));
    }

    fn trim_setup(budget: usize) -> (ToyBackend, crate::markup::TagSet) {
        let backend = ToyBackend::new(ToyConfig {
            d_model: 8,
            heads: 2,
            d_ff: 8,
            context_budget: budget,
            ..ToyConfig::default()
        })
        .unwrap();
        (backend, define_default_tagset(9).unwrap())
    }

    #[test]
    fn trimming_drops_from_the_tail() {
        let sel: Vec<Demonstration> = (0..3)
            .map(|i| Demonstration::new("one two three", format!("l{i}")))
            .collect();
        let (probe, tags) = trim_setup(512);
        let template = TemplateSpec::default_soft();
        let renderer = Renderer::new(&tags, probe.tokenizer());
        let opts = rescope_options(&sel, &labels(), false, 0).unwrap();
        let full = renderer.render(&template, &opts, &sel, "q", &labels()).unwrap().len();
        let two = renderer.render(&template, &opts, &sel[..2], "q", &labels()).unwrap().len();
        let none = renderer.render(&template, &opts, &[], "q", &labels()).unwrap().len();

        let trimmed = trim_to_budget(&renderer, &template, &opts, &sel, "q", &labels(), &probe).unwrap();
        assert_eq!(trimmed, sel);

        let (backend, _) = trim_setup(full - 1);
        let trimmed = trim_to_budget(&renderer, &template, &opts, &sel, "q", &labels(), &backend).unwrap();
        assert_eq!(trimmed, sel[..2].to_vec());
        assert!(two <= full - 1);

        let (backend, _) = trim_setup(none - 1);
        assert!(matches!(
            trim_to_budget(&renderer, &template, &opts, &sel, "q", &labels(), &backend),
            Err(Error::Budget { .. })
        ));
    }

    #[test]
    fn compose_targets_gold_or_nota() {
        let (backend, tags) = trim_setup(512);
        let template = TemplateSpec::default_soft();
        let labels = labels();
        let composer = Composer {
            backend: &backend,
            renderer: Renderer::new(&tags, backend.tokenizer()),
            template: &template,
            labels: &labels,
            include_nota: true,
            order: DemoOrder::Rank,
        };
        let sel = vec![Demonstration::new("a b", "l0"), Demonstration::new("c d", "l1")];
        let hit = composer.compose(&sel, "q", Some("l1"), 3).unwrap();
        assert!(hit.answerable);
        let letter = hit.prompt.target_letter.unwrap();
        assert_eq!(hit.prompt.option_block.entry(letter).unwrap().descriptor, "class 1");
        let miss = composer.compose(&sel, "q", Some("l4"), 3).unwrap();
        assert!(!miss.answerable);
        assert_eq!(miss.prompt.target_letter, Some('C'));
        assert_eq!(hit, composer.compose(&sel, "q", Some("l1"), 3).unwrap());
    }
}
