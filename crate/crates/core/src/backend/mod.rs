//! Sequence-to-sequence backends with a soft-token vocabulary extension.
//!
//! A backend owns frozen base parameters and a tokenizer. Soft tokens live
//! in a separate [`SoftTokenBank`]; every forward pass takes the bank as an
//! argument, so the base parameters are never mutated and the only gradient
//! a backend reports is the one with respect to the bank rows.

pub mod autodiff;
pub mod bank;
pub mod tokenizer;
pub mod toy;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markup::{RenderedPrompt, TagSet};
use crate::seed::{self, Rng};

pub use bank::{BankMetadata, InitStrategy, SoftTokenBank};
pub use tokenizer::{TokenId, Tokenizer, ToyTokenizer};
pub use toy::{ToyBackend, ToyConfig};

pub trait Seq2SeqBackend: Send + Sync {
    fn model_id(&self) -> String;
    fn tokenizer(&self) -> &dyn Tokenizer;
    fn embedding_dim(&self) -> usize;
    /// Maximum number of encoder input positions.
    fn context_budget(&self) -> usize;
    /// Hex SHA-256 over every frozen parameter.
    fn param_digest(&self) -> String;
    /// Row of the frozen input embedding table.
    fn token_embedding(&self, id: TokenId) -> Array1<f64>;
    /// A fresh row from the distribution the input embeddings were initialized with.
    fn sample_embedding(&self, rng: &mut Rng) -> Array1<f64>;

    /// Teacher-forced mean cross-entropy of `target` and its gradient with
    /// respect to `bank.rows()`.
    fn loss_and_grad(
        &self,
        bank: &SoftTokenBank,
        prompt: &RenderedPrompt,
        target: &[TokenId],
    ) -> Result<(f64, Array2<f64>)>;

    /// Logits for the next token after the decoder prefix `generated`.
    fn next_token_logits(
        &self,
        bank: &SoftTokenBank,
        prompt: &RenderedPrompt,
        generated: &[TokenId],
    ) -> Result<Array1<f64>>;

    fn check_budget(&self, prompt: &RenderedPrompt) -> Result<()> {
        if prompt.len() > self.context_budget() {
            return Err(Error::Budget {
                len: prompt.len(),
                budget: self.context_budget(),
            });
        }
        Ok(())
    }
}

/// Creates the bank for `tags`.
///
/// `Random` samples every row from the backend's embedding distribution.
/// `Anneal` copies the embeddings of each tag's source phrase tokens; a
/// phrase longer than the tag is truncated and a shorter one is cycled.
pub fn extend_vocabulary(
    backend: &dyn Seq2SeqBackend,
    tags: &TagSet,
    strategy: InitStrategy,
    seed: u64,
    source_phrases: Option<&BTreeMap<String, String>>,
) -> Result<SoftTokenBank> {
    let dim = backend.embedding_dim();
    let mut rows = Array2::zeros((tags.total_width(), dim));
    match strategy {
        InitStrategy::Random => {
            let mut rng = seed::rng(seed);
            for mut row in rows.rows_mut() {
                row.assign(&backend.sample_embedding(&mut rng));
            }
        }
        InitStrategy::Anneal => {
            let phrases = source_phrases
                .ok_or_else(|| Error::Config("anneal initialization needs source phrases".into()))?;
            for (name, range) in tags.offsets() {
                let phrase = phrases
                    .get(&name)
                    .ok_or_else(|| Error::Config(format!("no source phrase for tag {name:?}")))?;
                let ids = backend.tokenizer().encode(phrase);
                if ids.is_empty() {
                    return Err(Error::Config(format!(
                        "source phrase {phrase:?} for tag {name:?} has no tokens"
                    )));
                }
                for (i, row) in range.enumerate() {
                    rows.row_mut(row)
                        .assign(&backend.token_embedding(ids[i % ids.len()]));
                }
            }
        }
    }
    SoftTokenBank::for_tags(
        tags,
        rows,
        BankMetadata {
            base_model: backend.model_id(),
            base_param_digest: backend.param_digest(),
            seed,
            steps: 0,
            init: strategy,
        },
    )
}

pub fn forward_loss(
    backend: &dyn Seq2SeqBackend,
    bank: &SoftTokenBank,
    prompt: &RenderedPrompt,
    target: &[TokenId],
) -> Result<(f64, Array2<f64>)> {
    backend.check_budget(prompt)?;
    if target.is_empty() {
        return Err(Error::Input("empty target sequence".into()));
    }
    backend.loss_and_grad(bank, prompt, target)
}

fn argmax(xs: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Unconstrained argmax decoding until end-of-sequence or `max_len` tokens.
pub fn greedy_decode(
    backend: &dyn Seq2SeqBackend,
    bank: &SoftTokenBank,
    prompt: &RenderedPrompt,
    max_len: usize,
) -> Result<String> {
    Ok(backend
        .tokenizer()
        .decode(&greedy_decode_ids(backend, bank, prompt, max_len)?))
}

pub fn greedy_decode_ids(
    backend: &dyn Seq2SeqBackend,
    bank: &SoftTokenBank,
    prompt: &RenderedPrompt,
    max_len: usize,
) -> Result<Vec<TokenId>> {
    backend.check_budget(prompt)?;
    let eos = backend.tokenizer().eos_id();
    let mut generated = Vec::new();
    while generated.len() < max_len {
        let next = argmax(&backend.next_token_logits(bank, prompt, &generated)?) as TokenId;
        if next == eos {
            break;
        }
        generated.push(next);
    }
    Ok(generated)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Softmax of the first decoding step's logits restricted to the letter tokens.
    FirstStepLetterSoftmax,
}

/// Probability of each option letter at the first decoding position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionScore {
    pub per_letter: BTreeMap<char, f64>,
    pub normalization: Normalization,
}

impl OptionScore {
    pub fn get(&self, letter: char) -> Option<f64> {
        self.per_letter.get(&letter).copied()
    }

    /// Highest-probability letter; ties go to the earlier letter.
    pub fn best(&self) -> Option<char> {
        let mut best: Option<(char, f64)> = None;
        for (&l, &p) in &self.per_letter {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((l, p));
            }
        }
        best.map(|(l, _)| l)
    }
}

pub fn score_options(
    backend: &dyn Seq2SeqBackend,
    bank: &SoftTokenBank,
    prompt: &RenderedPrompt,
    letters: &[char],
) -> Result<OptionScore> {
    if letters.is_empty() {
        return Err(Error::Input("no option letters to score".into()));
    }
    backend.check_budget(prompt)?;
    let tok = backend.tokenizer();
    let ids = letters
        .iter()
        .map(|l| tok.single_token(&l.to_string()))
        .collect::<Result<Vec<_>>>()?;
    let logits = backend.next_token_logits(bank, prompt, &[])?;
    let max = ids
        .iter()
        .map(|&id| logits[id as usize])
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = ids.iter().map(|&id| (logits[id as usize] - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(OptionScore {
        per_letter: letters.iter().copied().zip(exps.iter().map(|e| e / total)).collect(),
        normalization: Normalization::FirstStepLetterSoftmax,
    })
}
