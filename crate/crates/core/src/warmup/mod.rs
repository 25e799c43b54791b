//! Warm-up training of the soft-token bank.
//!
//! Only the bank rows are optimized. The backend is borrowed immutably for
//! the whole run, so its parameters (and their digest) cannot change.

pub mod checkpoint;
pub mod stream;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{extend_vocabulary, forward_loss, InitStrategy, Seq2SeqBackend, SoftTokenBank, TokenId};
use crate::error::{Error, Result};
use crate::markup::{define_default_tagset, phrase_set, PhraseDomain, RenderedPrompt, TagSet, TemplateSpec};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, verify_provenance, RunManifest};
pub use stream::{build_warmup_stream, StreamMode, WarmupStream, WarmupTask, WarmupTaskPool};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Where anneal initialization takes its phrases from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnealSource {
    pub domain: PhraseDomain,
    pub set: usize,
}

impl Default for AnnealSource {
    fn default() -> Self {
        Self {
            domain: PhraseDomain::Intent,
            set: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarmupConfig {
    pub learning_rate: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// `None` applies the default rule, see [`WarmupConfig::init_strategy`].
    pub init: Option<InitStrategy>,
    pub tagset: TagSet,
    pub template: TemplateSpec,
    pub include_nota: bool,
    /// Whether the warm-up tasks are explicitly open-world.
    pub open_world: bool,
    pub optimizer: Optimizer,
    /// Rescales each batch gradient to at most this Frobenius norm.
    pub max_grad_norm: Option<f64>,
    pub anneal_source: AnnealSource,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            steps: 2000,
            batch_size: 4,
            seed: 0,
            init: None,
            tagset: define_default_tagset(9).expect("default width is valid"),
            template: TemplateSpec::default_soft(),
            include_nota: true,
            open_world: false,
            optimizer: Optimizer::Sgd,
            max_grad_norm: Some(5.0),
            anneal_source: AnnealSource::default(),
        }
    }
}

impl WarmupConfig {
    /// Anneal when the template has a NOTA option on a closed-world task,
    /// random otherwise, unless set explicitly.
    pub fn init_strategy(&self) -> InitStrategy {
        self.init.unwrap_or(if self.include_nota && !self.open_world {
            InitStrategy::Anneal
        } else {
            InitStrategy::Random
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if let Some(n) = self.max_grad_norm {
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::Config(format!("max_grad_norm must be positive, got {n}")));
            }
        }
        self.template.validate()?;
        self.template.check_tags(&self.tagset)
    }

    /// A fresh bank for `tagset`, initialized by [`WarmupConfig::init_strategy`].
    pub fn initial_bank(&self, backend: &dyn Seq2SeqBackend) -> Result<SoftTokenBank> {
        let strategy = self.init_strategy();
        let phrases = match strategy {
            InitStrategy::Anneal => Some(phrase_set(self.anneal_source.set, self.anneal_source.domain)?.tag_phrases()),
            InitStrategy::Random => None,
        };
        extend_vocabulary(backend, &self.tagset, strategy, self.seed, phrases.as_ref())
    }
}

/// One supervised prompt of the warm-up stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub prompt: RenderedPrompt,
    /// Gold letter token followed by end-of-sequence.
    pub target: Vec<TokenId>,
    /// Whether the gold class was among the options shown.
    pub answerable: bool,
}

impl TrainingInstance {
    /// Builds the target from `prompt.target_letter`.
    pub fn new(backend: &dyn Seq2SeqBackend, prompt: RenderedPrompt, answerable: bool) -> Result<Self> {
        let letter = prompt
            .target_letter
            .ok_or_else(|| Error::Input("training prompt has no target letter".into()))?;
        let tok = backend.tokenizer();
        let target = vec![tok.single_token(&letter.to_string())?, tok.eos_id()];
        Ok(Self {
            prompt,
            target,
            answerable,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub bank: SoftTokenBank,
    /// Mean batch loss of each step, before that step's update.
    pub losses: Vec<f64>,
}

enum OptState {
    Sgd,
    Adam {
        m: Array2<f64>,
        v: Array2<f64>,
        t: i32,
    },
}

/// Runs `config.steps` updates on `bank` with batches drawn from `stream`.
pub fn train<I>(
    backend: &dyn Seq2SeqBackend,
    mut bank: SoftTokenBank,
    stream: I,
    config: &WarmupConfig,
) -> Result<TrainOutcome>
where
    I: IntoIterator<Item = Result<TrainingInstance>>,
{
    config.validate()?;
    if !bank.matches(&config.tagset) {
        return Err(Error::Config("bank layout does not match the configured tag set".into()));
    }
    if bank.embedding_dim() != backend.embedding_dim() {
        return Err(Error::Config(format!(
            "bank dimension {} does not match the backend's {}",
            bank.embedding_dim(),
            backend.embedding_dim()
        )));
    }
    let mut stream = stream.into_iter();
    let mut state = match config.optimizer {
        Optimizer::Sgd => OptState::Sgd,
        Optimizer::Adam { .. } => OptState::Adam {
            m: Array2::zeros(bank.rows().raw_dim()),
            v: Array2::zeros(bank.rows().raw_dim()),
            t: 0,
        },
    };
    let mut losses = Vec::with_capacity(config.steps as usize);
    for step in 0..config.steps {
        let batch = (0..config.batch_size)
            .map(|_| {
                stream.next().unwrap_or_else(|| {
                    Err(Error::Input(format!("warm-up stream ran dry at step {step}")))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let results = batch
            .par_iter()
            .map(|inst| forward_loss(backend, &bank, &inst.prompt, &inst.target))
            .collect::<Vec<_>>();
        let mut loss = 0.0;
        let mut grad = Array2::<f64>::zeros(bank.rows().raw_dim());
        for r in results {
            let (l, g) = r?;
            loss += l;
            grad += &g;
        }
        let n = batch.len() as f64;
        loss /= n;
        grad /= n;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss });
        }
        losses.push(loss);
        if let Some(max) = config.max_grad_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max {
                grad *= max / norm;
            }
        }
        let lr = config.learning_rate;
        match (&mut state, config.optimizer) {
            (OptState::Sgd, _) => bank.rows_mut().scaled_add(-lr, &grad),
            (
                OptState::Adam { m, v, t },
                Optimizer::Adam {
                    beta1,
                    beta2,
                    epsilon,
                },
            ) => {
                *t += 1;
                m.zip_mut_with(&grad, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
                v.zip_mut_with(&grad, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                let rows = bank.rows_mut();
                ndarray::Zip::from(rows).and(&*m).and(&*v).for_each(|w, &m, &v| {
                    *w -= lr * (m / c1) / ((v / c2).sqrt() + epsilon);
                });
            }
            (OptState::Adam { .. }, Optimizer::Sgd) => unreachable!(),
        }
        bank.metadata.steps += 1;
    }
    Ok(TrainOutcome { bank, losses })
}
