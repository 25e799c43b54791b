use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use iclmu::backend::{InitStrategy, ToyBackend, ToyConfig};
use iclmu::eval::{OosKind, SweepAxes};
use iclmu::markup::{phrase_set, PhraseDomain, TemplateSpec};
use iclmu::retrieval::RetrievalConfig;
use iclmu::warmup::WarmupConfig;

use crate::Flags;

/// One warm-up task, naming splits of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub name: String,
    pub inputs: String,
    pub demos: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    #[default]
    Retrieval,
    Episodic,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemplateChoice {
    #[default]
    Soft,
    Handwritten { domain: PhraseDomain, set: usize },
}

impl TemplateChoice {
    pub fn template(&self) -> Result<TemplateSpec> {
        Ok(match self {
            Self::Soft => TemplateSpec::default_soft(),
            Self::Handwritten { domain, set } => phrase_set(*set, *domain)?.template(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Split whose examples are the queries.
    pub split: Option<String>,
    /// Split that demonstrations are retrieved from.
    pub demos: Option<String>,
    /// Split used for threshold tuning and best-on-validation.
    pub validation: Option<String>,
    /// Raw label marking out-of-scope queries.
    pub oos_label: Option<String>,
    pub oos_kind: OosKind,
    pub threshold: Option<f64>,
    /// Independent K-shot draws of the demonstration pool.
    pub draws: usize,
    pub template: TemplateChoice,
    pub max_decode_len: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: None,
            demos: None,
            validation: None,
            oos_label: None,
            oos_kind: OosKind::OodOos,
            threshold: None,
            draws: 1,
            template: TemplateChoice::Soft,
            max_decode_len: 8,
        }
    }
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub backend: String,
    pub toy: ToyConfig,
    pub checkpoint: Option<PathBuf>,
    pub dataset_manifest: Option<PathBuf>,
    /// Root under which run directories are created.
    pub out: PathBuf,
    pub retrieval: RetrievalConfig,
    pub shots: Option<usize>,
    pub ways: Option<usize>,
    pub include_nota: bool,
    pub stream: StreamKind,
    pub episodes_per_spec: usize,
    pub tasks: Vec<TaskEntry>,
    pub withheld: Vec<String>,
    pub warmup: WarmupConfig,
    pub eval: EvalSection,
    pub sweep: SweepAxes,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backend: "toy".into(),
            toy: ToyConfig::default(),
            checkpoint: None,
            dataset_manifest: None,
            out: "runs".into(),
            retrieval: RetrievalConfig::default(),
            shots: None,
            ways: None,
            include_nota: true,
            stream: StreamKind::Retrieval,
            episodes_per_spec: 100,
            tasks: Vec::new(),
            withheld: Vec::new(),
            warmup: WarmupConfig::default(),
            eval: EvalSection::default(),
            sweep: SweepAxes::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// File values, then flags; clap has already folded the environment into `flags`.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let mut cfg: RunConfig =
                    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
                let base = path.parent().unwrap_or(Path::new("."));
                rebase(base, &mut cfg.checkpoint);
                rebase(base, &mut cfg.dataset_manifest);
                if cfg.out.is_relative() {
                    cfg.out = base.join(&cfg.out);
                }
                cfg
            }
            None => RunConfig::default(),
        };
        if let Some(v) = flags.seed {
            cfg.seed = v;
        }
        if let Some(v) = &flags.backend {
            cfg.backend = v.clone();
        }
        if let Some(v) = &flags.checkpoint {
            cfg.checkpoint = Some(v.clone());
        }
        if let Some(v) = &flags.dataset_manifest {
            cfg.dataset_manifest = Some(v.clone());
        }
        if let Some(v) = flags.k {
            cfg.retrieval.k = v;
        }
        if let Some(v) = flags.lambda {
            cfg.retrieval.lambda = v;
        }
        if flags.shots.is_some() {
            cfg.shots = flags.shots;
        }
        if flags.ways.is_some() {
            cfg.ways = flags.ways;
        }
        if let Some(v) = flags.include_nota {
            cfg.include_nota = v;
        }
        if let Some(v) = &flags.init {
            cfg.warmup.init = Some(v.parse::<InitStrategy>()?);
        }
        if let Some(v) = &flags.out {
            cfg.out = v.clone();
        }
        for p in [&mut cfg.checkpoint, &mut cfg.dataset_manifest].into_iter().flatten() {
            *p = std::path::absolute(&*p)?;
        }
        cfg.out = std::path::absolute(&cfg.out)?;
        cfg.warmup.seed = cfg.seed;
        cfg.warmup.include_nota = cfg.include_nota;
        cfg.retrieval.validate()?;
        cfg.warmup.validate()?;
        if cfg.eval.draws == 0 {
            bail!("eval.draws must be at least 1");
        }
        Ok(cfg)
    }

    pub fn backend(&self) -> Result<ToyBackend> {
        match self.backend.as_str() {
            "toy" => Ok(ToyBackend::new(self.toy.clone())?),
            other => bail!("unknown backend {other:?}; available: toy"),
        }
    }

    pub fn dataset_manifest(&self) -> Result<&Path> {
        self.dataset_manifest
            .as_deref()
            .context("no dataset manifest; pass --dataset-manifest or set dataset_manifest in the config")
    }
}
