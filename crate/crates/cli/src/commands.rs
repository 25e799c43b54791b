use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use iclmu::backend::{BankMetadata, InitStrategy, Seq2SeqBackend, SoftTokenBank, ToyBackend};
use iclmu::data::{
    sample_episode, subsample_k_shot, suite_episode_count, DatasetManifest, DatasetSplit, EpisodeSpec, SplitRole,
};
use iclmu::eval::{
    aggregate_runs, aggregate_values, closed_report, default_grid, edit_effect, generate_sweep, open_world_report,
    quantiles, run_suite, tune_threshold_records, EvalReport, Gold, IclPipeline, Metric, OosKind, OosReport,
    PredictionRecord, RunSummary, Suite, SweepAxes, SweepResult, ThresholdCurve,
};
use iclmu::eval::sweep::AXIS_NAMES;
use iclmu::markup::{LabelMap, TagSet, TemplateSpec};
use iclmu::retrieval::{build_index, DemoOrder, HashEmbedder, VectorIndex};
use iclmu::seed;
use iclmu::warmup::{
    build_warmup_stream, checkpoint::checkpoint_digest, load_checkpoint, save_checkpoint, train, verify_provenance,
    RunManifest, StreamMode, WarmupTask, WarmupTaskPool,
};

use crate::config::{RunConfig, StreamKind};
use crate::run_dir::RunDir;

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// State shared by every command of one run.
pub struct Session {
    pub cfg: RunConfig,
    pub run: RunDir,
    /// Input file to sha256.
    pub inputs: BTreeMap<PathBuf, String>,
    pub outputs: Vec<PathBuf>,
    /// Seeds used beyond the global one, by purpose.
    pub seeds: BTreeMap<String, u64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    started: String,
    finished: String,
    status: String,
    seed: u64,
    seeds: &'a BTreeMap<String, u64>,
    config: &'a RunConfig,
    inputs: &'a BTreeMap<PathBuf, String>,
    outputs: &'a [PathBuf],
}

impl Session {
    pub fn new(cfg: RunConfig, run: RunDir) -> Self {
        Self {
            cfg,
            run,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.to_path_buf(), digest);
        Ok(())
    }

    fn output(&mut self, path: PathBuf) {
        self.outputs.push(path.strip_prefix(self.run.path()).map(Path::to_path_buf).unwrap_or(path));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.run.write_json(name, value)?;
        self.output(path);
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.run.write_text(name, text)?;
        self.output(path);
        Ok(())
    }

    pub fn write_manifest(&self, command: &str, started: String, status: &Result<()>) -> Result<()> {
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            started,
            finished: chrono::Utc::now().to_rfc3339(),
            status: match status {
                Ok(()) => "ok".into(),
                Err(e) => format!("error: {e:#}"),
            },
            seed: self.cfg.seed,
            seeds: &self.seeds,
            config: &self.cfg,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        self.run.write_json("manifest.json", &manifest)?;
        Ok(())
    }

    fn splits(&mut self) -> Result<BTreeMap<String, DatasetSplit>> {
        let path = self.cfg.dataset_manifest()?.to_path_buf();
        let manifest =
            DatasetManifest::load(&path).with_context(|| format!("dataset manifest {}", path.display()))?;
        self.input(&path)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        for entry in &manifest.splits {
            self.input(&base.join(&entry.path))?;
        }
        Ok(manifest
            .load_splits(&base)?
            .into_iter()
            .map(|s| (s.name.clone(), s))
            .collect())
    }
}

fn split<'a>(splits: &'a BTreeMap<String, DatasetSplit>, name: &str) -> Result<&'a DatasetSplit> {
    splits.get(name).with_context(|| {
        format!(
            "split {name:?} is not in the dataset manifest (have: {})",
            splits.keys().cloned().collect::<Vec<_>>().join(", ")
        )
    })
}

pub fn warmup(s: &mut Session) -> Result<()> {
    let cfg = s.cfg.clone();
    let backend = cfg.backend()?;
    let splits = s.splits()?;
    let tasks = if cfg.tasks.is_empty() {
        splits
            .values()
            .filter(|sp| sp.role == SplitRole::Train)
            .map(|sp| WarmupTask {
                name: sp.name.clone(),
                inputs: sp.clone(),
                demos: sp.clone(),
                weight: 1.0,
            })
            .collect()
    } else {
        cfg.tasks
            .iter()
            .map(|t| {
                Ok(WarmupTask {
                    name: t.name.clone(),
                    inputs: split(&splits, &t.inputs)?.clone(),
                    demos: split(&splits, &t.demos)?.clone(),
                    weight: t.weight,
                })
            })
            .collect::<Result<_>>()?
    };
    let pool = WarmupTaskPool::new(tasks, &cfg.withheld)?;
    let mode = match cfg.stream {
        StreamKind::Retrieval => StreamMode::Retrieval {
            retrieval: cfg.retrieval.clone(),
        },
        StreamKind::Episodic => StreamMode::Episodic {
            specs: vec![EpisodeSpec::new(cfg.ways.unwrap_or(5), cfg.shots.unwrap_or(1))],
            episodes_per_spec: cfg.episodes_per_spec,
            multi_shot_k: cfg.retrieval.k,
            lambda: cfg.retrieval.lambda,
        },
    };
    let bank = match &cfg.checkpoint {
        Some(path) => {
            s.input(path)?;
            let bank = load_checkpoint(path)?;
            verify_provenance(&bank, &backend, true)?;
            bank
        }
        None => cfg.warmup.initial_bank(&backend)?,
    };
    info!(
        "warm-up over {} for {} steps, init {}, {} trainable parameters",
        pool.names().join(", "),
        cfg.warmup.steps,
        bank.metadata.init,
        bank.parameter_count()
    );
    let provider = HashEmbedder::default();
    let mut stream = build_warmup_stream(&pool, &backend, &provider, mode, &cfg.warmup)?;
    let out = train(&backend, bank, &mut stream, &cfg.warmup)?;
    info!("target coverage of the stream {:.3}", stream.coverage());
    let path = s.run.file("checkpoint.bin");
    save_checkpoint(&out.bank, &path)?;
    s.output(path);
    let digest = checkpoint_digest(&out.bank)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in out.losses.iter().enumerate() {
        writeln!(csv, "{i},{l}")?;
    }
    s.text("losses.csv", &csv)?;
    let manifest = RunManifest {
        config: serde_json::to_value(&cfg)?,
        seed: cfg.seed,
        base_model: backend.model_id(),
        base_param_digest: backend.param_digest(),
        tokenizer: backend.tokenizer().id(),
        trainable_parameters: out.bank.parameter_count(),
        loss_trace: out.losses.clone(),
        checkpoint: Some("checkpoint.bin".into()),
        checkpoint_sha256: Some(digest.clone()),
    };
    s.json("warmup.json", &manifest)?;
    println!(
        "checkpoint {} sha256 {digest}; loss {:.4} -> {:.4}",
        s.run.file("checkpoint.bin").display(),
        out.losses.first().copied().unwrap_or(f64::NAN),
        out.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Backend, bank and template for one evaluation setting.
struct Model {
    backend: ToyBackend,
    bank: SoftTokenBank,
    tags: Option<TagSet>,
    template: TemplateSpec,
}

fn empty_bank(backend: &ToyBackend) -> SoftTokenBank {
    SoftTokenBank::empty(
        backend.embedding_dim(),
        BankMetadata {
            base_model: backend.model_id(),
            base_param_digest: backend.param_digest(),
            seed: 0,
            steps: 0,
            init: InitStrategy::Random,
        },
    )
}

fn model(s: &mut Session, template: TemplateSpec) -> Result<Model> {
    let backend = s.cfg.backend()?;
    if template.tag_names().next().is_none() {
        return Ok(Model {
            bank: empty_bank(&backend),
            backend,
            tags: None,
            template,
        });
    }
    let path = s
        .cfg
        .checkpoint
        .clone()
        .context("the soft template needs a warm-up checkpoint; pass --checkpoint")?;
    s.input(&path)?;
    let bank = load_checkpoint(&path).with_context(|| format!("checkpoint {}", path.display()))?;
    verify_provenance(&bank, &backend, false)?;
    let tags = s.cfg.warmup.tagset.clone();
    if !bank.matches(&tags) {
        bail!("checkpoint {} does not match the configured tag set", path.display());
    }
    Ok(Model {
        backend,
        bank,
        tags: Some(tags),
        template,
    })
}

/// Queries and demonstration sources of one evaluation.
struct EvalData {
    queries: DatasetSplit,
    demos: DatasetSplit,
    validation: Option<DatasetSplit>,
    labels: LabelMap,
}

fn eval_data(s: &mut Session) -> Result<EvalData> {
    let splits = s.splits()?;
    let name = s.cfg.eval.split.clone().context("eval.split is not set")?;
    let queries = split(&splits, &name)?.clone();
    let demos = match &s.cfg.eval.demos {
        Some(d) => split(&splits, d)?.clone(),
        None => queries.clone(),
    };
    let validation = match &s.cfg.eval.validation {
        Some(v) => Some(split(&splits, v)?.clone()),
        None => None,
    };
    let mut labels = LabelMap::new();
    for sp in [Some(&queries), Some(&demos), validation.as_ref()].into_iter().flatten() {
        for (k, v) in sp.label_map.iter() {
            labels.insert(k, v);
        }
    }
    Ok(EvalData {
        queries,
        demos,
        validation,
        labels,
    })
}

/// Runs one draw over `queries`; returns the records and demonstration pool size.
fn run_draw(
    s: &mut Session,
    m: &Model,
    data: &EvalData,
    queries: &DatasetSplit,
    draw: usize,
) -> Result<(Vec<PredictionRecord>, usize)> {
    let cfg = &s.cfg;
    let draw_seed = seed::derive(cfg.seed, draw as u64);
    let oos = cfg.eval.oos_label.as_deref();
    let provider = HashEmbedder::default();
    let (suite, index, pool_size): (Suite, Option<VectorIndex>, usize) = match cfg.ways {
        Some(ways) => {
            let spec = EpisodeSpec::new(ways, cfg.shots.unwrap_or(1));
            let in_scope = queries.with_examples(
                queries
                    .examples
                    .iter()
                    .filter(|e| Some(e.label.as_str()) != oos)
                    .cloned()
                    .collect(),
            );
            let count = suite_episode_count(&spec, in_scope.len());
            let episodes = (0..count)
                .map(|e| sample_episode(&in_scope, &spec, seed::derive(draw_seed, e as u64)))
                .collect::<iclmu::Result<Vec<_>>>()?;
            let suite = Suite::from_episodes(&queries.name, &episodes, draw_seed);
            (suite, None, spec.ways * spec.shots)
        }
        None => {
            let pool = match cfg.shots {
                Some(k) => subsample_k_shot(&data.demos, k, draw_seed)?,
                None => data.demos.clone(),
            };
            let index = build_index(&pool.demonstrations(), &provider)?;
            (Suite::from_split(queries, draw_seed, oos), Some(index), pool.len())
        }
    };
    let pipeline = IclPipeline {
        backend: &m.backend,
        bank: &m.bank,
        tags: m.tags.as_ref(),
        template: &m.template,
        provider: &provider,
        index: index.as_ref(),
        labels: &data.labels,
        retrieval: cfg.retrieval.clone(),
        include_nota: cfg.include_nota,
        order: DemoOrder::Rank,
        max_decode_len: cfg.eval.max_decode_len,
    };
    let records = run_suite(&pipeline, &suite)?;
    s.seeds.insert(format!("{}/draw-{draw}", queries.name), draw_seed);
    Ok((records, pool_size))
}

fn in_scope(records: &[PredictionRecord]) -> Vec<PredictionRecord> {
    records
        .iter()
        .filter(|r| matches!(r.gold, Gold::Class(_)))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrawReport {
    pub draw: usize,
    pub seed: u64,
    pub demonstrations: usize,
    /// Over in-scope queries only.
    pub closed: EvalReport,
    pub open_world: Option<OosReport>,
    pub validation: Option<EvalReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutput {
    pub draws: Vec<DrawReport>,
    pub task_accuracy: RunSummary,
    pub mc_accuracy: RunSummary,
    pub in_scope_accuracy: Option<RunSummary>,
    pub oos_recall: Option<RunSummary>,
}

fn eval_table(out: &EvalOutput) -> Result<String> {
    let mut t = String::new();
    writeln!(t, "{:>4} {:>6} {:>8} {:>8} {:>9} {:>9} {:>10} {:>9}", "draw", "n", "task", "mc", "nota_pred", "in_scope", "oos_recall", "oos_prec")?;
    for d in &out.draws {
        let (is, rec, prec) = match &d.open_world {
            Some(o) => (
                format!("{:.1}", 100.0 * o.in_scope_accuracy),
                format!("{:.1}", 100.0 * o.oos_recall),
                format!("{:.1}", 100.0 * o.oos_precision),
            ),
            None => ("-".into(), "-".into(), "-".into()),
        };
        writeln!(
            t,
            "{:>4} {:>6} {:>8.1} {:>8.1} {:>9.1} {is:>9} {rec:>10} {prec:>9}",
            d.draw,
            d.closed.n,
            100.0 * d.closed.task_accuracy,
            100.0 * d.closed.mc_accuracy,
            100.0 * d.closed.nota.predicted_rate,
        )?;
    }
    writeln!(t, "task accuracy {}", out.task_accuracy.display())?;
    writeln!(t, "mc accuracy   {}", out.mc_accuracy.display())?;
    if let Some(s) = &out.in_scope_accuracy {
        writeln!(t, "in-scope accuracy {}", s.display())?;
    }
    if let Some(s) = &out.oos_recall {
        writeln!(t, "oos recall        {}", s.display())?;
    }
    Ok(t)
}

pub fn eval(s: &mut Session) -> Result<()> {
    let data = eval_data(s)?;
    let m = model(s, s.cfg.eval.template.template()?)?;
    let kind = s.cfg.eval.oos_kind;
    let threshold = s.cfg.eval.threshold;
    let open = s.cfg.eval.oos_label.is_some();
    if open && kind == OosKind::IdOos && threshold.is_none() {
        bail!("in-domain OOS evaluation needs eval.threshold; tune one with the threshold command");
    }
    let mut draws = Vec::new();
    for draw in 0..s.cfg.eval.draws {
        let (records, demonstrations) = run_draw(s, &m, &data, &data.queries, draw)?;
        let mut jsonl = String::new();
        for r in &records {
            jsonl.push_str(&serde_json::to_string(r)?);
            jsonl.push('\n');
        }
        s.text(&format!("predictions/draw-{draw}.jsonl"), &jsonl)?;
        let closed = closed_report(&in_scope(&records))?;
        let open_world = if open {
            Some(open_world_report(&records, kind, threshold)?)
        } else {
            None
        };
        let validation = match &data.validation {
            Some(v) => Some(closed_report(&in_scope(&run_draw(s, &m, &data, v, draw)?.0))?),
            None => None,
        };
        info!(
            "draw {draw}: task {:.3} mc {:.3}",
            closed.task_accuracy, closed.mc_accuracy
        );
        draws.push(DrawReport {
            draw,
            seed: seed::derive(s.cfg.seed, draw as u64),
            demonstrations,
            closed,
            open_world,
            validation,
        });
    }
    let tests: Vec<EvalReport> = draws.iter().map(|d| d.closed.clone()).collect();
    let vals: Vec<EvalReport> = draws.iter().filter_map(|d| d.validation.clone()).collect();
    let open_metric = |f: fn(&OosReport) -> f64| -> Result<Option<RunSummary>> {
        let xs: Vec<f64> = draws.iter().filter_map(|d| d.open_world.as_ref().map(|o| 100.0 * f(o))).collect();
        Ok(if xs.is_empty() { None } else { Some(aggregate_values(&xs, None)?) })
    };
    let out = EvalOutput {
        task_accuracy: aggregate_runs(&tests, &vals, Metric::Task)?,
        mc_accuracy: aggregate_runs(&tests, &vals, Metric::Mc)?,
        in_scope_accuracy: open_metric(|o| o.in_scope_accuracy)?,
        oos_recall: open_metric(|o| o.oos_recall)?,
        draws,
    };
    s.json("reports/eval.json", &out)?;
    let table = eval_table(&out)?;
    s.text("reports/eval.txt", &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdOutput {
    pub best: f64,
    pub split: String,
    pub curve: ThresholdCurve,
}

pub fn threshold(s: &mut Session) -> Result<()> {
    let data = eval_data(s)?;
    if s.cfg.eval.oos_label.is_none() {
        bail!("threshold tuning needs eval.oos_label");
    }
    let validation = data
        .validation
        .clone()
        .context("threshold tuning needs eval.validation")?;
    let m = model(s, s.cfg.eval.template.template()?)?;
    let (records, _) = run_draw(s, &m, &data, &validation, 0)?;
    let (best, curve) = tune_threshold_records(&records, &default_grid())?;
    let mut csv = String::from("threshold,objective,predicted_oos,in_scope_accuracy,oos_recall\n");
    for i in 0..curve.thresholds.len() {
        writeln!(
            csv,
            "{},{},{},{},{}",
            curve.thresholds[i], curve.objective[i], curve.predicted_oos[i], curve.in_scope_accuracy[i], curve.oos_recall[i]
        )?;
    }
    s.text("reports/threshold.csv", &csv)?;
    s.json(
        "reports/threshold.json",
        &ThresholdOutput {
            best,
            split: validation.name.clone(),
            curve,
        },
    )?;
    println!("best threshold {best} on {}", validation.name);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRecord {
    pub choices: [usize; 6],
    pub values: Vec<String>,
    /// Task accuracy in [0, 1].
    pub test: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutput {
    pub axes: SweepAxes,
    pub results: Vec<SweepRecord>,
}

pub fn sweep(s: &mut Session) -> Result<()> {
    let data = eval_data(s)?;
    let axes = s.cfg.sweep.clone();
    let points = generate_sweep(&axes)?;
    info!("sweeping {} templates", points.len());
    let mut results = Vec::with_capacity(points.len());
    for (i, p) in points.into_iter().enumerate() {
        let m = model(s, p.template)?;
        let test = closed_report(&in_scope(&run_draw(s, &m, &data, &data.queries, 0)?.0))?.task_accuracy;
        let validation = match &data.validation {
            Some(v) => Some(closed_report(&in_scope(&run_draw(s, &m, &data, v, 0)?.0))?.task_accuracy),
            None => None,
        };
        let values = axes
            .axes()
            .iter()
            .zip(p.choices)
            .map(|(a, c)| a[c].clone())
            .collect();
        info!("template {i}: {test:.3}");
        results.push(SweepRecord {
            choices: p.choices,
            values,
            test,
            validation,
        });
    }
    let out = SweepOutput { axes, results };
    s.json("reports/sweep.json", &out)?;
    let text = sweep_report(&out)?;
    s.text("reports/sweep.txt", &text)?;
    print!("{text}");
    Ok(())
}

fn sweep_report(out: &SweepOutput) -> Result<String> {
    let mut t = String::new();
    let test: Vec<f64> = out.results.iter().map(|r| 100.0 * r.test).collect();
    let val: Vec<f64> = out.results.iter().filter_map(|r| r.validation.map(|v| 100.0 * v)).collect();
    let summary = aggregate_values(&test, (val.len() == test.len()).then_some(val.as_slice()))?;
    writeln!(t, "templates {}", summary.n)?;
    writeln!(
        t,
        "accuracy {}  min {:.1}  max {:.1}",
        summary.display(),
        summary.min,
        summary.max
    )?;
    let qs = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];
    let line: Vec<String> = qs
        .iter()
        .zip(quantiles(&test, &qs))
        .map(|(q, v)| format!("q{:.0}={v:.1}", 100.0 * q))
        .collect();
    writeln!(t, "quantiles {}", line.join(" "))?;
    let results: Vec<SweepResult> = out
        .results
        .iter()
        .map(|r| SweepResult {
            choices: r.choices,
            accuracy: r.test,
        })
        .collect();
    if results.len() == out.axes.size() {
        writeln!(t, "{:>7} {:>7} {:>7} {:>6} {:>13}  edit", "min", "mean", "max", "pairs", "non-monotonic")?;
        for (axis, values) in AXIS_NAMES.iter().zip(out.axes.axes()) {
            for a in 0..values.len() {
                for b in a + 1..values.len() {
                    let e = edit_effect(&results, &out.axes, axis, &values[a], &values[b])?;
                    writeln!(
                        t,
                        "{:>7.1} {:>7.1} {:>7.1} {:>6} {:>13}  {}",
                        e.min,
                        e.mean,
                        e.max,
                        e.deltas.len(),
                        if e.non_monotonic { "yes" } else { "no" },
                        e.label
                    )?;
                }
            }
        }
    }
    Ok(t)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn report(s: &mut Session, input: &Path) -> Result<()> {
    let reports = input.join("reports");
    let mut text = String::new();
    let mut found = 0;
    let sweep = reports.join("sweep.json");
    if sweep.exists() {
        s.input(&sweep)?;
        writeln!(text, "== sweep ({})", sweep.display())?;
        text.push_str(&sweep_report(&read_json(&sweep)?)?);
        found += 1;
    }
    let eval = reports.join("eval.json");
    if eval.exists() {
        s.input(&eval)?;
        writeln!(text, "== eval ({})", eval.display())?;
        text.push_str(&eval_table(&read_json(&eval)?)?);
        found += 1;
    }
    let threshold = reports.join("threshold.json");
    if threshold.exists() {
        s.input(&threshold)?;
        let t: ThresholdOutput = read_json(&threshold)?;
        let i = t
            .curve
            .thresholds
            .iter()
            .position(|&x| x == t.best)
            .context("best threshold is not on its curve")?;
        writeln!(text, "== threshold ({})", threshold.display())?;
        writeln!(
            text,
            "best {} on {}: in-scope {:.1}, oos recall {:.1}, predicted oos {}",
            t.best,
            t.split,
            100.0 * t.curve.in_scope_accuracy[i],
            100.0 * t.curve.oos_recall[i],
            t.curve.predicted_oos[i]
        )?;
        found += 1;
    }
    if found == 0 {
        bail!("no sweep, eval or threshold reports under {}", reports.display());
    }
    s.text("report.txt", &text)?;
    print!("{text}");
    Ok(())
}
