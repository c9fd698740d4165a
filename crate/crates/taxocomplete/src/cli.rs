//! Command-line driver.
//!
//! Exit codes: 0 on success, 1 on a validation or runtime failure (a JSON
//! object on stderr), 2 on a usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use taxocomplete_core::corpus::{expand_corpus, resolve, CorpusError, LabeledDocument};
use taxocomplete_core::decode::{complete, rank, ModelScorer};
use taxocomplete_core::math::derive_seed;
use taxocomplete_core::metrics::Metric;
use taxocomplete_core::model::Model;
use taxocomplete_core::protocol::{
    ablation_configs, ablation_table, completion_instances, completion_run, eval_samples, evaluate, few_shot_run,
    train_model, uniform_chance, CompletionRun, ExperimentConfig, Instance, Prediction, ProtocolError, TokenEmbeddings,
};
use taxocomplete_core::synth::generate;
use taxocomplete_core::tat::{decompose, TaskId, TatDecomposition};
use taxocomplete_core::taxonomy::Taxonomy;
use taxocomplete_core::vocab::Vocabulary;

use crate::artifact::{load_model, save_model, ArtifactError, Sidecar, SIDECAR_VERSION};
use crate::config::RunConfig;
use crate::formats::{parse_corpus, parse_embeddings, parse_taxonomy, write_corpus, write_taxonomy, FormatError};
use crate::manifest::{decomposition_hash, Manifest, OutDir};
use crate::report::{ablation_csv, metrics_csv, NamedReport};

#[derive(Debug, Parser)]
#[command(name = "taxocomplete", version, about = "Taxonomy-aware multi-label completion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; receives the run manifest first.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for evaluation.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TaxonomyArgs {
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// Add a root above every minimal label of a multi-root input.
    #[arg(long)]
    pub add_synthetic_root: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Word vectors (`word v1 … vd`) of dimension `model.d_text`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub adaptive_loss: Option<OnOff>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub beam_width: Option<usize>,
    /// Cut-offs, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check that a taxonomy is a single-rooted poset and print its statistics.
    ValidateTaxonomy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tax: TaxonomyArgs,
    },
    /// Split a taxonomy into tasks.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tax: TaxonomyArgs,
        /// Also count documents per task.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Make every document's labels path-complete.
    ExpandLabels {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tax: TaxonomyArgs,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Write a synthetic taxonomy and corpus.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        branching: Option<usize>,
        #[arg(long)]
        multi_parent_prob: Option<f64>,
        #[arg(long)]
        docs_per_task: Option<usize>,
    },
    /// Train a model on a whole corpus.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tax: TaxonomyArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Rank completions for each document, given its labels as known.
    Complete {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Defaults to the taxonomy stored with the model.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
        /// Include the paths behind each score.
        #[arg(long)]
        explain: bool,
    },
    /// Score a model on the completion protocol.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Hold out one task, train without it, then fine-tune its generator.
    FewShot {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tax: TaxonomyArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        eval: EvalArgs,
        /// Root label name of the held-out task, or its index.
        #[arg(long)]
        task: String,
    },
    /// Compare width-adaptive and fixed smoothing on the same data.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tax: TaxonomyArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        eval: EvalArgs,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure { module: &'static str, kind: String, message: String },
}

impl CliError {
    fn fail(module: &'static str, kind: impl Into<String>, message: impl ToString) -> Self {
        CliError::Failure { module, kind: kind.into(), message: message.to_string() }
    }
}

/// Variant name of an error's `Debug` form.
fn variant<E: std::fmt::Debug>(e: &E) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric() && c != '_').next().unwrap_or_default().to_string()
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::fail("data-io", e.kind(), &e)
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::fail("data-io", variant(&e), &e)
    }
}

impl From<ArtifactError> for CliError {
    fn from(e: ArtifactError) -> Self {
        CliError::fail("model", variant(&e), &e)
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        let (module, kind) = match &e {
            ProtocolError::Train(inner) => ("train", variant(inner)),
            ProtocolError::Model(inner) => ("model", variant(inner)),
            ProtocolError::Decode(inner) => ("decode", variant(inner)),
            ProtocolError::Metric(inner) => ("eval-metrics", variant(inner)),
            other => ("experiment-harness", variant(other)),
        };
        CliError::fail(module, kind, &e)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::fail("io", "Io", format!("{}: {e}", path.display()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<(String, Vec<u8>), CliError> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::fail("data-io", "InvalidUtf8", format!("{} is not UTF-8", path.display())))?;
    Ok((text, bytes))
}

/// Parses `argv` and runs the command. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Failure { module, kind, message }) => {
            eprintln!("{}", json!({ "error": kind, "module": module, "message": message }));
            1
        }
    }
}

struct Ctx {
    config: RunConfig,
    manifest: Manifest,
    out: Option<PathBuf>,
    pool: rayon::ThreadPool,
}

impl Ctx {
    fn new(command: &str, common: &Common) -> Result<Self, CliError> {
        let mut config = match &common.config {
            Some(p) => {
                let (text, _) = read_text(p)?;
                RunConfig::parse(&text).map_err(|e| CliError::fail("config", "InvalidConfig", e))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            config.seed = s;
        }
        if common.jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(common.jobs)
            .build()
            .map_err(|e| CliError::fail("cli", "ThreadPool", e))?;
        let mut manifest = Manifest::new(command, &config);
        if let Some(p) = &common.config {
            manifest.add_input("config", p, &read_bytes(p)?);
        }
        Ok(Ctx { config, manifest, out: common.out.clone(), pool })
    }

    /// Re-snapshots the effective configuration after command-line overrides.
    fn sync_config(&mut self) {
        self.manifest.seed = self.config.seed;
        self.manifest.config = self.config.clone();
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<String, CliError> {
        let (text, bytes) = read_text(path)?;
        self.manifest.add_input(role, path, &bytes);
        Ok(text)
    }

    fn taxonomy(&mut self, tax: &TaxonomyArgs) -> Result<(Taxonomy, TatDecomposition), CliError> {
        let text = self.input("taxonomy", &tax.taxonomy)?;
        let t = parse_taxonomy(&text, tax.add_synthetic_root)?;
        let d = decompose(&t).map_err(|e| CliError::fail("tat-decomposition", variant(&e), e))?;
        self.manifest.decomposition_hash = Some(decomposition_hash(&t, &d));
        Ok((t, d))
    }

    fn corpus(&mut self, t: &Taxonomy, path: &Path) -> Result<Vec<LabeledDocument>, CliError> {
        let text = self.input("corpus", path)?;
        let (docs, warnings) = parse_corpus(&text)?;
        for w in warnings {
            log::warn!("{}: {w}", path.display());
        }
        Ok(resolve(t, &docs)?)
    }

    fn embeddings(&mut self, path: Option<&Path>) -> Result<Option<TokenEmbeddings>, CliError> {
        let Some(path) = path else { return Ok(None) };
        let text = self.input("embeddings", path)?;
        let (table, warnings) = parse_embeddings(&text, self.config.model.d_text)?;
        for w in warnings {
            log::warn!("{}: {w}", path.display());
        }
        Ok(Some(table.vectors))
    }

    fn apply_train(&mut self, a: &TrainArgs) {
        if let Some(v) = a.adaptive_loss {
            self.config.loss.adaptive = v == OnOff::On;
        }
        if let Some(e) = a.epochs {
            self.config.train.epochs = e;
        }
        if let Some(lr) = a.learning_rate {
            self.config.train.learning_rate = lr;
        }
    }

    fn apply_eval(&mut self, a: &EvalArgs) {
        if let Some(w) = a.beam_width {
            self.config.beam.beam_width = w;
        }
        if !a.k.is_empty() {
            self.config.data.ks = a.k.clone();
        }
    }

    fn out_dir(&self) -> Result<Option<OutDir>, CliError> {
        match &self.out {
            Some(p) => Ok(Some(OutDir::create(p, &self.manifest).map_err(io_err(p))?)),
            None => Ok(None),
        }
    }

    fn require_out(&self) -> Result<OutDir, CliError> {
        if self.out.is_none() {
            return Err(CliError::Usage("this command needs --out".into()));
        }
        Ok(self.out_dir()?.expect("checked above"))
    }

    fn experiment(&self) -> ExperimentConfig {
        self.config.experiment()
    }
}

fn write(out: &OutDir, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    out.write(name, contents).map(|_| ()).map_err(io_err(&out.path(name)))
}

fn write_json<T: Serialize>(out: &OutDir, name: &str, value: &T) -> Result<(), CliError> {
    out.write_json(name, value).map(|_| ()).map_err(io_err(&out.path(name)))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::ValidateTaxonomy { common, tax } => validate_taxonomy(&common, &tax),
        Command::Decompose { common, tax, corpus } => decompose_cmd(&common, &tax, corpus.as_deref()),
        Command::ExpandLabels { common, tax, corpus } => expand_labels(&common, &tax, &corpus),
        Command::Synth { common, depth, branching, multi_parent_prob, docs_per_task } => {
            synth(&common, depth, branching, multi_parent_prob, docs_per_task)
        }
        Command::Train { common, tax, train } => train_cmd(&common, &tax, &train),
        Command::Complete { common, model, taxonomy, corpus, eval, explain } => {
            complete_cmd(&common, &model, taxonomy.as_deref(), &corpus, &eval, explain)
        }
        Command::Evaluate { common, model, taxonomy, corpus, eval } => {
            evaluate_cmd(&common, &model, taxonomy.as_deref(), &corpus, &eval)
        }
        Command::FewShot { common, tax, train, eval, task } => few_shot_cmd(&common, &tax, &train, &eval, &task),
        Command::Ablate { common, tax, train, eval } => ablate_cmd(&common, &tax, &train, &eval),
    }
}

fn validate_taxonomy(common: &Common, tax: &TaxonomyArgs) -> Result<(), CliError> {
    let mut ctx = Ctx::new("validate-taxonomy", common)?;
    let (t, d) = ctx.taxonomy(tax)?;
    let stats = t.stats();
    let report = json!({
        "n_labels": stats.n_labels,
        "width": stats.width,
        "depth": stats.depth,
        "root": t.name(t.root()),
        "n_tats": d.len(),
        "avg_tat_width": d.average_width(),
    });
    if let Some(out) = ctx.out_dir()? {
        write_json(&out, "taxonomy_stats.json", &report)?;
    }
    print_json(&report);
    Ok(())
}

fn median(mut v: Vec<usize>) -> Option<f64> {
    v.sort_unstable();
    let n = v.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(v[n / 2] as f64),
        _ => Some((v[n / 2 - 1] + v[n / 2]) as f64 / 2.0),
    }
}

fn decompose_cmd(common: &Common, tax: &TaxonomyArgs, corpus: Option<&Path>) -> Result<(), CliError> {
    let mut ctx = Ctx::new("decompose", common)?;
    let (t, d) = ctx.taxonomy(tax)?;
    let docs = match corpus {
        Some(p) => {
            let docs = ctx.corpus(&t, p)?;
            Some(expand_corpus(&t, &docs, derive_seed(ctx.config.seed, b"expand")).0)
        }
        None => None,
    };
    let doc_counts: Option<Vec<usize>> = docs.as_ref().map(|docs| {
        d.tasks().iter().map(|task| docs.iter().filter(|doc| doc.labels.iter().any(|&l| task.contains(l))).count()).collect()
    });
    let tasks: Vec<_> = d
        .tasks()
        .iter()
        .enumerate()
        .map(|(i, task)| {
            let mut v = json!({
                "id": task.id.0,
                "root": t.name(task.root),
                "members": task.len(),
                "width": task.width,
                "labels": task.labels().iter().map(|&l| t.name(l)).collect::<Vec<_>>(),
            });
            if let Some(c) = &doc_counts {
                v["documents"] = json!(c[i]);
            }
            v
        })
        .collect();
    let report = json!({
        "tasks": tasks,
        "summary": {
            "n_tats": d.len(),
            "avg_tat_width": d.average_width(),
            "median_docs_per_tat": doc_counts.and_then(median),
        },
        "decomposition_hash": decomposition_hash(&t, &d),
    });
    if let Some(out) = ctx.out_dir()? {
        write_json(&out, "decomposition.json", &report)?;
    }
    print_json(&report);
    Ok(())
}

fn expand_labels(common: &Common, tax: &TaxonomyArgs, corpus: &Path) -> Result<(), CliError> {
    let mut ctx = Ctx::new("expand-labels", common)?;
    let (t, _) = ctx.taxonomy(tax)?;
    let docs = ctx.corpus(&t, corpus)?;
    let out = ctx.require_out()?;
    let (expanded, reports) = expand_corpus(&t, &docs, derive_seed(ctx.config.seed, b"expand"));
    let per_doc: Vec<_> = expanded
        .iter()
        .zip(&reports)
        .map(|(doc, e)| {
            json!({
                "doc_id": doc.doc_id,
                "added": e.added.iter().map(|&l| t.name(l)).collect::<Vec<_>>(),
                "alternatives": e.alternatives,
                "exact": e.exact,
            })
        })
        .collect();
    let report = json!({
        "documents": docs.len(),
        "documents_changed": reports.iter().filter(|e| !e.added.is_empty()).count(),
        "labels_added": reports.iter().map(|e| e.added.len()).sum::<usize>(),
        "per_document": per_doc,
    });
    let jsonl = write_corpus(&expanded.iter().map(|d| d.to_document(&t)).collect::<Vec<_>>());
    write(&out, "expanded.jsonl", jsonl)?;
    write_json(&out, "expansion_report.json", &report)?;
    Ok(())
}

fn synth(
    common: &Common,
    depth: Option<usize>,
    branching: Option<usize>,
    multi_parent_prob: Option<f64>,
    docs_per_task: Option<usize>,
) -> Result<(), CliError> {
    let mut ctx = Ctx::new("synth", common)?;
    let s = &mut ctx.config.synth;
    s.depth = depth.unwrap_or(s.depth);
    s.branching = branching.unwrap_or(s.branching);
    s.multi_parent_prob = multi_parent_prob.unwrap_or(s.multi_parent_prob);
    s.docs_per_task = docs_per_task.unwrap_or(s.docs_per_task);
    ctx.sync_config();
    let out = ctx.require_out()?;
    let data = generate(&ctx.config.synth, ctx.config.seed).map_err(|e| CliError::fail("experiment-harness", variant(&e), e))?;
    write(&out, "taxonomy.tsv", write_taxonomy(&data.taxonomy))?;
    write(&out, "corpus.jsonl", write_corpus(&data.documents))?;
    Ok(())
}

fn sidecar(t: &Taxonomy, d: &TatDecomposition, model: &Model, vocab: &Vocabulary, seed: u64, step: usize) -> Sidecar {
    Sidecar {
        version: SIDECAR_VERSION,
        config: model.config().clone(),
        layout: model.layout(),
        vocab: vocab.clone(),
        decomposition_hash: decomposition_hash(t, d),
        taxonomy: write_taxonomy(t),
        seed,
        step,
    }
}

fn train_cmd(common: &Common, tax: &TaxonomyArgs, a: &TrainArgs) -> Result<(), CliError> {
    let mut ctx = Ctx::new("train", common)?;
    ctx.apply_train(a);
    ctx.sync_config();
    let (t, d) = ctx.taxonomy(tax)?;
    let docs = ctx.corpus(&t, &a.corpus)?;
    let emb = ctx.embeddings(a.embeddings.as_deref())?;
    let out = ctx.require_out()?;
    let cfg = ctx.experiment();
    let (docs, _) = expand_corpus(&t, &docs, derive_seed(cfg.seed, b"expand"));
    let (model, vocab, report) = train_model(&t, &d, &docs, &cfg, emb.as_ref())?;
    if let Some(e) = &emb {
        let table = crate::formats::EmbeddingTable { dim: cfg.model.d_text, vectors: e.clone() };
        log::info!("embedding coverage {:.3}", table.coverage(&vocab));
    }
    save_model(&out.path("model.ckpt"), &model, &sidecar(&t, &d, &model, &vocab, cfg.seed, report.steps))?;
    write_json(&out, "train_report.json", &report)?;
    Ok(())
}

/// Predictions in input order, computed on the context's thread pool.
fn predict_parallel(
    ctx: &Ctx,
    t: &Taxonomy,
    d: &TatDecomposition,
    model: &Model,
    vocab: &Vocabulary,
    instances: &[Instance],
) -> Result<Vec<Prediction>, CliError> {
    let beam = ctx.config.beam;
    let preds: Result<Vec<Prediction>, ProtocolError> = ctx.pool.install(|| {
        instances.par_iter().map(|i| taxocomplete_core::protocol::predict(t, d, model, vocab, i, &beam)).collect()
    });
    Ok(preds?)
}

fn load_for_inference(
    ctx: &mut Ctx,
    model: &Path,
    taxonomy: Option<&Path>,
) -> Result<crate::artifact::LoadedModel, CliError> {
    let t = match taxonomy {
        Some(p) => Some(parse_taxonomy(&ctx.input("taxonomy", p)?, false)?),
        None => None,
    };
    let bytes = read_bytes(model)?;
    ctx.manifest.add_input("model", model, &bytes);
    let loaded = load_model(model, t)?;
    ctx.manifest.decomposition_hash = Some(loaded.sidecar.decomposition_hash.clone());
    Ok(loaded)
}

fn complete_cmd(
    common: &Common,
    model: &Path,
    taxonomy: Option<&Path>,
    corpus: &Path,
    eval: &EvalArgs,
    explain: bool,
) -> Result<(), CliError> {
    let mut ctx = Ctx::new("complete", common)?;
    ctx.apply_eval(eval);
    ctx.sync_config();
    let lm = load_for_inference(&mut ctx, model, taxonomy)?;
    let (t, d) = (&lm.taxonomy, &lm.decomposition);
    let docs = ctx.corpus(t, corpus)?;
    let (docs, _) = expand_corpus(t, &docs, derive_seed(ctx.config.seed, b"expand"));
    let k = eval.k.iter().copied().max().unwrap_or(5);
    let out = ctx.out_dir()?;
    let beam = ctx.config.beam;
    let max_len = lm.model.config().max_text_len;
    let lines: Result<Vec<String>, CliError> = ctx.pool.install(|| {
        docs.par_iter()
            .map(|doc| {
                let tokens = lm.sidecar.vocab.encode(&doc.text, max_len);
                let scorer = ModelScorer::new(&lm.model, &tokens).map_err(|e| CliError::from(ProtocolError::from(e)))?;
                let scores = complete(t, d, &scorer, &doc.labels, &beam).map_err(|e| CliError::from(ProtocolError::from(e)))?;
                let ranked = rank(&scores, k);
                let mut v = json!({
                    "doc_id": doc.doc_id,
                    "ranking": ranked.iter().map(|(l, s)| json!({ "label": t.name(*l), "score": s })).collect::<Vec<_>>(),
                });
                if explain {
                    let prov: Vec<_> = ranked
                        .iter()
                        .map(|(l, _)| {
                            let contribs: Vec<_> = scores.provenance[l]
                                .iter()
                                .map(|c| {
                                    json!({
                                        "prefix": c.prefix.iter().map(|&x| t.name(x)).collect::<Vec<_>>(),
                                        "task": t.name(d.task(c.task).expect("task of the model").root),
                                        "path": c.path.iter().map(|&x| t.name(x)).collect::<Vec<_>>(),
                                        "prob": c.prob,
                                    })
                                })
                                .collect();
                            json!({ "label": t.name(*l), "contributions": contribs })
                        })
                        .collect();
                    v["provenance"] = json!(prov);
                }
                Ok(v.to_string())
            })
            .collect()
    });
    let mut text = lines?.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    match out {
        Some(out) => write(&out, "rankings.jsonl", text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn evaluate_cmd(common: &Common, model: &Path, taxonomy: Option<&Path>, corpus: &Path, eval: &EvalArgs) -> Result<(), CliError> {
    let mut ctx = Ctx::new("evaluate", common)?;
    ctx.apply_eval(eval);
    ctx.sync_config();
    let lm = load_for_inference(&mut ctx, model, taxonomy)?;
    let (t, d) = (&lm.taxonomy, &lm.decomposition);
    let docs = ctx.corpus(t, corpus)?;
    let (docs, _) = expand_corpus(t, &docs, derive_seed(ctx.config.seed, b"expand"));
    let out = ctx.out_dir()?;
    let instances = completion_instances(t, &docs);
    let preds = predict_parallel(&ctx, t, d, &lm.model, &lm.sidecar.vocab, &instances)?;
    let cfg = ctx.experiment();
    let metrics = evaluate(&eval_samples(d, &instances, &preds), &cfg.ks).map_err(|e| CliError::from(ProtocolError::from(e)))?;
    let chance = uniform_chance(t, d, &instances, &cfg.ks, cfg.chance_draws, cfg.seed)
        .map_err(|e| CliError::from(ProtocolError::from(e)))?;
    let named = NamedReport::new(&metrics, t, d);
    let summary = json!({
        "metrics": named.overall,
        "chance": chance.overall,
    });
    if let Some(out) = out {
        write_json(&out, "metrics.json", &named)?;
        write(&out, "metrics.csv", metrics_csv(&named))?;
        write_json(&out, "chance.json", &NamedReport::new(&chance, t, d))?;
    }
    print_json(&summary);
    Ok(())
}

fn resolve_task(t: &Taxonomy, d: &TatDecomposition, spec: &str) -> Result<TaskId, CliError> {
    if let Some(task) = d.tasks().iter().find(|task| t.name(task.root) == spec) {
        return Ok(task.id);
    }
    match spec.parse::<u32>() {
        Ok(i) if (i as usize) < d.len() => Ok(TaskId(i)),
        _ => Err(CliError::fail("experiment-harness", "UnknownTask", format!("no task rooted at or numbered {spec:?}"))),
    }
}

fn write_run_metrics(out: &OutDir, prefix: &str, run: &CompletionRun, t: &Taxonomy, d: &TatDecomposition) -> Result<(), CliError> {
    let test = NamedReport::new(&run.test_metrics, t, d);
    write_json(out, &format!("{prefix}metrics.json"), &test)?;
    write(out, &format!("{prefix}metrics.csv"), metrics_csv(&test))?;
    write_json(out, &format!("{prefix}train_metrics.json"), &NamedReport::new(&run.train_metrics, t, d))?;
    write_json(out, &format!("{prefix}chance.json"), &NamedReport::new(&run.chance, t, d))?;
    write_json(out, &format!("{prefix}train_report.json"), &run.train_report)?;
    Ok(())
}

fn few_shot_cmd(common: &Common, tax: &TaxonomyArgs, a: &TrainArgs, eval: &EvalArgs, task: &str) -> Result<(), CliError> {
    let mut ctx = Ctx::new("few-shot", common)?;
    ctx.apply_train(a);
    ctx.apply_eval(eval);
    ctx.sync_config();
    let (t, d) = ctx.taxonomy(tax)?;
    let held_out = resolve_task(&t, &d, task)?;
    let docs = ctx.corpus(&t, &a.corpus)?;
    let emb = ctx.embeddings(a.embeddings.as_deref())?;
    let out = ctx.require_out()?;
    let cfg = ctx.experiment();
    let run = few_shot_run(&t, &d, &docs, held_out, &cfg, emb.as_ref())?;
    let steps = run.phase1_report.steps + run.phase2_report.steps;
    save_model(&out.path("model.ckpt"), &run.model, &sidecar(&t, &d, &run.model, &run.vocab, cfg.seed, steps))?;
    let p1 = |r: &taxocomplete_core::metrics::MetricReport| r.get(Metric::Precision, 1);
    let report = json!({
        "held_out": t.name(d.task(held_out).expect("resolved").root),
        "phase1_documents": run.phase1_docs,
        "phase2_documents": run.phase2_docs,
        "new_task_before": NamedReport::new(&run.new_task_before, &t, &d),
        "new_task_after": NamedReport::new(&run.new_task_after, &t, &d),
        "global_after": NamedReport::new(&run.global_after, &t, &d),
        "changed_shared_parameters": run.changed_shared,
        "phase1_loss": run.phase1_report.loss_curve,
        "phase2_loss": run.phase2_report.loss_curve,
    });
    write_json(&out, "few_shot.json", &report)?;
    let mut csv = String::from("scope,metric,k,value\n");
    for (scope, r) in [("nt_before", &run.new_task_before), ("nt_after", &run.new_task_after), ("global", &run.global_after)] {
        for m in &r.overall {
            csv.push_str(&format!("{scope},{},{},{}\n", m.metric.name(), m.k, m.value));
        }
    }
    write(&out, "few_shot.csv", csv)?;
    print_json(&json!({
        "nt_p1_before": p1(&run.new_task_before),
        "nt_p1_after": p1(&run.new_task_after),
        "global_p1": p1(&run.global_after),
        "shared_parameters_unchanged": run.changed_shared.is_empty(),
    }));
    Ok(())
}

fn ablate_cmd(common: &Common, tax: &TaxonomyArgs, a: &TrainArgs, eval: &EvalArgs) -> Result<(), CliError> {
    let mut ctx = Ctx::new("ablate", common)?;
    ctx.apply_train(a);
    ctx.apply_eval(eval);
    ctx.sync_config();
    let (t, d) = ctx.taxonomy(tax)?;
    let docs = ctx.corpus(&t, &a.corpus)?;
    let emb = ctx.embeddings(a.embeddings.as_deref())?;
    let out = ctx.require_out()?;
    let (on, off) = ablation_configs(&ctx.experiment());
    let (adaptive, fixed) = ctx.pool.install(|| {
        rayon::join(
            || completion_run(&t, &d, &docs, &on, emb.as_ref()),
            || completion_run(&t, &d, &docs, &off, emb.as_ref()),
        )
    });
    let (adaptive, fixed) = (adaptive?, fixed?);
    let rows = ablation_table(&adaptive.test_metrics, &fixed.test_metrics);
    write_run_metrics(&out, "adaptive_", &adaptive, &t, &d)?;
    write_run_metrics(&out, "fixed_", &fixed, &t, &d)?;
    write_json(&out, "ablation.json", &rows)?;
    write(&out, "ablation.csv", ablation_csv(&rows))?;
    let chance: BTreeMap<String, f64> =
        adaptive.chance.overall.iter().map(|m| (format!("{}@{}", m.metric.name(), m.k), m.value)).collect();
    print_json(&json!({ "rows": rows, "chance": chance }));
    Ok(())
}
