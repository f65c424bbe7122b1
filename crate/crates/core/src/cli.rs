//! Command-line front end: `synth`, `ingest`, `train`, `eval`, `predict`,
//! `analyze`. Each command writes its artifact plus a JSON run manifest.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{emit_report, evaluate, read_report, stratify, ReportFormat, StratifyBy};
use crate::graph::{extract_subgraph, load_queries, ClassVocab};
use crate::kb::{load_kb_files, KnowledgeBase};
use crate::model::{predict, UpdateOrder, Variant};
use crate::synth::{generate, SynthSpec};
use crate::tensor::{Precision, Scalar};
use crate::train::{hex, load_model, CheckpointMeta, Profile, RunLog, Trainer};

pub const THREADS_ENV: &str = "KG_LINKER_THREADS";

#[derive(Debug, Parser)]
#[command(name = "kg-linker", version, about = "Link prediction over knowledge-base subgraphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic knowledge base with planted composition rules.
    Synth {
        /// `key = value` spec file; defaults are used for missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a knowledge base and write it back in canonical form.
    Ingest {
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        types: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model.
    Train(TrainArgs),
    /// Score a query file with a trained model.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        types: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
        /// Path bound; defaults to the one used in training.
        #[arg(long)]
        l_max: Option<usize>,
        /// Report path; `.csv` selects CSV, anything else JSON.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        deterministic: bool,
    },
    /// Rank the target relations for one entity pair.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        types: Option<PathBuf>,
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        #[arg(long)]
        l_max: Option<usize>,
        /// Also write the prediction (and a manifest) here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stratify an evaluation report into a `bin_lo,bin_hi,n,map_at_5` curve.
    Analyze {
        #[arg(long)]
        report: PathBuf,
        /// `path-length` or `parallel-paths`.
        #[arg(long)]
        by: StratifyBy,
        #[arg(long, default_value_t = crate::eval::DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub facts: Option<PathBuf>,
    #[arg(long)]
    pub types: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<Profile>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub l_max: Option<usize>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Steps per epoch.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub update_order: Option<UpdateOrder>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// `f32` or `f64`.
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s {
        "f32" | "32" => Ok(Precision::F32),
        "f64" | "64" => Ok(Precision::F64),
        _ => Err(format!("`{s}` is not f32 or f64")),
    }
}

impl TrainArgs {
    fn to_run_config(&self) -> RunConfig {
        RunConfig {
            facts: self.facts.clone(),
            types: self.types.clone(),
            queries: self.queries.clone(),
            profile: self.profile,
            seed: self.seed,
            l_max: self.l_max,
            variant: self.variant,
            t_max: self.t_max,
            dim: self.dim,
            epochs: self.epochs,
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            checkpoint: self.checkpoint.clone(),
            out: self.out.clone(),
            deterministic: self.deterministic.then_some(true),
            update_order: self.update_order,
            clip_norm: self.clip_norm,
            checkpoint_every: self.checkpoint_every,
            precision: self.precision,
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io { .. } => 3,
        Error::Mismatch(_) | Error::Checkpoint(_) => 4,
        Error::NoSubgraph { .. } | Error::DegenerateQuery(_) => 5,
        Error::NanLoss { .. } | Error::NonFinite(_) => 6,
        Error::Parse { .. }
        | Error::EmptyName(_)
        | Error::UnknownName { .. }
        | Error::InvalidId { .. }
        | Error::Json(_) => 7,
        Error::Shape { .. } | Error::BackwardTwice => 1,
    }
}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => "config",
        Error::Io { .. } => "io",
        Error::Mismatch(_) => "checkpoint-mismatch",
        Error::Checkpoint(_) => "checkpoint",
        Error::NoSubgraph { .. } | Error::DegenerateQuery(_) => "no-subgraph",
        Error::NanLoss { .. } | Error::NonFinite(_) => "training-failure",
        Error::Parse { .. }
        | Error::EmptyName(_)
        | Error::UnknownName { .. }
        | Error::InvalidId { .. }
        | Error::Json(_) => "input",
        Error::Shape { .. } | Error::BackwardTwice => "internal",
    }
}

/// The single-line JSON printed to stderr on failure.
pub fn error_line(e: &Error) -> String {
    serde_json::json!({
        "error": error_kind(e),
        "exit": exit_code(e),
        "message": e.to_string(),
    })
    .to_string()
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runlog_sha256: Option<String>,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn digests(paths: &[&Path]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.to_path_buf(),
                sha256: file_sha256(p)?,
            })
        })
        .collect()
}

impl RunManifest {
    fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            config,
            seed,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            runlog_sha256: None,
        }
    }

    fn finish(mut self, inputs: &[&Path], artifacts: &[&Path], path: &Path) -> Result<()> {
        self.inputs = digests(inputs)?;
        self.artifacts = digests(artifacts)?;
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Refuses to write over any input.
fn guard_outputs(inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    let canon = |p: &Path| std::fs::canonicalize(p).ok();
    for o in outputs {
        let Some(oc) = canon(o) else { continue };
        if inputs.iter().any(|i| canon(i).as_ref() == Some(&oc)) {
            return Err(Error::Config(format!(
                "output {} would overwrite an input",
                o.display()
            )));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_kb(facts: &Path, types: Option<&Path>) -> Result<KnowledgeBase> {
    let kb = load_kb_files(facts, types)?;
    log::info!(
        "loaded {} entities, {} relations, {} types, {} facts",
        kb.num_entities(),
        kb.relations().len(),
        kb.types().len(),
        kb.facts().len()
    );
    Ok(kb)
}

/// Loads queries; in `frozen` mode every relation must already be a class.
fn load_query_file(
    path: &Path,
    kb: &KnowledgeBase,
    classes: &mut ClassVocab,
    frozen: bool,
) -> Result<Vec<crate::graph::Query>> {
    let before = classes.len();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (queries, skipped) = load_queries(std::io::BufReader::new(file), kb, classes)?;
    if !skipped.is_empty() {
        log::warn!(
            "{}: {} rows name unknown entities and were skipped",
            path.display(),
            skipped.len()
        );
    }
    if frozen && classes.len() != before {
        return Err(Error::Mismatch(format!(
            "{} names relations the checkpoint was not trained on: {}",
            path.display(),
            classes.names()[before..].join(", ")
        )));
    }
    Ok(queries)
}

fn classes_from_meta(meta: &CheckpointMeta) -> ClassVocab {
    ClassVocab::from_names(&meta.classes[1..])
}

/// Fully materialised training settings.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedTrain {
    pub facts: PathBuf,
    pub types: Option<PathBuf>,
    pub queries: PathBuf,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub profile: Profile,
    pub variant: Variant,
    pub dim: usize,
    pub t_max: usize,
    pub update_order: UpdateOrder,
    pub precision: Precision,
    pub train: crate::train::TrainConfig,
}

pub fn resolve_train(args: &TrainArgs) -> Result<ResolvedTrain> {
    let file = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let c = file.overlay(args.to_run_config());
    let need = |v: Option<PathBuf>, name: &str| {
        v.ok_or_else(|| Error::Config(format!("`{name}` is required (flag or config key)")))
    };
    let profile = c.profile.unwrap_or(Profile::Desk);
    let (dim, t_max) = profile.model_dims();
    let mut train = profile.train_config();
    if let Some(v) = c.seed {
        train.seed = v;
    }
    if let Some(v) = c.l_max {
        train.max_len = v;
    }
    if let Some(v) = c.epochs {
        train.epochs = v;
    }
    if let Some(v) = c.steps {
        train.steps_per_epoch = v;
    }
    if let Some(v) = c.batch {
        train.batch = v;
    }
    if let Some(v) = c.lr {
        train.lr = v;
    }
    if let Some(v) = c.deterministic {
        train.deterministic = v;
    }
    if c.clip_norm.is_some() {
        train.clip_norm = c.clip_norm;
    }
    if let Some(v) = c.checkpoint_every {
        train.checkpoint_every = v;
    }
    train.validate()?;
    Ok(ResolvedTrain {
        facts: need(c.facts, "facts")?,
        types: c.types,
        queries: need(c.queries, "queries")?,
        out: need(c.out, "out")?,
        resume: c.checkpoint,
        profile,
        variant: c.variant.unwrap_or(Variant::Sum),
        dim: c.dim.unwrap_or(dim),
        t_max: c.t_max.unwrap_or(t_max),
        update_order: c.update_order.unwrap_or(UpdateOrder::Jacobi),
        precision: c.precision.unwrap_or(Precision::F64),
        train,
    })
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let r = resolve_train(args)?;
    match r.precision {
        Precision::F64 => train_with::<f64>(&r),
        Precision::F32 => train_with::<f32>(&r),
    }
}

fn train_with<T: Scalar>(r: &ResolvedTrain) -> Result<()> {
    let kb = load_kb(&r.facts, r.types.as_deref())?;
    let mut classes = ClassVocab::default();
    let queries = load_query_file(&r.queries, &kb, &mut classes, false)?;
    let mut mc = crate::model::ModelConfig::new(r.dim, r.t_max, classes.len(), r.variant);
    mc.update_order = r.update_order;
    create_dir(&r.out)?;
    let ckpt = r.out.join("model.ckpt");
    let runlog = r.out.join("runlog.csv");
    let mut inputs: Vec<&Path> = vec![&r.facts, &r.queries];
    inputs.extend(r.types.as_deref());
    inputs.extend(r.resume.as_deref());
    guard_outputs(&inputs, &[&ckpt, &runlog])?;

    let mut trainer: Trainer<T> = Trainer::new(&kb, &queries, &classes, mc, r.train.clone())?;
    let (np, nn) = trainer.pool_sizes();
    log::info!("training on {np} positive and {nn} negative queries");
    if let Some(resume) = &r.resume {
        trainer.load_checkpoint(resume)?;
        log::info!("resumed at step {}", trainer.steps_done());
    }
    let outcome = trainer.run(Some(&ckpt));
    // The log is written even when training aborts, for post-mortems.
    trainer.log().write_csv(&runlog)?;
    outcome?;
    let log: &RunLog = trainer.log();
    if let Some(last) = log.records.last() {
        log::info!("finished at step {} with loss {:.5}", last.step + 1, last.loss);
    }
    let mut m = RunManifest::new("train", serde_json::to_value(r)?, Some(r.train.seed));
    m.runlog_sha256 = Some(log.digest());
    let meta = crate::train::meta_path(&ckpt);
    m.finish(&inputs, &[&ckpt, &meta, &runlog], &r.out.join("manifest.json"))
}

fn cmd_eval(
    checkpoint: &Path,
    facts: &Path,
    types: Option<&Path>,
    queries: &Path,
    l_max: Option<usize>,
    out: &Path,
    deterministic: bool,
) -> Result<()> {
    let meta = CheckpointMeta::load(checkpoint)?;
    match meta.precision {
        Precision::F64 => eval_with::<f64>(checkpoint, facts, types, queries, l_max, out, deterministic),
        Precision::F32 => eval_with::<f32>(checkpoint, facts, types, queries, l_max, out, deterministic),
    }
}

fn eval_with<T: Scalar>(
    checkpoint: &Path,
    facts: &Path,
    types: Option<&Path>,
    queries_path: &Path,
    l_max: Option<usize>,
    out: &Path,
    deterministic: bool,
) -> Result<()> {
    let (model, meta) = load_model::<T>(checkpoint)?;
    let kb = load_kb(facts, types)?;
    let mut classes = classes_from_meta(&meta);
    meta.check_vocab(&kb, &classes)?;
    let queries = load_query_file(queries_path, &kb, &mut classes, true)?;
    let l = l_max.unwrap_or(meta.train.max_len);
    let mut inputs: Vec<&Path> = vec![checkpoint, facts, queries_path];
    inputs.extend(types);
    guard_outputs(&inputs, &[out])?;
    let report = evaluate(&model, &kb, &queries, &classes, l, deterministic)?;
    emit_report(&report, out, ReportFormat::from_path(out))?;
    let fmt = |v: Option<f64>| v.map_or("-".to_owned(), |x| format!("{x:.4}"));
    println!(
        "queries {}  skipped {}  MAP@{} {:.4}  TPR {}  TNR {}  avg-acc {}",
        report.rows.len(),
        report.skipped,
        report.k,
        report.map_at_k,
        fmt(report.rates.tpr),
        fmt(report.rates.tnr),
        fmt(report.rates.avg_accuracy)
    );
    print!("{}", report.relation_table());
    let config = serde_json::json!({ "checkpoint": checkpoint, "l_max": l, "deterministic": deterministic });
    RunManifest::new("eval", config, Some(meta.train.seed)).finish(&inputs, &[out], &sidecar(out))
}

#[derive(Debug, Serialize)]
struct RankedClass {
    class: String,
    score: f64,
}

fn cmd_predict(
    checkpoint: &Path,
    facts: &Path,
    types: Option<&Path>,
    source: &str,
    target: &str,
    l_max: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let meta = CheckpointMeta::load(checkpoint)?;
    match meta.precision {
        Precision::F64 => predict_with::<f64>(checkpoint, facts, types, source, target, l_max, out),
        Precision::F32 => predict_with::<f32>(checkpoint, facts, types, source, target, l_max, out),
    }
}

fn predict_with<T: Scalar>(
    checkpoint: &Path,
    facts: &Path,
    types: Option<&Path>,
    source: &str,
    target: &str,
    l_max: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let (model, meta) = load_model::<T>(checkpoint)?;
    let kb = load_kb(facts, types)?;
    let classes = classes_from_meta(&meta);
    meta.check_vocab(&kb, &classes)?;
    let entity = |n: &str| {
        kb.entity(n).ok_or_else(|| Error::UnknownName {
            kind: "entity",
            name: n.to_owned(),
        })
    };
    let (s, t) = (entity(source)?, entity(target)?);
    let l = l_max.unwrap_or(meta.train.max_len);
    let graph = extract_subgraph(&kb, s, t, l)?;
    let logits = model.logits(&crate::graph::batch_graphs(&[&graph])?)?;
    let p = predict(logits.row(0));
    let stats = graph.stats();
    let value = serde_json::json!({
        "source": source,
        "target": target,
        "predicted": classes.name(p.argmax),
        "ranking": p.ranking.iter().map(|&c| RankedClass {
            class: classes.name(c).to_owned(),
            score: logits.row(0)[c].as_f64(),
        }).collect::<Vec<_>>(),
        "nodes": graph.num_nodes(),
        "edges": graph.num_edges(),
        "path_count": stats.path_count,
        "avg_path_len": stats.avg_path_len,
    });
    let text = serde_json::to_string_pretty(&value)?;
    println!("{text}");
    if let Some(out) = out {
        let mut inputs: Vec<&Path> = vec![checkpoint, facts];
        inputs.extend(types);
        guard_outputs(&inputs, &[out])?;
        std::fs::write(out, &text).map_err(|e| Error::io(out, e))?;
        let config = serde_json::json!({
            "checkpoint": checkpoint, "source": source, "target": target, "l_max": l,
        });
        RunManifest::new("predict", config, None).finish(&inputs, &[out], &sidecar(out))?;
    }
    Ok(())
}

fn cmd_analyze(report: &Path, by: StratifyBy, bins: usize, out: &Path) -> Result<()> {
    guard_outputs(&[report], &[out])?;
    let r = read_report(report)?;
    let curve = stratify(&r.rows, by, bins, r.k)?;
    if curve.omitted > 0 {
        log::warn!(
            "{} of {bins} bins omitted: too few distinct values",
            curve.omitted
        );
    }
    std::fs::write(out, curve.to_csv()).map_err(|e| Error::io(out, e))?;
    let config = serde_json::json!({ "report": report, "by": by, "bins": bins });
    RunManifest::new("analyze", config, None).finish(&[report], &[out], &sidecar(out))
}

fn cmd_synth(spec_path: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let g = generate(&spec)?;
    g.write_dir(out)?;
    let npos = |qs: &[crate::graph::Query]| {
        qs.iter()
            .filter(|q| q.polarity == crate::graph::Polarity::Positive)
            .count()
    };
    log::info!(
        "{} facts; train {} ({} positive), test {} ({} positive)",
        g.kb.facts().len(),
        g.train.len(),
        npos(&g.train),
        g.test.len(),
        npos(&g.test)
    );
    let names = ["facts.tsv", "types.tsv", "train.tsv", "test.tsv", "rules.tsv"];
    let paths: Vec<PathBuf> = names.iter().map(|n| out.join(n)).collect();
    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    let inputs: Vec<&Path> = spec_path.into_iter().collect();
    RunManifest::new("synth", serde_json::to_value(&spec)?, Some(spec.seed)).finish(
        &inputs,
        &refs,
        &out.join("manifest.json"),
    )
}

fn cmd_ingest(facts: &Path, types: Option<&Path>, out: &Path) -> Result<()> {
    let kb = load_kb(facts, types)?;
    create_dir(out)?;
    let (f, t, s) = (out.join("facts.tsv"), out.join("types.tsv"), out.join("kb.json"));
    let mut inputs = vec![facts];
    inputs.extend(types);
    guard_outputs(&inputs, &[&f, &t, &s])?;
    kb.save(&f, &t)?;
    let summary = serde_json::json!({
        "entities": kb.num_entities(),
        "relations": kb.relations().len(),
        "types": kb.types().len(),
        "facts": kb.facts().len(),
        "max_types_per_entity": kb.max_types(),
    });
    std::fs::write(&s, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&s, e))?;
    println!("{summary}");
    RunManifest::new("ingest", serde_json::json!({}), None).finish(
        &inputs,
        &[&f, &t, &s],
        &out.join("manifest.json"),
    )
}

/// Sizes the global thread pool from `KG_LINKER_THREADS` (1 when
/// `deterministic`). Later calls are no-ops.
pub fn init_threads(deterministic: bool) -> Result<()> {
    let from_env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))
        })?),
        Err(_) => None,
    };
    let n = if deterministic { Some(1) } else { from_env };
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let deterministic = match &cli.command {
        Command::Train(a) => a.deterministic,
        Command::Eval { deterministic, .. } => *deterministic,
        _ => false,
    };
    init_threads(deterministic)?;
    match cli.command {
        Command::Synth { spec, seed, out } => cmd_synth(spec.as_deref(), seed, &out),
        Command::Ingest { facts, types, out } => cmd_ingest(&facts, types.as_deref(), &out),
        Command::Train(args) => cmd_train(&args),
        Command::Eval {
            checkpoint,
            facts,
            types,
            queries,
            l_max,
            out,
            deterministic,
        } => cmd_eval(
            &checkpoint,
            &facts,
            types.as_deref(),
            &queries,
            l_max,
            &out,
            deterministic,
        ),
        Command::Predict {
            checkpoint,
            facts,
            types,
            source,
            target,
            l_max,
            out,
        } => cmd_predict(
            &checkpoint,
            &facts,
            types.as_deref(),
            &source,
            &target,
            l_max,
            out.as_deref(),
        ),
        Command::Analyze {
            report,
            by,
            bins,
            out,
        } => cmd_analyze(&report, by, bins, &out),
    }
}
