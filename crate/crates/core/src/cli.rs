//! The `knowcol` command line.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error (bad
//! flags, invalid config values).

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataio::{
    load_catalog, load_checkpoint, load_dataset, load_embedding_store, load_seeds, load_triples_tsv, save_checkpoint,
    synth_fixture, write_fixture, Checkpoint, DataPaths, EntityCatalogEntry, Stores,
};
use crate::encoders::ModelParams;
use crate::error::Error;
use crate::graphstore::{KnowledgeGraph, DEFAULT_HIERARCHY};
use crate::inference::{build_candidate_index, evaluate, predict, Hit};
use crate::trainer::{build_batch, grad_check_with, train, TrainConfig, TrainingData};

pub const CHECKPOINT_FILE: &str = "checkpoint.kcck";
pub const LOSS_LOG_FILE: &str = "loss_log.jsonl";
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "knowcol",
    version,
    about = "Knowledge-guided contrastive learning over precomputed embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract the induced subgraph around a seed entity set.
    ExtractSubgraph(ExtractArgs),
    /// Train from a run config; writes a checkpoint and a loss log.
    Train(TrainArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Top-k retrieval for a query file.
    Infer(InferArgs),
    /// Seen/unseen top-1 accuracy and their harmonic mean.
    Eval(EvalArgs),
    /// Write a deterministic synthetic fixture and run config.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Triple TSV (head, relation, tail).
    #[arg(long)]
    pub triples: PathBuf,
    /// Seed QIDs, one per line.
    #[arg(long)]
    pub seeds: PathBuf,
    /// Comma-separated hierarchy relations followed one hop from the seeds.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HIERARCHY.map(String::from))]
    pub hierarchy: Vec<String>,
    /// Output TSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Override `train.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override `train.batch_size`.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Override `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Run config JSON; the first `--records` training records form the batch.
    #[arg(long)]
    pub config: PathBuf,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-4, allow_negative_numbers = true)]
    pub fd_step: f64,
    /// Number of training records in the checked batch.
    #[arg(long, default_value_t = 4)]
    pub records: usize,
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Args)]
pub struct DataOverrides {
    /// Catalog JSONL (defaults to the path recorded in the checkpoint).
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Image-side embedding store (defaults to the checkpoint's).
    #[arg(long)]
    pub image_store: Option<PathBuf>,
    /// Text-side embedding store (defaults to the checkpoint's).
    #[arg(long)]
    pub text_store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Query dataset JSONL; labels are optional.
    #[arg(long)]
    pub queries: PathBuf,
    /// Number of candidates per query.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Prediction JSONL (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataOverrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labelled test dataset JSONL.
    #[arg(long)]
    pub testset: PathBuf,
    /// Candidates kept per query in the prediction dump.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Also write prediction JSONL here.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataOverrides,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of entities; about a fifth are held out as unseen.
    #[arg(long, default_value_t = 10)]
    pub entities: usize,
    /// Raw embedding dimension.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Seed for every random draw in the fixture.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Config file read by `train` and `gradcheck`. Data paths are relative to
/// the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataPaths,
    pub output_dir: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> CliResult<i32> {
    match command {
        Command::ExtractSubgraph(a) => cmd_extract_subgraph(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn write_file(path: &Path, content: &[u8]) -> CliResult<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e).into())
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")).into())
    }
}

pub fn cmd_extract_subgraph(a: &ExtractArgs) -> CliResult<i32> {
    let hierarchy: Vec<&str> = a.hierarchy.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    if hierarchy.is_empty() {
        return Err(CliError::Usage("--hierarchy needs at least one relation".into()));
    }
    let triples = load_triples_tsv(&a.triples)?;
    let seeds = load_seeds(&a.seeds)?;
    let graph = KnowledgeGraph::build(&triples);
    let seed_ids = seeds
        .iter()
        .map(|q| graph.resolve_entity(q))
        .collect::<Result<BTreeSet<_>, _>>()?;
    let keep = graph.expand_entity_set(&seed_ids, &hierarchy)?;
    let sub = graph.induced_subgraph(&keep);
    let mut out = String::new();
    for t in sub.triples() {
        let (h, r, tl) = sub.triple_names(t);
        out.push_str(&format!("{h}\t{r}\t{tl}\n"));
    }
    write_file(&a.out, out.as_bytes())?;
    println!(
        "entities={} relations={} triples={}",
        sub.num_entities(),
        sub.num_relations(),
        sub.num_triples()
    );
    Ok(0)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn resolve_paths(base: &Path, d: &DataPaths) -> DataPaths {
    DataPaths {
        triples: resolve(base, &d.triples),
        catalog: resolve(base, &d.catalog),
        image_store: resolve(base, &d.image_store),
        text_store: resolve(base, &d.text_store),
        train: resolve(base, &d.train),
        test: d.test.as_ref().map(|t| resolve(base, t)),
    }
}

/// `target` expressed relative to directory `base`. Both must exist.
fn relative_to(target: &Path, base: &Path) -> CliResult<PathBuf> {
    let t = fs::canonicalize(target).map_err(|e| Error::io(target, e))?;
    let b = fs::canonicalize(base).map_err(|e| Error::io(base, e))?;
    let tc: Vec<Component> = t.components().collect();
    let bc: Vec<Component> = b.components().collect();
    let common = tc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    let mut rel = PathBuf::new();
    for _ in common..bc.len() {
        rel.push("..");
    }
    for c in &tc[common..] {
        rel.push(c);
    }
    Ok(rel)
}

fn relative_paths(d: &DataPaths, base: &Path) -> CliResult<DataPaths> {
    Ok(DataPaths {
        triples: relative_to(&d.triples, base)?,
        catalog: relative_to(&d.catalog, base)?,
        image_store: relative_to(&d.image_store, base)?,
        text_store: relative_to(&d.text_store, base)?,
        train: relative_to(&d.train, base)?,
        test: d.test.as_ref().map(|t| relative_to(t, base)).transpose()?,
    })
}

struct LoadedRun {
    config: TrainConfig,
    data: DataPaths,
    output_dir: PathBuf,
}

fn load_run_config(path: &Path) -> CliResult<LoadedRun> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: RunConfigFile =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    file.train.validate()?;
    let base = path.parent().unwrap_or(Path::new("."));
    let data = resolve_paths(base, &file.data);
    for p in [
        &data.triples,
        &data.catalog,
        &data.image_store,
        &data.text_store,
        &data.train,
    ]
    .into_iter()
    .chain(data.test.as_ref())
    {
        require_file(p)?;
    }
    Ok(LoadedRun {
        config: file.train,
        data,
        output_dir: resolve(base, &file.output_dir),
    })
}

fn load_stores(image: &Path, text: &Path) -> CliResult<Stores> {
    Ok(Stores {
        image: load_embedding_store(image)?,
        text: load_embedding_store(text)?,
    })
}

fn load_training_data(d: &DataPaths) -> CliResult<TrainingData> {
    let triples = load_triples_tsv(&d.triples)?;
    let catalog = load_catalog(&d.catalog)?;
    let stores = load_stores(&d.image_store, &d.text_store)?;
    let dataset = load_dataset(&d.train, true)?;
    Ok(TrainingData::new(&triples, catalog, stores, dataset)?)
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<i32> {
    let mut run = load_run_config(&a.config)?;
    if let Some(e) = a.epochs {
        run.config.epochs = e;
    }
    if let Some(b) = a.batch_size {
        run.config.batch_size = b;
    }
    if let Some(s) = a.seed {
        run.config.seed = s;
    }
    if let Some(o) = &a.out {
        run.output_dir = o.clone();
    }
    run.config.validate()?;
    let data = load_training_data(&run.data)?;

    let outcome = train(&run.config, &data, |line| {
        eprintln!(
            "epoch {:>4}  total {:.6}  alignment {:.6}  proxy {:.6}  ke {:.6}  lr {:.3e}",
            line.epoch, line.total, line.alignment, line.proxy, line.ke, line.lr
        );
    })?;

    fs::create_dir_all(&run.output_dir).map_err(|e| Error::io(&run.output_dir, e))?;
    let mut ckpt = outcome.checkpoint;
    ckpt.meta.data = Some(relative_paths(&run.data, &run.output_dir)?);
    let ckpt_path = run.output_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &ckpt_path)?;
    let mut log = String::new();
    for line in &outcome.log {
        log.push_str(&serde_json::to_string(line).expect("serializable log"));
        log.push('\n');
    }
    write_file(&run.output_dir.join(LOSS_LOG_FILE), log.as_bytes())?;
    println!("checkpoint {}", ckpt_path.display());
    Ok(0)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<i32> {
    if !(a.fd_step > 0.0 && a.fd_step.is_finite()) {
        return Err(CliError::Usage(format!("--fd-step must be > 0, got {}", a.fd_step)));
    }
    if a.records == 0 {
        return Err(CliError::Usage("--records must be >= 1".into()));
    }
    let run = load_run_config(&a.config)?;
    let data = load_training_data(&run.data)?;
    let n = a.records.min(data.dataset.len());
    if n == 0 {
        return Err(Error::InvalidArgument("training dataset is empty".into()).into());
    }
    let indices: Vec<usize> = (0..n).collect();
    let batch = build_batch(&data, &indices, &run.config, 0)?;
    let shape = crate::encoders::ModelShape {
        image_dim: data.stores.image.dim(),
        text_dim: data.stores.text.dim(),
        d_e: run.config.d_e,
        n_entities: data.entity_names().len(),
        n_relations: data.relation_names().len(),
        fusion: run.config.fusion,
        mlp_layers: run.config.mlp_layers,
        kge_method: run.config.kge_method,
    };
    let params = ModelParams::<f64>::init(&shape, run.config.seed)?;
    let report = grad_check_with(
        &params,
        &batch,
        &run.config.loss_config(),
        a.fd_step,
        a.corrupt_gradient,
    )?;
    let worst = report
        .worst
        .as_ref()
        .map(|(name, i)| format!(" worst={name}[{i}]"))
        .unwrap_or_default();
    println!(
        "max_rel_error={:.3e} checked={}{worst}",
        report.max_rel_error, report.checked
    );
    if report.max_rel_error <= GRADCHECK_TOLERANCE {
        Ok(0)
    } else {
        eprintln!(
            "gradient check failed: {:.3e} > {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        );
        Ok(1)
    }
}

struct Inference {
    ckpt: Checkpoint,
    catalog: Vec<EntityCatalogEntry>,
    stores: Stores,
}

fn load_for_inference(checkpoint: &Path, o: &DataOverrides) -> CliResult<Inference> {
    let ckpt = load_checkpoint(checkpoint)?;
    let base = checkpoint.parent().unwrap_or(Path::new("."));
    let recorded = ckpt.meta.data.as_ref().map(|d| resolve_paths(base, d));
    let pick = |over: &Option<PathBuf>, from: fn(&DataPaths) -> &PathBuf, flag: &str| -> CliResult<PathBuf> {
        over.clone()
            .or_else(|| recorded.as_ref().map(|d| from(d).clone()))
            .ok_or_else(|| CliError::Usage(format!("checkpoint records no data paths; pass --{flag}")))
    };
    let catalog_path = pick(&o.catalog, |d| &d.catalog, "catalog")?;
    let image_path = pick(&o.image_store, |d| &d.image_store, "image-store")?;
    let text_path = pick(&o.text_store, |d| &d.text_store, "text-store")?;
    let catalog = load_catalog(&catalog_path)?;
    let stores = load_stores(&image_path, &text_path)?;
    Ok(Inference { ckpt, catalog, stores })
}

fn threads() -> usize {
    std::env::var("KNOWCOL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    query_index: usize,
    topk: &'a [Hit],
}

fn predictions_jsonl(hits: &[Vec<Hit>]) -> String {
    let mut out = String::new();
    for (i, topk) in hits.iter().enumerate() {
        out.push_str(&serde_json::to_string(&PredictionLine { query_index: i, topk }).expect("serializable"));
        out.push('\n');
    }
    out
}

fn run_retrieval(inf: &Inference, queries: &[crate::dataio::DatasetRecord], k: usize) -> CliResult<Vec<Vec<Hit>>> {
    let p = &inf.ckpt.params;
    let index = build_candidate_index(&inf.catalog, &p.lp_img, &p.lp_txt, &inf.stores)?;
    Ok(predict(p, &index, &inf.stores, queries, k, threads())?)
}

pub fn cmd_infer(a: &InferArgs) -> CliResult<i32> {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be >= 1".into()));
    }
    let inf = load_for_inference(&a.checkpoint, &a.data)?;
    let queries = load_dataset(&a.queries, false)?;
    let hits = run_retrieval(&inf, &queries, a.k)?;
    let text = predictions_jsonl(&hits);
    match &a.out {
        Some(path) => write_file(path, text.as_bytes())?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(0)
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<i32> {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be >= 1".into()));
    }
    let inf = load_for_inference(&a.checkpoint, &a.data)?;
    let tests = load_dataset(&a.testset, true)?;
    let splits = tests
        .iter()
        .map(|r| {
            inf.catalog
                .iter()
                .find(|e| e.qid == r.label())
                .map(|e| e.split)
                .ok_or_else(|| Error::UnknownEntity(format!("{} (test label not in catalog)", r.label())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let hits = run_retrieval(&inf, &tests, a.k)?;
    let top1: Vec<&str> = hits.iter().map(|h| h.first().map_or("", |x| x.qid.as_str())).collect();
    let gold: Vec<&str> = tests.iter().map(|r| r.label()).collect();
    let report = evaluate(&top1, &gold, &splits)?;
    if let Some(path) = &a.predictions {
        write_file(path, predictions_jsonl(&hits).as_bytes())?;
    }
    println!("split     accuracy  correct/total");
    println!(
        "seen      {:>8.4}  {}/{}",
        report.acc_seen, report.correct_seen, report.n_seen
    );
    println!(
        "unseen    {:>8.4}  {}/{}",
        report.acc_unseen, report.correct_unseen, report.n_unseen
    );
    println!("HM        {:>8.4}", report.harmonic_mean);
    println!("{}", serde_json::to_string(&report).expect("serializable report"));
    Ok(0)
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<i32> {
    if a.entities < 4 || a.dim < 4 {
        return Err(CliError::Usage("--entities and --dim must be >= 4".into()));
    }
    let fixture = synth_fixture(a.entities, a.dim, a.seed)?;
    let files = write_fixture(&fixture, &a.out)?;
    println!("config {}", files.config.display());
    Ok(0)
}
