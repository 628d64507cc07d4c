//! `ptg`: the pipeline from raw images to an exported, human-annotated round.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ptg_annotate::http::{serve, AppState};
use ptg_annotate::AnnotationStore;
use ptg_core::captioner::{CaptionMap, CaptionSource, Captioner, CaptionerConfig, Endpoint, ImageDirCaptions};
use ptg_core::challenge_scoring::{read_pairs, score_all, write_pairs, ScoreOptions, ScoreTable};
use ptg_core::composer::ComposerBackend;
use ptg_core::embedding_store::{load_table, EmbeddingTable, TableFormat};
use ptg_core::evaluation::{aggregate_trials, read_queries, recall_at_k, RecallReport, TrialAggregate};
use ptg_core::mask_plan::{Fill, MaskConfig};
use ptg_core::pseudo_triplets::{build_pseudo_triplets, PseudoGenOptions};
use ptg_core::selection::{
    assign_pair_categories, group_by_category, kmeans_categorize, select, summarize, CategoryBasis,
    DistributionSummary, SelectionConfig, Strategy,
};
use serde::Serialize;
use tracing::{info, warn};

#[derive(Debug, Parser)]
#[command(name = "ptg", version, about = "Pseudo-triplet generation and challenge-driven few-shot selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mask every image in a directory and caption the originals.
    PseudoGen(PseudoGenArgs),
    /// Compute challenge scores for candidate pairs.
    Score(ScoreArgs),
    /// Assign k-means categories to uncategorized pairs.
    Categorize(CategorizeArgs),
    /// Print the distribution of a score table.
    Summarize(SummarizeArgs),
    /// Draw the K-shot annotation set from a score table.
    Select(SelectArgs),
    /// Recall@k of composed queries against a gallery, optionally over several trials.
    Evaluate(EvaluateArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FillArg {
    Black,
    MeanColor,
}

#[derive(Debug, Args)]
pub struct CaptionerArgs {
    /// `stub`, an http(s) caption service URL, or a JSONL file of `{"id","caption"}`.
    #[arg(long, default_value = "stub")]
    pub captioner: String,
    /// Caption cache (JSONL keyed by content hash).
    #[arg(long)]
    pub caption_cache: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub caption_timeout_secs: u64,
    #[arg(long, default_value_t = 2)]
    pub caption_retries: u32,
    #[arg(long, default_value_t = 4)]
    pub max_in_flight: usize,
}

impl CaptionerArgs {
    fn config(&self) -> CaptionerConfig {
        CaptionerConfig {
            endpoint: Endpoint::parse(&self.captioner),
            timeout: Duration::from_secs(self.caption_timeout_secs),
            retries: self.caption_retries,
            cache_path: self.caption_cache.clone(),
            max_in_flight: self.max_in_flight,
        }
    }
}

#[derive(Debug, Args)]
pub struct PseudoGenArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.75)]
    pub mask_ratio: f64,
    /// Patch grid as ROWSxCOLS.
    #[arg(long, default_value = "8x8")]
    pub grid: String,
    #[arg(long, value_enum, default_value = "black")]
    pub fill: FillArg,
    /// Side length images are resized to before masking.
    #[arg(long, default_value_t = 256)]
    pub resize: u32,
    #[arg(long, default_value_t = 1)]
    pub variants: u32,
    #[arg(long, default_value_t = 0.1)]
    pub max_failure_fraction: f64,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    #[command(flatten)]
    pub captioner: CaptionerArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendArg {
    Toy,
    Precomputed,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// JSONL of `{"pair_id","ref","tgt","category"?}`.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Image embedding table (`.ptge` binary or `.jsonl`).
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long, value_enum)]
    pub backend: BackendArg,
    /// Text embeddings keyed by text hash, for the toy backend.
    #[arg(long)]
    pub texts: Option<PathBuf>,
    /// Composite embeddings keyed by `ref|text hash`, for the precomputed backend.
    #[arg(long)]
    pub composites: Option<PathBuf>,
    /// Reference-image weight of the toy backend.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// JSONL of `{"id","caption"}` for target images.
    #[arg(long, conflicts_with = "image_dir")]
    pub captions: Option<PathBuf>,
    /// Directory holding the raw target images, captioned on demand.
    #[arg(long)]
    pub image_dir: Option<PathBuf>,
    #[command(flatten)]
    pub captioner: CaptionerArgs,
    /// Skip failing pairs instead of aborting.
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub sequential: bool,
    /// Recorded in the score metadata.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "scores.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BasisArg {
    Reference,
    Target,
}

#[derive(Debug, Args)]
pub struct CategorizeArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "reference")]
    pub basis: BasisArg,
    /// Rewritten pairs file with categories filled in.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the image → cluster assignment.
    #[arg(long)]
    pub assignment_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// top-range-random, random, easy-bottom or top-k.
    #[arg(long, default_value = "top-range-random")]
    pub strategy: String,
    #[arg(long, default_value_t = 0.0455)]
    pub pool_fraction: f64,
    #[arg(long, default_value_t = 0.25)]
    pub easy_fraction: f64,
    #[arg(long, default_value_t = 16)]
    pub shots: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pool over the whole table rather than per category.
    #[arg(long)]
    pub global: bool,
    #[arg(long, default_value = "round.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Query file for a single run.
    #[arg(long, required_unless_present = "trials_dir")]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub gallery: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10,50")]
    pub k: Vec<usize>,
    /// Directory of per-trial query files (`*.jsonl`), aggregated into mean ± stderr.
    #[arg(long)]
    pub trials_dir: Option<PathBuf>,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "events.jsonl")]
    pub log: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Directory served under `/media/`.
    #[arg(long)]
    pub media: Option<PathBuf>,
    /// Built UI bundle served under `/ui/`.
    #[arg(long)]
    pub ui: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PseudoGen(a) => pseudo_gen(&a),
        Command::Score(a) => score(&a),
        Command::Categorize(a) => categorize(&a),
        Command::Summarize(a) => summarize_cmd(&a),
        Command::Select(a) => select_cmd(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn parse_grid(grid: &str) -> Result<(u32, u32)> {
    let (r, c) = grid
        .split_once(['x', 'X'])
        .with_context(|| format!("grid must look like 8x8, got {grid:?}"))?;
    Ok((r.trim().parse()?, c.trim().parse()?))
}

fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    load_table(path, TableFormat::from_path(path)).with_context(|| format!("loading {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// `scores.jsonl` → `scores.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scores");
    path.with_file_name(format!("{stem}.meta.json"))
}

fn pseudo_gen(a: &PseudoGenArgs) -> Result<()> {
    let (grid_rows, grid_cols) = parse_grid(&a.grid)?;
    let options = PseudoGenOptions {
        mask: MaskConfig {
            grid_rows,
            grid_cols,
            mask_ratio: a.mask_ratio,
            fill: match a.fill {
                FillArg::Black => Fill::Black,
                FillArg::MeanColor => Fill::MeanColor,
            },
            resize_to: (a.resize, a.resize),
        },
        seed: a.seed,
        variants: a.variants,
        max_failure_fraction: a.max_failure_fraction,
        workers: a.workers,
    };
    let captioner = Captioner::new(a.captioner.config())?;
    let manifest = build_pseudo_triplets(&a.images, &a.out, &options, &captioner)?;
    for s in &manifest.skipped {
        warn!(image = %s.id, reason = %s.reason, "skipped");
    }
    println!(
        "wrote {} pseudo triplets to {} ({} skipped)",
        manifest.triplets.len(),
        a.out.join("manifest.jsonl").display(),
        manifest.skipped.len()
    );
    Ok(())
}

fn score(a: &ScoreArgs) -> Result<()> {
    let pairs = read_pairs(&a.pairs).with_context(|| format!("reading {}", a.pairs.display()))?;
    let images = load_embeddings(&a.images)?;
    let backend = match a.backend {
        BackendArg::Toy => {
            let texts = a.texts.as_deref().context("--backend toy needs --texts")?;
            ComposerBackend::toy(images.clone(), load_embeddings(texts)?, a.alpha)?
        }
        BackendArg::Precomputed => {
            let composites = a.composites.as_deref().context("--backend precomputed needs --composites")?;
            ComposerBackend::precomputed(load_embeddings(composites)?)
        }
    };
    let captioner = match (&a.captions, &a.image_dir) {
        (None, Some(_)) => Some(Captioner::new(a.captioner.config())?),
        _ => None,
    };
    let dir_captions;
    let file_captions;
    let captions: &dyn CaptionSource = match (&a.captions, &a.image_dir, &captioner) {
        (Some(path), _, _) => {
            file_captions = CaptionMap::from_file(path)?;
            &file_captions
        }
        (None, Some(root), Some(captioner)) => {
            dir_captions = ImageDirCaptions {
                captioner,
                root: root.clone(),
            };
            &dir_captions
        }
        _ => bail!("target captions need --captions or --image-dir"),
    };
    let outcome = score_all(
        &pairs,
        captions,
        &backend,
        &images,
        ScoreOptions {
            strict: !a.lenient,
            parallel: !a.sequential,
            seed: a.seed,
        },
    )?;
    for f in &outcome.failures {
        warn!(pair = %f.pair_id, reason = %f.reason, "pair skipped");
    }
    outcome.table.save(&a.out)?;
    write_json(&meta_path(&a.out), &outcome.table.provenance)?;
    println!(
        "scored {} of {} pairs into {}",
        outcome.table.len(),
        pairs.len(),
        a.out.display()
    );
    Ok(())
}

fn categorize(a: &CategorizeArgs) -> Result<()> {
    let pairs = read_pairs(&a.pairs)?;
    let images = load_embeddings(&a.images)?;
    let basis = match a.basis {
        BasisArg::Reference => CategoryBasis::ReferenceImage,
        BasisArg::Target => CategoryBasis::TargetImage,
    };
    // cluster only the images that decide a category
    let mut subset = EmbeddingTable::new(images.dim())?;
    for p in &pairs {
        let id = match basis {
            CategoryBasis::ReferenceImage => &p.ref_image_id,
            CategoryBasis::TargetImage => &p.target_image_id,
        };
        if !subset.contains(id) {
            subset.insert(id.clone(), images.require(id)?.clone())?;
        }
    }
    let assignment = kmeans_categorize(&subset, a.k, a.seed)?;
    let labelled = assign_pair_categories(&pairs, &assignment, basis)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    write_pairs(&labelled, &mut w)?;
    if let Some(path) = &a.assignment_out {
        write_json(path, &assignment)?;
    }
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &labelled {
        *sizes.entry(p.category.as_deref().unwrap_or_default()).or_default() += 1;
    }
    println!("{} pairs in {} categories: {sizes:?}", labelled.len(), sizes.len());
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SummaryReport {
    pub overall: DistributionSummary,
    /// Categories with at least two scores.
    pub categories: BTreeMap<String, DistributionSummary>,
}

pub fn summary_report(table: &ScoreTable) -> Result<SummaryReport> {
    let overall = summarize(&table.values())?;
    let mut categories = BTreeMap::new();
    for (name, rows) in group_by_category(table, true) {
        let values: Vec<f64> = rows.iter().map(|r| r.score).collect();
        if values.len() >= 2 {
            categories.insert(name, summarize(&values)?);
        }
    }
    Ok(SummaryReport { overall, categories })
}

fn summarize_cmd(a: &SummarizeArgs) -> Result<()> {
    let report = summary_report(&ScoreTable::load(&a.scores)?)?;
    match &a.out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    let o = &report.overall;
    info!(count = o.count, mean = o.mean, std = o.std, skewness = o.skewness, "score distribution");
    Ok(())
}

fn select_cmd(a: &SelectArgs) -> Result<()> {
    let table = ScoreTable::load(&a.scores)?;
    let config = SelectionConfig {
        strategy: a.strategy.parse::<Strategy>()?,
        pool_fraction: a.pool_fraction,
        easy_fraction: a.easy_fraction,
        shots_per_category: a.shots,
        seed: a.seed,
        per_category: !a.global,
    };
    let round = select(&table, &config)?;
    for w in &round.warnings {
        warn!("{w}");
    }
    round.save(&a.out)?;
    println!(
        "{}: {} pairs over {} categories written to {}",
        round.round_id,
        round.chosen_count(),
        round.categories.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct EvaluationReport {
    pub ks: Vec<usize>,
    /// Trial name → its report, in name order.
    pub trials: BTreeMap<String, RecallReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<TrialAggregate>,
}

fn trial_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
    files.sort();
    Ok(files)
}

pub fn evaluation_report(query_files: &[PathBuf], gallery: &EmbeddingTable, ks: &[usize]) -> Result<EvaluationReport> {
    ensure!(!query_files.is_empty(), "no query files to evaluate");
    let mut trials = BTreeMap::new();
    for path in query_files {
        let queries = read_queries(path).with_context(|| format!("reading {}", path.display()))?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        trials.insert(name, recall_at_k(&queries, gallery, ks)?);
    }
    let reports: Vec<RecallReport> = trials.values().cloned().collect();
    let aggregate = (reports.len() >= 2).then(|| aggregate_trials(&reports)).transpose()?;
    Ok(EvaluationReport {
        ks: ks.to_vec(),
        trials,
        aggregate,
    })
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let gallery = load_embeddings(&a.gallery)?;
    let mut files = Vec::new();
    if let Some(q) = &a.queries {
        files.push(q.clone());
    }
    if let Some(dir) = &a.trials_dir {
        files.extend(trial_files(dir)?);
    }
    let report = evaluation_report(&files, &gallery, &a.k)?;
    write_json(&a.out, &report)?;
    match &report.aggregate {
        Some(agg) => {
            for &k in &agg.ks {
                let s = agg.get(ptg_core::evaluation::OVERALL, k).expect("overall scope");
                println!("R@{k}: {:.4} ± {:.4} over {} trials", s.mean, s.standard_error, agg.trial_count);
            }
        }
        None => {
            let only = report.trials.values().next().expect("one trial");
            for (k, r) in &only.overall {
                println!("R@{k}: {r:.4}");
            }
        }
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let store = Arc::new(AnnotationStore::open(&a.log)?);
    let state = AppState {
        store,
        media_root: a.media,
        ui_root: a.ui,
    };
    tokio::runtime::Runtime::new()?.block_on(serve(a.addr, state))?;
    Ok(())
}
