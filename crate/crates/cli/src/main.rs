//! `avs`: train, search, evaluate, rerank and fuse over precomputed features.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use avs_core::eval::{
    evaluate_run, format_run, late_fuse, read_qrels, read_run, search, FuseOptions, RankedRun,
};
use avs_core::io::tsv::{format_negations, read_texts};
use avs_core::io::{
    bundles_from_files, load_checkpoint, save_checkpoint, synth_dataset, Config, Dataset, FeatureFile, SynthConfig,
    SynthSpace,
};
use avs_core::negation::{detect_negation, negate_caption_with, DEFAULT_CUE};
use avs_core::pseudocap::{format_selections, read_candidates, select_pseudo_captions, DEFAULT_TOP_K};
use avs_core::rerank::{group_frames, rerank, FrameFeatures, RerankWeights, DEFAULT_DEPTH};
use avs_core::train::fit_with;
use avs_core::{feature_importance, Caption, Error, FeatureBundle, LaffModel, Modality};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Worker threads for parallel sections; defaults to available parallelism.
const WORKERS_ENV: &str = "AVS_WORKERS";

#[derive(Parser)]
#[command(name = "avs", version, about = "Ad-hoc video search over precomputed features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a manifest, selecting the best epoch on a validation manifest.
    Train(TrainArgs),
    /// Score a TREC run against qrels; prints mAP and infAP.
    Eval(EvalArgs),
    /// Rank videos for query feature bundles and write a TREC run.
    Search(SearchArgs),
    /// Re-score the top of a run with frame-level query similarity.
    Rerank(RerankArgs),
    /// Insert a negation cue into each caption of a caption file.
    Negate(NegateArgs),
    /// Select the top-k distinct frame captions per video.
    Pseudocap(PseudocapArgs),
    /// Weighted late fusion of runs.
    Fuse(FuseArgs),
    /// Generate a synthetic train/val dataset.
    Synth(SynthArgs),
    /// Print mean attention weight per feature space.
    FeatRank(FeatRankArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Checkpoint to write (the best validation epoch).
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Also write the `epoch<TAB>loss<TAB>val_score` log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Also print per-query AP and infAP.
    #[arg(long)]
    per_query: bool,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Take videos and caption queries from a dataset manifest.
    #[arg(long, conflicts_with_all = ["videos", "queries"], required_unless_present = "videos")]
    manifest: Option<PathBuf>,
    /// Video feature files, one per space.
    #[arg(long, num_args = 1.., requires = "queries")]
    videos: Vec<PathBuf>,
    /// Query feature files, one per text space.
    #[arg(long, num_args = 1..)]
    queries: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DEPTH)]
    top_k: usize,
    #[arg(long, default_value = "laff")]
    tag: String,
    /// Output run; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long)]
    run: PathBuf,
    /// Frame features with ids `video#frame_index`.
    #[arg(long)]
    frames: PathBuf,
    /// Query vectors in the frame space, keyed by query id.
    #[arg(long)]
    query_vectors: PathBuf,
    /// `query_id<TAB>text`; queries with a negation cue use the alternate space.
    #[arg(long, requires_all = ["neg_frames", "neg_query_vectors"])]
    query_text: Option<PathBuf>,
    /// Frame features of the space used for negated queries.
    #[arg(long, requires = "query_text")]
    neg_frames: Option<PathBuf>,
    #[arg(long, requires = "query_text")]
    neg_query_vectors: Option<PathBuf>,
    #[arg(long, default_value_t = 0.6)]
    w_new: f64,
    #[arg(long, default_value_t = 0.4)]
    w_old: f64,
    /// Use raw original scores instead of per-query min-max normalized ones.
    #[arg(long)]
    no_normalize: bool,
    /// Items reranked per query; the rest of the list is dropped.
    #[arg(long, default_value_t = DEFAULT_DEPTH)]
    depth: usize,
    #[arg(long, default_value = "rerank")]
    tag: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NegateArgs {
    /// `caption_id<TAB>text` lines.
    #[arg(long)]
    captions: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = DEFAULT_CUE)]
    cue: String,
    /// `id<TAB>original<TAB>negated` lines; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PseudocapArgs {
    /// `video_id<TAB>frame_index<TAB>caption` lines.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
    /// Precomputed `video_id<TAB>frame_index<TAB>score` lines.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    scores: Option<PathBuf>,
    /// Score captions with a trained model instead.
    #[arg(long, requires_all = ["videos", "caption_features"])]
    checkpoint: Option<PathBuf>,
    /// Video feature files, one per space.
    #[arg(long, num_args = 1..)]
    videos: Vec<PathBuf>,
    /// Caption feature files with ids `video#frame_index`.
    #[arg(long, num_args = 1..)]
    caption_features: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    /// Runs to fuse, in order.
    #[arg(long = "run", required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// One weight per run; all ones when absent.
    #[arg(long = "weight", num_args = 1..)]
    weights: Vec<f64>,
    #[arg(long)]
    no_normalize: bool,
    #[arg(long, default_value = "fused")]
    tag: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory receiving `train/` and `val/`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    videos: usize,
    #[arg(long, default_value_t = 1)]
    captions_per_video: usize,
    #[arg(long, default_value_t = 8)]
    latent_dim: usize,
    /// `name:dim:noise`, repeatable.
    #[arg(long = "video-space")]
    video_spaces: Vec<SynthSpace>,
    /// `name:dim:noise`, repeatable.
    #[arg(long = "text-space")]
    text_spaces: Vec<SynthSpace>,
    #[arg(long, default_value_t = 0.0)]
    negate_fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    negation_strength: f64,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Branch {
    Video,
    Text,
}

#[derive(Args)]
struct FeatRankArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    manifest: Option<PathBuf>,
    /// Feature files of one modality, one per space.
    #[arg(long, num_args = 1..)]
    features: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "video")]
    branch: Branch,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn read_bundles(files: &[PathBuf]) -> Result<Vec<FeatureBundle>> {
    let files = files
        .iter()
        .map(|p| FeatureFile::read(p))
        .collect::<avs_core::Result<Vec<_>>>()?;
    Ok(bundles_from_files(&files)?)
}

fn space_names(model: &LaffModel, m: Modality) -> Vec<String> {
    model.spaces(m).iter().map(|s| s.name.clone()).collect()
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let tc = cfg.train_config();
    let train = Dataset::load(&a.train)?.select_spaces(&cfg.features.video, &cfg.features.text)?;
    let val = Dataset::load(&a.val)?.select_spaces(&cfg.features.video, &cfg.features.text)?;
    let model = match &a.init {
        Some(p) => load_checkpoint(p)?,
        None => LaffModel::new(
            &train.video_spaces(),
            &train.text_spaces(),
            cfg.model.d,
            cfg.model.heads,
            cfg.model.seed,
        )?,
    };
    let triplets = train.triplets()?;
    let validation = val.validation_set()?;
    let (best, report) = fit_with(model, &triplets, &validation, &tc, |r| {
        println!("{}\t{:.6}\t{:.6}", r.epoch, r.train_loss, r.validation_score);
    })?;
    save_checkpoint(&best, &a.out)?;
    if let Some(log) = &a.log {
        let mut text: String = report.log_lines().collect::<Vec<_>>().join("\n");
        text.push('\n');
        std::fs::write(log, text).with_context(|| format!("writing {}", log.display()))?;
    }
    eprintln!(
        "best epoch {} ({} {:.4}); saved {}",
        report.best_epoch,
        tc.validation_metric,
        report.best_score,
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let run = read_run(&a.run)?;
    let qrels = read_qrels(&a.qrels)?;
    let s = evaluate_run(&run, &qrels)?;
    if a.per_query {
        for q in &s.per_query {
            println!("{}\t{:.4}\t{:.4}", q.query_id, q.ap, q.inf_ap);
        }
    }
    println!("mAP\t{:.4}", s.map);
    println!("infAP\t{:.4}", s.mean_inf_ap);
    if !s.skipped.is_empty() {
        eprintln!("{} run queries without relevant judgments were skipped", s.skipped.len());
    }
    Ok(())
}

fn search_cmd(a: SearchArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let (videos, queries) = match &a.manifest {
        Some(m) => {
            let ds = Dataset::load(m)?
                .select_spaces(&space_names(&model, Modality::Video), &space_names(&model, Modality::Text))?;
            let queries = ds.validation_set()?.queries;
            (ds.video_bundles(), queries)
        }
        None => (read_bundles(&a.videos)?, read_bundles(&a.queries)?),
    };
    let run = search(&model, &queries, &videos, a.top_k, &a.tag)?;
    emit(a.out.as_deref(), &format_run(&run))
}

fn frame_store(path: &Path) -> Result<HashMap<String, FrameFeatures>> {
    let f = FeatureFile::read(path)?;
    Ok(group_frames(f.iter())?.into_iter().collect())
}

fn rerank_cmd(a: RerankArgs) -> Result<()> {
    if a.depth == 0 {
        bail!("--depth must be ≥ 1");
    }
    let run = read_run(&a.run)?;
    let frames = frame_store(&a.frames)?;
    let queries = FeatureFile::read(&a.query_vectors)?;
    let negated = match (&a.query_text, &a.neg_frames, &a.neg_query_vectors) {
        (Some(t), Some(f), Some(q)) => {
            let texts: HashMap<String, String> = read_texts(t)?.into_iter().collect();
            Some((texts, frame_store(f)?, FeatureFile::read(q)?))
        }
        _ => None,
    };
    let weights = RerankWeights {
        new: a.w_new,
        old: a.w_old,
        normalize: !a.no_normalize,
    };
    let mut out = RankedRun::new(a.tag);
    let mut routed = 0;
    for (qid, entries) in run.iter() {
        let use_negated = negated.as_ref().is_some_and(|(texts, _, _)| {
            texts
                .get(qid)
                .is_some_and(|t| detect_negation(&Caption::from_text(qid, t)).has_negation)
        });
        let (store, vectors) = match &negated {
            Some((_, f, q)) if use_negated => {
                routed += 1;
                (f, q)
            }
            _ => (&frames, &queries),
        };
        let query = vectors
            .get(qid)
            .with_context(|| format!("no query vector for `{qid}` in {}", vectors.space))?;
        let top = &entries[..entries.len().min(a.depth)];
        out.insert(qid, rerank(top, store, query, &weights)?)?;
    }
    if negated.is_some() {
        eprintln!("{routed} of {} queries routed to the negation space", run.len());
    }
    emit(a.out.as_deref(), &format_run(&out))
}

fn negate(a: NegateArgs) -> Result<()> {
    let rows = read_texts(&a.captions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut out = Vec::new();
    let (mut skipped_neg, mut skipped_none) = (0, 0);
    for (id, text) in &rows {
        let c = Caption::from_text(id, text);
        match negate_caption_with(&c, &a.cue, &mut rng) {
            Ok(n) => out.push((id.as_str(), text.as_str(), n.caption.text())),
            Err(Error::AlreadyNegated(_)) => skipped_neg += 1,
            Err(Error::NotNegatable(_)) => skipped_none += 1,
            Err(e) => return Err(e.into()),
        }
    }
    emit(
        a.out.as_deref(),
        &format_negations(out.iter().map(|(i, o, n)| (*i, *o, n.as_str()))),
    )?;
    eprintln!(
        "negated {} of {} captions ({skipped_neg} already negated, {skipped_none} without auxiliary or verb)",
        out.len(),
        rows.len()
    );
    Ok(())
}

fn read_scores(path: &Path) -> Result<HashMap<(String, u32), f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        let parsed = match f.as_slice() {
            [v, frame, score] => frame.parse::<u32>().ok().zip(score.parse::<f64>().ok()).map(|(fr, s)| (v, fr, s)),
            _ => None,
        };
        let Some((v, frame, score)) = parsed else {
            bail!("{}:{}: expected `video_id<TAB>frame_index<TAB>score`", path.display(), i + 1);
        };
        out.insert((v.to_string(), frame), score);
    }
    Ok(out)
}

fn pseudocap(a: PseudocapArgs) -> Result<()> {
    let sets = read_candidates(&a.candidates)?;
    let mut selections = Vec::with_capacity(sets.len());
    if let Some(p) = &a.scores {
        let scores = read_scores(p)?;
        for set in &sets {
            let sel = select_pseudo_captions(
                set,
                |c| {
                    scores.get(&(set.video_id.clone(), c.frame_index)).copied().ok_or_else(|| {
                        Error::Config(format!("no score for {}#{}", set.video_id, c.frame_index))
                    })
                },
                a.k,
            )?;
            selections.push((set.video_id.clone(), sel));
        }
    } else {
        let model = load_checkpoint(a.checkpoint.as_deref().expect("required by clap"))?;
        let videos: HashMap<String, FeatureBundle> =
            read_bundles(&a.videos)?.into_iter().map(|b| (b.item_id.clone(), b)).collect();
        let captions: HashMap<String, FeatureBundle> = read_bundles(&a.caption_features)?
            .into_iter()
            .map(|b| (b.item_id.clone(), b))
            .collect();
        for set in &sets {
            let video = videos
                .get(&set.video_id)
                .with_context(|| format!("no features for video `{}`", set.video_id))?;
            let embedded = model.embed_video(video)?;
            let sel = select_pseudo_captions(
                set,
                |c| {
                    let id = format!("{}#{}", set.video_id, c.frame_index);
                    let text = captions
                        .get(&id)
                        .ok_or_else(|| Error::Config(format!("no caption features for `{id}`")))?;
                    embedded.similarity(&model.embed_text(text)?)
                },
                a.k,
            )?;
            selections.push((set.video_id.clone(), sel));
        }
    }
    emit(a.out.as_deref(), &format_selections(&selections))
}

fn fuse(a: FuseArgs) -> Result<()> {
    let runs = a.runs.iter().map(|p| read_run(p)).collect::<avs_core::Result<Vec<_>>>()?;
    let weights = if a.weights.is_empty() {
        vec![1.0; runs.len()]
    } else {
        a.weights
    };
    let opts = FuseOptions {
        normalize: !a.no_normalize,
        tag: a.tag,
    };
    emit(a.out.as_deref(), &format_run(&late_fuse(&runs, &weights, &opts)?))
}

fn synth(a: SynthArgs) -> Result<()> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        seed: a.seed,
        n_videos: a.videos,
        captions_per_video: a.captions_per_video,
        latent_dim: a.latent_dim,
        video_spaces: if a.video_spaces.is_empty() { d.video_spaces } else { a.video_spaces },
        text_spaces: if a.text_spaces.is_empty() { d.text_spaces } else { a.text_spaces },
        negate_fraction: a.negate_fraction,
        negation_strength: a.negation_strength,
        val_fraction: a.val_fraction,
    };
    let (data, train, val) = synth_dataset(&cfg, &a.out)?;
    println!("train\t{}", train.display());
    println!("val\t{}", val.display());
    println!("oracle_mAP\t{:.4}", data.nearest_latent_oracle()?);
    Ok(())
}

fn feat_rank(a: FeatRankArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let modality = match a.branch {
        Branch::Video => Modality::Video,
        Branch::Text => Modality::Text,
    };
    let bundles = match &a.manifest {
        Some(m) => {
            let ds = Dataset::load(m)?
                .select_spaces(&space_names(&model, Modality::Video), &space_names(&model, Modality::Text))?;
            match modality {
                Modality::Video => ds.video_bundles(),
                Modality::Text => ds.texts.into_values().collect(),
            }
        }
        None => read_bundles(&a.features)?,
    };
    for (space, w) in feature_importance(&model, &bundles, modality)? {
        println!("{space}\t{w:.6}");
    }
    Ok(())
}

fn configure_workers() -> Result<()> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .with_context(|| format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_workers()?;
    match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Search(a) => search_cmd(a),
        Command::Rerank(a) => rerank_cmd(a),
        Command::Negate(a) => negate(a),
        Command::Pseudocap(a) => pseudocap(a),
        Command::Fuse(a) => fuse(a),
        Command::Synth(a) => synth(a),
        Command::FeatRank(a) => feat_rank(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if msg.ends_with(&cause) {
                    continue;
                }
                if !msg.is_empty() {
                    msg.push_str(": ");
                }
                msg.push_str(&cause);
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
