mod output;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use signmix_core::clip::{apply_temporal_augment_traced, sample_clip, AugmentConfig, ClipSpec};
use signmix_core::cotrain::{
    accuracy, export_embeddings, init_model, predict, train, write_metrics, Checkpoint,
    DatasetSplit, EncoderMode, TrainConfig,
};
use signmix_core::dataset::{load_manifest, save_manifest};
use signmix_core::eval::{
    apply_label_map, build_label_map, grouped_accuracy_breakdown, kshot_truncate, top1_accuracy,
    LabelMap, PredictionRow, PredictionSet,
};
use signmix_core::experiment::{run_experiment, Corpus, ExperimentConfig};
use signmix_core::features::FeatureStore;
use signmix_core::grouping::{
    aggregate_votes, candidate_pairs_from_templates, load_candidates, load_votes, merge_matched,
    refinement_candidates, write_candidates, GroupingState, PairKey, ScoreTable, DEFAULT_MAJORITY,
    DEFAULT_QUORUM, DEFAULT_TOP_K,
};
use signmix_core::review::{template_uri, ReviewBook};
use signmix_core::schedule::{dump, frozen_plan, rescale_plan, TrainPlan};
use signmix_core::split::{optimize_split, verify_split, SplitConfig};
use signmix_core::synth::{gen_synthetic, SyntheticSpec};
use signmix_core::{DatasetManifest, LabelSpace, SampleId, Subset};

use output::Emitter;

#[derive(Parser)]
#[command(
    name = "signmix",
    version,
    about = "Sign-language dataset curation and co-training toolkit"
)]
struct Cli {
    /// Seed for every random choice; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Command-specific TOML config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Primary output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON lines instead of key=value records.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Signer-disjoint train/test split balanced per gloss.
    Split(SplitArgs),
    /// Grouping of visually similar signs.
    #[command(subcommand)]
    Group(GroupCmd),
    /// HTTP service for expert verdicts on candidate pairs.
    ReviewServe(ReviewArgs),
    /// Clip frame indices and boundary targets for manifest samples.
    Sample(SampleArgs),
    /// Train, evaluate or embed with the co-training engine.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Metrics over prediction files.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Synthetic multilingual corpus.
    Synth(SynthArgs),
    /// Named comparison scenario.
    Experiment(ExperimentArgs),
    /// Learning-rate schedules.
    #[command(subcommand)]
    Schedule(ScheduleCmd),
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    p: f64,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    /// Deviation above which a gloss is listed in the report.
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    /// Full audit report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Audit an already split manifest instead of splitting.
    #[arg(long)]
    verify: bool,
}

#[derive(Subcommand)]
enum GroupCmd {
    /// Top-k similar glosses per template row.
    Candidates {
        #[arg(long)]
        templates: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        k: usize,
    },
    /// Majority outcome per voted pair.
    Aggregate {
        #[arg(long)]
        votes: PathBuf,
        #[arg(long, default_value_t = DEFAULT_QUORUM)]
        quorum: usize,
        #[arg(long, default_value_t = DEFAULT_MAJORITY)]
        majority: usize,
    },
    /// Merges matched pairs into the manifest grouping.
    Merge {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        votes: PathBuf,
        #[arg(long, default_value_t = DEFAULT_QUORUM)]
        quorum: usize,
        #[arg(long, default_value_t = DEFAULT_MAJORITY)]
        majority: usize,
    },
    /// Most confused pairs of distinct groups.
    Refine {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        confusion: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_m: usize,
    },
}

#[derive(Args)]
struct ReviewArgs {
    #[arg(long)]
    candidates: PathBuf,
    /// Append-only vote log; replayed on start.
    #[arg(long)]
    votes: PathBuf,
    /// Registered expert ids, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    experts: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_QUORUM)]
    quorum: usize,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Only this sample.
    #[arg(long)]
    sample_id: Option<String>,
    /// Apply temporal augmentation to each chain.
    #[arg(long)]
    augment: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Split manifests, one per language.
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum, default_value_t = Space::Gloss)]
    space: Space,
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Trains and writes a checkpoint to --out.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Initial checkpoint for pretrained or frozen modes.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Per-epoch metrics as JSON lines.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Test-set accuracy per language; predictions go to --out.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Encoder embeddings of every train and test sample as JSON lines.
    Embed {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Gloss,
    Group,
}

impl From<Space> for LabelSpace {
    fn from(s: Space) -> Self {
        match s {
            Space::Gloss => LabelSpace::Gloss,
            Space::Group => LabelSpace::Group,
        }
    }
}

#[derive(Subcommand)]
enum EvalCmd {
    Top1 {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Whole / single-member / multi-member group accuracy.
    Breakdown {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = Space::Gloss)]
        space: Space,
    },
    /// Source class -> most frequent target label; map JSON goes to --out.
    MapBuild {
        /// Source-model predictions on target samples with target truth.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        source_classes: usize,
        /// Manifest whose gloss ids name the target classes.
        #[arg(long)]
        target_manifest: PathBuf,
    },
    /// Rewrites source predictions through a label map.
    MapApply {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Keeps at most k train samples per gloss.
    Kshot {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        k: usize,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    languages: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    confusable_pairs: Option<usize>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Overrides the scenario named in the config.
    #[arg(long)]
    scenario: Option<String>,
    /// Human-readable table instead of records.
    #[arg(long)]
    table: bool,
}

#[derive(Subcommand)]
enum ScheduleCmd {
    /// Learning rate at every step.
    Dump {
        #[arg(long)]
        steps_per_epoch: Option<usize>,
        /// Rescale to a dataset this many times the size.
        #[arg(long)]
        rescale: Option<f64>,
        /// Derive the frozen-encoder schedule.
        #[arg(long)]
        frozen: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn records(cli: &Cli) -> Result<Emitter> {
    match &cli.out {
        Some(p) => Emitter::file(cli.json, p),
        None => Ok(Emitter::stdout(cli.json)),
    }
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| anyhow!("--out is required"))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn load_predictions(path: &Path) -> Result<PredictionSet> {
    let rows: Vec<PredictionRow> = read_jsonl(path)?;
    ensure!(!rows.is_empty(), "{} holds no predictions", path.display());
    Ok(PredictionSet::new(rows)?)
}

fn load_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(T::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Split(a) => cmd_split(&cli, a),
        Command::Group(g) => cmd_group(&cli, g),
        Command::ReviewServe(a) => cmd_review(a),
        Command::Sample(a) => cmd_sample(&cli, a),
        Command::Train(t) => cmd_train(&cli, t),
        Command::Eval(e) => cmd_eval(&cli, e),
        Command::Synth(a) => cmd_synth(&cli, a),
        Command::Experiment(a) => cmd_experiment(&cli, a),
        Command::Schedule(s) => cmd_schedule(&cli, s),
    }
}

fn cmd_split(cli: &Cli, a: &SplitArgs) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    ensure!(
        !m.samples().is_empty(),
        "{} has no samples",
        a.manifest.display()
    );
    let mut em = Emitter::stdout(cli.json);
    let (split, extra) = if a.verify {
        (m, None)
    } else {
        let cfg = SplitConfig {
            p: a.p,
            seed: cli.seed.unwrap_or(0),
            restarts: a.restarts,
            ..SplitConfig::default()
        };
        let (state, split) = optimize_split(&m, &cfg)?;
        save_manifest(&split, require_out(cli)?)?;
        (split, Some(state))
    };
    let report = verify_split(&split, a.p, a.threshold)?;
    if let Some(path) = &a.report {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    em.emit(&json!({
        "signers_test": report.signers_test,
        "signers_total": report.signers_total,
        "signer_test_fraction": report.signer_test_fraction,
        "sample_test_fraction": report.sample_test_fraction,
        "worst_dev": report.worst_dev,
        "worst_gloss": report.worst_gloss,
        "exceeding": report.exceeding.len(),
        "restart": extra.as_ref().map(|s| s.restart),
        "rounds": extra.as_ref().map(|s| s.rounds),
        "converged": extra.as_ref().map(|s| s.converged),
    }))?;
    em.finish()
}

fn matched_pairs(votes: &Path, quorum: usize, majority: usize) -> Result<Vec<PairKey>> {
    let outcomes = aggregate_votes(&load_votes(votes)?, quorum, majority)?;
    Ok(outcomes
        .into_iter()
        .filter(|o| o.matched())
        .map(|o| o.key())
        .collect())
}

fn cmd_group(cli: &Cli, g: &GroupCmd) -> Result<()> {
    match g {
        GroupCmd::Candidates { templates, k } => {
            let t = ScoreTable::load(templates, true)?;
            ensure!(!t.labels().is_empty(), "{} is empty", templates.display());
            let pairs = candidate_pairs_from_templates(&t, *k)?;
            let mut em = records(cli)?;
            for p in &pairs {
                em.emit(p)?;
            }
            em.finish()
        }
        GroupCmd::Aggregate {
            votes,
            quorum,
            majority,
        } => {
            let v = load_votes(votes)?;
            ensure!(!v.is_empty(), "{} holds no votes", votes.display());
            let mut em = records(cli)?;
            for o in aggregate_votes(&v, *quorum, *majority)? {
                em.emit(&o)?;
            }
            em.finish()
        }
        GroupCmd::Merge {
            manifest,
            votes,
            quorum,
            majority,
        } => {
            let m = load_manifest(manifest)?;
            let matched = matched_pairs(votes, *quorum, *majority)?;
            let gs = merge_matched(GroupingState::from_manifest(&m), &matched)?;
            let merged = gs.apply_to(&m)?;
            save_manifest(&merged, require_out(cli)?)?;
            let multi = merged
                .groups()
                .iter()
                .filter(|g| g.members.len() > 1)
                .count();
            let mut em = Emitter::stdout(cli.json);
            em.emit(&json!({
                "glosses": merged.glosses().len(),
                "groups": merged.groups().len(),
                "multi_member_groups": multi,
                "matched_pairs": matched.len(),
            }))?;
            em.finish()
        }
        GroupCmd::Refine {
            manifest,
            confusion,
            top_m,
        } => {
            let m = load_manifest(manifest)?;
            let conf = ScoreTable::load(confusion, false)?;
            let gs = GroupingState::from_manifest(&m);
            let pairs = refinement_candidates(&conf, &gs, *top_m);
            match &cli.out {
                Some(p) => {
                    let mut w = BufWriter::new(File::create(p)?);
                    write_candidates(&mut w, &pairs)?;
                    w.flush()?;
                    let mut em = Emitter::stdout(cli.json);
                    em.emit(&json!({ "candidates": pairs.len() }))?;
                    em.finish()
                }
                None => {
                    let mut em = Emitter::stdout(cli.json);
                    for p in &pairs {
                        em.emit(p)?;
                    }
                    em.finish()
                }
            }
        }
    }
}

fn cmd_review(a: &ReviewArgs) -> Result<()> {
    let candidates = load_candidates(&a.candidates)?;
    ensure!(
        !candidates.is_empty(),
        "{} holds no candidates",
        a.candidates.display()
    );
    let book = ReviewBook::open(
        &a.votes,
        candidates,
        template_uri,
        a.experts.clone(),
        a.quorum,
    )?;
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("serving {} tasks on {}", book.tasks().len(), a.addr);
    rt.block_on(signmix_review::serve(a.addr, book))?;
    Ok(())
}

fn cmd_sample(cli: &Cli, a: &SampleArgs) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    let samples: Vec<_> = match &a.sample_id {
        Some(id) => vec![m
            .sample(&SampleId::new(id.as_str()))
            .ok_or_else(|| anyhow!("no sample `{id}`"))?
            .clone()],
        None => m.samples().to_vec(),
    };
    ensure!(
        !samples.is_empty(),
        "{} has no samples",
        a.manifest.display()
    );
    let spec = ClipSpec::default();
    let aug: AugmentConfig = load_toml(cli.config.as_deref())?;
    aug.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(aug.seed));
    let mut em = records(cli)?;
    for rec in &samples {
        let clip = sample_clip(rec, &spec, &mut rng)?;
        let (indices, trace) = if a.augment {
            let (i, t) = apply_temporal_augment_traced(&clip.frame_indices, &aug, &mut rng);
            (i, Some(t))
        } else {
            (clip.frame_indices.clone(), None)
        };
        em.emit(&json!({
            "sample_id": rec.sample_id,
            "clip_start": clip.clip_start,
            "clip_end": clip.clip_end,
            "target_start": clip.boundary_targets.0,
            "target_end": clip.boundary_targets.1,
            "frame_indices": indices,
            "augment": trace,
        }))?;
    }
    em.finish()
}

fn load_data(data: &DataArgs) -> Result<(Vec<DatasetManifest>, Vec<DatasetSplit>)> {
    let manifests = data
        .manifests
        .iter()
        .map(load_manifest)
        .collect::<signmix_core::Result<Vec<_>>>()?;
    let corpus = Corpus {
        manifests,
        features: FeatureStore::load(&data.features)?,
    };
    let splits = corpus
        .manifests
        .iter()
        .map(|m| {
            let unassigned = m.count_subset(Subset::Unassigned);
            ensure!(
                unassigned == 0,
                "`{}` has {unassigned} unassigned samples; run split first",
                m.language()
            );
            Ok(corpus.dataset(m, data.space.into())?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((corpus.manifests, splits))
}

fn train_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn trained_model(
    cli: &Cli,
    splits: &[DatasetSplit],
    checkpoint: &Path,
) -> Result<signmix_core::cotrain::CoTrainModel<signmix_core::cotrain::MlpEncoder>> {
    let mut cfg = train_config(cli)?;
    cfg.encoder_mode = EncoderMode::Pretrained;
    let ck = Checkpoint::load(checkpoint)?;
    Ok(init_model(&cfg, splits, Some(&ck))?)
}

fn cmd_train(cli: &Cli, t: &TrainCmd) -> Result<()> {
    match t {
        TrainCmd::Fit {
            data,
            init,
            metrics,
        } => {
            let cfg = train_config(cli)?;
            let (_, splits) = load_data(data)?;
            let n: usize = splits.iter().map(|s| s.train.len()).sum();
            ensure!(n > 0, "no train samples");
            let ck = init.as_ref().map(Checkpoint::load).transpose()?;
            let model = init_model(&cfg, &splits, ck.as_ref())?;
            let outcome = train(&cfg, &splits, model)?;
            let out = require_out(cli)?;
            Checkpoint::from_model(&outcome.model, outcome.config_hash.clone()).save(out)?;
            if let Some(p) = metrics {
                let mut w = BufWriter::new(File::create(p)?);
                write_metrics(&outcome.metrics, &mut w)?;
                w.flush()?;
            }
            let mut em = Emitter::stdout(cli.json);
            for m in &outcome.metrics {
                em.emit(m)?;
            }
            em.emit(&json!({
                "steps": outcome.steps,
                "config_hash": outcome.config_hash,
                "checkpoint": out.display().to_string(),
            }))?;
            em.finish()
        }
        TrainCmd::Evaluate { data, checkpoint } => {
            let (_, splits) = load_data(data)?;
            let model = trained_model(cli, &splits, checkpoint)?;
            let mut rows = Vec::new();
            let mut em = Emitter::stdout(cli.json);
            for s in &splits {
                ensure!(!s.test.is_empty(), "`{}` has no test samples", s.language);
                let preds = predict(&model, &s.language, &s.test)?;
                for (e, p) in s.test.iter().zip(preds) {
                    rows.push(PredictionRow {
                        sample_id: e.sample_id.clone(),
                        predicted: Some(p),
                        truth: e.class,
                        language: s.language.clone(),
                    });
                }
                em.emit(&json!({
                    "language": s.language,
                    "test_samples": s.test.len(),
                    "accuracy": accuracy(&model, &s.language, &s.test)?,
                }))?;
            }
            if let Some(out) = &cli.out {
                write_jsonl(out, &rows)?;
            }
            em.finish()
        }
        TrainCmd::Embed { data, checkpoint } => {
            let (_, splits) = load_data(data)?;
            let model = trained_model(cli, &splits, checkpoint)?;
            let mut em = records(cli)?;
            for s in &splits {
                for (subset, examples) in [("train", &s.train), ("test", &s.test)] {
                    let emb = export_embeddings(&model.encoder, examples);
                    for (e, row) in examples.iter().zip(emb.rows()) {
                        em.emit(&json!({
                            "sample_id": e.sample_id,
                            "language": s.language,
                            "subset": subset,
                            "class": e.class,
                            "embedding": row.to_vec(),
                        }))?;
                    }
                }
            }
            ensure!(em.count() > 0, "no samples to embed");
            em.finish()
        }
    }
}

fn cmd_eval(cli: &Cli, e: &EvalCmd) -> Result<()> {
    let mut em = Emitter::stdout(cli.json);
    match e {
        EvalCmd::Top1 { predictions } => {
            let p = load_predictions(predictions)?;
            let mut by_lang: BTreeMap<String, Vec<PredictionRow>> = BTreeMap::new();
            for r in p.rows() {
                by_lang
                    .entry(r.language.to_string())
                    .or_default()
                    .push(r.clone());
            }
            for (lang, rows) in by_lang {
                let n = rows.len();
                let acc = top1_accuracy(&PredictionSet::new(rows)?)?;
                em.emit(&json!({ "language": lang, "samples": n, "top1": acc }))?;
            }
            em.emit(&json!({ "language": "all", "samples": p.len(), "top1": top1_accuracy(&p)? }))?;
        }
        EvalCmd::Breakdown {
            predictions,
            manifest,
            space,
        } => {
            let m = load_manifest(manifest)?;
            let rows: Vec<PredictionRow> = load_predictions(predictions)?
                .rows()
                .iter()
                .filter(|r| r.language == *m.language())
                .cloned()
                .collect();
            ensure!(!rows.is_empty(), "no predictions for `{}`", m.language());
            let p = PredictionSet::new(rows)?;
            let b = grouped_accuracy_breakdown(&p, &m, (*space).into())?;
            for (name, s) in [
                ("whole", &b.whole),
                ("non_vssign", &b.non_vssign),
                ("vssign", &b.vssign),
            ] {
                em.emit(&json!({ "stratum": name, "samples": s.samples, "correct": s.correct, "accuracy": s.accuracy }))?;
            }
        }
        EvalCmd::MapBuild {
            predictions,
            source_classes,
            target_manifest,
        } => {
            let p = load_predictions(predictions)?;
            let m = load_manifest(target_manifest)?;
            let labels = m.class_names(LabelSpace::Gloss);
            let map = build_label_map(&p, *source_classes, &labels)?;
            if let Some(out) = &cli.out {
                fs::write(out, serde_json::to_string_pretty(&map)?)?;
            }
            for (s, entry) in &map.entries {
                em.emit(&json!({
                    "source": s,
                    "target": entry.target,
                    "target_label": entry.target_label,
                    "votes": entry.votes,
                    "support": entry.support,
                    "tied": entry.tied,
                }))?;
            }
            em.emit(&json!({ "mapped": map.entries.len(), "unmapped": map.unmapped }))?;
        }
        EvalCmd::MapApply { map, predictions } => {
            let text =
                fs::read_to_string(map).with_context(|| format!("reading {}", map.display()))?;
            let map: LabelMap = serde_json::from_str(&text)?;
            let p = load_predictions(predictions)?;
            let mapped = apply_label_map(&map, &p);
            if let Some(out) = &cli.out {
                write_jsonl(out, mapped.rows())?;
            }
            em.emit(&json!({ "samples": mapped.len(), "top1": top1_accuracy(&mapped)? }))?;
        }
        EvalCmd::Kshot { manifest, k } => {
            let m = load_manifest(manifest)?;
            ensure!(
                m.count_subset(Subset::Train) > 0,
                "{} has no train samples",
                manifest.display()
            );
            let out = kshot_truncate(&m, *k, cli.seed.unwrap_or(0))?;
            save_manifest(&out, require_out(cli)?)?;
            em.emit(&json!({
                "k": k,
                "train_before": m.count_subset(Subset::Train),
                "train_after": out.count_subset(Subset::Train),
                "test": out.count_subset(Subset::Test),
            }))?;
        }
    }
    em.finish()
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = load_toml(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if let Some(v) = a.languages {
        spec.n_languages = v;
    }
    if let Some(v) = a.classes {
        spec.classes_per_language = v;
    }
    if let Some(v) = a.samples_per_class {
        spec.samples_per_class = v;
    }
    if let Some(v) = a.confusable_pairs {
        spec.confusable_pairs = v;
    }
    let dir = require_out(cli)?;
    fs::create_dir_all(dir)?;
    let data = gen_synthetic(&spec)?;
    data.features.save(dir.join("features.bin"))?;
    let mut em = Emitter::stdout(cli.json);
    for m in &data.manifests {
        let path = dir.join(format!("{}.jsonl", m.language()));
        save_manifest(m, &path)?;
        em.emit(&json!({
            "language": m.language(),
            "glosses": m.glosses().len(),
            "signers": m.signers().len(),
            "samples": m.samples().len(),
            "manifest": path.display().to_string(),
        }))?;
    }
    em.finish()
}

fn cmd_experiment(cli: &Cli, a: &ExperimentArgs) -> Result<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("--config is required"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
        if let Some(spec) = &mut cfg.synthetic {
            spec.seed = s;
        }
    }
    if let Some(s) = &a.scenario {
        cfg.scenario = s.clone();
    }
    let report = run_experiment(&cfg)?;
    if let Some(out) = &cli.out {
        fs::write(out, serde_json::to_string_pretty(&report)?)?;
    }
    if a.table {
        print!("{}", report.table());
        return Ok(());
    }
    let mut em = Emitter::stdout(cli.json);
    for r in &report.rows {
        em.emit(&json!({
            "scenario": report.scenario,
            "row": r.name,
            "language": r.language,
            "train_samples": r.train_samples,
            "test_samples": r.test_samples,
            "accuracy": r.accuracy,
            "non_vssign": r.non_vssign,
            "vssign": r.vssign,
            "test_hash": r.test_hash,
            "config_hash": report.config_hash,
        }))?;
    }
    em.finish()
}

fn cmd_schedule(cli: &Cli, s: &ScheduleCmd) -> Result<()> {
    let ScheduleCmd::Dump {
        steps_per_epoch,
        rescale,
        frozen,
    } = s;
    let mut plan = match &cli.config {
        Some(p) => TrainPlan::load(p)?,
        None => TrainPlan::baseline(100),
    };
    if let Some(n) = steps_per_epoch {
        ensure!(*n > 0, "steps per epoch must be positive");
        plan.steps_per_epoch = *n;
    }
    if let Some(f) = rescale {
        plan = rescale_plan(&plan, *f)?;
    }
    if *frozen {
        plan = frozen_plan(&plan);
    }
    let steps = dump(&plan);
    if steps.is_empty() {
        bail!("schedule has no steps");
    }
    let mut em = records(cli)?;
    for (step, lr) in steps {
        em.emit(&json!({ "step": step, "lr": lr }))?;
    }
    em.finish()
}
