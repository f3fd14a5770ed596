//! `syncanim`: drive the audio-synchronized animation stack end to end —
//! generate the synthetic benchmark, curate it, train the audio adapters in
//! two stages, sample clips, evaluate sync metrics, and run preset grids.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use syncanim::clips::{load_clips, ClipRecord};
use syncanim::curation::{run_pipeline, CurationConfig};
use syncanim::diffusion::NoiseSchedule;
use syncanim::metrics::{Evaluator, MetricReport};
use syncanim::synth::{build_benchmark, class_index, generate_clip, DatasetManifest, SceneSpec, CLASSES, NATIVE_FPS};
use syncanim::tensor::checkpoint;
use syncanim::util::derive_seed;
use syncanim::{Error, Result};
use syncanim_cli::config::{RunConfig, StageOverride};
use syncanim_cli::experiment::{eval_model, generate_window, run_preset, PresetKind};
use syncanim_cli::records::{append_run, read_runs, CuratedSet, RunRecord, CURATED_SCHEMA_VERSION};
use syncanim_cli::train::{build_model, load_model, prepare_corpus, run_stage};

#[derive(Parser)]
#[command(
    name = "syncanim",
    version,
    about = "Audio-synchronized video animation: benchmark, curation, training, evaluation",
    after_help = "Exit codes: 0 success, 2 configuration error, 3 missing dependency or bad \
                  artifact, 4 numerical failure."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every subcommand that reads the run config.
#[derive(Args)]
struct ConfigArg {
    /// TOML run config; flags override file values, file values override defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct StageFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

impl StageFlags {
    fn overrides(&self) -> StageOverride {
        StageOverride { epochs: self.epochs, batch_size: self.batch_size, lr: self.lr }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic benchmark (idempotent for a fixed seed+config).
    Bench {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory for clips and manifest.
        #[arg(long)]
        out: PathBuf,
        /// Master generation seed.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        n_pretrain: Option<usize>,
        #[arg(long)]
        corruption_rate: Option<f64>,
        #[arg(long)]
        n_finetune_per_class: Option<usize>,
        #[arg(long)]
        n_test_per_class: Option<usize>,
    },
    /// Filter one split through the curation pipeline; write report + kept ids.
    Curate {
        #[command(flatten)]
        config: ConfigArg,
        /// Benchmark directory (from `bench`).
        #[arg(long)]
        bench: PathBuf,
        /// Output directory for the report and curated-id set.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "pretrain")]
        split: String,
        /// Worker threads; the outcome is worker-count invariant.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Stage 1: train the audio adapters on the noisy (optionally curated) split.
    Pretrain {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        bench: PathBuf,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Curated-id set from `curate`; omit to train on the raw split.
        #[arg(long)]
        curated: Option<PathBuf>,
        #[command(flatten)]
        stage: StageFlags,
        /// Run log to append to (default: runs.jsonl next to the checkpoint).
        #[arg(long)]
        runs: Option<PathBuf>,
    },
    /// Stage 2: few-shot finetune on K clean clips per class.
    Finetune {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to start from (normally a pretrain output).
        #[arg(long, conflicts_with = "from_scratch")]
        init: Option<PathBuf>,
        /// Explicitly start from untrained adapters instead of --init.
        #[arg(long)]
        from_scratch: bool,
        /// Clean clips per class.
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        stage: StageFlags,
        #[arg(long)]
        runs: Option<PathBuf>,
    },
    /// Sample one clip from a checkpoint, conditioned on a canonical scene.
    Sample {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        ckpt: PathBuf,
        /// Event class to condition on.
        #[arg(long)]
        class: String,
        /// Directory to write the generated clip into.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Override the sampler step count.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint (or the ground truth itself) on one split.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        bench: PathBuf,
        /// Checkpoint to evaluate; required unless --ground-truth.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Score the reference clips against themselves (metric ceiling).
        #[arg(long)]
        ground_truth: bool,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the metric report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        runs: Option<PathBuf>,
    },
    /// Run one preset grid over seeds; write mean/sd CSV and an SVG plot.
    Experiment {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_enum)]
        preset: PresetKind,
        #[arg(long)]
        bench: PathBuf,
        /// Output directory for CSV, SVG, checkpoints, and run records.
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed list, e.g. --seeds 1,2,3.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Summarize a run log as a table (and optionally CSV).
    Report {
        /// Run log written by the training/eval/experiment commands.
        #[arg(long)]
        runs: PathBuf,
        /// Write the table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

/// 2 = the request was malformed, 3 = a needed artifact is missing or
/// unreadable, 4 = the numerics failed, 1 = internal contract violation.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Dependency(_) | Error::Io(_) | Error::Json(_) | Error::Format(_) | Error::Corpus(_) => 3,
        Error::Numerical(_) => 4,
        Error::Shape(_) | Error::Contract(_) | Error::State(_) | Error::Coverage(_) => 1,
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Bench { config, out, seed, n_pretrain, corruption_rate, n_finetune_per_class, n_test_per_class } => {
            let mut cfg = RunConfig::load(config.config.as_deref())?;
            if let Some(n) = n_pretrain {
                cfg.benchmark.n_pretrain = n;
            }
            if let Some(r) = corruption_rate {
                cfg.benchmark.corruption_rate = r;
            }
            if let Some(n) = n_finetune_per_class {
                cfg.benchmark.n_finetune_per_class = n;
            }
            if let Some(n) = n_test_per_class {
                cfg.benchmark.n_test_per_class = n;
            }
            cfg.validate()?;
            cmd_bench(&cfg, &out, seed)
        }
        Cmd::Curate { config, bench, out, split, workers } => {
            RunConfig::load(config.config.as_deref())?;
            cmd_curate(&bench, &out, &split, workers)
        }
        Cmd::Pretrain { config, bench, out, seed, curated, stage, runs } => {
            let mut cfg = RunConfig::load(config.config.as_deref())?;
            stage.overrides().apply(&mut cfg.pretrain);
            cfg.validate()?;
            cmd_pretrain(&cfg, &bench, &out, seed, curated.as_deref(), runs)
        }
        Cmd::Finetune { config, bench, out, init, from_scratch, k, seed, stage, runs } => {
            let mut cfg = RunConfig::load(config.config.as_deref())?;
            stage.overrides().apply(&mut cfg.finetune);
            cfg.validate()?;
            cmd_finetune(&cfg, &bench, &out, init.as_deref(), from_scratch, k, seed, runs)
        }
        Cmd::Sample { config, ckpt, class, out, seed, steps } => {
            let mut cfg = RunConfig::load(config.config.as_deref())?;
            if let Some(s) = steps {
                cfg.sampler.n_steps = s;
            }
            cfg.validate()?;
            cmd_sample(&cfg, &ckpt, &class, &out, seed)
        }
        Cmd::Eval { config, bench, ckpt, ground_truth, split, seed, out, runs } => {
            let cfg = RunConfig::load(config.config.as_deref())?;
            cmd_eval(&cfg, &bench, ckpt.as_deref(), ground_truth, &split, seed, out, runs)
        }
        Cmd::Experiment { config, preset, bench, out, seeds } => {
            let cfg = RunConfig::load(config.config.as_deref())?;
            let seeds = seeds.unwrap_or_else(|| cfg.seeds.clone());
            run_preset(preset, &cfg, &bench, &out, &seeds)?;
            Ok(())
        }
        Cmd::Report { runs, out } => cmd_report(&runs, out.as_deref()),
    }
}

fn cmd_bench(cfg: &RunConfig, out: &Path, seed: u64) -> Result<()> {
    let manifest_path = out.join("manifest.json");
    if manifest_path.exists() {
        let existing = DatasetManifest::load(&manifest_path)?;
        if existing.seed == seed && existing.config == cfg.benchmark {
            println!(
                "benchmark at {} already materialized for seed {seed}; nothing to do",
                out.display()
            );
            return Ok(());
        }
        return Err(Error::Config(format!(
            "{} holds a benchmark with a different seed or config; use a fresh --out",
            out.display()
        )));
    }
    let t0 = Instant::now();
    let manifest = build_benchmark(&cfg.benchmark, seed, out)?;
    for (name, ids) in &manifest.splits {
        println!("split {name}: {} clips", ids.len());
    }
    let corrupted: usize = manifest.corruption_counts.values().sum();
    println!(
        "corruptions: {} total {:?} ({:.1}s)",
        corrupted,
        manifest.corruption_counts,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_curate(bench: &Path, out: &Path, split: &str, workers: usize) -> Result<()> {
    let manifest = DatasetManifest::load(&bench.join("manifest.json"))?;
    let ids = manifest.split(split)?;
    let clips = load_clips(&bench.join("clips"), ids)?;
    let t0 = Instant::now();
    let (kept, report) = run_pipeline(&clips, &CurationConfig::synthetic_preset(), workers)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(out.join("report.csv"), report.to_csv())?;
    let kept_full: Vec<String> = kept
        .iter()
        .filter(|c| ids.binary_search(&c.id).is_ok())
        .map(|c| c.id.clone())
        .collect();
    let set = CuratedSet {
        schema_version: CURATED_SCHEMA_VERSION,
        split: split.to_string(),
        n_split_segments: kept.len() - kept_full.len(),
        kept_ids: kept_full,
    };
    set.save(&out.join("curated.json"))?;
    println!(
        "curated {} -> kept {} ({} full clips, {} salvaged segments) in {:.1}s",
        report.n_input,
        report.n_kept,
        set.kept_ids.len(),
        set.n_split_segments,
        t0.elapsed().as_secs_f64()
    );
    println!("rejections by filter: {:?}", report.filter_counts);
    println!("wrote {}", out.join("curated.json").display());
    Ok(())
}

fn default_runs_path(out: &Path) -> PathBuf {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.join("runs.jsonl"),
        _ => PathBuf::from("runs.jsonl"),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_pretrain(
    cfg: &RunConfig,
    bench: &Path,
    out: &Path,
    seed: u64,
    curated: Option<&Path>,
    runs: Option<PathBuf>,
) -> Result<()> {
    let manifest = DatasetManifest::load(&bench.join("manifest.json"))?;
    let (corpus_kind, ids) = match curated {
        Some(p) => ("curated", CuratedSet::load(p)?.kept_ids),
        None => ("raw", manifest.split("pretrain")?.to_vec()),
    };
    let clips = load_clips(&bench.join("clips"), &ids)?;
    let t0 = Instant::now();
    let (model, mut store) = build_model(&cfg.model)?;
    let prepared = prepare_corpus(&model, &store, &clips, true)?;
    println!(
        "pretraining on {} {corpus_kind} clips ({} skipped as sub-window)",
        prepared.clips.len(),
        prepared.n_skipped_short
    );
    let schedule = NoiseSchedule::linear(cfg.model.t_max)?;
    let (losses, adam) =
        run_stage(&model, &mut store, &schedule, &prepared, &cfg.pretrain, &cfg.dropout, seed, "pretrain")?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    checkpoint::save(&store, Some(&adam), out)?;
    let mut rec = RunRecord::new("pretrain", &cfg.hash()?, seed);
    rec.checkpoint = Some(out.display().to_string());
    rec.wall_seconds = t0.elapsed().as_secs_f64();
    rec.extra.insert("corpus".into(), corpus_kind.into());
    rec.extra.insert("n_clips".into(), prepared.clips.len().to_string());
    rec.extra.insert("final_loss".into(), format!("{:.6}", losses.last().unwrap()));
    append_run(&runs.unwrap_or_else(|| default_runs_path(out)), &rec)?;
    println!("saved checkpoint {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_finetune(
    cfg: &RunConfig,
    bench: &Path,
    out: &Path,
    init: Option<&Path>,
    from_scratch: bool,
    k: usize,
    seed: u64,
    runs: Option<PathBuf>,
) -> Result<()> {
    if init.is_none() && !from_scratch {
        return Err(Error::Config(
            "finetune needs --init <checkpoint> or an explicit --from-scratch".into(),
        ));
    }
    if k == 0 {
        return Err(Error::Config("finetune needs K >= 1 (K=0 means: do not finetune)".into()));
    }
    let manifest = DatasetManifest::load(&bench.join("manifest.json"))?;
    let ids = manifest.finetune_subset(k)?;
    let clips = load_clips(&bench.join("clips"), &ids)?;
    let t0 = Instant::now();
    let (model, mut store) = match init {
        Some(p) => load_model(&cfg.model, p)?,
        None => build_model(&cfg.model)?,
    };
    let prepared = prepare_corpus(&model, &store, &clips, true)?;
    println!("finetuning on {} clean clips (K={k} per class)", prepared.clips.len());
    let schedule = NoiseSchedule::linear(cfg.model.t_max)?;
    let (losses, adam) =
        run_stage(&model, &mut store, &schedule, &prepared, &cfg.finetune, &cfg.dropout, seed, "finetune")?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    checkpoint::save(&store, Some(&adam), out)?;
    let mut rec = RunRecord::new("finetune", &cfg.hash()?, seed);
    rec.checkpoint = Some(out.display().to_string());
    rec.wall_seconds = t0.elapsed().as_secs_f64();
    rec.extra.insert("k".into(), k.to_string());
    rec.extra.insert(
        "init".into(),
        init.map(|p| p.display().to_string()).unwrap_or_else(|| "scratch".into()),
    );
    rec.extra.insert("final_loss".into(), format!("{:.6}", losses.last().unwrap()));
    append_run(&runs.unwrap_or_else(|| default_runs_path(out)), &rec)?;
    println!("saved checkpoint {}", out.display());
    Ok(())
}

fn cmd_sample(cfg: &RunConfig, ckpt: &Path, class: &str, out: &Path, seed: u64) -> Result<()> {
    let class_id = class_index(class).ok_or_else(|| {
        Error::Config(format!("unknown class {class:?} (expected one of {CLASSES:?})"))
    })?;
    let (model, store) = load_model(&cfg.model, ckpt)?;
    let schedule = NoiseSchedule::linear(cfg.model.t_max)?;
    let source = generate_clip(
        &SceneSpec::canonical(class_id),
        NATIVE_FPS,
        derive_seed(seed, "sample-scene", 0),
        &format!("reference-{class}"),
    )?;
    let window =
        syncanim::clips::extract_windows(&source, cfg.model.fps, cfg.model.n_frames, 1)?.remove(0);
    let frames = generate_window(cfg, &model, &store, &schedule, &window, class_id, seed, None)?;
    let score = cfg.scorer.score(&frames, &window.audio, cfg.model.fps);

    let bytes: Vec<u8> = frames
        .iter()
        .flat_map(|f| f.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let clip = ClipRecord {
        id: format!("sample-{class}-s{seed}"),
        fps: cfg.model.fps,
        width: 32,
        height: 32,
        duration: cfg.model.n_frames as f64 / cfg.model.fps,
        frames: bytes,
        audio: window.audio,
        labels: source.labels.clone(),
    };
    std::fs::create_dir_all(out)?;
    clip.save(out)?;
    println!(
        "wrote {} (sync probability {:.4}{})",
        out.join(&clip.id).display(),
        score.prob,
        if score.degenerate { ", degenerate" } else { "" }
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    cfg: &RunConfig,
    bench: &Path,
    ckpt: Option<&Path>,
    ground_truth: bool,
    split: &str,
    seed: u64,
    out: Option<PathBuf>,
    runs: Option<PathBuf>,
) -> Result<()> {
    let manifest = DatasetManifest::load(&bench.join("manifest.json"))?;
    let clips = load_clips(&bench.join("clips"), manifest.split(split)?)?;
    let t0 = Instant::now();
    let (command, report) = if ground_truth {
        let evaluator = Evaluator::new(cfg.protocol.clone(), cfg.scorer.clone())?;
        ("eval:ground-truth", evaluator.evaluate(&clips, |w, _, _| Ok(w.frames.clone()))?)
    } else {
        let ckpt = ckpt.ok_or_else(|| {
            Error::Config("eval needs --ckpt <checkpoint> (or --ground-truth)".into())
        })?;
        let (model, store) = load_model(&cfg.model, ckpt)?;
        ("eval", eval_model(cfg, &model, &store, &clips, seed, None)?)
    };
    println!("{}", MetricReport::CSV_HEADER);
    println!("{}", report.to_csv_row());
    if let Some(p) = &out {
        std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
        println!("wrote {}", p.display());
    }
    let mut rec = RunRecord::new(command, &cfg.hash()?, seed);
    rec.checkpoint = ckpt.map(|p| p.display().to_string());
    rec.metrics = Some(report);
    rec.wall_seconds = t0.elapsed().as_secs_f64();
    rec.extra.insert("split".into(), split.to_string());
    if let Some(rp) = runs.or_else(|| out.as_ref().map(|p| default_runs_path(p))) {
        append_run(&rp, &rec)?;
    }
    Ok(())
}

fn cmd_report(runs: &Path, out: Option<&Path>) -> Result<()> {
    let records = read_runs(runs)?;
    let mut csv = String::from(
        "command,seed,config_hash,wall_seconds,checkpoint,mean_sync_prob,relsync,alignsync,fvd_like,extra\n",
    );
    println!(
        "{:<34} {:>4} {:>8} {:>10}  {:>9} {:>8} {:>9}",
        "command", "seed", "wall_s", "sync_prob", "relsync", "align", "fvd_like"
    );
    let mut by_command: BTreeMap<String, usize> = BTreeMap::new();
    for r in &records {
        *by_command.entry(r.command.clone()).or_insert(0) += 1;
        let (sp, rs, al, fv) = r
            .metrics
            .as_ref()
            .map(|m| {
                (
                    format!("{:.4}", m.mean_sync_prob),
                    format!("{:.2}", m.relsync),
                    format!("{:.2}", m.alignsync),
                    format!("{:.3}", m.fvd_like),
                )
            })
            .unwrap_or_else(|| ("-".into(), "-".into(), "-".into(), "-".into()));
        println!(
            "{:<34} {:>4} {:>8.1} {:>10}  {:>9} {:>8} {:>9}",
            r.command, r.seed, r.wall_seconds, sp, rs, al, fv
        );
        let extra: Vec<String> = r.extra.iter().map(|(k, v)| format!("{k}={v}")).collect();
        csv.push_str(&format!(
            "{},{},{},{:.3},{},{},{},{},{},{}\n",
            r.command,
            r.seed,
            r.config_hash,
            r.wall_seconds,
            r.checkpoint.as_deref().unwrap_or("-"),
            sp,
            rs,
            al,
            fv,
            extra.join(";")
        ));
    }
    println!("{} records, {} distinct commands", records.len(), by_command.len());
    if let Some(p) = out {
        std::fs::write(p, csv)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}
