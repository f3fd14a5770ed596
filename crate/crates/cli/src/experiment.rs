//! Experiment presets: fixed grids over one benchmark, repeated over seeds.
//!
//! Every preset reads the benchmark as-is (never regenerates or mutates it),
//! trains whatever its cells need from the shared frozen backbone, evaluates
//! each cell on the test split with per-window seeds shared across cells
//! (paired comparisons), and aggregates per-cell mean/sd over seeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use syncanim::audio::{mel_spectrogram, EncoderKind};
use syncanim::clips::{load_clips, ClipRecord, ClipWindow};
use syncanim::curation::{run_pipeline, CurationConfig};
use syncanim::diffusion::{sample_video, NoiseSchedule};
use syncanim::latent::{decode_video, encode_video};
use syncanim::metrics::{Evaluator, MetricReport};
use syncanim::model::{AudioAttentionMode, ConditionBundle, Denoiser};
use syncanim::synth::DatasetManifest;
use syncanim::tensor::{checkpoint, Adam, ParamStore};
use syncanim::util::derive_seed;
use syncanim::{Error, Result};

use crate::config::RunConfig;
use crate::records::{append_run, RunRecord};
use crate::report::{write_lines_svg, write_summary_csv, CellSummary, SYNC_PROB_COL};
use crate::train::{build_model, prepare_corpus, restrict_encoder, run_stage, PreparedCorpus};

/// The four preset grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PresetKind {
    /// Training paradigm: {pretrained, scratch} x K in {0, 1, 5, 10}.
    Paradigm,
    /// Corpus curation: {curated, raw} x {pretrain only, plus finetune}.
    Curation,
    /// Audio attention window radius sweep.
    Radius,
    /// Encoder tap depth and single- vs multi-feature conditioning.
    Taps,
}

impl PresetKind {
    pub fn name(&self) -> &'static str {
        match self {
            PresetKind::Paradigm => "paradigm",
            PresetKind::Curation => "curation",
            PresetKind::Radius => "radius",
            PresetKind::Taps => "taps",
        }
    }

    fn axes(&self) -> (&'static str, &'static str) {
        match self {
            PresetKind::Paradigm => ("finetune clips per class (K)", "mean sync probability"),
            PresetKind::Curation => ("finetuned (0 = pretrain only)", "mean sync probability"),
            PresetKind::Radius => ("attention window radius (frame periods)", "mean sync probability"),
            PresetKind::Taps => ("tap variant index", "mean sync probability"),
        }
    }
}

/// Sample one window from the model: first frame and class of the reference
/// plus the window's audio; pixels back in [0,1]. `only` restricts the
/// conditioning to a single encoder's features for the ablation cells.
pub fn generate_window(
    cfg: &RunConfig,
    model: &Denoiser,
    store: &ParamStore,
    schedule: &NoiseSchedule,
    window: &ClipWindow,
    class_id: usize,
    sample_seed: u64,
    only: Option<EncoderKind>,
) -> Result<Vec<Vec<f64>>> {
    let image = encode_video(&window.frames[..1])?.tokens;
    let mut audio = model.encode_audio(store, &mel_spectrogram(&window.audio.samples)?)?;
    if let Some(kind) = only {
        audio.retain(|(k, _)| *k == kind);
    }
    let cond =
        ConditionBundle { image: Some(&image), text: Some(class_id), audio: Some(&audio) };
    let lv = sample_video(model, store, schedule, &cond, &cfg.sampler, sample_seed)?;
    decode_video(&lv)
}

/// Evaluate one model on labeled clips. Per-window sample seeds derive only
/// from (seed, window index), so different cells under the same seed share
/// initial noise and comparisons are paired.
pub fn eval_model(
    cfg: &RunConfig,
    model: &Denoiser,
    store: &ParamStore,
    clips: &[ClipRecord],
    seed: u64,
    only: Option<EncoderKind>,
) -> Result<MetricReport> {
    let schedule = NoiseSchedule::linear(model.cfg.t_max)?;
    let evaluator = Evaluator::new(cfg.protocol.clone(), cfg.scorer.clone())?;
    evaluator.evaluate(clips, |w, class_id, idx| {
        let s = derive_seed(seed, "eval-window", idx as u64);
        generate_window(cfg, model, store, &schedule, w, class_id, s, only)
    })
}

/// Everything the preset grids share.
struct PresetCtx<'a> {
    cfg: &'a RunConfig,
    cfg_hash: String,
    bench: &'a Path,
    manifest: DatasetManifest,
    out: PathBuf,
    seeds: Vec<u64>,
}

impl<'a> PresetCtx<'a> {
    fn load_split(&self, name: &str) -> Result<Vec<ClipRecord>> {
        load_clips(&self.bench.join("clips"), self.manifest.split(name)?)
    }

    /// Pretrain-split clips surviving curation, restricted to ids in the
    /// benchmark store (split segments are sub-window and cannot train).
    fn curated_pretrain(&self) -> Result<Vec<ClipRecord>> {
        let ids = self.manifest.split("pretrain")?;
        let clips = self.load_split("pretrain")?;
        let (kept, report) = run_pipeline(&clips, &CurationConfig::synthetic_preset(), 1)?;
        let full: Vec<ClipRecord> =
            kept.into_iter().filter(|c| ids.binary_search(&c.id).is_ok()).collect();
        println!(
            "[curate] kept {} of {} pretrain clips ({} trainable after dropping sub-window segments)",
            report.n_kept,
            report.n_input,
            full.len()
        );
        Ok(full)
    }

    fn save_ckpt(&self, store: &ParamStore, adam: &Adam, name: &str) -> Result<PathBuf> {
        let dir = self.out.join("ckpt");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{name}.bin"));
        checkpoint::save(store, Some(adam), &path)?;
        Ok(path)
    }

    fn log_cell(
        &self,
        preset: PresetKind,
        cell: &str,
        seed: u64,
        ckpt: Option<&Path>,
        report: &MetricReport,
        wall: f64,
        extra: &[(&str, String)],
    ) -> Result<()> {
        let mut rec = RunRecord::new(
            &format!("experiment:{}:{cell}", preset.name()),
            &self.cfg_hash,
            seed,
        );
        rec.checkpoint = ckpt.map(|p| p.display().to_string());
        rec.metrics = Some(report.clone());
        rec.wall_seconds = wall;
        for (k, v) in extra {
            rec.extra.insert(k.to_string(), v.clone());
        }
        append_run(&self.out.join("runs.jsonl"), &rec)
    }
}

/// Run one preset end to end; returns the aggregated grid and writes
/// `<out>/<preset>.csv`, `<out>/<preset>.svg`, checkpoints, and run records.
pub struct PresetOutcome {
    pub cells: Vec<CellSummary>,
    pub csv_path: PathBuf,
    pub svg_path: PathBuf,
}

pub fn run_preset(
    kind: PresetKind,
    cfg: &RunConfig,
    bench: &Path,
    out: &Path,
    seeds: &[u64],
) -> Result<PresetOutcome> {
    if seeds.is_empty() {
        return Err(Error::Config("experiment needs at least one seed".into()));
    }
    let manifest = DatasetManifest::load(&bench.join("manifest.json"))?;
    std::fs::create_dir_all(out)?;
    let ctx = PresetCtx {
        cfg,
        cfg_hash: cfg.hash()?,
        bench,
        manifest,
        out: out.to_path_buf(),
        seeds: seeds.to_vec(),
    };
    let cells = match kind {
        PresetKind::Paradigm => run_paradigm(&ctx)?,
        PresetKind::Curation => run_curation(&ctx)?,
        PresetKind::Radius => run_radius(&ctx)?,
        PresetKind::Taps => run_taps(&ctx)?,
    };
    let csv_path = out.join(format!("{}.csv", kind.name()));
    let svg_path = out.join(format!("{}.svg", kind.name()));
    write_summary_csv(&csv_path, &cells)?;
    let (xl, yl) = kind.axes();
    write_lines_svg(&svg_path, kind.name(), xl, yl, &cells, SYNC_PROB_COL)?;
    println!("[experiment] wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(PresetOutcome { cells, csv_path, svg_path })
}

/// Pretraining value and few-shot scaling: with and without stage 1, over
/// K-shot finetune budgets (K=0 keeps the stage-1 weights as-is; the
/// scratch K=0 cell is the untrained adapter baseline).
fn run_paradigm(ctx: &PresetCtx) -> Result<Vec<CellSummary>> {
    const KS: [usize; 4] = [0, 1, 5, 10];
    let cfg = ctx.cfg;
    let (model, init) = build_model(&cfg.model)?;
    let schedule = NoiseSchedule::linear(cfg.model.t_max)?;
    let curated = ctx.curated_pretrain()?;
    let pre = prepare_corpus(&model, &init, &curated, true)?;
    let mut ft: BTreeMap<usize, PreparedCorpus> = BTreeMap::new();
    for k in KS.iter().filter(|&&k| k > 0) {
        let clips = load_clips(&ctx.bench.join("clips"), &ctx.manifest.finetune_subset(*k)?)?;
        ft.insert(*k, prepare_corpus(&model, &init, &clips, true)?);
    }
    let test = ctx.load_split("test")?;

    let mut cells: Vec<CellSummary> = Vec::new();
    for variant in ["pretrained", "scratch"] {
        for k in KS {
            cells.push(CellSummary::new(&format!("{variant}-k{k}"), variant, k as f64));
        }
    }

    for &seed in &ctx.seeds {
        for (vi, variant) in ["pretrained", "scratch"].iter().enumerate() {
            let t_base = Instant::now();
            let mut base = init.clone();
            let mut base_ckpt: Option<PathBuf> = None;
            if *variant == "pretrained" {
                let (_, adam) = run_stage(
                    &model,
                    &mut base,
                    &schedule,
                    &pre,
                    &cfg.pretrain,
                    &cfg.dropout,
                    seed,
                    &format!("paradigm:pretrain s{seed}"),
                )?;
                base_ckpt = Some(ctx.save_ckpt(&base, &adam, &format!("pretrain-s{seed}"))?);
            }
            let base_wall = t_base.elapsed().as_secs_f64();
            for (ki, &k) in KS.iter().enumerate() {
                let t0 = Instant::now();
                let (store, ckpt) = if k == 0 {
                    (base.clone(), base_ckpt.clone())
                } else {
                    let mut s = base.clone();
                    let (_, adam) = run_stage(
                        &model,
                        &mut s,
                        &schedule,
                        &ft[&k],
                        &cfg.finetune,
                        &cfg.dropout,
                        seed,
                        &format!("paradigm:{variant}-k{k} s{seed}"),
                    )?;
                    let p = ctx.save_ckpt(&s, &adam, &format!("{variant}-k{k}-s{seed}"))?;
                    (s, Some(p))
                };
                let report = eval_model(cfg, &model, &store, &test, seed, None)?;
                let wall = t0.elapsed().as_secs_f64() + if k == 0 { base_wall } else { 0.0 };
                let cell = &mut cells[vi * KS.len() + ki];
                println!(
                    "[paradigm] {} seed {seed}: sync {:.4} relsync {:.2}",
                    cell.cell, report.mean_sync_prob, report.relsync
                );
                ctx.log_cell(
                    PresetKind::Paradigm,
                    &cell.cell.clone(),
                    seed,
                    ckpt.as_deref(),
                    &report,
                    wall,
                    &[("variant", variant.to_string()), ("k", k.to_string())],
                )?;
                cell.reports.push(report);
            }
        }
    }
    Ok(cells)
}

/// Value of curation: pretrain on the curated vs the raw noisy corpus,
/// each evaluated directly and after finetuning on the full clean pool.
fn run_curation(ctx: &PresetCtx) -> Result<Vec<CellSummary>> {
    let cfg = ctx.cfg;
    let (model, init) = build_model(&cfg.model)?;
    let schedule = NoiseSchedule::linear(cfg.model.t_max)?;
    let k_full = ctx.manifest.config.n_finetune_per_class;
    let corpora = [
        ("curated", prepare_corpus(&model, &init, &ctx.curated_pretrain()?, true)?),
        ("raw", prepare_corpus(&model, &init, &ctx.load_split("pretrain")?, true)?),
    ];
    let ft_clips = load_clips(&ctx.bench.join("clips"), &ctx.manifest.finetune_subset(k_full)?)?;
    let ft = prepare_corpus(&model, &init, &ft_clips, true)?;
    let test = ctx.load_split("test")?;

    let mut cells: Vec<CellSummary> = Vec::new();
    for (name, _) in &corpora {
        cells.push(CellSummary::new(&format!("{name}-pretrain"), name, 0.0));
        cells.push(CellSummary::new(&format!("{name}-finetuned"), name, 1.0));
    }

    for &seed in &ctx.seeds {
        for (vi, (name, corpus)) in corpora.iter().enumerate() {
            let t0 = Instant::now();
            let mut base = init.clone();
            let (_, adam) = run_stage(
                &model,
                &mut base,
                &schedule,
                corpus,
                &cfg.pretrain,
                &cfg.dropout,
                seed,
                &format!("curation:{name} s{seed}"),
            )?;
            let base_ckpt = ctx.save_ckpt(&base, &adam, &format!("{name}-s{seed}"))?;
            let pre_wall = t0.elapsed().as_secs_f64();

            for (ci, finetuned) in [false, true].iter().enumerate() {
                let t1 = Instant::now();
                let (store, ckpt) = if *finetuned {
                    let mut s = base.clone();
                    let (_, adam) = run_stage(
                        &model,
                        &mut s,
                        &schedule,
                        &ft,
                        &cfg.finetune,
                        &cfg.dropout,
                        seed,
                        &format!("curation:{name}-ft s{seed}"),
                    )?;
                    let p = ctx.save_ckpt(&s, &adam, &format!("{name}-ft-s{seed}"))?;
                    (s, p)
                } else {
                    (base.clone(), base_ckpt.clone())
                };
                let report = eval_model(cfg, &model, &store, &test, seed, None)?;
                let wall = t1.elapsed().as_secs_f64() + if *finetuned { 0.0 } else { pre_wall };
                let cell = &mut cells[vi * 2 + ci];
                println!(
                    "[curation] {} seed {seed}: sync {:.4} relsync {:.2}",
                    cell.cell, report.mean_sync_prob, report.relsync
                );
                ctx.log_cell(
                    PresetKind::Curation,
                    &cell.cell.clone(),
                    seed,
                    Some(&ckpt),
                    &report,
                    wall,
                    &[("corpus", name.to_string()), ("finetuned", finetuned.to_string())],
                )?;
                cell.reports.push(report);
            }
        }
    }
    Ok(cells)
}

/// Attention window radius sweep. The same frozen backbone and the same
/// cached audio features serve every radius; only the visibility mask and
/// the trained adapters differ.
fn run_radius(ctx: &PresetCtx) -> Result<Vec<CellSummary>> {
    const RADII: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 3.0];
    let cfg = ctx.cfg;
    let (base_model, init) = build_model(&cfg.model)?;
    let pre = prepare_corpus(&base_model, &init, &ctx.curated_pretrain()?, true)?;
    let test = ctx.load_split("test")?;

    let mut cells: Vec<CellSummary> =
        RADII.iter().map(|r| CellSummary::new(&format!("r{r}"), "window", *r)).collect();

    for &seed in &ctx.seeds {
        for (ri, &radius) in RADII.iter().enumerate() {
            let t0 = Instant::now();
            let mut mcfg = cfg.model.clone();
            mcfg.audio_mode = AudioAttentionMode::Window { radius_frames: radius };
            let (model, model_init) = build_model(&mcfg)?;
            let schedule = NoiseSchedule::linear(mcfg.t_max)?;
            let mut store = model_init.clone();
            let (_, adam) = run_stage(
                &model,
                &mut store,
                &schedule,
                &pre,
                &cfg.pretrain,
                &cfg.dropout,
                seed,
                &format!("radius:r{radius} s{seed}"),
            )?;
            let ckpt = ctx.save_ckpt(&store, &adam, &format!("r{radius}-s{seed}"))?;
            let report = eval_model(cfg, &model, &store, &test, seed, None)?;
            let cell = &mut cells[ri];
            println!(
                "[radius] {} seed {seed}: sync {:.4} relsync {:.2}",
                cell.cell, report.mean_sync_prob, report.relsync
            );
            ctx.log_cell(
                PresetKind::Radius,
                &cell.cell.clone(),
                seed,
                Some(&ckpt),
                &report,
                t0.elapsed().as_secs_f64(),
                &[("radius", radius.to_string())],
            )?;
            cell.reports.push(report);
        }
    }
    Ok(cells)
}

/// Tap depth and feature-diversity ablation: which encoder blocks feed
/// audio tokens, and single- vs both-encoder conditioning.
fn run_taps(ctx: &PresetCtx) -> Result<Vec<CellSummary>> {
    struct Variant {
        name: &'static str,
        taps: &'static [usize],
        both: bool,
    }
    const VARIANTS: [Variant; 4] = [
        Variant { name: "taps-11", taps: &[11], both: false },
        Variant { name: "taps-7-9-11", taps: &[7, 9, 11], both: false },
        Variant { name: "taps-3-7-11", taps: &[3, 7, 11], both: false },
        Variant { name: "taps-3-7-11-both", taps: &[3, 7, 11], both: true },
    ];
    let cfg = ctx.cfg;
    let curated = ctx.curated_pretrain()?;
    let test = ctx.load_split("test")?;

    let mut cells: Vec<CellSummary> = VARIANTS
        .iter()
        .enumerate()
        .map(|(i, v)| CellSummary::new(v.name, "taps", i as f64))
        .collect();

    for (vi, v) in VARIANTS.iter().enumerate() {
        let mut mcfg = cfg.model.clone();
        mcfg.taps = v.taps.to_vec();
        let (model, init) = build_model(&mcfg)?;
        let schedule = NoiseSchedule::linear(mcfg.t_max)?;
        let only = if v.both { None } else { Some(EncoderKind::Semantic) };
        let mut pre = prepare_corpus(&model, &init, &curated, true)?;
        if let Some(kind) = only {
            restrict_encoder(&mut pre, kind);
        }
        for &seed in &ctx.seeds {
            let t0 = Instant::now();
            let mut store = init.clone();
            let (_, adam) = run_stage(
                &model,
                &mut store,
                &schedule,
                &pre,
                &cfg.pretrain,
                &cfg.dropout,
                seed,
                &format!("taps:{} s{seed}", v.name),
            )?;
            let ckpt = ctx.save_ckpt(&store, &adam, &format!("{}-s{seed}", v.name))?;
            let report = eval_model(cfg, &model, &store, &test, seed, only)?;
            let cell = &mut cells[vi];
            println!(
                "[taps] {} seed {seed}: sync {:.4} relsync {:.2}",
                cell.cell, report.mean_sync_prob, report.relsync
            );
            ctx.log_cell(
                PresetKind::Taps,
                &cell.cell.clone(),
                seed,
                Some(&ckpt),
                &report,
                t0.elapsed().as_secs_f64(),
                &[
                    ("taps", format!("{:?}", v.taps)),
                    ("encoders", if v.both { "both" } else { "semantic" }.to_string()),
                ],
            )?;
            cell.reports.push(report);
        }
    }
    Ok(cells)
}
