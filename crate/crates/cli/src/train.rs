//! Corpus preparation and the shared training loop for both stages.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use syncanim::audio::{mel_spectrogram, EncoderKind, FeatureMap};
use syncanim::clips::{extract_windows, ClipRecord};
use syncanim::diffusion::{training_step, DropoutPolicy, NoiseSchedule, TrainSample};
use syncanim::latent::encode_video;
use syncanim::model::{ConditionBundle, Denoiser, ModelConfig};
use syncanim::synth::{class_index, generate_clip, SceneSpec, CLASSES, NATIVE_FPS};
use syncanim::tensor::{checkpoint, is_trainable_name, Adam, AdamConfig, ParamStore, Tensor};
use syncanim::util::{derive_seed, rng_for};
use syncanim::{Error, Result};

use crate::config::StageConfig;

/// Seed of the fixed "pretrained" backbone. Every command builds the same
/// frozen base model from it, so runs differ only in what actually trains.
pub const BACKBONE_SEED: u64 = 0xBA5E;

/// Every model input for one training clip, computed once up front: the
/// clean latent video, the first-frame conditioning latent, the class id,
/// and the tapped audio features. The encoders are frozen, so the features
/// never change during training and are safe to cache. `audio` is `None`
/// when the stage trains without audio conditioning (backbone training).
pub struct PreparedClip {
    pub id: String,
    pub x0: Tensor,
    pub image: Tensor,
    pub class_id: usize,
    pub audio: Option<Vec<(EncoderKind, Vec<FeatureMap>)>>,
}

/// A prepared corpus. Clips shorter than one model window cannot train
/// (curation keeps scene-split segments that are sub-window length); they
/// are counted rather than erred on.
pub struct PreparedCorpus {
    pub clips: Vec<PreparedClip>,
    pub n_skipped_short: usize,
}

/// Extract the phase-0 window of each clip and cache all model inputs.
/// `with_audio: false` skips audio encoding for audio-free stages.
pub fn prepare_corpus(
    model: &Denoiser,
    store: &ParamStore,
    clips: &[ClipRecord],
    with_audio: bool,
) -> Result<PreparedCorpus> {
    let cfg = &model.cfg;
    let mut out = Vec::with_capacity(clips.len());
    let mut skipped = 0usize;
    for clip in clips {
        let mut windows = match extract_windows(clip, cfg.fps, cfg.n_frames, 1) {
            Ok(w) => w,
            // Too short for one window: skip, don't fail the corpus.
            Err(Error::Contract(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let w = windows.remove(0);
        let class_name = clip
            .labels
            .as_ref()
            .map(|l| l.class_name.as_str())
            .ok_or_else(|| {
                Error::Contract(format!(
                    "clip {} carries no class label; class conditioning needs one",
                    clip.id
                ))
            })?;
        let class_id = class_index(class_name).ok_or_else(|| {
            Error::Contract(format!("clip {} has unknown class {class_name:?}", clip.id))
        })?;
        let x0 = encode_video(&w.frames)?.tokens;
        let image = encode_video(&w.frames[..1])?.tokens;
        let audio = if with_audio {
            Some(model.encode_audio(store, &mel_spectrogram(&w.audio.samples)?)?)
        } else {
            None
        };
        out.push(PreparedClip { id: clip.id.clone(), x0, image, class_id, audio });
    }
    if out.is_empty() {
        return Err(Error::Corpus(
            "no clip in the corpus is long enough for a training window".into(),
        ));
    }
    Ok(PreparedCorpus { clips: out, n_skipped_short: skipped })
}

/// Keep only one encoder's features (ablation cells train single-feature).
pub fn restrict_encoder(corpus: &mut PreparedCorpus, kind: EncoderKind) {
    for clip in &mut corpus.clips {
        if let Some(audio) = &mut clip.audio {
            audio.retain(|(k, _)| *k == kind);
        }
    }
}

/// One training stage over a prepared corpus: per-epoch seeded shuffle,
/// fixed-size batches (the trailing short batch still steps), fresh Adam.
/// Returns per-epoch mean losses plus the optimizer for checkpointing.
pub fn run_stage(
    model: &Denoiser,
    store: &mut ParamStore,
    schedule: &NoiseSchedule,
    corpus: &PreparedCorpus,
    stage: &StageConfig,
    dropout: &DropoutPolicy,
    seed: u64,
    label: &str,
) -> Result<(Vec<f64>, Adam)> {
    stage.validate(label)?;
    let mut adam = Adam::new(AdamConfig { lr: stage.lr, ..AdamConfig::default() }, store);
    let n = corpus.clips.len();
    let mut epoch_losses = Vec::with_capacity(stage.epochs);
    let mut global_step = 0u64;
    let t0 = Instant::now();
    for epoch in 0..stage.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(seed, "epoch-order", epoch as u64));
        let mut sum = 0.0;
        let mut steps = 0usize;
        for batch_ids in order.chunks(stage.batch_size) {
            let batch: Vec<TrainSample> = batch_ids
                .iter()
                .map(|&i| {
                    let p = &corpus.clips[i];
                    TrainSample {
                        x0: &p.x0,
                        cond: ConditionBundle {
                            image: Some(&p.image),
                            text: Some(p.class_id),
                            audio: p.audio.as_deref(),
                        },
                    }
                })
                .collect();
            let mut rng = rng_for(seed, "train-step", global_step);
            sum += training_step(model, store, &mut adam, schedule, &batch, dropout, &mut rng)?;
            steps += 1;
            global_step += 1;
        }
        let mean = sum / steps as f64;
        epoch_losses.push(mean);
        println!(
            "[{label}] epoch {}/{} loss {:.4} ({} steps, {:.1}s)",
            epoch + 1,
            stage.epochs,
            mean,
            steps,
            t0.elapsed().as_secs_f64()
        );
    }
    Ok((epoch_losses, adam))
}

/// The fixed frozen backbone plus untrained adapters.
pub fn build_model(cfg: &ModelConfig) -> Result<(Denoiser, ParamStore)> {
    Denoiser::build(cfg.clone(), BACKBONE_SEED)
}

/// The backbone's own training corpus: clean clips, classes cycling, scene
/// parameters drawn fresh per clip. This stands in for the broad generic
/// video corpus a production backbone is pretrained on, and its seed streams
/// are disjoint from every benchmark's.
pub fn backbone_corpus(n_clips: usize, seed: u64) -> Result<Vec<ClipRecord>> {
    (0..n_clips)
        .map(|i| {
            let class_id = i % CLASSES.len();
            let spec =
                SceneSpec::random(class_id, &mut rng_for(seed, "backbone-spec", i as u64));
            generate_clip(
                &spec,
                NATIVE_FPS,
                derive_seed(seed, "backbone-clip", i as u64),
                &format!("backbone-{}-{i:04}", CLASSES[class_id]),
            )
        })
        .collect()
}

/// Train the video backbone itself — everything except the audio adapters —
/// on clean clips with image and class conditioning but no audio. This
/// materializes the frozen denoiser the adapters later attach to; afterwards
/// the store is re-partitioned so only the adapters train, and the adapters
/// are still bitwise at their zero/seed initialization.
pub fn train_backbone(
    mcfg: &ModelConfig,
    stage: &StageConfig,
    n_clips: usize,
    dropout: &DropoutPolicy,
    seed: u64,
) -> Result<(Denoiser, ParamStore, Vec<f64>)> {
    let (model, mut store) = build_model(mcfg)?;
    let clips = backbone_corpus(n_clips, seed)?;
    let corpus = prepare_corpus(&model, &store, &clips, false)?;
    let schedule = NoiseSchedule::linear(mcfg.t_max)?;
    // Inverted partition for this stage only: the base trains, the adapters
    // stay frozen at init.
    for p in store.iter_mut() {
        p.trainable = !is_trainable_name(&p.name);
    }
    let out = run_stage(&model, &mut store, &schedule, &corpus, stage, dropout, seed, "backbone");
    // Restore the adapter-only partition whether or not the stage succeeded;
    // the checkpoint format records flags, so this must never leak out.
    for p in store.iter_mut() {
        p.trainable = is_trainable_name(&p.name);
    }
    let (losses, _) = out?;
    Ok((model, store, losses))
}

/// Build the model for `cfg` and load `ckpt` over it, checking that the
/// checkpoint matches the architecture name-for-name and shape-for-shape.
pub fn load_model(cfg: &ModelConfig, ckpt: &Path) -> Result<(Denoiser, ParamStore)> {
    if !ckpt.exists() {
        return Err(Error::Dependency(format!(
            "checkpoint {} not found; run `syncanim pretrain` or `syncanim finetune` to create it",
            ckpt.display()
        )));
    }
    let (model, fresh) = build_model(cfg)?;
    let (loaded, _) = checkpoint::load(ckpt)?;
    checkpoint::validate_compatible(&fresh, &loaded)?;
    Ok((model, loaded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use syncanim::synth::{generate_clip, SceneSpec, NATIVE_FPS};

    fn small_model() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_blocks: 1,
            d_mlp: 16,
            d_audio: 4,
            ..ModelConfig::default()
        }
    }

    fn clip(class_id: usize, seed: u64, id: &str) -> ClipRecord {
        let spec = SceneSpec::canonical(class_id);
        generate_clip(&spec, NATIVE_FPS, seed, id).unwrap()
    }

    #[test]
    fn prepare_skips_short_clips_and_caches_model_inputs() {
        let (model, store) = build_model(&small_model()).unwrap();
        let mut short = clip(0, 5, "short");
        // Truncate to half a window worth of native frames.
        let keep = 20 * short.width * short.height;
        short.frames.truncate(keep);
        short.duration = 20.0 / NATIVE_FPS;
        let clips = vec![clip(0, 1, "a"), short, clip(2, 3, "b")];
        let corpus = prepare_corpus(&model, &store, &clips, true).unwrap();
        assert_eq!(corpus.clips.len(), 2);
        assert_eq!(corpus.n_skipped_short, 1);
        let p = &corpus.clips[0];
        assert_eq!(p.x0.shape, vec![model.cfg.n_rows(), syncanim::latent::D_LATENT]);
        assert_eq!(p.image.shape, vec![syncanim::latent::S_TOKENS, syncanim::latent::D_LATENT]);
        assert_eq!(p.class_id, 0);
        assert_eq!(p.audio.as_ref().unwrap().len(), 2);
        assert_eq!(corpus.clips[1].class_id, 2);
    }

    #[test]
    fn unlabeled_clips_cannot_train() {
        let (model, store) = build_model(&small_model()).unwrap();
        let mut c = clip(1, 2, "c");
        c.labels = None;
        assert!(matches!(
            prepare_corpus(&model, &store, &[c], true),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn one_stage_runs_deterministically_and_moves_only_trainable_weights() {
        let cfg = small_model();
        let (model, store0) = build_model(&cfg).unwrap();
        let clips: Vec<ClipRecord> = (0..4).map(|c| clip(c, c as u64 + 10, &format!("t{c}"))).collect();
        let corpus = prepare_corpus(&model, &store0, &clips, true).unwrap();
        let schedule = NoiseSchedule::linear(cfg.t_max).unwrap();
        let stage = StageConfig { epochs: 2, batch_size: 2, lr: 1e-3 };
        let dropout = DropoutPolicy::default();

        let mut a = store0.clone();
        let (losses_a, _) = run_stage(&model, &mut a, &schedule, &corpus, &stage, &dropout, 7, "test").unwrap();
        let mut b = store0.clone();
        let (losses_b, _) = run_stage(&model, &mut b, &schedule, &corpus, &stage, &dropout, 7, "test").unwrap();
        assert_eq!(losses_a, losses_b);
        for (pa, pb) in a.iter().zip(b.iter()) {
            assert_eq!(pa.value.data, pb.value.data, "{} diverged across reruns", pa.name);
        }
        // Frozen stays bitwise put; at least one adapter weight moved.
        let mut moved = 0usize;
        for (p0, p1) in store0.iter().zip(a.iter()) {
            if p0.trainable {
                moved += (p0.value.data != p1.value.data) as usize;
            } else {
                assert_eq!(p0.value.data, p1.value.data, "frozen {} moved", p0.name);
            }
        }
        assert!(moved > 0);
    }
}
