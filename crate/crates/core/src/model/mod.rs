//! The video denoiser: a frozen transformer backbone conditioned on a first
//! frame and a class label, plus trainable audio cross-attention adapters.
//!
//! Layout: a video is [`ModelConfig::n_frames`] frames of
//! [`crate::latent::S_TOKENS`] spatial tokens; tape rows are ordered
//! `f * S_TOKENS + s`. Each block applies, in order: step-embedding add,
//! per-frame spatial self-attention, MLP, frozen image/text cross-attention,
//! trainable windowed audio cross-attention, and per-position temporal
//! self-attention. The audio adapter's output projection is zero-initialized,
//! so an untrained model generates bit-identically with and without audio.
//!
//! The trainable partition is the naming rule of
//! [`crate::tensor::is_trainable_name`]: only `*.audio_xattn.*` adapters and
//! `audio_proj.*` feature projections train; everything under `base.*` is
//! frozen pretrained state.

use crate::audio::{
    encode_taps, project_and_merge, register_encoder, register_projections, AudioTokenSequence,
    EncoderConfig, EncoderKind, FeatureMap,
};
use crate::latent::{D_LATENT, S_TOKENS};
use crate::tensor::{NodeId, ParamStore, Tape, Tensor};
use crate::util::rng_for;
use crate::window::{build_window_mask, chunk_mask, AttentionMask, FrameTimeline, WindowSpec};
use crate::{Error, Result};

/// How generated-video frames attend to audio tokens.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum AudioAttentionMode {
    /// Each frame sees tokens within `radius_frames` frame periods of its
    /// center time.
    Window { radius_frames: f64 },
    /// Baseline: each tap's token sequence is cut into n_frames contiguous
    /// chunks and frame f sees only chunk f.
    Chunk,
}

impl Default for AudioAttentionMode {
    fn default() -> Self {
        AudioAttentionMode::Window { radius_frames: 1.5 }
    }
}

/// Denoiser architecture and conditioning plan.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Backbone width.
    pub d_model: usize,
    /// Heads for the spatial/temporal self-attentions.
    pub n_heads: usize,
    /// Transformer blocks.
    pub n_blocks: usize,
    /// MLP hidden width.
    pub d_mlp: usize,
    /// Inner width of the audio cross-attention adapters (single-head).
    pub d_audio: usize,
    /// Frames per generated video.
    pub n_frames: usize,
    /// Video frame rate.
    pub fps: f64,
    /// Diffusion steps the model is trained over.
    pub t_max: usize,
    /// Number of class labels for text conditioning.
    pub text_vocab: usize,
    pub audio_mode: AudioAttentionMode,
    /// Frozen audio encoder architecture (shared by both encoders).
    pub encoder: EncoderConfig,
    /// Encoder blocks whose activations feed audio tokens.
    pub taps: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_blocks: 4,
            d_mlp: 128,
            d_audio: 16,
            n_frames: 12,
            fps: 6.0,
            t_max: 1000,
            text_vocab: 4,
            audio_mode: AudioAttentionMode::default(),
            encoder: EncoderConfig::default(),
            taps: vec![3, 7, 11],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0
            || self.n_heads == 0
            || self.n_blocks == 0
            || self.d_mlp == 0
            || self.d_audio == 0
            || self.n_frames == 0
            || self.t_max == 0
            || self.text_vocab == 0
        {
            return Err(Error::Config("model dims must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        if let AudioAttentionMode::Window { radius_frames } = self.audio_mode {
            WindowSpec::new(radius_frames)?;
        }
        self.encoder.validate()?;
        self.encoder.validate_taps(&self.taps)?;
        Ok(())
    }

    pub fn timeline(&self) -> Result<FrameTimeline> {
        FrameTimeline::new(self.n_frames, self.fps)
    }

    /// Rows of the latent video tensor: frames x spatial tokens.
    pub fn n_rows(&self) -> usize {
        self.n_frames * S_TOKENS
    }

    /// Tap plan for both frozen encoders.
    pub fn tap_plan(&self) -> Vec<(EncoderKind, Vec<usize>)> {
        EncoderKind::all().iter().map(|&k| (k, self.taps.clone())).collect()
    }
}

/// Conditioning for one denoiser call. A `None` image or text selects the
/// corresponding learned null embedding; a `None` audio skips the audio
/// cross-attentions entirely, so the audio-free branch is the frozen base
/// pathway itself. Classifier-free guidance and condition dropout both buy
/// their unconditional branches this way.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConditionBundle<'a> {
    /// Latent tokens of the conditioning frame, [S_TOKENS, D_LATENT].
    pub image: Option<&'a Tensor>,
    /// Class label id.
    pub text: Option<usize>,
    /// Tapped encoder features for the clip audio.
    pub audio: Option<&'a [(EncoderKind, Vec<FeatureMap>)]>,
}

/// The denoiser. Weights live in a [`ParamStore`] built by [`Denoiser::build`].
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub cfg: ModelConfig,
}

fn register(
    store: &mut ParamStore,
    seed: u64,
    name: &str,
    shape: &[usize],
    std: f64,
) -> Result<()> {
    let t = if std == 0.0 {
        Tensor::zeros(shape)
    } else {
        Tensor::randn(shape, std, &mut rng_for(seed, name, 0))
    };
    store.register(name, t)?;
    Ok(())
}

fn register_ones(store: &mut ParamStore, name: &str, n: usize) -> Result<()> {
    let mut t = Tensor::zeros(&[n]);
    t.data.fill(1.0);
    store.register(name, t)?;
    Ok(())
}

impl Denoiser {
    /// Register every weight of the model (backbone, encoders, adapters,
    /// projections) with per-name seeded init. The audio adapters' output
    /// projections start at zero, so the audio pathway is exactly inert.
    pub fn build(cfg: ModelConfig, seed: u64) -> Result<(Denoiser, ParamStore)> {
        cfg.validate()?;
        let d = cfg.d_model;
        let da = cfg.d_audio;
        let ds = (1.0 / d as f64).sqrt();
        let mut store = ParamStore::new();
        let s = &mut store;

        register(s, seed, "base.fuse.w", &[2 * D_LATENT, d], (1.0 / (2 * D_LATENT) as f64).sqrt())?;
        register(s, seed, "base.fuse.b", &[d], 0.0)?;
        register(s, seed, "base.pos.spatial", &[S_TOKENS, d], 0.02)?;
        register(s, seed, "base.pos.temporal", &[cfg.n_frames, d], 0.02)?;
        register(s, seed, "base.text_embed", &[cfg.text_vocab, d], 0.02)?;
        register(s, seed, "base.img_embed.w", &[D_LATENT, d], (1.0 / D_LATENT as f64).sqrt())?;
        register(s, seed, "base.null.image_tokens", &[S_TOKENS, D_LATENT], 0.02)?;
        register(s, seed, "base.null.text_tokens", &[1, d], 0.02)?;

        for i in 0..cfg.n_blocks {
            for j in 0..5 {
                register_ones(s, &format!("base.block{i}.ln{j}.gain"), d)?;
                register(s, seed, &format!("base.block{i}.ln{j}.bias"), &[d], 0.0)?;
            }
            for part in ["spatial", "temporal", "ctx"] {
                register(s, seed, &format!("base.block{i}.{part}.w_q"), &[d, d], ds)?;
                register(s, seed, &format!("base.block{i}.{part}.w_k"), &[d, d], ds)?;
                register(s, seed, &format!("base.block{i}.{part}.w_v"), &[d, d], ds)?;
                register(s, seed, &format!("base.block{i}.{part}.w_o"), &[d, d], ds)?;
            }
            register(s, seed, &format!("base.block{i}.mlp.w1"), &[d, cfg.d_mlp], ds)?;
            register(s, seed, &format!("base.block{i}.mlp.b1"), &[cfg.d_mlp], 0.0)?;
            register(s, seed, &format!("base.block{i}.mlp.w2"), &[cfg.d_mlp, d], (1.0 / cfg.d_mlp as f64).sqrt())?;
            register(s, seed, &format!("base.block{i}.mlp.b2"), &[d], 0.0)?;
            register(s, seed, &format!("block{i}.audio_xattn.w_q"), &[d, da], ds)?;
            register(s, seed, &format!("block{i}.audio_xattn.w_k"), &[d, da], ds)?;
            register(s, seed, &format!("block{i}.audio_xattn.w_v"), &[d, da], ds)?;
            // Zero output projection: the adapter contributes nothing until
            // it trains, so audio cannot perturb the frozen prior at init.
            register(s, seed, &format!("block{i}.audio_xattn.w_o"), &[da, d], 0.0)?;
        }
        register_ones(s, "base.head.ln.gain", d)?;
        register(s, seed, "base.head.ln.bias", &[d], 0.0)?;
        register(s, seed, "base.head.w", &[d, D_LATENT], ds)?;
        register(s, seed, "base.head.b", &[D_LATENT], 0.0)?;

        for kind in EncoderKind::all() {
            register_encoder(s, kind, &cfg.encoder, seed)?;
        }
        register_projections(s, &cfg.tap_plan(), cfg.encoder.d_enc, d, seed)?;
        Ok((Denoiser { cfg }, store))
    }

    /// Run the tapped frozen encoders for one waveform's mel features.
    /// Off-tape and deterministic: callers cache this per clip.
    pub fn encode_audio(
        &self,
        store: &ParamStore,
        mel: &crate::audio::MelSpectrogram,
    ) -> Result<Vec<(EncoderKind, Vec<FeatureMap>)>> {
        let mut out = Vec::new();
        for kind in EncoderKind::all() {
            out.push((kind, encode_taps(store, kind, &self.cfg.encoder, &self.cfg.taps, mel)?));
        }
        Ok(out)
    }

    /// Audio attention mask over full-resolution rows, plus the token count.
    fn audio_mask(&self, seq: &AudioTokenSequence) -> Result<AttentionMask> {
        let timeline = self.cfg.timeline()?;
        match self.cfg.audio_mode {
            AudioAttentionMode::Window { radius_frames } => {
                build_window_mask(&timeline, &seq.times, WindowSpec::new(radius_frames)?)
            }
            AudioAttentionMode::Chunk => {
                // Chunk each source span separately: spans restart in time,
                // so index-chunking across span boundaries would be wrong.
                let parts: Vec<AttentionMask> = seq
                    .sources
                    .iter()
                    .map(|src| chunk_mask(self.cfg.n_frames, src.len))
                    .collect::<Result<_>>()?;
                AttentionMask::concat(&parts)
            }
        }
    }

    /// One trainable audio cross-attention: singe-head attention from every
    /// latent row into the audio tokens, restricted by `visible` (row-major
    /// [n_rows, n_tokens]). Returns the residual-added hidden state.
    pub fn audio_cross_attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        block: usize,
        h: NodeId,
        audio_tokens: NodeId,
        visible: &[bool],
    ) -> Result<NodeId> {
        let ln = self.layer_norm(tape, store, block, 3, h)?;
        let wq = tape.param(store, &format!("block{block}.audio_xattn.w_q"))?;
        let wk = tape.param(store, &format!("block{block}.audio_xattn.w_k"))?;
        let wv = tape.param(store, &format!("block{block}.audio_xattn.w_v"))?;
        let wo = tape.param(store, &format!("block{block}.audio_xattn.w_o"))?;
        let q = tape.matmul(ln, wq)?;
        let k = tape.matmul(audio_tokens, wk)?;
        let v = tape.matmul(audio_tokens, wv)?;
        let logits = tape.matmul_bt(q, k)?;
        let scaled = tape.scale(logits, 1.0 / (self.cfg.d_audio as f64).sqrt())?;
        let attn = tape.masked_softmax(scaled, visible)?;
        let ctx = tape.matmul(attn, v)?;
        let out = tape.matmul(ctx, wo)?;
        tape.add(h, out)
    }

    fn layer_norm(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        block: usize,
        idx: usize,
        h: NodeId,
    ) -> Result<NodeId> {
        let g = tape.param(store, &format!("base.block{block}.ln{idx}.gain"))?;
        let b = tape.param(store, &format!("base.block{block}.ln{idx}.bias"))?;
        tape.layer_norm(h, g, b, 1e-5)
    }

    /// Pre-norm multi-head self-attention over row groups, residual-added to
    /// `h`. Rows attend only within their group; groups are contiguous runs
    /// of `group_len` rows after applying `perm` (permuted row r reads
    /// original row perm[r]). `ln_idx` picks the block's layer norm.
    #[allow(clippy::too_many_arguments)]
    fn grouped_self_attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        block: usize,
        part: &str,
        ln_idx: usize,
        h: NodeId,
        perm: Option<&[usize]>,
        group_len: usize,
        n_groups: usize,
    ) -> Result<NodeId> {
        let d = self.cfg.d_model;
        let dh = d / self.cfg.n_heads;
        let ln = self.layer_norm(tape, store, block, ln_idx, h)?;
        let prefix = format!("base.block{block}.{part}");
        let wq = tape.param(store, &format!("{prefix}.w_q"))?;
        let wk = tape.param(store, &format!("{prefix}.w_k"))?;
        let wv = tape.param(store, &format!("{prefix}.w_v"))?;
        let wo = tape.param(store, &format!("{prefix}.w_o"))?;
        let mut q = tape.matmul(ln, wq)?;
        let mut k = tape.matmul(ln, wk)?;
        let mut v = tape.matmul(ln, wv)?;
        if let Some(p) = perm {
            q = tape.gather_rows(q, p)?;
            k = tape.gather_rows(k, p)?;
            v = tape.gather_rows(v, p)?;
        }
        let mut group_ctx = Vec::with_capacity(n_groups);
        for g in 0..n_groups {
            let (r0, r1) = (g * group_len, (g + 1) * group_len);
            let qg = tape.slice_rows(q, r0, r1)?;
            let kg = tape.slice_rows(k, r0, r1)?;
            let vg = tape.slice_rows(v, r0, r1)?;
            let mut head_ctx = Vec::with_capacity(self.cfg.n_heads);
            for hh in 0..self.cfg.n_heads {
                let (c0, c1) = (hh * dh, (hh + 1) * dh);
                let qh = tape.slice_cols(qg, c0, c1)?;
                let kh = tape.slice_cols(kg, c0, c1)?;
                let vh = tape.slice_cols(vg, c0, c1)?;
                let logits = tape.matmul_bt(qh, kh)?;
                let scaled = tape.scale(logits, 1.0 / (dh as f64).sqrt())?;
                let attn = tape.softmax(scaled)?;
                head_ctx.push(tape.matmul(attn, vh)?);
            }
            group_ctx.push(tape.concat_cols(&head_ctx)?);
        }
        let mut ctx = tape.concat_rows(&group_ctx)?;
        if let Some(p) = perm {
            // Invert the grouping permutation so rows line back up with h.
            let mut inv = vec![0usize; p.len()];
            for (new_r, &old_r) in p.iter().enumerate() {
                inv[old_r] = new_r;
            }
            ctx = tape.gather_rows(ctx, &inv)?;
        }
        let out = tape.matmul(ctx, wo)?;
        tape.add(h, out)
    }

    /// Single-head cross-attention into the image/text context (frozen).
    fn context_cross_attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        block: usize,
        h: NodeId,
        ctx_kv: NodeId,
    ) -> Result<NodeId> {
        let ln = self.layer_norm(tape, store, block, 2, h)?;
        let wq = tape.param(store, &format!("base.block{block}.ctx.w_q"))?;
        let wk = tape.param(store, &format!("base.block{block}.ctx.w_k"))?;
        let wv = tape.param(store, &format!("base.block{block}.ctx.w_v"))?;
        let wo = tape.param(store, &format!("base.block{block}.ctx.w_o"))?;
        let q = tape.matmul(ln, wq)?;
        let k = tape.matmul(ctx_kv, wk)?;
        let v = tape.matmul(ctx_kv, wv)?;
        let logits = tape.matmul_bt(q, k)?;
        let scaled = tape.scale(logits, 1.0 / (self.cfg.d_model as f64).sqrt())?;
        let attn = tape.softmax(scaled)?;
        let ctx = tape.matmul(attn, v)?;
        let out = tape.matmul(ctx, wo)?;
        tape.add(h, out)
    }

    fn mlp(&self, tape: &mut Tape, store: &ParamStore, block: usize, h: NodeId) -> Result<NodeId> {
        let ln = self.layer_norm(tape, store, block, 1, h)?;
        let w1 = tape.param(store, &format!("base.block{block}.mlp.w1"))?;
        let b1 = tape.param(store, &format!("base.block{block}.mlp.b1"))?;
        let w2 = tape.param(store, &format!("base.block{block}.mlp.w2"))?;
        let b2 = tape.param(store, &format!("base.block{block}.mlp.b2"))?;
        let a = tape.matmul(ln, w1)?;
        let a = tape.add_bias(a, b1)?;
        let a = tape.silu(a)?;
        let a = tape.matmul(a, w2)?;
        let out = tape.add_bias(a, b2)?;
        tape.add(h, out)
    }

    /// Sinusoidal step embedding (off-tape constant).
    pub fn step_embedding(&self, t_step: usize) -> Tensor {
        let d = self.cfg.d_model;
        let half = d / 2;
        let mut v = vec![0.0; d];
        for i in 0..half {
            let omega = 1.0 / 10000f64.powf(i as f64 / half as f64);
            let ang = t_step as f64 * omega;
            v[i] = ang.sin();
            v[half + i] = ang.cos();
        }
        Tensor { shape: vec![d], data: v }
    }

    /// Predict the noise in `x_t` at diffusion step `t_step` under the given
    /// conditioning. Returns a [n_rows, D_LATENT] tape node.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x_t: &Tensor,
        t_step: usize,
        cond: &ConditionBundle,
    ) -> Result<NodeId> {
        let cfg = &self.cfg;
        let n = cfg.n_rows();
        if x_t.rows() != n || x_t.cols() != D_LATENT {
            return Err(Error::Shape(format!(
                "x_t is {}x{}, expected {}x{}",
                x_t.rows(),
                x_t.cols(),
                n,
                D_LATENT
            )));
        }
        if t_step == 0 || t_step > cfg.t_max {
            return Err(Error::Contract(format!(
                "diffusion step {t_step} outside 1..={}",
                cfg.t_max
            )));
        }
        if let Some(c) = cond.text {
            if c >= cfg.text_vocab {
                return Err(Error::Config(format!(
                    "class id {c} outside vocabulary of {}",
                    cfg.text_vocab
                )));
            }
        }

        // --- conditioning inputs ---
        let img_latent = match cond.image {
            Some(t) => {
                if t.rows() != S_TOKENS || t.cols() != D_LATENT {
                    return Err(Error::Shape(format!(
                        "conditioning image latent is {}x{}, expected {}x{}",
                        t.rows(),
                        t.cols(),
                        S_TOKENS,
                        D_LATENT
                    )));
                }
                tape.input(t.clone())?
            }
            None => tape.param(store, "base.null.image_tokens")?,
        };

        // Audio tokens and their visibility. A dropped/missing audio stream
        // is a single learned null token visible to every frame — the same
        // attention path, so init-time generations match bit for bit.
        let (audio_tokens, visible) = match cond.audio {
            Some(features) => {
                let seq = project_and_merge(tape, store, features)?;
                let mask = self.audio_mask(&seq)?;
                (seq.tokens, mask.expand_rows(S_TOKENS))
            }
            None => {
                let null = tape.param(store, "audio_xattn.null_token")?;
                (null, vec![true; n])
            }
        };

        // --- input fusion: noisy latent + conditioning frame latent ---
        let x = tape.input(x_t.clone())?;
        let repeat_idx: Vec<usize> = (0..n).map(|r| r % S_TOKENS).collect();
        let img_rep = tape.gather_rows(img_latent, &repeat_idx)?;
        let fused = tape.concat_cols(&[x, img_rep])?;
        let fuse_w = tape.param(store, "base.fuse.w")?;
        let fuse_b = tape.param(store, "base.fuse.b")?;
        let mut h = tape.matmul(fused, fuse_w)?;
        h = tape.add_bias(h, fuse_b)?;

        // Positional embeddings over (frame, spatial) indices.
        let pos_s = tape.param(store, "base.pos.spatial")?;
        let pos_t = tape.param(store, "base.pos.temporal")?;
        let sp_ids: Vec<usize> = (0..n).map(|r| r % S_TOKENS).collect();
        let tm_ids: Vec<usize> = (0..n).map(|r| r / S_TOKENS).collect();
        let pos_sg = tape.embed(pos_s, &sp_ids)?;
        let pos_tg = tape.embed(pos_t, &tm_ids)?;
        h = tape.add(h, pos_sg)?;
        h = tape.add(h, pos_tg)?;

        // Image/text cross-attention context.
        let img_embed_w = tape.param(store, "base.img_embed.w")?;
        let img_tok = tape.matmul(img_latent, img_embed_w)?;
        let txt_tok = match cond.text {
            Some(c) => {
                let table = tape.param(store, "base.text_embed")?;
                tape.embed(table, &[c])?
            }
            None => tape.param(store, "base.null.text_tokens")?,
        };
        let ctx_kv = tape.concat_rows(&[img_tok, txt_tok])?;

        let step_vec = tape.input(self.step_embedding(t_step))?;
        // Temporal grouping permutation: new row s*K + f = old row f*S + s.
        let perm: Vec<usize> = (0..S_TOKENS)
            .flat_map(|sp| (0..cfg.n_frames).map(move |f| f * S_TOKENS + sp))
            .collect();

        for i in 0..cfg.n_blocks {
            h = tape.add_bias(h, step_vec)?;
            h = self.grouped_self_attention(
                tape, store, i, "spatial", 0, h, None, S_TOKENS, cfg.n_frames,
            )?;
            h = self.mlp(tape, store, i, h)?;
            h = self.context_cross_attention(tape, store, i, h, ctx_kv)?;
            h = self.audio_cross_attention(tape, store, i, h, audio_tokens, &visible)?;
            h = self.grouped_self_attention(
                tape,
                store,
                i,
                "temporal",
                4,
                h,
                Some(&perm),
                cfg.n_frames,
                S_TOKENS,
            )?;
        }

        let hg = tape.param(store, "base.head.ln.gain")?;
        let hb = tape.param(store, "base.head.ln.bias")?;
        let hn = tape.layer_norm(h, hg, hb, 1e-5)?;
        let hw = tape.param(store, "base.head.w")?;
        let hbias = tape.param(store, "base.head.b")?;
        let eps = tape.matmul(hn, hw)?;
        tape.add_bias(eps, hbias)
    }
}

/// Small but complete config used by unit tests across the crate.
#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_blocks: 1,
        d_mlp: 16,
        d_audio: 4,
        n_frames: 2,
        fps: 6.0,
        t_max: 100,
        text_vocab: 4,
        audio_mode: AudioAttentionMode::Window { radius_frames: 1.5 },
        encoder: EncoderConfig { d_enc: 4, stem_stride: 8, n_blocks: 2, stride_layers: vec![1] },
        taps: vec![1],
    }
}
