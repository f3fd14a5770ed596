//! Frozen toy audio encoders over the log-mel spectrogram.
//!
//! Two fixed-weight encoders ("semantic" and "masked-pred") share one
//! architecture: a strided stem over the mel frames, then a stack of blocks
//! (temporal conv + single-head self-attention + layer norm), downsampling
//! at two fixed depths. Intermediate activations can be tapped at chosen
//! block indices; each tap keeps the per-token center times so downstream
//! windowing knows when every token was heard.
//!
//! All of this runs off the autodiff tape: the encoders never train, so
//! their outputs enter the model as constants.

use crate::tensor::Tensor;
use crate::util::rng_for;
use crate::{Error, Result};

use super::mel::{MelSpectrogram, N_MEL};
use crate::tensor::ParamStore;

/// The two pretrained feature extractors conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Trained for semantic content (class identity).
    Semantic,
    /// Trained with a masked-prediction objective (local acoustics).
    MaskedPred,
}

impl EncoderKind {
    pub fn name(&self) -> &'static str {
        match self {
            EncoderKind::Semantic => "semantic",
            EncoderKind::MaskedPred => "masked-pred",
        }
    }

    pub fn all() -> [EncoderKind; 2] {
        [EncoderKind::Semantic, EncoderKind::MaskedPred]
    }
}

/// Architecture of one encoder. Both encoders use the same config; their
/// weights differ via the seed derived from the parameter names.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Feature width at every block.
    pub d_enc: usize,
    /// Stride of the stem conv over mel frames.
    pub stem_stride: usize,
    /// Number of blocks after the stem.
    pub n_blocks: usize,
    /// Blocks whose conv downsamples by 2.
    pub stride_layers: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { d_enc: 16, stem_stride: 2, n_blocks: 12, stride_layers: vec![4, 8] }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_enc == 0 || self.n_blocks == 0 || self.stem_stride == 0 {
            return Err(Error::Config("encoder dims and strides must be positive".into()));
        }
        for &l in &self.stride_layers {
            if l >= self.n_blocks {
                return Err(Error::Config(format!(
                    "stride layer {l} out of range (blocks 0..{})",
                    self.n_blocks
                )));
            }
        }
        Ok(())
    }

    pub fn validate_taps(&self, taps: &[usize]) -> Result<()> {
        if taps.is_empty() {
            return Err(Error::Config("at least one tap layer is required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &t in taps {
            if t >= self.n_blocks {
                return Err(Error::Config(format!(
                    "tap {t} out of range (blocks 0..{})",
                    self.n_blocks
                )));
            }
            if !seen.insert(t) {
                return Err(Error::Config(format!("duplicate tap layer {t}")));
            }
        }
        Ok(())
    }
}

/// Where to tap one encoder: block indices whose outputs feed projections.
pub type TapSpec = Vec<usize>;

/// One tapped activation: `features` is [n_tokens, d_enc]; `times[i]` is the
/// center time (seconds) of token i in the source waveform.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub tap: usize,
    pub features: Tensor,
    pub times: Vec<f64>,
}

fn param_name(kind: EncoderKind, part: &str) -> String {
    // Frozen: these names carry neither "proj" nor "audio_xattn".
    format!("base.audio_enc.{}.{part}", kind.name())
}

/// Register the frozen weights of one encoder. Initialization is seeded per
/// tensor from (master seed, parameter name), so the weights are a pure
/// function of the seed and the architecture.
pub fn register_encoder(
    store: &mut ParamStore,
    kind: EncoderKind,
    cfg: &EncoderConfig,
    master_seed: u64,
) -> Result<()> {
    cfg.validate()?;
    let d = cfg.d_enc;
    fn reg_impl(
        store: &mut ParamStore,
        kind: EncoderKind,
        master_seed: u64,
        part: &str,
        shape: &[usize],
        std: f64,
    ) -> Result<()> {
        let name = param_name(kind, part);
        let mut rng = rng_for(master_seed, &name, 0);
        let t = if std == 0.0 {
            Tensor::zeros(shape)
        } else {
            Tensor::randn(shape, std, &mut rng)
        };
        store.register(&name, t)?;
        Ok(())
    }
    let reg = |store: &mut ParamStore, part: &str, shape: &[usize], std: f64| {
        reg_impl(store, kind, master_seed, part, shape, std)
    };
    reg(store, "stem.w", &[d, N_MEL, 3], (1.0 / (N_MEL as f64 * 3.0)).sqrt())?;
    reg(store, "stem.b", &[d], 0.0)?;
    let ds = (1.0 / d as f64).sqrt();
    for i in 0..cfg.n_blocks {
        reg(store, &format!("block{i}.conv_w"), &[d, d, 3], (1.0 / (d as f64 * 3.0)).sqrt())?;
        reg(store, &format!("block{i}.conv_b"), &[d], 0.0)?;
        reg(store, &format!("block{i}.attn_wq"), &[d, d], ds)?;
        reg(store, &format!("block{i}.attn_wk"), &[d, d], ds)?;
        reg(store, &format!("block{i}.attn_wv"), &[d, d], ds)?;
        reg(store, &format!("block{i}.attn_wo"), &[d, d], ds)?;
        let mut gain = Tensor::zeros(&[d]);
        gain.data.fill(1.0);
        store.register(&param_name(kind, &format!("block{i}.ln_gain")), gain)?;
        reg(store, &format!("block{i}.ln_bias"), &[d], 0.0)?;
    }
    Ok(())
}

fn get<'a>(store: &'a ParamStore, kind: EncoderKind, part: &str) -> Result<&'a Tensor> {
    let name = param_name(kind, part);
    store
        .get(&name)
        .map(|p| &p.value)
        .ok_or_else(|| Error::Contract(format!("encoder parameter '{name}' not registered")))
}

/// 1-D conv along time with kernel 3, zero padding 1, the given stride,
/// followed by SiLU. `x` is [t_in, c_in] row-major, `w` is [c_out, c_in, 3].
fn conv1d_silu(
    x: &[f64],
    t_in: usize,
    c_in: usize,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
) -> (Vec<f64>, usize) {
    let c_out = w.shape[0];
    let t_out = (t_in - 1) / stride + 1;
    let mut out = vec![0.0; t_out * c_out];
    for to in 0..t_out {
        let center = to * stride;
        for co in 0..c_out {
            let mut acc = b.data[co];
            for (dk, off) in [(0usize, -1i64), (1, 0), (2, 1)] {
                let ti = center as i64 + off;
                if ti < 0 || ti >= t_in as i64 {
                    continue;
                }
                let xr = &x[ti as usize * c_in..(ti as usize + 1) * c_in];
                let wr = &w.data[(co * c_in) * 3..];
                for ci in 0..c_in {
                    acc += xr[ci] * wr[ci * 3 + dk];
                }
            }
            // silu(acc) = acc * sigmoid(acc)
            out[to * c_out + co] = acc / (1.0 + (-acc).exp());
        }
    }
    (out, t_out)
}

/// Single-head self-attention with residual: x + softmax(xWq (xWk)^T / sqrt(d)) xWv Wo.
fn attn_residual(x: &mut [f64], t: usize, d: usize, wq: &Tensor, wk: &Tensor, wv: &Tensor, wo: &Tensor) {
    let proj = |w: &Tensor| -> Vec<f64> {
        let mut out = vec![0.0; t * d];
        crate::tensor::matmul_acc(x, &w.data, t, d, d, &mut out);
        out
    };
    let q = proj(wq);
    let k = proj(wk);
    let v = proj(wv);
    let scale = 1.0 / (d as f64).sqrt();
    let mut ctx = vec![0.0; t * d];
    let mut logits = vec![0.0; t];
    for i in 0..t {
        let qi = &q[i * d..(i + 1) * d];
        let mut mx = f64::NEG_INFINITY;
        for j in 0..t {
            let kj = &k[j * d..(j + 1) * d];
            let s: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
            logits[j] = s;
            if s > mx {
                mx = s;
            }
        }
        let mut z = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - mx).exp();
            z += *l;
        }
        let crow = &mut ctx[i * d..(i + 1) * d];
        for j in 0..t {
            let a = logits[j] / z;
            let vj = &v[j * d..(j + 1) * d];
            for c in 0..d {
                crow[c] += a * vj[c];
            }
        }
    }
    let mut o = vec![0.0; t * d];
    crate::tensor::matmul_acc(&ctx, &wo.data, t, d, d, &mut o);
    for (xv, ov) in x.iter_mut().zip(&o) {
        *xv += ov;
    }
}

fn layer_norm_inplace(x: &mut [f64], t: usize, d: usize, gain: &Tensor, bias: &Tensor) {
    for r in 0..t {
        let row = &mut x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + 1e-5).sqrt();
        for c in 0..d {
            row[c] = (row[c] - mean) * rstd * gain.data[c] + bias.data[c];
        }
    }
}

/// Run one frozen encoder over a mel spectrogram and collect the tapped
/// activations. Token times follow the receptive-field centers: a stride-s
/// layer keeps times[s*t] of its input.
pub fn encode_taps(
    store: &ParamStore,
    kind: EncoderKind,
    cfg: &EncoderConfig,
    taps: &[usize],
    mel: &MelSpectrogram,
) -> Result<Vec<FeatureMap>> {
    cfg.validate()?;
    cfg.validate_taps(taps)?;
    let d = cfg.d_enc;

    let stem_w = get(store, kind, "stem.w")?;
    let stem_b = get(store, kind, "stem.b")?;
    let (mut x, mut t) =
        conv1d_silu(&mel.frames, mel.n_frames, N_MEL, stem_w, stem_b, cfg.stem_stride);
    let subsample = |times: &[f64], s: usize, t_out: usize| -> Vec<f64> {
        (0..t_out).map(|i| times[(i * s).min(times.len() - 1)]).collect()
    };
    let mut times = subsample(&mel.frame_times, cfg.stem_stride, t);

    let mut maps = Vec::new();
    for i in 0..cfg.n_blocks {
        let stride = if cfg.stride_layers.contains(&i) { 2 } else { 1 };
        let conv_w = get(store, kind, &format!("block{i}.conv_w"))?;
        let conv_b = get(store, kind, &format!("block{i}.conv_b"))?;
        let (nx, nt) = conv1d_silu(&x, t, d, conv_w, conv_b, stride);
        times = subsample(&times, stride, nt);
        x = nx;
        t = nt;
        if t == 0 {
            return Err(Error::Coverage(format!(
                "encoder {} ran out of tokens at block {i}",
                kind.name()
            )));
        }
        attn_residual(
            &mut x,
            t,
            d,
            get(store, kind, &format!("block{i}.attn_wq"))?,
            get(store, kind, &format!("block{i}.attn_wk"))?,
            get(store, kind, &format!("block{i}.attn_wv"))?,
            get(store, kind, &format!("block{i}.attn_wo"))?,
        );
        layer_norm_inplace(
            &mut x,
            t,
            d,
            get(store, kind, &format!("block{i}.ln_gain"))?,
            get(store, kind, &format!("block{i}.ln_bias"))?,
        );
        if taps.contains(&i) {
            maps.push(FeatureMap {
                tap: i,
                features: Tensor::from_vec(&[t, d], x.clone())?,
                times: times.clone(),
            });
        }
    }
    // Return taps in the order requested, not in depth order.
    let mut ordered = Vec::with_capacity(taps.len());
    for &want in taps {
        let m = maps.iter().find(|m| m.tap == want).expect("tap recorded");
        ordered.push(m.clone());
    }
    for m in &ordered {
        if !m.features.is_finite() {
            return Err(Error::Numerical(format!(
                "encoder {} tap {} produced non-finite features",
                kind.name(),
                m.tap
            )));
        }
    }
    Ok(ordered)
}
