//! Trainable projections from frozen encoder taps to cross-attention tokens.
//!
//! Each (encoder, tap) pair owns one linear projection into model width.
//! Projected tokens from every tap of every encoder are concatenated into a
//! single sequence; each token keeps its source tag and center time so the
//! windowed attention mask can be built per token.

use crate::tensor::{NodeId, ParamStore, Tape, Tensor};
use crate::util::rng_for;
use crate::{Error, Result};

use super::encoder::{EncoderKind, FeatureMap};

/// Provenance of one contiguous span of merged tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSource {
    pub encoder: EncoderKind,
    pub tap: usize,
    /// First row of this span in the merged sequence.
    pub start: usize,
    pub len: usize,
}

/// Merged audio token sequence living on the tape.
#[derive(Debug, Clone)]
pub struct AudioTokenSequence {
    /// [n_tokens, d_model] tape node (differentiable through the projections).
    pub tokens: NodeId,
    /// Center time of each token, seconds.
    pub times: Vec<f64>,
    pub sources: Vec<TokenSource>,
}

impl AudioTokenSequence {
    pub fn n_tokens(&self) -> usize {
        self.times.len()
    }
}

fn proj_name(kind: EncoderKind, tap: usize, which: &str) -> String {
    format!("audio_proj.{}.{tap}.{which}", kind.name())
}

/// Register one trainable projection per (encoder, tap).
pub fn register_projections(
    store: &mut ParamStore,
    plan: &[(EncoderKind, Vec<usize>)],
    d_enc: usize,
    d_model: usize,
    master_seed: u64,
) -> Result<()> {
    if d_enc == 0 || d_model == 0 {
        return Err(Error::Config("projection dims must be positive".into()));
    }
    for (kind, taps) in plan {
        for &tap in taps {
            let wname = proj_name(*kind, tap, "w");
            let mut rng = rng_for(master_seed, &wname, 0);
            let w = Tensor::randn(&[d_enc, d_model], (1.0 / d_enc as f64).sqrt(), &mut rng);
            store.register(&wname, w)?;
            store.register(&proj_name(*kind, tap, "b"), Tensor::zeros(&[d_model]))?;
        }
    }
    Ok(())
}

/// Project every tapped feature map and concatenate into one token sequence.
/// Every feature map must have a registered projection for its (encoder, tap).
pub fn project_and_merge(
    tape: &mut Tape,
    store: &ParamStore,
    inputs: &[(EncoderKind, Vec<FeatureMap>)],
) -> Result<AudioTokenSequence> {
    let mut parts = Vec::new();
    let mut times = Vec::new();
    let mut sources = Vec::new();
    for (kind, maps) in inputs {
        for m in maps {
            let wname = proj_name(*kind, m.tap, "w");
            if store.index_of(&wname).is_none() {
                return Err(Error::Contract(format!(
                    "no projection registered for encoder '{}' tap {}",
                    kind.name(),
                    m.tap
                )));
            }
            if m.times.len() != m.features.rows() {
                return Err(Error::Contract(format!(
                    "feature map tap {} has {} times for {} tokens",
                    m.tap,
                    m.times.len(),
                    m.features.rows()
                )));
            }
            let x = tape.input(m.features.clone())?;
            let w = tape.param(store, &wname)?;
            let b = tape.param(store, &proj_name(*kind, m.tap, "b"))?;
            let xw = tape.matmul(x, w)?;
            let tok = tape.add_bias(xw, b)?;
            sources.push(TokenSource {
                encoder: *kind,
                tap: m.tap,
                start: times.len(),
                len: m.times.len(),
            });
            times.extend_from_slice(&m.times);
            parts.push(tok);
        }
    }
    if parts.is_empty() {
        return Err(Error::Contract("no feature maps given to project".into()));
    }
    let tokens = tape.concat_rows(&parts)?;
    Ok(AudioTokenSequence { tokens, times, sources })
}
