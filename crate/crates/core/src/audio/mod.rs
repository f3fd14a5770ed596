//! Audio front end: fixed-rate waveforms, log-mel features, frozen toy
//! encoders, and the trainable projections that turn tap features into
//! cross-attention tokens.

pub mod encoder;
pub mod mel;
pub mod tokens;

pub use encoder::{encode_taps, register_encoder, EncoderConfig, EncoderKind, FeatureMap, TapSpec};
pub use mel::{mel_spectrogram, MelSpectrogram};
pub use tokens::{project_and_merge, register_projections, AudioTokenSequence};

use crate::{Error, Result};
use std::path::Path;

/// All audio in the system is mono 16 kHz.
pub const SAMPLE_RATE: usize = 16_000;

/// Mono waveform at [`SAMPLE_RATE`], values nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct PcmSidecar {
    clip_id: String,
    sample_count: usize,
    sample_rate: usize,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Self {
        Waveform { samples }
    }

    pub fn silence(duration: f64) -> Self {
        Waveform { samples: vec![0.0; (duration * SAMPLE_RATE as f64).round() as usize] }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Write headerless little-endian 16-bit PCM plus a JSON sidecar with
    /// the sample count and clip id.
    pub fn write_pcm(&self, pcm_path: &Path, sidecar_path: &Path, clip_id: &str) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.samples.len() * 2);
        for &s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(pcm_path, bytes)?;
        let sidecar = PcmSidecar {
            clip_id: clip_id.to_string(),
            sample_count: self.samples.len(),
            sample_rate: SAMPLE_RATE,
        };
        std::fs::write(sidecar_path, serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Read PCM written by [`Waveform::write_pcm`], validating the sidecar.
    pub fn read_pcm(pcm_path: &Path, sidecar_path: &Path) -> Result<(Self, String)> {
        let sidecar: PcmSidecar = serde_json::from_slice(&std::fs::read(sidecar_path)?)?;
        if sidecar.sample_rate != SAMPLE_RATE {
            return Err(Error::Format(format!(
                "unsupported sample rate {} (expected {SAMPLE_RATE})",
                sidecar.sample_rate
            )));
        }
        let bytes = std::fs::read(pcm_path)?;
        if bytes.len() != sidecar.sample_count * 2 {
            return Err(Error::Format(format!(
                "pcm length {} bytes does not match sidecar count {}",
                bytes.len(),
                sidecar.sample_count
            )));
        }
        let samples = bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32767.0)
            .collect();
        Ok((Waveform { samples }, sidecar.clip_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let pcm = dir.path().join("a.pcm");
        let side = dir.path().join("a.json");
        let w = Waveform::new((0..1000).map(|i| (i as f64 * 0.02).sin() * 0.8).collect());
        w.write_pcm(&pcm, &side, "clip-7").unwrap();
        let (r, id) = Waveform::read_pcm(&pcm, &side).unwrap();
        assert_eq!(id, "clip-7");
        assert_eq!(r.samples.len(), 1000);
        for (a, b) in w.samples.iter().zip(&r.samples) {
            assert!((a - b).abs() <= 1.0 / 32767.0 + 1e-12);
        }
    }

    #[test]
    fn sidecar_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let pcm = dir.path().join("a.pcm");
        let side = dir.path().join("a.json");
        Waveform::new(vec![0.0; 10]).write_pcm(&pcm, &side, "x").unwrap();
        std::fs::write(&pcm, [0u8; 6]).unwrap();
        assert!(matches!(Waveform::read_pcm(&pcm, &side), Err(Error::Format(_))));
    }
}
