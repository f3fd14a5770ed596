//! On-disk clip container and corpus loading.
//!
//! A clip is a directory holding four files:
//!
//! ```text
//! <id>/
//!   meta.json    schema-versioned metadata (fps, dims, duration, labels)
//!   frames.bin   magic header + raw u8 grayscale frame stack
//!   audio.pcm    16 kHz mono i16 little-endian samples
//!   audio.json   audio sidecar (sample count, rate, owning clip id)
//! ```
//!
//! A corpus is a directory of such clip directories. Loading is strict:
//! any mismatch between header, sidecar, and payload is a format error,
//! and duplicate ids across a corpus are a corpus error.

use std::collections::BTreeSet;
use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::latent::FRAME_SIZE;

/// Magic prefix of `frames.bin`; the trailing byte is the format version.
pub const FRAMES_MAGIC: [u8; 8] = *b"CLIPFRM\x01";
/// Schema version written into `meta.json`.
pub const META_SCHEMA_VERSION: u32 = 1;

/// Ground-truth annotations available on synthetic corpora only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipLabels {
    /// Event-class vocabulary name (e.g. "bounce").
    pub class_name: String,
    /// True audio-visual event times in seconds, ascending.
    pub event_times: Vec<f64>,
    /// Tags of every corruption applied to this clip, in application order.
    pub corruptions: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipMeta {
    schema_version: u32,
    id: String,
    fps: f64,
    width: usize,
    height: usize,
    duration: f64,
    labels: Option<ClipLabels>,
}

/// One audio-video clip: a grayscale frame stack plus a waveform.
#[derive(Debug, Clone)]
pub struct ClipRecord {
    /// Unique id within a corpus; doubles as the directory name.
    pub id: String,
    /// Native video frame rate.
    pub fps: f64,
    /// Frame width in pixels.
    pub width: usize,
    /// Frame height in pixels.
    pub height: usize,
    /// Clip length in seconds; frame count == round(duration * fps).
    pub duration: f64,
    /// Frame stack, `n_frames * height * width` bytes, row-major per frame.
    pub frames: Vec<u8>,
    /// Paired mono audio.
    pub audio: Waveform,
    /// Generator ground truth (synthetic corpora only).
    pub labels: Option<ClipLabels>,
}

impl ClipRecord {
    /// Number of frames in the stack.
    pub fn n_frames(&self) -> usize {
        self.frames.len() / (self.width * self.height)
    }

    /// Borrow frame `i` as a `height*width` byte slice.
    pub fn frame(&self, i: usize) -> &[u8] {
        let px = self.width * self.height;
        &self.frames[i * px..(i + 1) * px]
    }

    /// Check the container invariants.
    ///
    /// Frame count must equal `round(duration * fps)`, the stack length must
    /// be an exact multiple of the frame size, and the audio must span the
    /// same duration as the video (within half a frame).
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains('/') {
            return Err(Error::Format(format!("invalid clip id {:?}", self.id)));
        }
        if self.fps <= 0.0 || self.duration <= 0.0 || self.width == 0 || self.height == 0 {
            return Err(Error::Format(format!(
                "clip {}: non-positive fps/duration/dims",
                self.id
            )));
        }
        let px = self.width * self.height;
        if self.frames.is_empty() || self.frames.len() % px != 0 {
            return Err(Error::Format(format!(
                "clip {}: frame stack length {} not a multiple of {}x{}",
                self.id,
                self.frames.len(),
                self.height,
                self.width
            )));
        }
        let expect = (self.duration * self.fps).round() as usize;
        if self.n_frames() != expect {
            return Err(Error::Format(format!(
                "clip {}: {} frames but duration {}s at {} fps implies {}",
                self.id,
                self.n_frames(),
                self.duration,
                self.fps,
                expect
            )));
        }
        let audio_dur = self.audio.duration();
        if (audio_dur - self.duration).abs() > 0.5 / self.fps {
            return Err(Error::Format(format!(
                "clip {}: audio spans {:.3}s but video spans {:.3}s",
                self.id, audio_dur, self.duration
            )));
        }
        Ok(())
    }

    /// Write the clip as `<root>/<id>/` (creating directories, overwriting files).
    pub fn save(&self, root: &Path) -> Result<()> {
        self.validate()?;
        let dir = root.join(&self.id);
        std::fs::create_dir_all(&dir)?;

        let meta = ClipMeta {
            schema_version: META_SCHEMA_VERSION,
            id: self.id.clone(),
            fps: self.fps,
            width: self.width,
            height: self.height,
            duration: self.duration,
            labels: self.labels.clone(),
        };
        let json = serde_json::to_string_pretty(&meta)?;
        std::fs::write(dir.join("meta.json"), json)?;

        let mut bin = Vec::with_capacity(20 + self.frames.len());
        bin.extend_from_slice(&FRAMES_MAGIC);
        bin.extend_from_slice(&(self.n_frames() as u32).to_le_bytes());
        bin.extend_from_slice(&(self.width as u32).to_le_bytes());
        bin.extend_from_slice(&(self.height as u32).to_le_bytes());
        bin.extend_from_slice(&self.frames);
        let mut f = std::fs::File::create(dir.join("frames.bin"))?;
        f.write_all(&bin)?;

        self.audio
            .write_pcm(&dir.join("audio.pcm"), &dir.join("audio.json"), &self.id)?;
        Ok(())
    }

    /// Load a clip from its directory; the directory name must equal the id.
    pub fn load(dir: &Path) -> Result<ClipRecord> {
        let meta_raw = std::fs::read_to_string(dir.join("meta.json"))?;
        let meta: ClipMeta = serde_json::from_str(&meta_raw)?;
        if meta.schema_version != META_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "clip {}: unsupported meta schema {}",
                meta.id, meta.schema_version
            )));
        }
        let dir_name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if meta.id != dir_name {
            return Err(Error::Corpus(format!(
                "clip directory {:?} holds meta for id {:?}",
                dir_name, meta.id
            )));
        }

        let mut f = std::fs::File::open(dir.join("frames.bin"))?;
        let mut bin = Vec::new();
        f.read_to_end(&mut bin)?;
        if bin.len() < 20 || bin[..8] != FRAMES_MAGIC {
            return Err(Error::Format(format!("clip {}: bad frames.bin magic", meta.id)));
        }
        let n_frames = u32::from_le_bytes(bin[8..12].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bin[12..16].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bin[16..20].try_into().unwrap()) as usize;
        if width != meta.width || height != meta.height {
            return Err(Error::Format(format!(
                "clip {}: frames.bin is {}x{} but meta says {}x{}",
                meta.id, width, height, meta.width, meta.height
            )));
        }
        let payload = &bin[20..];
        if payload.len() != n_frames * width * height {
            return Err(Error::Format(format!(
                "clip {}: frames.bin payload {} bytes, header implies {}",
                meta.id,
                payload.len(),
                n_frames * width * height
            )));
        }

        let (audio, owner) = Waveform::read_pcm(&dir.join("audio.pcm"), &dir.join("audio.json"))?;
        if owner != meta.id {
            return Err(Error::Corpus(format!(
                "clip {}: audio sidecar names owner {:?}",
                meta.id, owner
            )));
        }

        let record = ClipRecord {
            id: meta.id,
            fps: meta.fps,
            width: meta.width,
            height: meta.height,
            duration: meta.duration,
            frames: payload.to_vec(),
            audio,
            labels: meta.labels,
        };
        record.validate()?;
        Ok(record)
    }
}

/// Load every clip directory under `root`, sorted by id.
///
/// Non-directories are ignored. Duplicate ids (possible only through
/// mismatched meta) are a corpus error.
pub fn load_corpus(root: &Path) -> Result<Vec<ClipRecord>> {
    let mut dirs: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut seen = BTreeSet::new();
    let mut clips = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let clip = ClipRecord::load(&dir)?;
        if !seen.insert(clip.id.clone()) {
            return Err(Error::Corpus(format!("duplicate clip id {:?}", clip.id)));
        }
        clips.push(clip);
    }
    clips.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(clips)
}

/// Load only the clips named in `ids` from a corpus directory.
pub fn load_clips(root: &Path, ids: &[String]) -> Result<Vec<ClipRecord>> {
    let mut seen = BTreeSet::new();
    let mut clips = Vec::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.clone()) {
            return Err(Error::Corpus(format!("duplicate clip id {:?}", id)));
        }
        let dir = root.join(id);
        if !dir.is_dir() {
            return Err(Error::Dependency(format!(
                "clip {:?} not found under {}; generate the benchmark first",
                id,
                root.display()
            )));
        }
        clips.push(ClipRecord::load(&dir)?);
    }
    Ok(clips)
}

/// One evaluation/training window: a fixed-rate view into a native clip.
///
/// Frames are converted to f64 in [0,1] and resized to the model's
/// 32x32 input resolution (nearest neighbour) if the source differs.
#[derive(Debug, Clone)]
pub struct ClipWindow {
    /// Phase offset in native frames (window k starts at native frame k).
    pub phase: usize,
    /// Frames at the target rate, each `FRAME_SIZE*FRAME_SIZE` values in [0,1].
    pub frames: Vec<Vec<f64>>,
    /// Audio slice starting at `phase / native_fps`, zero-padded to the window span.
    pub audio: Waveform,
}

/// Extract `n_windows` target-rate windows from a native-rate clip.
///
/// The native rate must be an integer multiple of `target_fps`; window `p`
/// takes native frames `p, p+stride, ...` (`n_frames_out` of them) and the
/// audio starting at `p / fps` seconds. `n_windows` may not exceed the
/// stride (windows beyond it would alias window 0 shifted by a full frame).
pub fn extract_windows(
    clip: &ClipRecord,
    target_fps: f64,
    n_frames_out: usize,
    n_windows: usize,
) -> Result<Vec<ClipWindow>> {
    if target_fps <= 0.0 || n_frames_out == 0 || n_windows == 0 {
        return Err(Error::Config("window extraction needs positive fps/counts".into()));
    }
    let ratio = clip.fps / target_fps;
    let stride = ratio.round() as usize;
    if stride == 0 || (ratio - stride as f64).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "native fps {} is not an integer multiple of target fps {}",
            clip.fps, target_fps
        )));
    }
    if n_windows > stride {
        return Err(Error::Config(format!(
            "{} windows requested but stride {} admits at most {}",
            n_windows, stride, stride
        )));
    }
    let need = (n_windows - 1) + (n_frames_out - 1) * stride + 1;
    if clip.n_frames() < need {
        return Err(Error::Contract(format!(
            "clip {} has {} frames, {} needed for {} windows of {}",
            clip.id,
            clip.n_frames(),
            need,
            n_windows,
            n_frames_out
        )));
    }

    let span = n_frames_out as f64 / target_fps;
    let span_samples = (span * crate::audio::SAMPLE_RATE as f64).round() as usize;
    let mut out = Vec::with_capacity(n_windows);
    for p in 0..n_windows {
        let frames: Vec<Vec<f64>> = (0..n_frames_out)
            .map(|k| resize_to_model(clip, p + k * stride))
            .collect();
        let start = ((p as f64 / clip.fps) * crate::audio::SAMPLE_RATE as f64).round() as usize;
        let mut samples = vec![0.0; span_samples];
        let avail = clip.audio.samples.len().saturating_sub(start);
        let n = avail.min(span_samples);
        samples[..n].copy_from_slice(&clip.audio.samples[start..start + n]);
        out.push(ClipWindow {
            phase: p,
            frames,
            audio: Waveform::new(samples),
        });
    }
    Ok(out)
}

/// Convert frame `i` to f64 [0,1] at the model resolution (nearest neighbour).
fn resize_to_model(clip: &ClipRecord, i: usize) -> Vec<f64> {
    let src = clip.frame(i);
    if clip.width == FRAME_SIZE && clip.height == FRAME_SIZE {
        return src.iter().map(|&b| b as f64 / 255.0).collect();
    }
    let mut out = vec![0.0; FRAME_SIZE * FRAME_SIZE];
    for y in 0..FRAME_SIZE {
        let sy = y * clip.height / FRAME_SIZE;
        for x in 0..FRAME_SIZE {
            let sx = x * clip.width / FRAME_SIZE;
            out[y * FRAME_SIZE + x] = src[sy * clip.width + sx] as f64 / 255.0;
        }
    }
    out
}
