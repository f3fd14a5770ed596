//! Frame timelines and temporal attention windows.
//!
//! A frame i (1-based) of a clip at `fps` is centered at (i - 0.5) / fps.
//! Each frame may attend to the audio tokens whose timestamps fall within a
//! closed window of +/- radius_frames / fps seconds around its center. The
//! half-frame radius reproduces a non-overlapping chunk split when tokens
//! are uniform, which is the baseline this design improves on.

use crate::{Error, Result};

/// Frame-center timestamps for a fixed-rate clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTimeline {
    pub n_frames: usize,
    pub fps: f64,
    /// times[i] = (i + 0.5) / fps for i in 0..n_frames.
    pub times: Vec<f64>,
}

impl FrameTimeline {
    pub fn new(n_frames: usize, fps: f64) -> Result<Self> {
        if n_frames == 0 {
            return Err(Error::Config("timeline needs at least one frame".into()));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        let times = (0..n_frames).map(|i| (i as f64 + 0.5) / fps).collect();
        Ok(FrameTimeline { n_frames, fps, times })
    }

    pub fn duration(&self) -> f64 {
        self.n_frames as f64 / self.fps
    }
}

/// Attention window half-width, measured in frame periods.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WindowSpec {
    pub radius_frames: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { radius_frames: 1.5 }
    }
}

impl WindowSpec {
    pub fn new(radius_frames: f64) -> Result<Self> {
        if !(radius_frames.is_finite() && radius_frames > 0.0) {
            return Err(Error::Config(format!(
                "window radius must be positive, got {radius_frames}"
            )));
        }
        Ok(WindowSpec { radius_frames })
    }

    pub fn radius_seconds(&self, fps: f64) -> f64 {
        self.radius_frames / fps
    }
}

/// Boolean visibility matrix: rows are frames, columns are audio tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub n_frames: usize,
    pub n_tokens: usize,
    visible: Vec<bool>,
}

impl AttentionMask {
    pub fn is_visible(&self, frame: usize, token: usize) -> bool {
        self.visible[frame * self.n_tokens + token]
    }

    pub fn row(&self, frame: usize) -> &[bool] {
        &self.visible[frame * self.n_tokens..(frame + 1) * self.n_tokens]
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    /// Debug dump: one '0'/'1' row per frame.
    pub fn dump(&self) -> String {
        let mut s = String::with_capacity(self.n_frames * (self.n_tokens + 1));
        for f in 0..self.n_frames {
            for t in 0..self.n_tokens {
                s.push(if self.is_visible(f, t) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    /// Column-concatenate per-source masks (same frame count required).
    /// Token order must match the concatenation order of the sources.
    pub fn concat(parts: &[AttentionMask]) -> Result<AttentionMask> {
        if parts.is_empty() {
            return Err(Error::Contract("mask concat: empty part list".into()));
        }
        let n_frames = parts[0].n_frames;
        if parts.iter().any(|p| p.n_frames != n_frames) {
            return Err(Error::Shape("mask concat: frame counts differ".into()));
        }
        let n_tokens = parts.iter().map(|p| p.n_tokens).sum();
        let mut visible = Vec::with_capacity(n_frames * n_tokens);
        for f in 0..n_frames {
            for p in parts {
                visible.extend_from_slice(p.row(f));
            }
        }
        Ok(AttentionMask { n_frames, n_tokens, visible })
    }

    /// Expand frame rows to per-query rows: each frame contributes
    /// `queries_per_frame` identical rows. Used when all spatial tokens of a
    /// frame share that frame's window.
    pub fn expand_rows(&self, queries_per_frame: usize) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.n_frames * queries_per_frame * self.n_tokens);
        for f in 0..self.n_frames {
            for _ in 0..queries_per_frame {
                out.extend_from_slice(self.row(f));
            }
        }
        out
    }
}

/// Token j is visible to frame i iff |token_times[j] - center_i| <= radius
/// (closed interval). Every frame must see at least one token.
pub fn build_window_mask(
    timeline: &FrameTimeline,
    token_times: &[f64],
    spec: WindowSpec,
) -> Result<AttentionMask> {
    if token_times.is_empty() {
        return Err(Error::Coverage("no audio tokens to attend to".into()));
    }
    let dur = timeline.duration();
    for (j, &t) in token_times.iter().enumerate() {
        if !(t.is_finite() && (0.0..=dur).contains(&t)) {
            return Err(Error::Config(format!(
                "token {j} time {t} outside clip span [0, {dur}]"
            )));
        }
    }
    let r = spec.radius_seconds(timeline.fps);
    let n_tokens = token_times.len();
    let mut visible = vec![false; timeline.n_frames * n_tokens];
    for (i, &c) in timeline.times.iter().enumerate() {
        let mut any = false;
        for (j, &t) in token_times.iter().enumerate() {
            if (t - c).abs() <= r {
                visible[i * n_tokens + j] = true;
                any = true;
            }
        }
        if !any {
            return Err(Error::Coverage(format!(
                "frame {} (center {c:.4}s) sees no audio token at radius {} frames",
                i + 1,
                spec.radius_frames
            )));
        }
    }
    Ok(AttentionMask { n_frames: timeline.n_frames, n_tokens, visible })
}

/// Baseline mask: tokens split into n_frames contiguous chunks, sized
/// floor/ceil with the remainder going to the earliest chunks; frame i sees
/// exactly chunk i. Columns partition across rows.
pub fn chunk_mask(n_frames: usize, n_tokens: usize) -> Result<AttentionMask> {
    if n_frames == 0 {
        return Err(Error::Config("chunk mask needs at least one frame".into()));
    }
    if n_tokens < n_frames {
        return Err(Error::Coverage(format!(
            "cannot split {n_tokens} tokens into {n_frames} non-empty chunks"
        )));
    }
    let base = n_tokens / n_frames;
    let rem = n_tokens % n_frames;
    let mut visible = vec![false; n_frames * n_tokens];
    let mut start = 0usize;
    for f in 0..n_frames {
        let len = base + usize::from(f < rem);
        for j in start..start + len {
            visible[f * n_tokens + j] = true;
        }
        start += len;
    }
    Ok(AttentionMask { n_frames, n_tokens, visible })
}
