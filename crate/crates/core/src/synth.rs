//! Synthetic audio-video benchmark generator.
//!
//! Produces paired 24 fps 32x32 grayscale video and 16 kHz audio with known
//! synchronization ground truth: each scene class renders a distinct moving
//! object, and at every event time the scene emits a brightness impulse while
//! the audio emits an exponentially decaying tone burst at a class-specific
//! carrier frequency. Event timing is therefore knowable from the audio (and
//! from the rendered video), but not from the first frame or the class label
//! alone — which is exactly the supervision the audio pathway must learn.
//!
//! A corruption taxonomy mirrors the failure modes of in-the-wild corpora:
//! audio-visual desync, noise, distractors, occlusion, shot cuts, camera
//! shake, burned-in captions, and low resolution. `build_benchmark`
//! materializes pretrain/finetune/test splits with per-clip derived seeds.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::clips::{ClipLabels, ClipRecord};
use crate::error::{Error, Result};
use crate::util::{derive_seed, rng_for};

/// Closed event-class vocabulary.
pub const CLASSES: [&str; 4] = ["bounce", "flash", "strike", "pulse"];
/// Audio carrier frequency per class (Hz); one octave apart so class
/// identity is trivially audible to the toy encoders.
pub const CARRIERS: [f64; 4] = [220.0, 440.0, 880.0, 1760.0];
/// Native render rate; evaluation windows subsample this to the model rate.
pub const NATIVE_FPS: f64 = 24.0;
/// Clip length in seconds.
pub const CLIP_DURATION: f64 = 2.0;
/// Render resolution (square frames).
pub const RES: usize = 32;

/// Tone-burst decay constant (s); short enough that per-frame energy at
/// 6 fps drops sharply after the onset frame.
const BURST_TAU: f64 = 0.09;
/// Tone-burst peak amplitude.
const BURST_AMP: f64 = 0.62;
/// Brightness-impulse amplitude added at the event frame...
const GLOW_AMP: f64 = 0.70;
/// ...decaying by this factor every native frame.
const GLOW_DECAY: f64 = 0.45;

/// Index of a class name in [`CLASSES`].
pub fn class_index(name: &str) -> Option<usize> {
    CLASSES.iter().position(|c| *c == name)
}

/// Full description of one clean scene; rendering is deterministic in this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    /// Index into [`CLASSES`].
    pub class_id: usize,
    /// Audio-visual event times (s), ascending, interior to the clip.
    pub event_times: Vec<f64>,
    /// Object anchor x/y in [0,1] (mapped to the frame interior).
    pub object_x: f64,
    pub object_y: f64,
    /// Object radius in pixels.
    pub object_size: f64,
    /// Object peak intensity in [0,1].
    pub object_level: f64,
    /// Background base intensity in [0,1].
    pub bg_level: f64,
    /// Background texture phase in [0,1).
    pub bg_phase: f64,
    /// Clip length (s); the benchmark uses 2.0 throughout.
    pub duration: f64,
}

impl SceneSpec {
    /// Check the spec invariants (>=1 interior event, sane parameter ranges).
    pub fn validate(&self) -> Result<()> {
        if self.class_id >= CLASSES.len() {
            return Err(Error::Config(format!("class_id {} out of range", self.class_id)));
        }
        if self.duration <= 0.0 {
            return Err(Error::Config("duration must be positive".into()));
        }
        if self.event_times.is_empty() {
            return Err(Error::Config("scene must have at least one event".into()));
        }
        for &e in &self.event_times {
            if !(e > 0.0 && e < self.duration) {
                return Err(Error::Config(format!(
                    "event at {e}s outside (0, {})",
                    self.duration
                )));
            }
        }
        if self.event_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("event times must be strictly ascending".into()));
        }
        let unit = [self.object_x, self.object_y, self.object_level, self.bg_level, self.bg_phase];
        if unit.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("object/background parameters must lie in [0,1]".into()));
        }
        if !(1.0..=8.0).contains(&self.object_size) {
            return Err(Error::Config(format!("object_size {} outside [1,8]", self.object_size)));
        }
        Ok(())
    }

    /// Draw a random scene of the given class.
    ///
    /// Events start no earlier than 0.3 s (so every evaluation window's first
    /// frame is pre-event) and end by 1.82 s (so a small temporal offset
    /// stays in range); gaps are jittered in [0.55, 0.85] s to avoid periodic
    /// correlation peaks at whole-frame lags.
    pub fn random(class_id: usize, rng: &mut impl Rng) -> SceneSpec {
        let mut events = vec![rng.gen_range(0.30..0.55)];
        loop {
            let next = events.last().unwrap() + rng.gen_range(0.55..0.85);
            if next > 1.82 {
                break;
            }
            events.push(next);
        }
        SceneSpec {
            class_id,
            event_times: events,
            object_x: rng.gen_range(0.15..0.85),
            object_y: rng.gen_range(0.2..0.7),
            object_size: rng.gen_range(2.6..4.2),
            object_level: rng.gen_range(0.78..0.92),
            bg_level: rng.gen_range(0.16..0.30),
            bg_phase: rng.gen_range(0.0..1.0),
            duration: CLIP_DURATION,
        }
    }

    /// Fixed mid-range exemplar of a class (used for metric prototypes).
    pub fn canonical(class_id: usize) -> SceneSpec {
        SceneSpec {
            class_id,
            event_times: vec![0.5, 1.2],
            object_x: 0.5,
            object_y: 0.45,
            object_size: 3.4,
            object_level: 0.85,
            bg_level: 0.22,
            bg_phase: 0.25,
            duration: CLIP_DURATION,
        }
    }
}

/// Clamped cubic smoothstep on [0,1].
fn smooth01(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Alpha-composite a soft-edged disc onto the canvas.
///
/// Edges ramp over `ramp` pixels so legitimate scene objects stay below the
/// curation text detector's sharp-edge threshold; only the caption overlay
/// corruption draws hard edges.
fn composite_disc(canvas: &mut [f64], cx: f64, cy: f64, r: f64, ramp: f64, level: f64) {
    let y0 = ((cy - r - ramp).floor().max(0.0)) as usize;
    let y1 = ((cy + r + ramp).ceil().min(RES as f64 - 1.0)) as usize;
    let x0 = ((cx - r - ramp).floor().max(0.0)) as usize;
    let x1 = ((cx + r + ramp).ceil().min(RES as f64 - 1.0)) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let a = smooth01((r + ramp - d) / ramp);
            if a > 0.0 {
                let px = &mut canvas[y * RES + x];
                *px = *px * (1.0 - a) + level * a;
            }
        }
    }
}

/// Additively add a soft glow disc (the per-event brightness impulse).
fn add_glow(canvas: &mut [f64], cx: f64, cy: f64, r: f64, amp: f64) {
    let ramp = 2.5;
    let y0 = ((cy - r - ramp).floor().max(0.0)) as usize;
    let y1 = ((cy + r + ramp).ceil().min(RES as f64 - 1.0)) as usize;
    let x0 = ((cx - r - ramp).floor().max(0.0)) as usize;
    let x1 = ((cx + r + ramp).ceil().min(RES as f64 - 1.0)) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let a = smooth01((r + ramp - d) / ramp);
            canvas[y * RES + x] += amp * a;
        }
    }
}

/// Composite a soft-edged axis-aligned rectangle.
fn composite_rect(canvas: &mut [f64], cx: f64, cy: f64, hw: f64, hh: f64, ramp: f64, level: f64) {
    for y in 0..RES {
        let ay = smooth01((hh + ramp - (y as f64 - cy).abs()) / ramp);
        if ay <= 0.0 {
            continue;
        }
        for x in 0..RES {
            let ax = smooth01((hw + ramp - (x as f64 - cx).abs()) / ramp);
            let a = ax * ay;
            if a > 0.0 {
                let px = &mut canvas[y * RES + x];
                *px = *px * (1.0 - a) + level * a;
            }
        }
    }
}

/// Static two-octave sinusoid background; smooth at the text detector's blur
/// scale but textured enough that camera shake moves measurable mass.
fn background(spec: &SceneSpec) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let mut bg = vec![0.0; RES * RES];
    for y in 0..RES {
        for x in 0..RES {
            let (fx, fy) = (x as f64 / RES as f64, y as f64 / RES as f64);
            let coarse = (tau * (2.0 * fx + spec.bg_phase)).sin()
                * (tau * (2.0 * fy + 0.37 + 0.7 * spec.bg_phase)).sin();
            let fine = (tau * (4.0 * fx + 0.61 + 1.3 * spec.bg_phase)).sin()
                * (tau * (4.0 * fy + 0.13 + 0.4 * spec.bg_phase)).sin();
            bg[y * RES + x] = spec.bg_level + 0.09 * coarse + 0.05 * fine;
        }
    }
    bg
}

/// Piecewise scene progress: fraction of the way from the previous knot to
/// the next, with virtual knots just outside the clip so motion is defined
/// everywhere. Knots are the event times: objects "arrive" exactly on events.
fn segment_progress(events: &[f64], duration: f64, t: f64) -> f64 {
    let mut prev = -0.45;
    let mut next = events[0];
    for (i, &e) in events.iter().enumerate() {
        if t >= e {
            prev = e;
            next = if i + 1 < events.len() { events[i + 1] } else { duration + 0.45 };
        }
    }
    ((t - prev) / (next - prev)).clamp(0.0, 1.0)
}

/// Render the clean frame stack as f64 canvases in [0,1].
fn render_frames(spec: &SceneSpec, fps: f64, n_frames: usize) -> Vec<Vec<f64>> {
    let bg = background(spec);
    let ox = 4.0 + spec.object_x * (RES as f64 - 8.0);
    let oy = 4.0 + spec.object_y * (RES as f64 - 12.0);
    let r = spec.object_size;

    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        // Object positions use the frame's span start; an event at time e
        // first affects frame floor(e*fps).
        let t = i as f64 / fps;
        let mut canvas = bg.clone();
        let glow_center = match spec.class_id {
            0 => {
                // bounce: soft floor band, ball on parabolic arcs that touch
                // the floor exactly at event times.
                composite_rect(&mut canvas, RES as f64 / 2.0, 30.5, RES as f64, 1.5, 3.0, spec.bg_level + 0.12);
                let s = segment_progress(&spec.event_times, spec.duration, t);
                let h = (9.0 + r) * 4.0 * s * (1.0 - s);
                let floor_y = 28.5;
                composite_disc(&mut canvas, ox, floor_y - r - 0.8 - h, r, 3.5, spec.object_level);
                (ox, floor_y - 2.0)
            }
            1 => {
                // flash: static dim lamp that lights up on events (the glow).
                let lamp_r = r + 3.2;
                composite_disc(&mut canvas, ox, oy, lamp_r, 3.5, spec.bg_level + 0.08);
                (ox, oy)
            }
            2 => {
                // strike: static soft anvil, hammer falling onto it per event.
                let anvil_y = 25.5;
                composite_rect(&mut canvas, ox, anvil_y, 5.0, 2.5, 3.0, spec.bg_level + 0.12);
                let s = segment_progress(&spec.event_times, spec.duration, t);
                let hr = r * 0.8;
                let y_hit = anvil_y - 2.5 - hr + 0.5;
                let hy = 4.0 + s.powf(1.5) * (y_hit - 4.0);
                composite_disc(&mut canvas, ox, hy, hr, 3.5, spec.object_level);
                (ox, anvil_y - 2.0)
            }
            _ => {
                // pulse: breathing disc, glow on events.
                let tau = std::f64::consts::TAU;
                let rr = r + 1.2 + 0.9 * (tau * 0.9 * (t + spec.bg_phase)).sin();
                composite_disc(&mut canvas, ox, oy, rr, 3.5, 0.55);
                (ox, oy)
            }
        };

        // Event glow: brightness impulse at the event frame, exponential decay.
        for &e in &spec.event_times {
            let e_f = (e * fps).floor() as i64;
            let k = i as i64 - e_f;
            if k >= 0 {
                let amp = GLOW_AMP * GLOW_DECAY.powi(k as i32);
                if amp >= 0.01 {
                    let gr = if spec.class_id == 1 { r + 3.2 } else { 4.5 };
                    add_glow(&mut canvas, glow_center.0, glow_center.1, gr, amp);
                }
            }
        }
        frames.push(canvas);
    }
    frames
}

/// Render the event audio: one decaying tone burst per event at the class
/// carrier, plus a tiny seeded dither floor.
fn render_audio(spec: &SceneSpec, seed: u64) -> Waveform {
    let n = (spec.duration * SAMPLE_RATE as f64).round() as usize;
    let carrier = CARRIERS[spec.class_id];
    let tau = std::f64::consts::TAU;
    let mut samples = vec![0.0; n];
    for &e in &spec.event_times {
        let start = (e * SAMPLE_RATE as f64).round() as usize;
        for (i, s) in samples.iter_mut().enumerate().skip(start) {
            let dt = (i - start) as f64 / SAMPLE_RATE as f64;
            let env = BURST_AMP * (-dt / BURST_TAU).exp();
            if env < 1e-4 {
                break;
            }
            *s += env * (tau * carrier * dt).sin();
        }
    }
    let mut rng = rng_for(seed, "dither", 0);
    let dither = Normal::new(0.0, 3e-4).unwrap();
    for s in &mut samples {
        *s = (*s + dither.sample(&mut rng)).clamp(-1.0, 1.0);
    }
    Waveform::new(samples)
}

fn quantize(frames: Vec<Vec<f64>>) -> Vec<u8> {
    let mut out = Vec::with_capacity(frames.len() * RES * RES);
    for f in frames {
        out.extend(f.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

/// Render a clean clip; bit-identical for identical (spec, fps, seed, id).
pub fn generate_clip(spec: &SceneSpec, fps: f64, seed: u64, id: &str) -> Result<ClipRecord> {
    spec.validate()?;
    if fps <= 0.0 {
        return Err(Error::Config("fps must be positive".into()));
    }
    let n_frames = (spec.duration * fps).round() as usize;
    let frames = quantize(render_frames(spec, fps, n_frames));
    let clip = ClipRecord {
        id: id.to_string(),
        fps,
        width: RES,
        height: RES,
        duration: spec.duration,
        frames,
        audio: render_audio(spec, seed),
        labels: Some(ClipLabels {
            class_name: CLASSES[spec.class_id].to_string(),
            event_times: spec.event_times.clone(),
            corruptions: Vec::new(),
        }),
    };
    clip.validate()?;
    Ok(clip)
}

/// One corruption with its parameters; a clip may carry several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Corruption {
    /// Shift VIDEO events by `delta` seconds (audio untouched): the canonical
    /// misalignment the finetuning stage is meant to clean up.
    TemporalOffset { delta: f64 },
    /// Add white noise to the audio at the given signal-to-noise ratio.
    AmbientNoise { snr_db: f64 },
    /// Add a slow-moving blob unrelated to the events.
    DistractorMotion,
    /// Cover the most event-active region with a dark soft patch.
    OccludedSource,
    /// Hard cut to a different-looking scene at time `t`.
    ShotCut { t: f64 },
    /// Random per-frame translation up to `amplitude` pixels.
    CameraShake { amplitude: f64 },
    /// Static hard-edged checkerboard caption box covering `area` of the frame.
    TextOverlay { area: f64 },
    /// Materialize the clip at half resolution.
    LowRes,
}

impl Corruption {
    /// Stable label recorded in clip metadata.
    pub fn tag(&self) -> &'static str {
        match self {
            Corruption::TemporalOffset { .. } => "temporal-offset",
            Corruption::AmbientNoise { .. } => "ambient-noise",
            Corruption::DistractorMotion => "distractor-motion",
            Corruption::OccludedSource => "occluded-source",
            Corruption::ShotCut { .. } => "shot-cut",
            Corruption::CameraShake { .. } => "camera-shake",
            Corruption::TextOverlay { .. } => "text-overlay",
            Corruption::LowRes => "low-res",
        }
    }
}

fn frame_to_f64(bytes: &[u8]) -> Vec<f64> {
    bytes.iter().map(|&b| b as f64 / 255.0).collect()
}

fn f64_to_frame(vals: &[f64], out: &mut [u8]) {
    for (o, &v) in out.iter_mut().zip(vals) {
        *o = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
}

/// Apply one corruption, returning the modified clip with its label extended.
pub fn corrupt(clip: &ClipRecord, corr: &Corruption, seed: u64) -> Result<ClipRecord> {
    let mut out = clip.clone();
    let (w, h) = (clip.width, clip.height);
    let px = w * h;
    let n = clip.n_frames();
    match corr {
        Corruption::TemporalOffset { delta } => {
            let k = (delta * clip.fps).round() as i64;
            if k == 0 {
                return Err(Error::Config(format!(
                    "offset {delta}s rounds to zero frames at {} fps",
                    clip.fps
                )));
            }
            if let Some(labels) = &clip.labels {
                let margin = 1.5 / clip.fps;
                for &e in &labels.event_times {
                    let shifted = e + k as f64 / clip.fps;
                    if !(shifted > margin && shifted < clip.duration - margin) {
                        return Err(Error::Config(format!(
                            "offset {delta}s pushes event at {e}s out of range"
                        )));
                    }
                }
            }
            // Video frame i shows what the clean clip showed at i - k, with
            // the boundary frame frozen; audio (and its labels) stay put.
            for i in 0..n {
                let src = (i as i64 - k).clamp(0, n as i64 - 1) as usize;
                let (a, b) = (i * px, src * px);
                out.frames[a..a + px].copy_from_slice(&clip.frames[b..b + px]);
            }
        }
        Corruption::AmbientNoise { snr_db } => {
            if !(-10.0..=40.0).contains(snr_db) {
                return Err(Error::Config(format!("snr {snr_db} dB outside [-10, 40]")));
            }
            let p_sig: f64 =
                clip.audio.samples.iter().map(|s| s * s).sum::<f64>() / clip.audio.samples.len() as f64;
            if p_sig <= 0.0 {
                return Err(Error::Contract("cannot set an SNR on silent audio".into()));
            }
            let sigma = (p_sig / 10f64.powf(snr_db / 10.0)).sqrt();
            let mut rng = rng_for(seed, "ambient", 0);
            let noise = Normal::new(0.0, sigma).unwrap();
            for s in &mut out.audio.samples {
                *s = (*s + noise.sample(&mut rng)).clamp(-1.0, 1.0);
            }
        }
        Corruption::DistractorMotion => {
            let tau = std::f64::consts::TAU;
            for i in 0..n {
                let t = i as f64 / clip.fps;
                let cx = 7.5 + 4.5 * (tau * t / 1.3).cos();
                let cy = 7.5 + 4.5 * (tau * t / 1.3).sin();
                let mut canvas = frame_to_f64(out.frame(i));
                composite_disc(&mut canvas, cx, cy, 2.8, 3.0, 0.5);
                f64_to_frame(&canvas, &mut out.frames[i * px..(i + 1) * px]);
            }
        }
        Corruption::OccludedSource => {
            // Find the most temporally active region of the clean clip and
            // park a soft dark patch on it for the whole duration.
            let mut mean = vec![0.0; px];
            for i in 0..n {
                for (m, &b) in mean.iter_mut().zip(clip.frame(i)) {
                    *m += b as f64 / n as f64;
                }
            }
            let mut var = vec![0.0; px];
            for i in 0..n {
                let f = clip.frame(i);
                for p in 0..px {
                    let d = f[p] as f64 - mean[p];
                    var[p] += d * d / n as f64;
                }
            }
            let argmax = var
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(p, _)| p)
                .unwrap();
            let (cy, cx) = ((argmax / w) as f64, (argmax % w) as f64);
            for i in 0..n {
                let mut canvas = frame_to_f64(out.frame(i));
                composite_disc(&mut canvas, cx, cy, 8.0, 4.0, 0.07);
                f64_to_frame(&canvas, &mut out.frames[i * px..(i + 1) * px]);
            }
        }
        Corruption::ShotCut { t } => {
            let k = (t * clip.fps).round() as usize;
            if !(3..=n.saturating_sub(3)).contains(&k) {
                return Err(Error::Config(format!("cut at {t}s leaves a degenerate side")));
            }
            // Invert everything after the cut: a maximally different scene
            // (histogram mass jumps across the intensity range) with zero
            // extra generator state.
            for b in &mut out.frames[k * px..] {
                *b = 255 - *b;
            }
        }
        Corruption::CameraShake { amplitude } => {
            let a = amplitude.round() as i64;
            if !(1..=5).contains(&a) {
                return Err(Error::Config(format!("shake amplitude {amplitude} outside [1,5] px")));
            }
            let mut rng = rng_for(seed, "shake", 0);
            for i in 0..n {
                let (dx, dy) = (rng.gen_range(-a..=a), rng.gen_range(-a..=a));
                let src: Vec<u8> = clip.frame(i).to_vec();
                let dst = &mut out.frames[i * px..(i + 1) * px];
                for y in 0..h {
                    let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    for x in 0..w {
                        let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        dst[y * w + x] = src[sy * w + sx];
                    }
                }
            }
        }
        Corruption::TextOverlay { area } => {
            if !(0.0..=0.5).contains(area) || *area <= 0.0 {
                return Err(Error::Config(format!("overlay area {area} outside (0, 0.5]")));
            }
            let side = (((area * px as f64).sqrt()).round() as usize).max(6).min(w.min(h) - 4);
            // Hard-edged 6 px checkerboard: sharp, static, persistent — the
            // signature the text filter is built to catch.
            for i in 0..n {
                let dst = &mut out.frames[i * px..(i + 1) * px];
                for y in 2..2 + side {
                    for x in 2..2 + side {
                        let on = ((y - 2) / 6 + (x - 2) / 6) % 2 == 0;
                        dst[y * w + x] = if on { 247 } else { 8 };
                    }
                }
            }
        }
        Corruption::LowRes => {
            if w % 2 != 0 || h % 2 != 0 {
                return Err(Error::Config("low-res needs even dimensions".into()));
            }
            let (w2, h2) = (w / 2, h / 2);
            let mut frames = Vec::with_capacity(n * w2 * h2);
            for i in 0..n {
                let f = clip.frame(i);
                for y in 0..h2 {
                    for x in 0..w2 {
                        let s = f[2 * y * w + 2 * x] as u32
                            + f[2 * y * w + 2 * x + 1] as u32
                            + f[(2 * y + 1) * w + 2 * x] as u32
                            + f[(2 * y + 1) * w + 2 * x + 1] as u32;
                        frames.push(((s as f64) / 4.0).round() as u8);
                    }
                }
            }
            out.frames = frames;
            out.width = w2;
            out.height = h2;
        }
    }
    match &mut out.labels {
        Some(labels) => labels.corruptions.push(corr.tag().to_string()),
        None => {
            return Err(Error::Contract(
                "corrupt() requires labeled clips so the corruption is recorded".into(),
            ))
        }
    }
    out.validate()?;
    Ok(out)
}

/// Draw a random corruption whose parameters are feasible for `clip`.
pub fn random_corruption(clip: &ClipRecord, rng: &mut impl Rng) -> Result<Corruption> {
    let events = clip
        .labels
        .as_ref()
        .map(|l| l.event_times.clone())
        .unwrap_or_default();
    let kind = rng.gen_range(0..8);
    Ok(match kind {
        0 => {
            let margin = 2.0 / clip.fps;
            let (lo, hi) = (
                events.iter().cloned().fold(f64::INFINITY, f64::min),
                events.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            );
            let mut candidates: Vec<f64> = Vec::new();
            for mag in [0.25, 0.21, 0.17] {
                for sign in [-1.0, 1.0] {
                    let d = sign * mag;
                    if lo + d > margin && hi + d < clip.duration - margin {
                        candidates.push(d);
                    }
                }
            }
            if candidates.is_empty() {
                return Err(Error::Config("no feasible temporal offset for clip".into()));
            }
            let delta = candidates[rng.gen_range(0..candidates.len())];
            Corruption::TemporalOffset { delta }
        }
        1 => Corruption::AmbientNoise { snr_db: rng.gen_range(-3.0..6.0) },
        2 => Corruption::DistractorMotion,
        3 => Corruption::OccludedSource,
        4 => Corruption::ShotCut { t: rng.gen_range(0.5..1.5) },
        5 => Corruption::CameraShake { amplitude: rng.gen_range(3..=4) as f64 },
        6 => Corruption::TextOverlay { area: rng.gen_range(0.12..0.22) },
        _ => Corruption::LowRes,
    })
}

/// Benchmark size and noise knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    /// Clips in the noisy pretraining split.
    pub n_pretrain: usize,
    /// Fraction of pretrain clips carrying a corruption (exact count).
    pub corruption_rate: f64,
    /// Clean clips per class in the finetune pool (K-shot draws from here).
    pub n_finetune_per_class: usize,
    /// Clean clips per class in the test split.
    pub n_test_per_class: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n_pretrain: 2000,
            corruption_rate: 0.6,
            n_finetune_per_class: 10,
            n_test_per_class: 20,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(Error::Config(format!(
                "corruption_rate {} outside [0,1]",
                self.corruption_rate
            )));
        }
        if self.n_pretrain == 0 || self.n_test_per_class == 0 {
            return Err(Error::Config("pretrain and test splits must be non-empty".into()));
        }
        Ok(())
    }
}

/// Schema version written into `manifest.json`.
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Split membership and provenance of a materialized benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config: BenchmarkConfig,
    /// Split name -> clip ids (sorted). Splits are disjoint; "test" and
    /// "finetune" are corruption-free by construction.
    pub splits: BTreeMap<String, Vec<String>>,
    /// Applied corruptions per split, by tag.
    pub corruption_counts: BTreeMap<String, usize>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DatasetManifest> {
        if !path.exists() {
            return Err(Error::Dependency(format!(
                "manifest {} not found; run benchmark generation first",
                path.display()
            )));
        }
        let m: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "manifest schema {} unsupported (expected {})",
                m.schema_version, MANIFEST_SCHEMA_VERSION
            )));
        }
        Ok(m)
    }

    /// All ids of one split.
    pub fn split(&self, name: &str) -> Result<&[String]> {
        self.splits
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Dependency(format!("manifest has no split {name:?}")))
    }

    /// First `k` finetune ids per class (deterministic nested K-shot sets).
    pub fn finetune_subset(&self, k: usize) -> Result<Vec<String>> {
        let pool = self.split("finetune")?;
        let mut out = Vec::new();
        for class in CLASSES {
            let per: Vec<&String> = pool
                .iter()
                .filter(|id| id.contains(&format!("-{class}-")))
                .collect();
            if per.len() < k {
                return Err(Error::Config(format!(
                    "K={k} requested but class {class} has only {} finetune clips",
                    per.len()
                )));
            }
            out.extend(per[..k].iter().map(|s| s.to_string()));
        }
        Ok(out)
    }
}

/// Generate and write the full benchmark under `out_dir`.
///
/// Layout: `out_dir/manifest.json` plus one clip directory per id under
/// `out_dir/clips/`. Exactly `round(rate * n_pretrain)` pretrain clips carry
/// one corruption each, chosen by a seeded shuffle; every corruption is
/// recorded in the clip labels. Per-clip seeds derive from the master seed,
/// so regeneration is bit-identical.
pub fn build_benchmark(cfg: &BenchmarkConfig, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let clips_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clips_dir)?;

    // Pretrain split: class-balanced, exact corruption count.
    let mut pretrain_ids = Vec::with_capacity(cfg.n_pretrain);
    let n_corrupt = (cfg.corruption_rate * cfg.n_pretrain as f64).round() as usize;
    let mut order: Vec<usize> = (0..cfg.n_pretrain).collect();
    // Fisher-Yates with the derived stream so the corrupted subset is stable.
    let mut pick_rng = rng_for(seed, "corrupt-pick", 0);
    for i in (1..order.len()).rev() {
        order.swap(i, pick_rng.gen_range(0..=i));
    }
    let corrupted: std::collections::BTreeSet<usize> = order[..n_corrupt].iter().copied().collect();

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for idx in 0..cfg.n_pretrain {
        let id = format!("pt-{idx:04}");
        let mut spec_rng = rng_for(seed, "spec-pt", idx as u64);
        let spec = SceneSpec::random(idx % CLASSES.len(), &mut spec_rng);
        let mut clip = generate_clip(&spec, NATIVE_FPS, derive_seed(seed, "clip-pt", idx as u64), &id)?;
        if corrupted.contains(&idx) {
            let mut kind_rng = rng_for(seed, "corrupt-kind", idx as u64);
            let corr = random_corruption(&clip, &mut kind_rng)?;
            clip = corrupt(&clip, &corr, derive_seed(seed, "corrupt-apply", idx as u64))?;
            *counts.entry(corr.tag().to_string()).or_insert(0) += 1;
        }
        clip.save(&clips_dir)?;
        pretrain_ids.push(id);
    }

    // Clean finetune pool and test split, class-balanced by id scheme.
    let mut finetune_ids = Vec::new();
    let mut test_ids = Vec::new();
    for (c, class) in CLASSES.iter().enumerate() {
        for j in 0..cfg.n_finetune_per_class {
            let id = format!("ft-{class}-{j:02}");
            let ix = (c * cfg.n_finetune_per_class + j) as u64;
            let mut spec_rng = rng_for(seed, "spec-ft", ix);
            let spec = SceneSpec::random(c, &mut spec_rng);
            generate_clip(&spec, NATIVE_FPS, derive_seed(seed, "clip-ft", ix), &id)?.save(&clips_dir)?;
            finetune_ids.push(id);
        }
        for j in 0..cfg.n_test_per_class {
            let id = format!("te-{class}-{j:02}");
            let ix = (c * cfg.n_test_per_class + j) as u64;
            let mut spec_rng = rng_for(seed, "spec-te", ix);
            let spec = SceneSpec::random(c, &mut spec_rng);
            generate_clip(&spec, NATIVE_FPS, derive_seed(seed, "clip-te", ix), &id)?.save(&clips_dir)?;
            test_ids.push(id);
        }
    }
    finetune_ids.sort();
    test_ids.sort();
    pretrain_ids.sort();

    let mut splits = BTreeMap::new();
    splits.insert("pretrain".to_string(), pretrain_ids);
    splits.insert("finetune".to_string(), finetune_ids);
    splits.insert("test".to_string(), test_ids);
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed,
        config: cfg.clone(),
        splits,
        corruption_counts: counts,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Mean brightness per frame, in [0,1].
    fn brightness(clip: &ClipRecord) -> Vec<f64> {
        let px = clip.width * clip.height;
        (0..clip.n_frames())
            .map(|i| clip.frame(i).iter().map(|&b| b as f64).sum::<f64>() / (px as f64 * 255.0))
            .collect()
    }

    /// Audio onset times from per-5ms energy rises (test-local oracle).
    fn fine_onsets(w: &Waveform) -> Vec<f64> {
        let hop = 80;
        let energies: Vec<f64> = w
            .samples
            .chunks(hop)
            .map(|c| c.iter().map(|s| s * s).sum::<f64>())
            .collect();
        let rises: Vec<f64> = std::iter::once(0.0)
            .chain(energies.windows(2).map(|p| (p[1] - p[0]).max(0.0)))
            .collect();
        let thresh = 0.25 * rises.iter().cloned().fold(0.0, f64::max);
        let mut onsets = Vec::new();
        let mut i = 0;
        while i < rises.len() {
            if rises[i] > thresh {
                onsets.push(i as f64 * hop as f64 / SAMPLE_RATE as f64);
                i += 10; // 50 ms refractory window
            } else {
                i += 1;
            }
        }
        onsets
    }

    #[test]
    fn flash_clip_peaks_in_brightness_and_audio_at_event_times() {
        let mut spec = SceneSpec::canonical(1);
        spec.event_times = vec![0.5, 1.5];
        let clip = generate_clip(&spec, NATIVE_FPS, 7, "flash-0").unwrap();
        let b = brightness(&clip);
        let max = b.iter().cloned().fold(0.0, f64::max);
        // Event frames floor(e*24) = 12, 36 carry the full glow.
        for ef in [12usize, 36] {
            assert!(b[ef] >= 0.98 * max, "frame {ef}: {} vs max {max}", b[ef]);
        }
        // Non-event frames (away from any decay tail) sit well below peak.
        assert!(b[6] < 0.8 * max);

        let onsets = fine_onsets(&clip.audio);
        assert_eq!(onsets.len(), 2, "onsets {onsets:?}");
        assert!((onsets[0] - 0.5).abs() <= 0.010, "onset at {}", onsets[0]);
        assert!((onsets[1] - 1.5).abs() <= 0.010, "onset at {}", onsets[1]);
    }

    #[test]
    fn all_classes_agree_on_sync_ground_truth_within_one_model_frame() {
        // At the model rate (6 fps), the visual impulse train and the audio
        // energy-rise train must localize every event to within one frame.
        for class in 0..4 {
            for trial in 0..6 {
                let mut rng = rng_for(1000 + trial, "spec", class as u64);
                let spec = SceneSpec::random(class, &mut rng);
                let clip =
                    generate_clip(&spec, NATIVE_FPS, 50 + trial, &format!("gt-{class}-{trial}")).unwrap();
                let wins = crate::clips::extract_windows(&clip, 6.0, 12, 1).unwrap();
                let w = &wins[0];
                let mean: Vec<f64> = w
                    .frames
                    .iter()
                    .map(|f| f.iter().sum::<f64>() / f.len() as f64)
                    .collect();
                let spf = SAMPLE_RATE / 6;
                let energy: Vec<f64> = (0..12)
                    .map(|k| {
                        w.audio.samples[k * spf..(k + 1) * spf].iter().map(|s| s * s).sum::<f64>()
                    })
                    .collect();
                for &e in &spec.event_times {
                    let ke = (e * 6.0).floor() as usize;
                    let lo = ke.saturating_sub(1);
                    let hi = (ke + 2).min(11);
                    let fv = (lo..=hi)
                        .max_by(|&a, &b| {
                            let da = mean[a] - mean[a.saturating_sub(1)];
                            let db = mean[b] - mean[b.saturating_sub(1)];
                            da.partial_cmp(&db).unwrap()
                        })
                        .unwrap();
                    let fa = (lo..=hi)
                        .max_by(|&a, &b| {
                            let da = energy[a] - energy[a.saturating_sub(1)];
                            let db = energy[b] - energy[b.saturating_sub(1)];
                            da.partial_cmp(&db).unwrap()
                        })
                        .unwrap();
                    assert!(
                        fv.abs_diff(fa) <= 1,
                        "class {class} trial {trial}: event {e}s visual frame {fv} vs audio frame {fa}"
                    );
                }
            }
        }
    }

    #[test]
    fn generation_is_bit_deterministic_and_validates_specs() {
        let spec = SceneSpec::canonical(0);
        let a = generate_clip(&spec, NATIVE_FPS, 3, "det-0").unwrap();
        let b = generate_clip(&spec, NATIVE_FPS, 3, "det-0").unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.audio.samples, b.audio.samples);

        let mut zero = SceneSpec::canonical(0);
        zero.event_times.clear();
        assert!(matches!(generate_clip(&zero, NATIVE_FPS, 3, "z"), Err(Error::Config(_))));
        let mut outside = SceneSpec::canonical(0);
        outside.event_times = vec![2.2];
        assert!(matches!(generate_clip(&outside, NATIVE_FPS, 3, "o"), Err(Error::Config(_))));
    }

    #[test]
    fn temporal_offset_moves_video_impulses_but_not_audio() {
        let mut spec = SceneSpec::canonical(1);
        spec.event_times = vec![0.5, 1.25];
        let clean = generate_clip(&spec, NATIVE_FPS, 9, "off-0").unwrap();
        let shifted = corrupt(&clean, &Corruption::TemporalOffset { delta: 0.25 }, 1).unwrap();
        assert_eq!(shifted.audio.samples, clean.audio.samples);
        assert_eq!(shifted.labels.as_ref().unwrap().event_times, vec![0.5, 1.25]);
        assert_eq!(shifted.labels.as_ref().unwrap().corruptions, vec!["temporal-offset"]);
        let b = brightness(&shifted);
        let max = b.iter().cloned().fold(0.0, f64::max);
        // Visual impulses land 6 native frames late: 12+6, 30+6.
        assert!(b[18] >= 0.98 * max);
        assert!(b[36] >= 0.98 * max);
        assert!(b[12] < 0.9 * max);

        // Offsets that push an event out of range are rejected.
        assert!(matches!(
            corrupt(&clean, &Corruption::TemporalOffset { delta: 0.8 }, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ambient_noise_hits_the_requested_snr() {
        let spec = SceneSpec::canonical(2);
        let clean = generate_clip(&spec, NATIVE_FPS, 11, "snr-0").unwrap();
        let noisy = corrupt(&clean, &Corruption::AmbientNoise { snr_db: 3.0 }, 5).unwrap();
        let p_sig: f64 = clean.audio.samples.iter().map(|s| s * s).sum::<f64>()
            / clean.audio.samples.len() as f64;
        let p_noise: f64 = noisy
            .audio
            .samples
            .iter()
            .zip(&clean.audio.samples)
            .map(|(n, c)| (n - c) * (n - c))
            .sum::<f64>()
            / clean.audio.samples.len() as f64;
        let snr = 10.0 * (p_sig / p_noise).log10();
        // Clamping at +-1 can shave a little noise power; allow 1 dB of slack.
        assert!((snr - 3.0).abs() < 1.0, "measured snr {snr} dB");
    }

    #[test]
    fn pixel_corruptions_do_what_their_labels_say() {
        let spec = SceneSpec::canonical(3);
        let clean = generate_clip(&spec, NATIVE_FPS, 13, "pix-0").unwrap();

        let cut = corrupt(&clean, &Corruption::ShotCut { t: 1.0 }, 1).unwrap();
        let k = 24 * 1024;
        assert_eq!(cut.frames[..k], clean.frames[..k]);
        assert!(cut.frames[k..].iter().zip(&clean.frames[k..]).all(|(a, b)| *a == 255 - *b));

        let shaken = corrupt(&clean, &Corruption::CameraShake { amplitude: 3.0 }, 2).unwrap();
        let diff: f64 = shaken
            .frames
            .iter()
            .zip(&clean.frames)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum::<f64>()
            / clean.frames.len() as f64;
        assert!(diff > 1.0, "shake moved almost nothing ({diff})");

        let boxed = corrupt(&clean, &Corruption::TextOverlay { area: 0.19 }, 3).unwrap();
        // side = round(sqrt(0.19*1024)) = 14; the box is static across frames.
        for i in 1..boxed.n_frames() {
            for y in 2..16 {
                for x in 2..16 {
                    assert_eq!(boxed.frame(i)[y * 32 + x], boxed.frame(0)[y * 32 + x]);
                }
            }
        }
        assert_eq!(boxed.frame(0)[2 * 32 + 2], 247);

        let low = corrupt(&clean, &Corruption::LowRes, 4).unwrap();
        assert_eq!((low.width, low.height), (16, 16));
        assert_eq!(low.n_frames(), 48);

        let occluded = corrupt(&clean, &Corruption::OccludedSource, 5).unwrap();
        let b_clean = brightness(&clean);
        let b_occ = brightness(&occluded);
        let swing = |b: &[f64]| {
            b.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - b.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        // The glow region is hidden, so the brightness impulse shrinks.
        assert!(swing(&b_occ) < 0.5 * swing(&b_clean));
    }

    #[test]
    fn corruptions_compose_and_are_all_recorded() {
        let spec = SceneSpec::canonical(0);
        let clean = generate_clip(&spec, NATIVE_FPS, 17, "multi-0").unwrap();
        let once = corrupt(&clean, &Corruption::AmbientNoise { snr_db: 0.0 }, 1).unwrap();
        let twice = corrupt(&once, &Corruption::TextOverlay { area: 0.15 }, 2).unwrap();
        assert_eq!(
            twice.labels.as_ref().unwrap().corruptions,
            vec!["ambient-noise", "text-overlay"]
        );
    }

    #[test]
    fn benchmark_manifest_is_exact_disjoint_and_reproducible() {
        let cfg = BenchmarkConfig {
            n_pretrain: 16,
            corruption_rate: 0.6,
            n_finetune_per_class: 2,
            n_test_per_class: 2,
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ma = build_benchmark(&cfg, 99, dir_a.path()).unwrap();
        let mb = build_benchmark(&cfg, 99, dir_b.path()).unwrap();
        assert_eq!(ma, mb);

        // Exactly round(0.6*16) = 10 corrupted pretrain clips.
        let total: usize = ma.corruption_counts.values().sum();
        assert_eq!(total, 10);

        // Splits disjoint; finetune/test clean.
        let all: Vec<&String> = ma.splits.values().flatten().collect();
        let uniq: std::collections::BTreeSet<&String> = all.iter().copied().collect();
        assert_eq!(all.len(), uniq.len());
        assert_eq!(ma.split("pretrain").unwrap().len(), 16);
        for split in ["finetune", "test"] {
            for id in ma.split(split).unwrap() {
                let clip = ClipRecord::load(&dir_a.path().join("clips").join(id)).unwrap();
                assert!(clip.labels.unwrap().corruptions.is_empty());
            }
        }

        // Same master seed => byte-identical clips on disk.
        let id = &ma.split("pretrain").unwrap()[3];
        let fa = std::fs::read(dir_a.path().join("clips").join(id).join("frames.bin")).unwrap();
        let fb = std::fs::read(dir_b.path().join("clips").join(id).join("frames.bin")).unwrap();
        assert_eq!(fa, fb);

        // Nested K-shot subsets: K=1 ids are a prefix of K=2 ids per class.
        let k1 = ma.finetune_subset(1).unwrap();
        let k2 = ma.finetune_subset(2).unwrap();
        assert_eq!(k1.len(), 4);
        assert_eq!(k2.len(), 8);
        assert!(k1.iter().all(|id| k2.contains(id)));
        assert!(matches!(ma.finetune_subset(3), Err(Error::Config(_))));
    }
}
