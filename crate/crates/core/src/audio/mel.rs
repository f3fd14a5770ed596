//! Log-mel spectrogram: 25 ms Hann window, 10 ms hop, 512-point FFT,
//! 128 triangular mel filters spanning 0–8 kHz.

use crate::{Error, Result};
use rustfft::{num_complex::Complex, FftPlanner};

use super::SAMPLE_RATE;

/// 25 ms analysis window at 16 kHz.
pub const WINDOW: usize = 400;
/// 10 ms hop at 16 kHz.
pub const HOP: usize = 160;
/// FFT size (next power of two above the window).
pub const N_FFT: usize = 512;
/// Number of mel bands.
pub const N_MEL: usize = 128;
/// Additive floor inside the log so silence maps to ln(1e-6).
pub const LOG_FLOOR: f64 = 1e-6;

/// Log-mel feature matrix with per-frame center times.
#[derive(Debug, Clone)]
pub struct MelSpectrogram {
    /// Row-major [n_frames, N_MEL].
    pub frames: Vec<f64>,
    pub n_frames: usize,
    /// Center time of each analysis frame in seconds.
    pub frame_times: Vec<f64>,
}

impl MelSpectrogram {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.frames[i * N_MEL..(i + 1) * N_MEL]
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filterbank over the one-sided spectrum (N_FFT/2+1 bins),
/// band centers equally spaced on the mel scale from 0 to 8 kHz.
fn mel_filterbank() -> Vec<Vec<(usize, f64)>> {
    let n_bins = N_FFT / 2 + 1;
    let f_max = SAMPLE_RATE as f64 / 2.0;
    let mel_max = hz_to_mel(f_max);
    // N_MEL + 2 edge points -> N_MEL triangles.
    let edges: Vec<f64> = (0..N_MEL + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (N_MEL + 1) as f64))
        .collect();
    let bin_hz = |b: usize| b as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
    let mut filters = Vec::with_capacity(N_MEL);
    for m in 0..N_MEL {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut taps = Vec::new();
        for b in 0..n_bins {
            let f = bin_hz(b);
            let w = if f >= lo && f <= mid && mid > lo {
                (f - lo) / (mid - lo)
            } else if f > mid && f <= hi && hi > mid {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            if w > 0.0 {
                taps.push((b, w));
            }
        }
        filters.push(taps);
    }
    filters
}

/// Number of frames produced for a waveform of `n_samples` samples.
pub fn n_mel_frames(n_samples: usize) -> usize {
    if n_samples < WINDOW {
        0
    } else {
        1 + (n_samples - WINDOW) / HOP
    }
}

/// Compute the log-mel spectrogram. Frames are taken without padding, so the
/// waveform must hold at least one full window.
pub fn mel_spectrogram(samples: &[f64]) -> Result<MelSpectrogram> {
    let n_frames = n_mel_frames(samples.len());
    if n_frames == 0 {
        return Err(Error::Config(format!(
            "waveform of {} samples is shorter than one {WINDOW}-sample analysis window",
            samples.len()
        )));
    }
    for (i, &s) in samples.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::Numerical(format!("non-finite sample at index {i}")));
        }
    }
    let hann: Vec<f64> = (0..WINDOW)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW as f64).cos())
        .collect();
    let filters = mel_filterbank();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N_FFT);

    let mut frames = vec![0.0; n_frames * N_MEL];
    let mut frame_times = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let n_bins = N_FFT / 2 + 1;
    let mut power = vec![0.0; n_bins];
    for t in 0..n_frames {
        let start = t * HOP;
        for n in 0..N_FFT {
            buf[n] = if n < WINDOW {
                Complex::new(samples[start + n] * hann[n], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for b in 0..n_bins {
            power[b] = buf[b].norm_sqr();
        }
        let row = &mut frames[t * N_MEL..(t + 1) * N_MEL];
        for (m, taps) in filters.iter().enumerate() {
            let e: f64 = taps.iter().map(|&(b, w)| w * power[b]).sum();
            row[m] = (e + LOG_FLOOR).ln();
        }
        frame_times.push((start + WINDOW / 2) as f64 / SAMPLE_RATE as f64);
    }
    Ok(MelSpectrogram { frames, n_frames, frame_times })
}
