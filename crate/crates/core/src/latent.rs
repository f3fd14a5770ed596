//! Pixel <-> latent map for video frames.
//!
//! A frame is 32x32 grayscale in unit range. The latent representation
//! splits the frame into a 4x4 grid of 8x8 blocks, takes the orthonormal
//! 2-D DCT-II of each block, and keeps only the [`KEEP`]x[`KEEP`]
//! low-frequency corner, scaled by [`LATENT_SCALE`]. One frame becomes
//! [`S_TOKENS`] spatial tokens of [`D_LATENT`] coefficients.
//!
//! The truncation makes the codec lossy exactly the way a learned video
//! autoencoder is: decode(encode(x)) low-pass filters x, while the latent
//! side is exact — encode(decode(z)) == z — so everything the denoiser
//! generates survives the round trip to pixels and back untouched.

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Frame side length in pixels.
pub const FRAME_SIZE: usize = 32;
/// DCT block side length.
pub const BLOCK: usize = 8;
/// Kept low-frequency band per axis; coefficients (u, v) with u, v < KEEP
/// survive encoding, the rest are discarded as unlearnable pixel detail.
pub const KEEP: usize = 4;
/// Spatial tokens per frame: (32/8)^2.
pub const S_TOKENS: usize = 16;
/// Coefficients per spatial token: KEEP*KEEP.
pub const D_LATENT: usize = KEEP * KEEP;
/// Global scale applied after the orthonormal DCT to keep latents ~unit range.
pub const LATENT_SCALE: f64 = 0.25;

/// Pixels per frame.
pub const FRAME_PIXELS: usize = FRAME_SIZE * FRAME_SIZE;

/// Orthonormal DCT-II basis: B[u][i] = a(u) cos((2i+1) u pi / 16),
/// a(0) = sqrt(1/8), a(u>0) = sqrt(2/8). B is orthogonal: B B^T = I.
fn dct_basis() -> [[f64; BLOCK]; BLOCK] {
    let mut b = [[0.0; BLOCK]; BLOCK];
    for (u, row) in b.iter_mut().enumerate() {
        let a = if u == 0 {
            (1.0 / BLOCK as f64).sqrt()
        } else {
            (2.0 / BLOCK as f64).sqrt()
        };
        for (i, v) in row.iter_mut().enumerate() {
            *v = a * ((2 * i + 1) as f64 * u as f64 * std::f64::consts::PI
                / (2.0 * BLOCK as f64))
                .cos();
        }
    }
    b
}

/// Video in latent space: row f*S_TOKENS + s is spatial token s of frame f.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    pub n_frames: usize,
    /// [n_frames * S_TOKENS, D_LATENT]
    pub tokens: Tensor,
}

impl LatentVideo {
    pub fn zeros(n_frames: usize) -> Self {
        LatentVideo { n_frames, tokens: Tensor::zeros(&[n_frames * S_TOKENS, D_LATENT]) }
    }

    pub fn n_rows(&self) -> usize {
        self.n_frames * S_TOKENS
    }
}

fn check_frame(pixels: &[f64]) -> Result<()> {
    if pixels.len() != FRAME_PIXELS {
        return Err(Error::Shape(format!(
            "frame has {} pixels, expected {FRAME_PIXELS}",
            pixels.len()
        )));
    }
    if pixels.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical("non-finite pixel".into()));
    }
    Ok(())
}

/// Encode one 32x32 frame (unit-range values) into S_TOKENS x D_LATENT
/// low-frequency coefficients written into `out`.
pub fn encode_frame(pixels: &[f64], out: &mut [f64]) -> Result<()> {
    check_frame(pixels)?;
    debug_assert_eq!(out.len(), S_TOKENS * D_LATENT);
    let b = dct_basis();
    let grid = FRAME_SIZE / BLOCK;
    for by in 0..grid {
        for bx in 0..grid {
            let token = by * grid + bx;
            // tmp = B_keep @ X  (X is the 8x8 pixel block); only the KEEP
            // lowest row frequencies are ever used downstream.
            let mut tmp = [[0.0; BLOCK]; KEEP];
            for u in 0..KEEP {
                for j in 0..BLOCK {
                    let mut acc = 0.0;
                    for i in 0..BLOCK {
                        acc += b[u][i] * pixels[(by * BLOCK + i) * FRAME_SIZE + bx * BLOCK + j];
                    }
                    tmp[u][j] = acc;
                }
            }
            // C = tmp @ B_keep^T, scaled.
            let dst = &mut out[token * D_LATENT..(token + 1) * D_LATENT];
            for u in 0..KEEP {
                for v in 0..KEEP {
                    let mut acc = 0.0;
                    for j in 0..BLOCK {
                        acc += tmp[u][j] * b[v][j];
                    }
                    dst[u * KEEP + v] = acc * LATENT_SCALE;
                }
            }
        }
    }
    Ok(())
}

/// Decode S_TOKENS x D_LATENT coefficients back into a 32x32 frame.
pub fn decode_frame(latent: &[f64], pixels: &mut [f64]) -> Result<()> {
    if latent.len() != S_TOKENS * D_LATENT {
        return Err(Error::Shape(format!(
            "latent frame has {} values, expected {}",
            latent.len(),
            S_TOKENS * D_LATENT
        )));
    }
    debug_assert_eq!(pixels.len(), FRAME_PIXELS);
    let b = dct_basis();
    let grid = FRAME_SIZE / BLOCK;
    for by in 0..grid {
        for bx in 0..grid {
            let src = &latent[(by * grid + bx) * D_LATENT..(by * grid + bx + 1) * D_LATENT];
            // X = B_keep^T @ (C / scale) @ B_keep; discarded frequencies are 0.
            let mut tmp = [[0.0; KEEP]; BLOCK];
            for i in 0..BLOCK {
                for v in 0..KEEP {
                    let mut acc = 0.0;
                    for u in 0..KEEP {
                        acc += b[u][i] * src[u * KEEP + v] / LATENT_SCALE;
                    }
                    tmp[i][v] = acc;
                }
            }
            for i in 0..BLOCK {
                for j in 0..BLOCK {
                    let mut acc = 0.0;
                    for v in 0..KEEP {
                        acc += tmp[i][v] * b[v][j];
                    }
                    pixels[(by * BLOCK + i) * FRAME_SIZE + bx * BLOCK + j] = acc;
                }
            }
        }
    }
    Ok(())
}

/// Encode a stack of frames; `frames[f]` is one 32x32 pixel buffer.
pub fn encode_video(frames: &[Vec<f64>]) -> Result<LatentVideo> {
    if frames.is_empty() {
        return Err(Error::Shape("encode_video: no frames".into()));
    }
    let mut lv = LatentVideo::zeros(frames.len());
    for (f, px) in frames.iter().enumerate() {
        let row0 = f * S_TOKENS * D_LATENT;
        encode_frame(px, &mut lv.tokens.data[row0..row0 + S_TOKENS * D_LATENT])?;
    }
    Ok(lv)
}

/// Decode a latent video back to pixel frames in [-1, 1] (values may slightly
/// exceed the range for off-manifold latents; callers clamp when quantizing).
pub fn decode_video(lv: &LatentVideo) -> Result<Vec<Vec<f64>>> {
    let mut frames = Vec::with_capacity(lv.n_frames);
    for f in 0..lv.n_frames {
        let row0 = f * S_TOKENS * D_LATENT;
        let mut px = vec![0.0; FRAME_PIXELS];
        decode_frame(&lv.tokens.data[row0..row0 + S_TOKENS * D_LATENT], &mut px)?;
        frames.push(px);
    }
    Ok(frames)
}

/// u8 pixel (0..=255) to unit range [-1, 1].
pub fn byte_to_unit(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// Unit-range pixel back to u8, clamped.
pub fn unit_to_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn decode_then_encode_is_exact_on_latents() {
        // The pixel side is lossy; the latent side must not be. Anything the
        // model generates survives decode -> encode bitwise up to float error.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let z = Tensor::randn(&[S_TOKENS * D_LATENT], 0.7, &mut rng).data;
        let mut px = vec![0.0; FRAME_PIXELS];
        decode_frame(&z, &mut px).unwrap();
        let mut z2 = vec![0.0; S_TOKENS * D_LATENT];
        encode_frame(&px, &mut z2).unwrap();
        for (a, b) in z.iter().zip(&z2) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn encode_decode_is_an_idempotent_low_pass() {
        // decode(encode(x)) projects onto the kept band: applying it twice
        // changes nothing, and it only ever removes energy.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let frame = Tensor::randn(&[FRAME_PIXELS], 0.5, &mut rng).data;
        let mut lat = vec![0.0; S_TOKENS * D_LATENT];
        encode_frame(&frame, &mut lat).unwrap();
        let mut once = vec![0.0; FRAME_PIXELS];
        decode_frame(&lat, &mut once).unwrap();
        let mut lat2 = vec![0.0; S_TOKENS * D_LATENT];
        encode_frame(&once, &mut lat2).unwrap();
        let mut twice = vec![0.0; FRAME_PIXELS];
        decode_frame(&lat2, &mut twice).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12);
        }
        let e_in: f64 = frame.iter().map(|v| v * v).sum();
        let e_out: f64 = once.iter().map(|v| v * v).sum();
        assert!(e_out <= e_in + 1e-12);
    }

    #[test]
    fn smooth_content_survives_the_codec() {
        // A broad blob on a flat background is what the scenes are made of;
        // the kept band must carry it with small error.
        let mut frame = vec![0.2; FRAME_PIXELS];
        for y in 0..FRAME_SIZE {
            for x in 0..FRAME_SIZE {
                let dx = (x as f64 - 16.0) / 5.0;
                let dy = (y as f64 - 14.0) / 5.0;
                frame[y * FRAME_SIZE + x] += 0.6 * (-(dx * dx + dy * dy)).exp();
            }
        }
        let mut lat = vec![0.0; S_TOKENS * D_LATENT];
        encode_frame(&frame, &mut lat).unwrap();
        let mut back = vec![0.0; FRAME_PIXELS];
        decode_frame(&lat, &mut back).unwrap();
        let mae: f64 =
            frame.iter().zip(&back).map(|(a, b)| (a - b).abs()).sum::<f64>() / FRAME_PIXELS as f64;
        assert!(mae < 0.02, "mean abs reconstruction error {mae}");
    }

    #[test]
    fn constant_block_energy_lands_in_dc_coefficient() {
        // A frame of constant value v: each block's DCT has DC = 8v (orthonormal),
        // scaled by LATENT_SCALE; all other coefficients are ~0.
        let v = 0.5;
        let frame = vec![v; FRAME_PIXELS];
        let mut lat = vec![0.0; S_TOKENS * D_LATENT];
        encode_frame(&frame, &mut lat).unwrap();
        let expect_dc = 8.0 * v * LATENT_SCALE;
        for s in 0..S_TOKENS {
            let tok = &lat[s * D_LATENT..(s + 1) * D_LATENT];
            assert!((tok[0] - expect_dc).abs() < 1e-12, "dc {}", tok[0]);
            for &c in &tok[1..] {
                assert!(c.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn latent_energy_is_bounded_by_pixel_energy() {
        // Bessel: the kept orthonormal band can only hold part of the
        // energy, and exactly all of it for band-limited input.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let frame = Tensor::randn(&[FRAME_PIXELS], 0.3, &mut rng).data;
        let mut lat = vec![0.0; S_TOKENS * D_LATENT];
        encode_frame(&frame, &mut lat).unwrap();
        let e_pix: f64 = frame.iter().map(|v| v * v).sum();
        let e_lat: f64 = lat.iter().map(|v| v * v).sum::<f64>() / (LATENT_SCALE * LATENT_SCALE);
        assert!(e_lat < e_pix);
        // Band-limited input: low-pass first, then energies match exactly.
        let mut lp = vec![0.0; FRAME_PIXELS];
        decode_frame(&lat, &mut lp).unwrap();
        let mut lat2 = vec![0.0; S_TOKENS * D_LATENT];
        encode_frame(&lp, &mut lat2).unwrap();
        let e_lp: f64 = lp.iter().map(|v| v * v).sum();
        let e_lat2: f64 = lat2.iter().map(|v| v * v).sum::<f64>() / (LATENT_SCALE * LATENT_SCALE);
        assert!((e_lp - e_lat2).abs() / e_lp < 1e-12);
    }

    #[test]
    fn video_round_trip_and_row_layout() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        // Band-limit the frames first so the round trip is exact.
        let frames: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let raw = Tensor::randn(&[FRAME_PIXELS], 0.4, &mut rng).data;
                let mut lat = vec![0.0; S_TOKENS * D_LATENT];
                encode_frame(&raw, &mut lat).unwrap();
                let mut px = vec![0.0; FRAME_PIXELS];
                decode_frame(&lat, &mut px).unwrap();
                px
            })
            .collect();
        let lv = encode_video(&frames).unwrap();
        assert_eq!(lv.tokens.rows(), 3 * S_TOKENS);
        assert_eq!(lv.tokens.cols(), D_LATENT);
        let back = decode_video(&lv).unwrap();
        for (a, b) in frames.iter().zip(&back) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        // Frame 1's tokens occupy rows S_TOKENS..2*S_TOKENS.
        let mut solo = vec![0.0; S_TOKENS * D_LATENT];
        encode_frame(&frames[1], &mut solo).unwrap();
        assert_eq!(
            &lv.tokens.data[S_TOKENS * D_LATENT..2 * S_TOKENS * D_LATENT],
            solo.as_slice()
        );
    }

    #[test]
    fn byte_conversions_round_trip() {
        for v in [0u8, 1, 127, 128, 254, 255] {
            assert_eq!(unit_to_byte(byte_to_unit(v)), v);
        }
        assert_eq!(byte_to_unit(255), 1.0);
        assert_eq!(byte_to_unit(0), -1.0);
    }

    #[test]
    fn wrong_sizes_are_shape_errors() {
        let mut lat = vec![0.0; S_TOKENS * D_LATENT];
        assert!(matches!(encode_frame(&[0.0; 10], &mut lat), Err(Error::Shape(_))));
        let mut px = vec![0.0; FRAME_PIXELS];
        assert!(matches!(decode_frame(&[0.0; 10], &mut px), Err(Error::Shape(_))));
    }
}
