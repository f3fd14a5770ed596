//! Denoising-diffusion machinery: the forward noising schedule, condition
//! dropout for classifier-free guidance, multi-condition guided noise
//! prediction, deterministic DDIM sampling, and the adapter training step.
//!
//! Guidance uses the coefficient form over the four nested condition
//! branches (none, image, image+text, image+text+audio):
//!
//! ```text
//! e = (1-s_img) e0 + (s_img-s_txt) e_i + (s_txt-s_aud) e_it + s_aud e_ita
//! ```
//!
//! which equals the stacked formulation
//! `e0 + s_img (e_i - e0) + s_txt (e_it - e_i) + s_aud (e_ita - e_it)`.
//! At scales (1,1,1) it reduces exactly to the fully-conditioned branch, at
//! (0,0,0) to the unconditioned branch; zero-coefficient branches are
//! skipped, which leaves those identities bit-exact.

use rand::Rng;

use crate::latent::{D_LATENT, LatentVideo};
use crate::model::{ConditionBundle, Denoiser};
use crate::tensor::{Adam, ParamStore, Tape, Tensor};
use crate::util::rng_for;
use crate::{Error, Result};

/// First/last beta of the linear schedule.
pub const BETA_MIN: f64 = 1e-4;
pub const BETA_MAX: f64 = 2e-2;

/// Variance schedule. Steps are 1-based: `beta(t)` and `alpha_bar(t)` for
/// t in 1..=t_max, with the convention `alpha_bar(0) = 1` (no noise).
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub t_max: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from [`BETA_MIN`] to [`BETA_MAX`] over `t_max` steps.
    pub fn linear(t_max: usize) -> Result<Self> {
        if t_max < 2 {
            return Err(Error::Config("schedule needs at least 2 steps".into()));
        }
        let betas = (0..t_max)
            .map(|i| BETA_MIN + (BETA_MAX - BETA_MIN) * i as f64 / (t_max - 1) as f64)
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.iter().any(|&b| !(b.is_finite() && 0.0 < b && b < 1.0)) {
            return Err(Error::Config("betas must lie in (0, 1)".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        for &b in &betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        // Strictly decreasing by construction of (0,1) betas; keep the check
        // as a guard against rounding collapse at very long schedules.
        for w in alpha_bars.windows(2) {
            if !(w[1] < w[0] && w[1] > 0.0) {
                return Err(Error::Numerical("alpha_bar is not strictly decreasing".into()));
            }
        }
        Ok(NoiseSchedule { t_max: betas.len(), betas, alpha_bars })
    }

    /// t in 1..=t_max.
    pub fn beta(&self, t: usize) -> f64 {
        assert!((1..=self.t_max).contains(&t), "beta({t}) outside schedule");
        self.betas[t - 1]
    }

    /// t in 0..=t_max; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.t_max, "alpha_bar({t}) outside schedule");
        self.alpha_bars[t]
    }

    /// Forward noising: sqrt(a_t) x0 + sqrt(1 - a_t) eps.
    pub fn add_noise(&self, x0: &Tensor, eps: &Tensor, t: usize) -> Result<Tensor> {
        if x0.shape != eps.shape {
            return Err(Error::Shape(format!(
                "add_noise: x0 {:?} vs eps {:?}",
                x0.shape, eps.shape
            )));
        }
        if t == 0 || t > self.t_max {
            return Err(Error::Contract(format!("add_noise step {t} outside 1..={}", self.t_max)));
        }
        let a = self.alpha_bar(t);
        let (ca, ce) = (a.sqrt(), (1.0 - a).sqrt());
        let data = x0.data.iter().zip(&eps.data).map(|(&x, &e)| ca * x + ce * e).collect();
        Ok(Tensor { shape: x0.shape.clone(), data })
    }
}

/// Independent per-modality condition dropout probabilities used in training.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DropoutPolicy {
    pub p_image: f64,
    pub p_text: f64,
    pub p_audio: f64,
}

impl Default for DropoutPolicy {
    fn default() -> Self {
        DropoutPolicy { p_image: 0.05, p_text: 0.05, p_audio: 0.05 }
    }
}

impl DropoutPolicy {
    pub fn validate(&self) -> Result<()> {
        for p in [self.p_image, self.p_text, self.p_audio] {
            if !(p.is_finite() && (0.0..1.0).contains(&p)) {
                return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Drop each modality independently. Three coins are always drawn, in
    /// image/text/audio order, so the random stream does not depend on which
    /// conditions happen to be present.
    pub fn apply<'a>(&self, cond: &ConditionBundle<'a>, rng: &mut impl Rng) -> ConditionBundle<'a> {
        let drop_img = rng.gen::<f64>() < self.p_image;
        let drop_txt = rng.gen::<f64>() < self.p_text;
        let drop_aud = rng.gen::<f64>() < self.p_audio;
        ConditionBundle {
            image: if drop_img { None } else { cond.image },
            text: if drop_txt { None } else { cond.text },
            audio: if drop_aud { None } else { cond.audio },
        }
    }
}

/// Classifier-free guidance scales for the three condition modalities.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceScales {
    pub image: f64,
    pub text: f64,
    pub audio: f64,
}

impl Default for GuidanceScales {
    fn default() -> Self {
        GuidanceScales { image: 2.0, text: 2.0, audio: 4.0 }
    }
}

/// Guided noise prediction over the nested condition branches. Branches with
/// zero coefficient are skipped entirely.
pub fn guided_eps(
    model: &Denoiser,
    store: &ParamStore,
    x_t: &Tensor,
    t: usize,
    cond: &ConditionBundle,
    scales: &GuidanceScales,
) -> Result<Tensor> {
    let branches: [(f64, ConditionBundle); 4] = [
        (1.0 - scales.image, ConditionBundle { image: None, text: None, audio: None }),
        (
            scales.image - scales.text,
            ConditionBundle { image: cond.image, text: None, audio: None },
        ),
        (
            scales.text - scales.audio,
            ConditionBundle { image: cond.image, text: cond.text, audio: None },
        ),
        (scales.audio, *cond),
    ];
    let mut acc = Tensor::zeros(&x_t.shape);
    for (c, branch) in &branches {
        if *c == 0.0 {
            continue;
        }
        let mut tape = Tape::new();
        let eps = model.forward(&mut tape, store, x_t, t, branch)?;
        let v = tape.value(eps);
        for (av, ev) in acc.data.iter_mut().zip(&v.data) {
            *av += c * ev;
        }
    }
    if !acc.is_finite() {
        return Err(Error::Numerical("guided eps is non-finite".into()));
    }
    Ok(acc)
}

/// Evenly spaced DDIM timesteps, descending: for (1000, 20) this is
/// [1000, 950, ..., 50]; the implicit final target is step 0.
pub fn ddim_timesteps(t_max: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps == 0 || n_steps > t_max {
        return Err(Error::Config(format!("ddim steps {n_steps} outside 1..={t_max}")));
    }
    if t_max % n_steps != 0 {
        return Err(Error::Config(format!(
            "ddim steps {n_steps} must divide the schedule length {t_max}"
        )));
    }
    let stride = t_max / n_steps;
    Ok((0..n_steps).map(|i| t_max - i * stride).collect())
}

/// Deterministic DDIM sampler (eta = 0). `eps_fn(x_t, t)` predicts the noise;
/// the initial x is drawn from `rng`, after which the trajectory is exact.
pub fn ddim_sample(
    schedule: &NoiseSchedule,
    n_steps: usize,
    shape: &[usize],
    x0_clamp: Option<f64>,
    rng: &mut impl Rng,
    mut eps_fn: impl FnMut(&Tensor, usize) -> Result<Tensor>,
) -> Result<Tensor> {
    let ts = ddim_timesteps(schedule.t_max, n_steps)?;
    let mut x = Tensor::randn(shape, 1.0, rng);
    for (i, &t) in ts.iter().enumerate() {
        let t_prev = if i + 1 < ts.len() { ts[i + 1] } else { 0 };
        let eps = eps_fn(&x, t)?;
        if eps.shape != x.shape {
            return Err(Error::Shape(format!(
                "eps_fn returned {:?} for x {:?}",
                eps.shape, x.shape
            )));
        }
        let a_t = schedule.alpha_bar(t);
        let a_p = schedule.alpha_bar(t_prev);
        let (sa_t, se_t) = (a_t.sqrt(), (1.0 - a_t).sqrt());
        let (sa_p, se_p) = (a_p.sqrt(), (1.0 - a_p).sqrt());
        for (xv, ev) in x.data.iter_mut().zip(&eps.data) {
            let mut x0_hat = (*xv - se_t * ev) / sa_t;
            // Static thresholding: early steps divide by a tiny sa_t, so
            // prediction error there explodes the clean-video estimate.
            // Latents of real decoded video are bounded, so clamping to that
            // bound discards only impossible values.
            if let Some(b) = x0_clamp {
                x0_hat = x0_hat.clamp(-b, b);
            }
            *xv = sa_p * x0_hat + se_p * ev;
        }
        if !x.is_finite() {
            return Err(Error::Numerical(format!("non-finite sample at ddim step t={t}")));
        }
    }
    Ok(x)
}

/// Defaults for video sampling. `x0_clamp` bounds the per-step clean-video
/// estimate; the default 2.0 is the hard latent bound of any unit-range
/// frame under the encoder's scaling (block l2 norm <= 8, scale 0.25), so it
/// never cuts into valid video. `None` runs the raw DDIM recursion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub scales: GuidanceScales,
    pub x0_clamp: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { n_steps: 20, scales: GuidanceScales::default(), x0_clamp: Some(2.0) }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.x0_clamp {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::Config(format!("x0_clamp {b} must be positive")));
            }
        }
        Ok(())
    }
}

/// Sample one latent video under guidance. Deterministic in (weights, cond,
/// sampler config, seed).
pub fn sample_video(
    model: &Denoiser,
    store: &ParamStore,
    schedule: &NoiseSchedule,
    cond: &ConditionBundle,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<LatentVideo> {
    let mut rng = rng_for(seed, "ddim_init", 0);
    let shape = [model.cfg.n_rows(), D_LATENT];
    let x = ddim_sample(schedule, sampler.n_steps, &shape, sampler.x0_clamp, &mut rng, |x_t, t| {
        guided_eps(model, store, x_t, t, cond, &sampler.scales)
    })?;
    Ok(LatentVideo { n_frames: model.cfg.n_frames, tokens: x })
}

/// One training example: a clean latent video and its conditioning.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample<'a> {
    pub x0: &'a Tensor,
    pub cond: ConditionBundle<'a>,
}

/// Forward + backward for one sample at a fixed (t, eps) draw, depositing
/// `scale`-weighted gradients into the store. Returns the sample loss.
pub fn sample_loss(
    model: &Denoiser,
    store: &mut ParamStore,
    sample: &TrainSample,
    schedule: &NoiseSchedule,
    t: usize,
    eps: &Tensor,
    scale: f64,
) -> Result<f64> {
    let x_t = schedule.add_noise(sample.x0, eps, t)?;
    let mut tape = Tape::new();
    let pred = model.forward(&mut tape, store, &x_t, t, &sample.cond)?;
    let target = tape.input(eps.clone())?;
    let loss = tape.mse(pred, target)?;
    let value = tape.value(loss).data[0];
    tape.backward(loss, store, scale)?;
    Ok(value)
}

/// One optimizer step over a batch: per sample draw t ~ U(1..=t_max) and
/// eps ~ N(0, I), apply condition dropout, accumulate gradients scaled by
/// 1/batch, then step Adam. Returns the mean sample loss.
pub fn training_step(
    model: &Denoiser,
    store: &mut ParamStore,
    adam: &mut Adam,
    schedule: &NoiseSchedule,
    batch: &[TrainSample],
    dropout: &DropoutPolicy,
    rng: &mut impl Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("training_step: empty batch".into()));
    }
    dropout.validate()?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for sample in batch {
        let t = rng.gen_range(1..=schedule.t_max);
        let eps = Tensor::randn(&sample.x0.shape, 1.0, rng);
        let cond = dropout.apply(&sample.cond, rng);
        let dropped = TrainSample { x0: sample.x0, cond };
        total += sample_loss(model, store, &dropped, schedule, t, &eps, scale)?;
    }
    adam.step(store)?;
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{mel_spectrogram, EncoderKind, FeatureMap, SAMPLE_RATE};
    use crate::latent::S_TOKENS;
    use crate::tensor::AdamConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (Denoiser, ParamStore, NoiseSchedule) {
        let cfg = crate::model::tiny_config();
        let t_max = cfg.t_max;
        let (m, store) = Denoiser::build(cfg, 21).unwrap();
        (m, store, NoiseSchedule::linear(t_max).unwrap())
    }

    fn tiny_feats(m: &Denoiser, store: &ParamStore) -> Vec<(EncoderKind, Vec<FeatureMap>)> {
        let n = (0.34 * SAMPLE_RATE as f64) as usize;
        let wav: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        m.encode_audio(store, &mel_spectrogram(&wav).unwrap()).unwrap()
    }

    #[test]
    fn schedule_shape_and_first_step_noise_scale() {
        let s = NoiseSchedule::linear(1000).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!((s.beta(1) - 1e-4).abs() < 1e-18);
        assert!((s.beta(1000) - 2e-2).abs() < 1e-18);
        // After one step the noise std is sqrt(1 - alpha_bar(1)) = sqrt(beta_1) = 0.01.
        assert!(((1.0 - s.alpha_bar(1)).sqrt() - 0.01).abs() < 1e-12);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.alpha_bar(t) > 0.0);
        }
        // Heavily noised by the end.
        assert!(s.alpha_bar(1000) < 1e-3);
    }

    #[test]
    fn add_noise_matches_formula_and_checks_args() {
        let s = NoiseSchedule::linear(100).unwrap();
        let x0 = Tensor::from_vec(&[1, 2], vec![1.0, -2.0]).unwrap();
        let eps = Tensor::from_vec(&[1, 2], vec![0.5, 0.25]).unwrap();
        let t = 40;
        let got = s.add_noise(&x0, &eps, t).unwrap();
        let a = s.alpha_bar(t);
        for i in 0..2 {
            let want = a.sqrt() * x0.data[i] + (1.0 - a).sqrt() * eps.data[i];
            assert_eq!(got.data[i], want);
        }
        assert!(matches!(s.add_noise(&x0, &eps, 0), Err(Error::Contract(_))));
        assert!(matches!(s.add_noise(&x0, &eps, 101), Err(Error::Contract(_))));
        let bad = Tensor::zeros(&[3]);
        assert!(matches!(s.add_noise(&x0, &bad, 5), Err(Error::Shape(_))));
    }

    #[test]
    fn ddim_timestep_grid_is_even_and_descending() {
        let ts = ddim_timesteps(1000, 20).unwrap();
        assert_eq!(ts.len(), 20);
        assert_eq!(ts[0], 1000);
        assert_eq!(ts[1], 950);
        assert_eq!(ts[19], 50);
        assert!(matches!(ddim_timesteps(1000, 0), Err(Error::Config(_))));
        assert!(matches!(ddim_timesteps(1000, 1001), Err(Error::Config(_))));
        assert!(matches!(ddim_timesteps(1000, 7), Err(Error::Config(_))));
        assert_eq!(ddim_timesteps(100, 100).unwrap().len(), 100);
    }

    /// Scalar oracle: with eps_fn = 0 and no clamp, every DDIM step
    /// multiplies by sqrt(alpha_bar(prev)/alpha_bar(t)), telescoping to
    /// x_T / sqrt(alpha_bar(T)).
    #[test]
    fn ddim_with_zero_eps_matches_closed_form() {
        let s = NoiseSchedule::linear(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x_init = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let out = ddim_sample(&s, 20, &[4, 5], None, &mut rng2, |_, _| Ok(Tensor::zeros(&[4, 5])))
            .unwrap();
        let k = 1.0 / s.alpha_bar(1000).sqrt();
        for (o, x) in out.data.iter().zip(&x_init.data) {
            let want = k * x;
            assert!(((o - want) / want).abs() < 1e-10, "{o} vs {want}");
        }
    }

    /// With eps_fn = 0 and a clamp bound B, any |x_init| > B*sqrt(alpha_bar(T))
    /// pins the clean estimate to +-B on the first step and it stays there;
    /// the final step lands on exactly +-B because alpha_bar(0) = 1.
    #[test]
    fn ddim_x0_clamp_saturates_to_bound() {
        let s = NoiseSchedule::linear(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x_init = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let b = 2.0;
        let out = ddim_sample(&s, 20, &[4, 5], Some(b), &mut rng2, |_, _| {
            Ok(Tensor::zeros(&[4, 5]))
        })
        .unwrap();
        let thresh = b * s.alpha_bar(1000).sqrt();
        for (o, x) in out.data.iter().zip(&x_init.data) {
            if x.abs() > thresh {
                assert_eq!(*o, b * x.signum(), "saturated value for x_init {x}");
            } else {
                assert!((o - x / s.alpha_bar(1000).sqrt()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dropout_rate_and_independence_over_many_draws() {
        let p = DropoutPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let img = Tensor::zeros(&[S_TOKENS, D_LATENT]);
        let feats: Vec<(EncoderKind, Vec<FeatureMap>)> = Vec::new();
        let cond = ConditionBundle { image: Some(&img), text: Some(1), audio: Some(&feats) };
        let n = 10_000;
        let (mut di, mut dt, mut da, mut dit) = (0, 0, 0, 0);
        for _ in 0..n {
            let c = p.apply(&cond, &mut rng);
            if c.image.is_none() {
                di += 1;
            }
            if c.text.is_none() {
                dt += 1;
            }
            if c.audio.is_none() {
                da += 1;
            }
            if c.image.is_none() && c.text.is_none() {
                dit += 1;
            }
        }
        for rate in [di, dt, da].map(|c| c as f64 / n as f64) {
            assert!((0.04..=0.06).contains(&rate), "marginal rate {rate}");
        }
        let joint = dit as f64 / n as f64;
        assert!((0.001..=0.004).contains(&joint), "joint rate {joint} should be ~p^2");
    }

    #[test]
    fn guidance_identities_are_bit_exact() {
        let (m, store, _s) = tiny();
        let feats = tiny_feats(&m, &store);
        let img = Tensor::randn(&[S_TOKENS, D_LATENT], 0.5, &mut ChaCha8Rng::seed_from_u64(9));
        let cond = ConditionBundle { image: Some(&img), text: Some(3), audio: Some(&feats) };
        let x = Tensor::randn(&[m.cfg.n_rows(), D_LATENT], 1.0, &mut ChaCha8Rng::seed_from_u64(10));

        let direct = |c: &ConditionBundle| {
            let mut tape = Tape::new();
            let e = m.forward(&mut tape, &store, &x, 50, c).unwrap();
            tape.value(e).data.clone()
        };
        let ones = guided_eps(&m, &store, &x, 50, &cond, &GuidanceScales { image: 1.0, text: 1.0, audio: 1.0 }).unwrap();
        assert_eq!(ones.data, direct(&cond), "scales (1,1,1) must equal the full branch");
        let zeros = guided_eps(&m, &store, &x, 50, &cond, &GuidanceScales { image: 0.0, text: 0.0, audio: 0.0 }).unwrap();
        assert_eq!(
            zeros.data,
            direct(&ConditionBundle::default()),
            "scales (0,0,0) must equal the unconditioned branch"
        );
        let def = guided_eps(&m, &store, &x, 50, &cond, &GuidanceScales::default()).unwrap();
        assert_ne!(def.data, ones.data, "default scales must actually guide");
    }

    #[test]
    fn sampling_is_bit_deterministic_in_the_seed() {
        let (m, store, s) = tiny();
        let feats = tiny_feats(&m, &store);
        let cond = ConditionBundle { image: None, text: Some(0), audio: Some(&feats) };
        let sampler = SamplerConfig { n_steps: 5, ..SamplerConfig::default() };
        let a = sample_video(&m, &store, &s, &cond, &sampler, 41).unwrap();
        let b = sample_video(&m, &store, &s, &cond, &sampler, 41).unwrap();
        assert_eq!(a.tokens.data, b.tokens.data);
        let c = sample_video(&m, &store, &s, &cond, &sampler, 42).unwrap();
        assert_ne!(a.tokens.data, c.tokens.data);
        assert_eq!(a.n_frames, m.cfg.n_frames);
    }

    #[test]
    fn gradient_accumulation_scales_like_the_batch_mean() {
        let (m, mut store, s) = tiny();
        let x0 = Tensor::randn(&[m.cfg.n_rows(), D_LATENT], 0.5, &mut ChaCha8Rng::seed_from_u64(31));
        let eps = Tensor::randn(&[m.cfg.n_rows(), D_LATENT], 1.0, &mut ChaCha8Rng::seed_from_u64(32));
        let sample = TrainSample { x0: &x0, cond: ConditionBundle::default() };

        store.zero_grads();
        sample_loss(&m, &mut store, &sample, &s, 10, &eps, 1.0).unwrap();
        let full: Vec<Vec<f64>> =
            store.iter().map(|p| p.grad.data.clone()).collect();

        store.zero_grads();
        sample_loss(&m, &mut store, &sample, &s, 10, &eps, 0.5).unwrap();
        sample_loss(&m, &mut store, &sample, &s, 10, &eps, 0.5).unwrap();
        for (p, f) in store.iter().zip(&full) {
            for (a, b) in p.grad.data.iter().zip(f) {
                assert!((a - b).abs() < 1e-12, "{}: {a} vs {b}", p.name);
            }
        }
        store.zero_grads();
    }

    #[test]
    fn training_step_moves_trainable_only_and_reduces_loss() {
        let (m, mut store, s) = tiny();
        let feats = tiny_feats(&m, &store);
        let x0 = Tensor::randn(&[m.cfg.n_rows(), D_LATENT], 0.5, &mut ChaCha8Rng::seed_from_u64(33));
        let batch =
            [TrainSample { x0: &x0, cond: ConditionBundle { image: None, text: Some(1), audio: Some(&feats) } }];
        let frozen_before: Vec<Vec<f64>> = store
            .iter()
            .filter(|p| !p.trainable)
            .map(|p| p.value.data.clone())
            .collect();
        let trainable_before: Vec<Vec<f64>> = store
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.data.clone())
            .collect();

        let mut adam = Adam::new(AdamConfig { lr: 5e-3, ..AdamConfig::default() }, &store);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let no_drop = DropoutPolicy { p_image: 0.0, p_text: 0.0, p_audio: 0.0 };
        let mut losses = Vec::new();
        for _ in 0..30 {
            losses.push(
                training_step(&m, &mut store, &mut adam, &s, &batch, &no_drop, &mut rng).unwrap(),
            );
        }
        for l in &losses {
            assert!(l.is_finite());
        }
        // The last few steps should beat the first few on this overfit batch.
        let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = losses[25..].iter().sum::<f64>() / 5.0;
        assert!(tail < head, "loss should fall: head {head}, tail {tail}");

        let frozen_after: Vec<Vec<f64>> = store
            .iter()
            .filter(|p| !p.trainable)
            .map(|p| p.value.data.clone())
            .collect();
        assert_eq!(frozen_before, frozen_after, "frozen weights must not move");
        let trainable_after: Vec<Vec<f64>> = store
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.data.clone())
            .collect();
        assert_ne!(trainable_before, trainable_after, "adapters must move");
    }

    #[test]
    fn empty_batch_is_a_contract_error() {
        let (m, mut store, s) = tiny();
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = training_step(
            &m,
            &mut store,
            &mut adam,
            &s,
            &[],
            &DropoutPolicy::default(),
            &mut rng,
        );
        assert!(matches!(e, Err(Error::Contract(_))));
    }
}
