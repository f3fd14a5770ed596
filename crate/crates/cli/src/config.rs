//! Run configuration: one human-editable TOML tree covering every stage,
//! overridable field-by-field from CLI flags. Unknown keys are rejected so a
//! typo can never silently fall back to a default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use syncanim::diffusion::{ddim_timesteps, DropoutPolicy, SamplerConfig};
use syncanim::metrics::{EvalProtocol, SyncScorer};
use syncanim::model::ModelConfig;
use syncanim::synth::BenchmarkConfig;
use syncanim::util::fnv1a;
use syncanim::{Error, Result};

/// Bumped whenever the config tree changes shape.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Optimizer settings for one training stage. Learning rates are constant
/// over the stage; there is no warmup or decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl StageConfig {
    pub fn validate(&self, stage: &str) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "{stage}: epochs and batch_size must be positive"
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("{stage}: lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

// Desk-scale stage defaults. The full-scale recipe these descend from runs
// 30 broad epochs and 500 few-shot epochs at the same batch sizes and
// learning rates; only the epoch counts shrink here.
fn default_pretrain() -> StageConfig {
    StageConfig { epochs: 5, batch_size: 32, lr: 1e-4 }
}

fn default_finetune() -> StageConfig {
    StageConfig { epochs: 50, batch_size: 16, lr: 5e-5 }
}

/// Everything a run needs, serialized as one TOML document with a
/// `schema_version` key. Sections omitted from the file keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Seeds the experiment presets sweep over.
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    /// Stage 1: broad training on the (curated) noisy corpus.
    pub pretrain: StageConfig,
    /// Stage 2: few-shot finetuning on clean clips.
    pub finetune: StageConfig,
    pub dropout: DropoutPolicy,
    pub sampler: SamplerConfig,
    pub protocol: EvalProtocol,
    pub scorer: SyncScorer,
    pub benchmark: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seeds: vec![1, 2, 3],
            model: ModelConfig::default(),
            pretrain: default_pretrain(),
            finetune: default_finetune(),
            dropout: DropoutPolicy::default(),
            sampler: SamplerConfig::default(),
            protocol: EvalProtocol::default(),
            scorer: SyncScorer::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults when `path` is None, otherwise the parsed file. Validated
    /// either way; parse failures (including unknown keys) are config errors.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("config {}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.model.validate()?;
        self.pretrain.validate("pretrain")?;
        self.finetune.validate("finetune")?;
        self.dropout.validate()?;
        self.scorer.validate()?;
        self.benchmark.validate()?;
        // Sampler steps must tile the schedule evenly.
        ddim_timesteps(self.model.t_max, self.sampler.n_steps)?;
        self.sampler.validate()?;
        if self.protocol.n_frames == 0 || self.protocol.n_windows == 0 {
            return Err(Error::Config("protocol frame/window counts must be positive".into()));
        }
        // Generated windows are scored as-is, so the evaluation geometry
        // must match what the model produces.
        if self.protocol.n_frames != self.model.n_frames
            || (self.protocol.target_fps - self.model.fps).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "protocol geometry ({} frames @ {}) must match the model ({} frames @ {})",
                self.protocol.n_frames, self.protocol.target_fps, self.model.n_frames, self.model.fps
            )));
        }
        Ok(())
    }

    /// FNV-1a hash of the resolved config; identifies a run in the log.
    pub fn hash(&self) -> Result<String> {
        Ok(format!("{:016x}", fnv1a(serde_json::to_string(self)?.as_bytes())))
    }
}

/// CLI overrides for one stage; None keeps the config value.
#[derive(Debug, Default, Clone, Copy)]
pub struct StageOverride {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
}

impl StageOverride {
    pub fn apply(&self, stage: &mut StageConfig) {
        if let Some(e) = self.epochs {
            stage.epochs = e;
        }
        if let Some(b) = self.batch_size {
            stage.batch_size = b;
        }
        if let Some(l) = self.lr {
            stage.lr = l;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml_and_validates() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");

        std::fs::write(&p, "schema_version = 1\nnot_a_key = 3\n").unwrap();
        assert!(matches!(RunConfig::load(Some(&p)), Err(Error::Config(_))));

        std::fs::write(&p, "schema_version = 99\n").unwrap();
        assert!(matches!(RunConfig::load(Some(&p)), Err(Error::Config(_))));

        // 7 does not divide the 1000-step schedule.
        std::fs::write(&p, "schema_version = 1\n[sampler]\nn_steps = 7\n").unwrap();
        assert!(matches!(RunConfig::load(Some(&p)), Err(Error::Config(_))));

        std::fs::write(&p, "schema_version = 1\n[pretrain]\nepochs = 0\nbatch_size = 4\nlr = 1e-4\n")
            .unwrap();
        assert!(matches!(RunConfig::load(Some(&p)), Err(Error::Config(_))));
    }

    #[test]
    fn file_values_override_defaults_and_hash_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "schema_version = 1\nseeds = [9]\n[pretrain]\nepochs = 2\nbatch_size = 8\nlr = 0.003\n")
            .unwrap();
        let cfg = RunConfig::load(Some(&p)).unwrap();
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.pretrain.epochs, 2);
        // Untouched sections keep defaults.
        assert_eq!(cfg.finetune, RunConfig::default().finetune);
        assert_ne!(cfg.hash().unwrap(), RunConfig::default().hash().unwrap());
    }
}
