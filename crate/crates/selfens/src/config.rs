//! Training configuration: a line-oriented `key = value` file, with the
//! two published task presets and flag-style overrides layered on top.
//! `snapshot` serializes every effective key so a run directory fully
//! describes its experiment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use selfens_core::augment::AugmentSpec;
use selfens_core::loss::ConsistencyTarget;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Canonical,
    Compact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    /// One Adam step on the combined loss per iteration.
    Combined,
    /// Separate supervised and consistency steps each iteration.
    Alternating,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f32,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub epochs: usize,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub seed: u64,
    pub consistency_target: ConsistencyTarget,
    pub arch: Arch,
    pub source_size: usize,
    pub crop_size: usize,
    pub brightness_delta: f32,
    pub saturation_min: f32,
    pub saturation_max: f32,
    pub hflip_probability: f32,
    /// Linear ramp of alpha over this many leading epochs; 0 disables it.
    pub alpha_ramp_epochs: usize,
    pub step_mode: StepMode,
}

impl Default for TrainConfig {
    /// The gender-task preset: batch 32, lr 0.001, 50 epochs, alpha 1.
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            batch_size: 32,
            learning_rate: 0.001,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            consistency_target: ConsistencyTarget::Probabilities,
            arch: Arch::Canonical,
            source_size: 144,
            crop_size: 128,
            brightness_delta: 0.2,
            saturation_min: 0.5,
            saturation_max: 1.5,
            hflip_probability: 0.5,
            alpha_ramp_epochs: 0,
            step_mode: StepMode::Combined,
        }
    }
}

impl TrainConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        match name {
            "gender" => {}
            "age" => {
                cfg.batch_size = 64;
                cfg.learning_rate = 0.0001;
                cfg.epochs = 200;
            }
            other => return Err(Error::Usage(format!("unknown preset '{other}'"))),
        }
        Ok(cfg)
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Usage(format!("config: bad value '{value}' for key '{key}'")))
        }
        match key {
            "preset" => *self = TrainConfig::preset(value)?,
            "alpha" => self.alpha = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "consistency_target" => {
                self.consistency_target = match value {
                    "probabilities" => ConsistencyTarget::Probabilities,
                    "logits" => ConsistencyTarget::Logits,
                    _ => {
                        return Err(Error::Usage(format!(
                            "config: consistency_target must be probabilities or logits, got '{value}'"
                        )))
                    }
                }
            }
            "arch" => {
                self.arch = match value {
                    "canonical" => Arch::Canonical,
                    "compact" => Arch::Compact,
                    _ => {
                        return Err(Error::Usage(format!(
                            "config: arch must be canonical or compact, got '{value}'"
                        )))
                    }
                }
            }
            "source_size" => self.source_size = num(key, value)?,
            "crop_size" => self.crop_size = num(key, value)?,
            "brightness_delta" => self.brightness_delta = num(key, value)?,
            "saturation_min" => self.saturation_min = num(key, value)?,
            "saturation_max" => self.saturation_max = num(key, value)?,
            "hflip_probability" => self.hflip_probability = num(key, value)?,
            "alpha_ramp_epochs" => self.alpha_ramp_epochs = num(key, value)?,
            "step_mode" => {
                self.step_mode = match value {
                    "combined" => StepMode::Combined,
                    "alternating" => StepMode::Alternating,
                    _ => {
                        return Err(Error::Usage(format!(
                            "config: step_mode must be combined or alternating, got '{value}'"
                        )))
                    }
                }
            }
            other => return Err(Error::Usage(format!("config: unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::Usage("config: alpha must be finite and non-negative".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Usage("config: batch_size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Usage("config: learning_rate must be positive".into()));
        }
        if self.crop_size > self.source_size {
            return Err(Error::Usage("config: crop_size exceeds source_size".into()));
        }
        let stages = match self.arch {
            Arch::Canonical => 4,
            Arch::Compact => 3,
        };
        if self.crop_size % (1 << stages) != 0 {
            return Err(Error::Usage(format!(
                "config: crop_size {} must be divisible by {}",
                self.crop_size,
                1 << stages
            )));
        }
        Ok(())
    }

    pub fn augment_spec(&self) -> AugmentSpec {
        AugmentSpec {
            brightness_delta: self.brightness_delta,
            saturation_range: (self.saturation_min, self.saturation_max),
            hflip_probability: self.hflip_probability,
            source_size: (self.source_size, self.source_size),
            crop_size: (self.crop_size, self.crop_size),
        }
    }

    /// Alpha in effect at a given 0-based epoch, honoring the ramp.
    pub fn alpha_at(&self, epoch: usize) -> f32 {
        if self.alpha_ramp_epochs == 0 || epoch >= self.alpha_ramp_epochs {
            self.alpha
        } else {
            self.alpha * (epoch + 1) as f32 / self.alpha_ramp_epochs as f32
        }
    }

    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(
            s,
            "consistency_target = {}",
            match self.consistency_target {
                ConsistencyTarget::Probabilities => "probabilities",
                ConsistencyTarget::Logits => "logits",
            }
        );
        let _ = writeln!(
            s,
            "arch = {}",
            match self.arch {
                Arch::Canonical => "canonical",
                Arch::Compact => "compact",
            }
        );
        let _ = writeln!(s, "source_size = {}", self.source_size);
        let _ = writeln!(s, "crop_size = {}", self.crop_size);
        let _ = writeln!(s, "brightness_delta = {}", self.brightness_delta);
        let _ = writeln!(s, "saturation_min = {}", self.saturation_min);
        let _ = writeln!(s, "saturation_max = {}", self.saturation_max);
        let _ = writeln!(s, "hflip_probability = {}", self.hflip_probability);
        let _ = writeln!(s, "alpha_ramp_epochs = {}", self.alpha_ramp_epochs);
        let _ = writeln!(
            s,
            "step_mode = {}",
            match self.step_mode {
                StepMode::Combined => "combined",
                StepMode::Alternating => "alternating",
            }
        );
        s
    }
}

/// Parse a config file. `# comments` and blank lines are skipped; a
/// `preset = ...` line must come first if present, since it resets the
/// base values.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    parse_config(&text)
        .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
}

pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("line {}: expected 'key = value'", lineno + 1)))?;
        cfg.set(key.trim(), value.trim())
            .map_err(|e| Error::Usage(format!("line {}: {e}", lineno + 1)))?;
    }
    Ok(cfg)
}
