//! Experiment configuration: one flat struct covering data sizes, stage
//! schedules, bridge/adapter switches, and reporting knobs, with a plain
//! `key = value` file format (`#` comments) and single-key overrides so CLI
//! flags and config files share one code path.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use glyphspot_core::bridge::{BridgeConfig, BridgeInit};
use glyphspot_core::spotter::SpotterConfig;

use crate::error::{HarnessError, Result};

/// Initialization mode for the bridge's two projection layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Zero,
    Gaussian,
}

impl InitMode {
    pub fn label(self) -> &'static str {
        match self {
            InitMode::Zero => "zero",
            InitMode::Gaussian => "gaussian",
        }
    }
}

impl FromStr for InitMode {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(InitMode::Zero),
            "gaussian" => Ok(InitMode::Gaussian),
            other => Err(HarnessError::Config(format!(
                "init_mode must be zero|gaussian, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which assembled system an `eval` run scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Paradigm {
    TwoStep,
    TwoStepFinetune,
    EndToEnd,
    Bridge,
}

impl Paradigm {
    pub fn label(self) -> &'static str {
        match self {
            Paradigm::TwoStep => "two_step",
            Paradigm::TwoStepFinetune => "two_step_finetune",
            Paradigm::EndToEnd => "end_to_end",
            Paradigm::Bridge => "bridge",
        }
    }
}

impl FromStr for Paradigm {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_step" => Ok(Paradigm::TwoStep),
            "two_step_finetune" => Ok(Paradigm::TwoStepFinetune),
            "end_to_end" => Ok(Paradigm::EndToEnd),
            "bridge" => Ok(Paradigm::Bridge),
            other => Err(HarnessError::Config(format!(
                "paradigm must be two_step|two_step_finetune|end_to_end|bridge, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Everything an experiment run needs, with calibrated defaults. Field names
/// double as config-file keys and CLI flag names.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Master seed; every stream, split, and init derives from it.
    pub seed: u64,
    // Data splits (lazily generated; sizes are upper indices).
    pub det_train_scenes: usize,
    pub rec_train_crops: usize,
    pub bridge_train_scenes: usize,
    pub test_scenes: usize,
    // Stage schedules.
    pub det_iters: usize,
    pub rec_iters: usize,
    pub bridge_iters: usize,
    pub e2e_iters: usize,
    pub finetune_iters: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_finetune: f64,
    pub weight_decay: f64,
    /// Weight on the box-regression term inside the detection loss.
    pub box_loss_weight: f64,
    // Bridge and adapters.
    pub encoder_depth: usize,
    pub init_mode: InitMode,
    pub gaussian_std: f64,
    pub use_det_adapter: bool,
    pub use_rec_adapter: bool,
    pub det_adapter_hidden: usize,
    pub rec_adapter_hidden: usize,
    /// During adapter-bearing bridge stages, recompute detections (and the
    /// crops/labels hanging off them) every this many iterations.
    pub refresh_interval: usize,
    // Evaluation and reporting.
    pub paradigm: Paradigm,
    /// Cadence (iterations) of the F-vs-iteration curve during bridge runs.
    pub curve_every: usize,
    /// Test scenes scored per curve point (prefix of the test split).
    pub curve_scenes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            det_train_scenes: 2000,
            rec_train_crops: 8000,
            bridge_train_scenes: 1000,
            test_scenes: 500,
            det_iters: 5000,
            rec_iters: 5000,
            bridge_iters: 10_000,
            e2e_iters: 10_000,
            finetune_iters: 5000,
            batch_size: 8,
            lr: 1e-3,
            lr_finetune: 1e-4,
            weight_decay: 1e-4,
            box_loss_weight: 1.0,
            encoder_depth: 1,
            init_mode: InitMode::Zero,
            gaussian_std: 0.02,
            use_det_adapter: true,
            use_rec_adapter: true,
            det_adapter_hidden: 4,
            rec_adapter_hidden: 16,
            refresh_interval: 2000,
            paradigm: Paradigm::Bridge,
            curve_every: 200,
            curve_scenes: 100,
        }
    }
}

impl ExperimentConfig {
    /// Sets one field from its key and a string value.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e| {
                HarnessError::Config(format!("key {key}: cannot parse {value:?}: {e}"))
            })
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "det_train_scenes" => self.det_train_scenes = parse(key, value)?,
            "rec_train_crops" => self.rec_train_crops = parse(key, value)?,
            "bridge_train_scenes" => self.bridge_train_scenes = parse(key, value)?,
            "test_scenes" => self.test_scenes = parse(key, value)?,
            "det_iters" => self.det_iters = parse(key, value)?,
            "rec_iters" => self.rec_iters = parse(key, value)?,
            "bridge_iters" => self.bridge_iters = parse(key, value)?,
            "e2e_iters" => self.e2e_iters = parse(key, value)?,
            "finetune_iters" => self.finetune_iters = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_finetune" => self.lr_finetune = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "box_loss_weight" => self.box_loss_weight = parse(key, value)?,
            "encoder_depth" => self.encoder_depth = parse(key, value)?,
            "init_mode" => self.init_mode = value.parse()?,
            "gaussian_std" => self.gaussian_std = parse(key, value)?,
            "use_det_adapter" => self.use_det_adapter = parse(key, value)?,
            "use_rec_adapter" => self.use_rec_adapter = parse(key, value)?,
            "det_adapter_hidden" => self.det_adapter_hidden = parse(key, value)?,
            "rec_adapter_hidden" => self.rec_adapter_hidden = parse(key, value)?,
            "refresh_interval" => self.refresh_interval = parse(key, value)?,
            "paradigm" => self.paradigm = value.parse()?,
            "curve_every" => self.curve_every = parse(key, value)?,
            "curve_scenes" => self.curve_scenes = parse(key, value)?,
            other => {
                return Err(HarnessError::Config(format!("unknown config key {other:?}")))
            }
        }
        Ok(())
    }

    /// Applies a `key = value` config file; `#` starts a comment, blank lines
    /// are skipped.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HarnessError::Config(format!(
                    "{}:{}: expected key = value, got {raw:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Validates every field before any training starts.
    pub fn validate(&self) -> Result<()> {
        let positive = |v: usize, name: &str| -> Result<()> {
            if v == 0 {
                return Err(HarnessError::Config(format!("{name} must be positive")));
            }
            Ok(())
        };
        positive(self.det_train_scenes, "det_train_scenes")?;
        positive(self.rec_train_crops, "rec_train_crops")?;
        positive(self.bridge_train_scenes, "bridge_train_scenes")?;
        positive(self.test_scenes, "test_scenes")?;
        positive(self.det_iters, "det_iters")?;
        positive(self.rec_iters, "rec_iters")?;
        positive(self.bridge_iters, "bridge_iters")?;
        positive(self.e2e_iters, "e2e_iters")?;
        positive(self.finetune_iters, "finetune_iters")?;
        positive(self.batch_size, "batch_size")?;
        positive(self.refresh_interval, "refresh_interval")?;
        positive(self.det_adapter_hidden, "det_adapter_hidden")?;
        positive(self.rec_adapter_hidden, "rec_adapter_hidden")?;
        positive(self.curve_every, "curve_every")?;
        positive(self.curve_scenes, "curve_scenes")?;
        let finite_pos = |v: f64, name: &str| -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                return Err(HarnessError::Config(format!(
                    "{name} must be a positive finite number, got {v}"
                )));
            }
            Ok(())
        };
        finite_pos(self.lr, "lr")?;
        finite_pos(self.lr_finetune, "lr_finetune")?;
        finite_pos(self.box_loss_weight, "box_loss_weight")?;
        finite_pos(self.gaussian_std, "gaussian_std")?;
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(HarnessError::Config(format!(
                "weight_decay must be a finite non-negative number, got {}",
                self.weight_decay
            )));
        }
        if self.encoder_depth > 8 {
            return Err(HarnessError::Config(format!(
                "encoder_depth {} is outside the supported range 0..=8",
                self.encoder_depth
            )));
        }
        if self.curve_scenes > self.test_scenes {
            return Err(HarnessError::Config(String::from(
                "curve_scenes cannot exceed test_scenes",
            )));
        }
        self.spotter().validate()?;
        Ok(())
    }

    /// Model geometry (fixed apart from the loss weight, which is a knob).
    pub fn spotter(&self) -> SpotterConfig {
        SpotterConfig { box_loss_weight: self.box_loss_weight, ..SpotterConfig::default() }
    }

    /// Bridge geometry derived from the spotter dims and the encoder depth.
    pub fn bridge(&self) -> BridgeConfig {
        let s = self.spotter();
        BridgeConfig {
            in_channels: s.det_width,
            token_h: 8,
            token_w: 24,
            rec_len: s.positions,
            rec_dim: s.rec_dim,
            depth: self.encoder_depth,
            ..BridgeConfig::default()
        }
    }

    pub fn bridge_init(&self) -> BridgeInit {
        match self.init_mode {
            InitMode::Zero => BridgeInit::Zero,
            InitMode::Gaussian => BridgeInit::Gaussian { std: self.gaussian_std },
        }
    }

    /// Fingerprint of the detector architecture, stored in its checkpoints.
    pub fn det_fingerprint(&self) -> u64 {
        let s = self.spotter();
        fnv1a(&format!(
            "det|{}x{}|stem{}|width{}",
            s.scene_h, s.scene_w, s.det_stem, s.det_width
        ))
    }

    /// Fingerprint of the recognizer architecture.
    pub fn rec_fingerprint(&self) -> u64 {
        let s = self.spotter();
        fnv1a(&format!(
            "rec|{}x{}|stem{},{}|dim{}|hidden{}|blocks{}|pos{}",
            s.crop_h,
            s.crop_w,
            s.rec_stem.0,
            s.rec_stem.1,
            s.rec_dim,
            s.rec_hidden,
            s.rec_blocks,
            s.positions
        ))
    }

    /// Fingerprint of a plain detector+recognizer pair saved as one file
    /// (the jointly trained baseline).
    pub fn pair_fingerprint(&self) -> u64 {
        fnv1a(&format!("pair|{:x}|{:x}", self.det_fingerprint(), self.rec_fingerprint()))
    }

    /// Fingerprint of a fully assembled bridged system (both models plus
    /// bridge and adapter structure).
    pub fn system_fingerprint(&self) -> u64 {
        fnv1a(&format!(
            "system|{:x}|{:x}|depth{}|da{}:{}|ra{}:{}",
            self.det_fingerprint(),
            self.rec_fingerprint(),
            self.encoder_depth,
            self.use_det_adapter,
            self.det_adapter_hidden,
            self.use_rec_adapter,
            self.rec_adapter_hidden
        ))
    }
}

/// FNV-1a over the canonical architecture string — stable across runs and
/// platforms, which is all a fingerprint needs.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn apply_overrides_each_kind_of_field() {
        let mut c = ExperimentConfig::default();
        c.apply("seed", "99").unwrap();
        c.apply("lr", "0.01").unwrap();
        c.apply("init_mode", "gaussian").unwrap();
        c.apply("use_rec_adapter", "false").unwrap();
        c.apply("paradigm", "two_step").unwrap();
        assert_eq!(c.seed, 99);
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.init_mode, InitMode::Gaussian);
        assert!(!c.use_rec_adapter);
        assert_eq!(c.paradigm, Paradigm::TwoStep);

        assert!(c.apply("no_such_key", "1").is_err());
        assert!(c.apply("seed", "not_a_number").is_err());
    }

    #[test]
    fn config_file_supports_comments_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# reference run\nseed = 11\nbridge_iters = 400   # short\n\ninit_mode = gaussian\n",
        )
        .unwrap();
        let mut c = ExperimentConfig::default();
        c.load_file(&path).unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.bridge_iters, 400);
        assert_eq!(c.init_mode, InitMode::Gaussian);

        std::fs::write(&path, "seed\n").unwrap();
        assert!(c.load_file(&path).is_err());
    }

    #[test]
    fn validation_rejects_out_of_range_values() {
        let d = ExperimentConfig::default();
        let bad = [
            ExperimentConfig { batch_size: 0, ..d.clone() },
            ExperimentConfig { lr: -1.0, ..d.clone() },
            ExperimentConfig { curve_scenes: d.test_scenes + 1, ..d.clone() },
            ExperimentConfig { encoder_depth: 9, ..d },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn fingerprints_separate_architectures() {
        let c = ExperimentConfig::default();
        assert_ne!(c.det_fingerprint(), c.rec_fingerprint());
        let mut deeper = c.clone();
        deeper.encoder_depth = 3;
        assert_ne!(c.system_fingerprint(), deeper.system_fingerprint());
        // Stage fingerprints ignore bridge knobs: det/rec checkpoints stay
        // loadable across bridge configurations.
        assert_eq!(c.det_fingerprint(), deeper.det_fingerprint());
    }
}
