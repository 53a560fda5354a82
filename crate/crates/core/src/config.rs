//! Run configuration: one TOML document covering every tunable, with
//! defaults for every key and unknown keys rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoding::{Thresholds, DEFAULT_THRESHOLD};
use crate::detections::{ClassConfig, ClassSpec};
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::graph::GraphConfig;
use crate::model::Architecture;
use crate::online::OnlineConfig;
use crate::relgeom::FeatureMode;
use crate::synth::{NoiseSpec, SceneConfig};
use crate::training::{AugmentConfig, TrainConfig};

pub const CONFIG_VERSION: &str = "1";
pub const SEED_ENV: &str = "POLARTRACK_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Message-passing steps including the initial embedding.
    #[serde(rename = "L")]
    pub steps: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { steps: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeSection {
    /// `default` and per-class-name edge thresholds. When absent, thresholds
    /// tuned during training (stored in the checkpoint) apply, else 0.65.
    pub threshold: Option<BTreeMap<String, f64>>,
    /// Tune per-class thresholds on the validation split after training.
    pub tune: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub sequences: usize,
    pub prefix: String,
    pub scene: SceneConfig,
    pub noise: NoiseSpec,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            sequences: 20,
            prefix: "seq".into(),
            scene: SceneConfig::default(),
            noise: NoiseSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub max_age: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { max_age: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: String,
    pub seed: Option<u64>,
    pub feature_mode: FeatureMode,
    pub frame_period_s: f64,
    pub gate_scale: f64,
    /// Inflation of velocities measured on training tracks.
    pub vmax_safety: f64,
    /// Measure class velocities on the training tracks (their detections
    /// when available, else the ground truth).
    pub vmax_from_data: bool,
    /// Largest frame gap of offline inter-frame edges.
    pub max_frame_gap: Option<u32>,
    pub classes: Vec<ClassSpec>,
    /// Per-class-name v_max overrides, m/s.
    pub vmax: BTreeMap<String, f64>,
    pub model: ModelSection,
    pub decode: DecodeSection,
    pub online: OnlineConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub eval: EvalConfig,
    pub synth: SynthSection,
    pub baseline: BaselineSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scene = SceneConfig::default();
        Self {
            version: CONFIG_VERSION.into(),
            seed: None,
            feature_mode: FeatureMode::PolarTime,
            frame_period_s: 0.5,
            gate_scale: 1.0,
            vmax_safety: 1.1,
            vmax_from_data: true,
            max_frame_gap: Some(10),
            classes: scene.class_config(1.1).classes,
            vmax: BTreeMap::new(),
            model: ModelSection::default(),
            decode: DecodeSection {
                threshold: None,
                tune: true,
            },
            online: OnlineConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthSection {
                scene,
                ..SynthSection::default()
            },
            baseline: BaselineSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {:?} (supported: {CONFIG_VERSION:?})",
                self.version
            )));
        }
        if !(self.vmax_safety >= 1.0) {
            return Err(Error::Config(format!("vmax_safety must be >= 1, got {}", self.vmax_safety)));
        }
        if self.model.steps < 1 {
            return Err(Error::Config("model.L must be >= 1".into()));
        }
        self.graph_config().validate()?;
        self.class_config()?;
        self.thresholds()?;
        self.online.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        self.eval.validate()?;
        self.synth.scene.validate()?;
        self.synth.noise.validate()?;
        Ok(())
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            mode: self.feature_mode,
            frame_period: self.frame_period_s,
            gate_scale: self.gate_scale,
            max_frame_gap: self.max_frame_gap,
        }
    }

    fn class_id(&self, name: &str) -> Result<u32> {
        self.classes
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.id)
            .ok_or_else(|| Error::Config(format!("unknown class name {name:?}")))
    }

    /// Configured classes with `vmax.<class>` overrides applied.
    pub fn class_config(&self) -> Result<ClassConfig> {
        let mut classes = ClassConfig {
            classes: self.classes.clone(),
        };
        self.apply_vmax_overrides(&mut classes)?;
        classes.validate()?;
        Ok(classes)
    }

    pub fn apply_vmax_overrides(&self, classes: &mut ClassConfig) -> Result<()> {
        for (name, &v) in &self.vmax {
            let c = classes
                .classes
                .iter_mut()
                .find(|c| &c.name == name)
                .ok_or_else(|| Error::Config(format!("vmax override for unknown class {name:?}")))?;
            c.v_max = v;
        }
        Ok(())
    }

    /// Explicitly configured thresholds, if any.
    pub fn thresholds(&self) -> Result<Option<Thresholds>> {
        let Some(table) = &self.decode.threshold else {
            return Ok(None);
        };
        let mut t = Thresholds::uniform(DEFAULT_THRESHOLD);
        for (k, &v) in table {
            if k == "default" {
                t.default = v;
            } else {
                t.per_class.insert(self.class_id(k)?, v);
            }
        }
        t.validate()?;
        Ok(Some(t))
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            steps: self.model.steps,
            ..Architecture::default()
        }
    }

    /// Seed precedence: explicit flag, then the config file, then the
    /// environment, then 0.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }
}
