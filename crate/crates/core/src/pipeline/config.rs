use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::losses::MarginSchedule;
use crate::text::TextEncoderConfig;
use crate::vision::{ContextConfig, ContextEmbedderConfig, VisionConfig, TRAIN_INGREDIENTS, TRAIN_TITLES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Vslp,
    Finetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Vslp => "vslp",
            Stage::Finetune => "finetune",
        }
    }
}

/// Dimensions of every sub-network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub text: TextEncoderConfig,
    pub vision: VisionConfig,
    pub context: ContextEmbedderConfig,
    pub itm_heads: usize,
    pub itm_d_ff: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            text: TextEncoderConfig::default(),
            vision: VisionConfig::default(),
            context: ContextEmbedderConfig::default(),
            itm_heads: 2,
            itm_d_ff: 128,
        }
    }
}

impl ModelConfig {
    /// Small dimensions for quick CPU runs.
    pub fn toy() -> Self {
        let (d, ff, emb) = (32, 64, 32);
        Self {
            text: TextEncoderConfig { d_model: d, d_ff: ff, d_emb: emb, ..TextEncoderConfig::default() },
            vision: VisionConfig { d_model: d, d_ff: ff, d_emb: emb, ..VisionConfig::default() },
            context: ContextEmbedderConfig { d_model: d, d_ff: ff, ..ContextEmbedderConfig::default() },
            itm_heads: 2,
            itm_d_ff: ff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.d_model != self.vision.d_model {
            return Err(Error::Config(format!(
                "text d_model {} must equal vision d_model {} (the matching head fuses both)",
                self.text.d_model, self.vision.d_model
            )));
        }
        if self.text.d_emb != self.vision.d_emb {
            return Err(Error::Config(format!("text d_emb {} != vision d_emb {}", self.text.d_emb, self.vision.d_emb)));
        }
        if self.itm_heads == 0 || self.text.d_model % self.itm_heads != 0 {
            return Err(Error::Config(format!("itm_heads {} must divide d_model {}", self.itm_heads, self.text.d_model)));
        }
        Ok(())
    }
}

/// Hyperparameters of one training stage. Serialized as one JSON object;
/// nested fields can be overridden with dotted keys (`context.ing_position`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs (from the start of the stage) during which the vision encoder
    /// is frozen.
    pub freeze_vision_epochs: usize,
    pub lambda_itm: f64,
    pub margin_schedule: MarginSchedule,
    pub context: ContextConfig,
    pub seed: u64,
    /// Adds the same-class triplet term (needs `class_id` on every pair).
    pub use_semantic: bool,
    /// Context strings sampled per image at training time.
    pub train_titles: usize,
    pub train_ingredients: usize,
    pub clip_norm: Option<f64>,
    pub model: ModelConfig,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Finetune,
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-3,
            freeze_vision_epochs: 20,
            lambda_itm: 1.0,
            margin_schedule: MarginSchedule::default(),
            context: ContextConfig::DEFAULT,
            seed: 0,
            use_semantic: false,
            train_titles: TRAIN_TITLES,
            train_ingredients: TRAIN_INGREDIENTS,
            clip_norm: Some(5.0),
            model: ModelConfig::default(),
        }
    }
}

impl StageConfig {
    pub fn vslp() -> Self {
        Self { stage: Stage::Vslp, ..Self::default() }.normalized()
    }

    pub fn finetune() -> Self {
        Self::default()
    }

    /// Applies the stage contract: pretraining keeps the vision encoder
    /// frozen throughout and runs without context.
    pub fn normalized(mut self) -> Self {
        if self.stage == Stage::Vslp {
            self.freeze_vision_epochs = self.epochs;
            self.context = ContextConfig::OFF;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.lambda_itm >= 0.0 && self.lambda_itm.is_finite()) {
            return Err(Error::Config("lambda_itm must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg.normalized())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Sets one (possibly dotted) key. The value is parsed as JSON when
    /// possible and taken as a string otherwise, so `stage=vslp` and
    /// `epochs=3` both work.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let mut node = &mut tree;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = node.as_object_mut().ok_or_else(|| Error::Config(format!("`{key}` does not name a field")))?;
            if !obj.contains_key(*part) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), parsed.clone());
                break;
            }
            node = obj.get_mut(*part).expect("checked above");
        }
        let cfg: Self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("`{key}={value}`: {e}")))?;
        *self = cfg.normalized();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::Injection;

    #[test]
    fn vslp_forces_contract() {
        let c = StageConfig::from_json(r#"{"stage":"vslp","epochs":7,"freeze_vision_epochs":1}"#).unwrap();
        assert_eq!(c.freeze_vision_epochs, 7);
        assert!(c.context.is_off());
    }

    #[test]
    fn overrides() {
        let mut c = StageConfig::default();
        c.set("epochs", "3").unwrap();
        c.set("context.ttl_position", "input").unwrap();
        c.set("margin_schedule.cap", "0.2").unwrap();
        assert_eq!((c.epochs, c.context.titles, c.margin_schedule.cap), (3, Injection::Input, 0.2));
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("epochs", "x").is_err());
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c = StageConfig::from_json(r#"{"epochs": 2}"#).unwrap();
        assert_eq!(c.batch_size, StageConfig::default().batch_size);
    }
}
