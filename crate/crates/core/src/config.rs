//! Model and training hyperparameters.
//!
//! Config files are flat `key = value` TOML; every key is optional and
//! defaults to the values of the RAMS configuration.

use crate::decoder::Decoding;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub role_size: usize,
    /// Width of the distance-bucket embedding (the φ features).
    pub feature_size: usize,
    pub width_feature_size: usize,
    pub char_embedding_size: usize,
    pub char_filters: usize,
    pub char_filter_widths: Vec<usize>,
    /// Whitespace-separated word-vector text file; `None` disables the source.
    pub word_vectors: Option<String>,
    /// Layers in each precomputed contextual embedding file; 0 disables the source.
    pub contextual_layers: usize,
    pub contextual_size: usize,
    /// Token budget per contextual-file segment; documents are split at
    /// sentence boundaries to respect it.
    pub segment_limit: usize,

    pub lstm_size: usize,
    pub lstm_layers: usize,
    pub lstm_dropout: f64,
    pub lexical_dropout: f64,
    pub ffnn_size: usize,
    pub ffnn_layers: usize,
    pub ffnn_dropout: f64,

    pub k: usize,
    pub lambda_a: f64,
    pub max_span_width: usize,

    pub max_train_doc_tokens: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
    pub patience: usize,
    pub max_epochs: usize,
    pub clip_gradients: Option<f64>,

    pub use_s_er: bool,
    pub use_s_ar: bool,
    pub use_s_l: bool,
    pub use_s_c: bool,
    pub use_distance: bool,
    /// Score only the roles of the event's gold type (when known).
    pub restrict_roles_to_type: bool,
    /// Supervise unfilled roles towards ε.
    pub eps_for_unfilled_roles: bool,
    pub dev_decoding: Decoding,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            role_size: 50,
            feature_size: 20,
            width_feature_size: 20,
            char_embedding_size: 8,
            char_filters: 50,
            char_filter_widths: vec![3, 4, 5],
            word_vectors: None,
            contextual_layers: 0,
            contextual_size: 0,
            segment_limit: 512,
            lstm_size: 200,
            lstm_layers: 3,
            lstm_dropout: 0.4,
            lexical_dropout: 0.5,
            ffnn_size: 150,
            ffnn_layers: 2,
            ffnn_dropout: 0.2,
            k: 10,
            lambda_a: 0.4,
            max_span_width: 5,
            max_train_doc_tokens: 1000,
            batch_size: 1,
            learning_rate: 0.001,
            decay_rate: 0.999,
            decay_steps: 100,
            patience: 10,
            max_epochs: 100,
            clip_gradients: None,
            use_s_er: false,
            use_s_ar: true,
            use_s_l: true,
            use_s_c: false,
            use_distance: true,
            restrict_roles_to_type: false,
            eps_for_unfilled_roles: true,
            dev_decoding: Decoding::Greedy,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad config syntax: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Returns a copy with `key` set from its textual value. Values are read
    /// as TOML literals first and fall back to plain strings.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self, ConfigError> {
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut overlay = toml::Table::new();
        overlay.insert(key.to_string(), parsed);
        self.overlay(overlay)
    }

    /// Returns a copy with every key present in `text` replaced; keys the
    /// text leaves out keep their current values.
    pub fn merge_toml_str(&self, text: &str) -> Result<Self, ConfigError> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        self.overlay(overlay)
    }

    fn overlay(&self, overlay: toml::Table) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            toml::from_str(&self.to_toml_string()).map_err(|e| ConfigError::Parse(e.to_string()))?;
        // optional keys are absent from the serialized form
        let known: toml::Table = toml::from_str(&ModelConfig {
            word_vectors: Some(String::new()),
            clip_gradients: Some(0.0),
            ..ModelConfig::default()
        }
        .to_toml_string())
        .expect("config round-trips");
        for (key, value) in overlay {
            if !known.contains_key(&key) {
                return Err(ConfigError::Parse(format!("unknown config key `{key}`")));
            }
            table.insert(key, value);
        }
        let cfg: ModelConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let positive = [
            ("role_size", self.role_size),
            ("feature_size", self.feature_size),
            ("width_feature_size", self.width_feature_size),
            ("char_embedding_size", self.char_embedding_size),
            ("char_filters", self.char_filters),
            ("lstm_size", self.lstm_size),
            ("lstm_layers", self.lstm_layers),
            ("ffnn_size", self.ffnn_size),
            ("ffnn_layers", self.ffnn_layers),
            ("k", self.k),
            ("max_span_width", self.max_span_width),
            ("max_train_doc_tokens", self.max_train_doc_tokens),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("segment_limit", self.segment_limit),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.char_filter_widths.is_empty() || self.char_filter_widths.contains(&0) {
            return bad("char_filter_widths must be non-empty and positive".into());
        }
        if (self.contextual_layers == 0) != (self.contextual_size == 0) {
            return bad("contextual_layers and contextual_size must both be set or both be 0".into());
        }
        for (name, p) in [
            ("lstm_dropout", self.lstm_dropout),
            ("lexical_dropout", self.lexical_dropout),
            ("ffnn_dropout", self.ffnn_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1)"));
            }
        }
        if !(self.lambda_a > 0.0) {
            return bad("lambda_a must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.decay_rate > 0.0) || self.decay_steps == 0 {
            return bad("learning rate schedule must be positive".into());
        }
        if let Some(c) = self.clip_gradients {
            if !(c > 0.0) {
                return bad("clip_gradients must be positive".into());
            }
        }
        if !(self.use_s_er || self.use_s_ar || self.use_s_l || self.use_s_c) {
            return bad("at least one link score component must be enabled".into());
        }
        Ok(())
    }

    /// Combined width of the per-token input features.
    pub fn token_dim(&self, word_dim: usize) -> usize {
        word_dim + self.char_filters * self.char_filter_widths.len() + self.contextual_size
    }

    pub fn hidden_dim(&self) -> usize {
        2 * self.lstm_size
    }

    pub fn span_dim(&self, word_dim: usize) -> usize {
        2 * self.hidden_dim() + self.token_dim(word_dim) + self.width_feature_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(ModelConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
        assert_eq!(cfg.hidden_dim(), 400);
    }

    #[test]
    fn partial_file_and_overrides() {
        let cfg = ModelConfig::from_toml_str("lstm_size = 50\nlstm_layers = 1\n# comment\n").unwrap();
        assert_eq!(cfg.lstm_size, 50);
        assert_eq!(cfg.k, 10);
        let cfg = cfg.with_override("k", "100").unwrap();
        assert_eq!(cfg.k, 100);
        let cfg = cfg.with_override("dev_decoding", "tcd").unwrap();
        assert_eq!(cfg.dev_decoding, Decoding::Tcd);
        let cfg = cfg.with_override("word_vectors", "/tmp/glove.txt").unwrap();
        assert_eq!(cfg.word_vectors.as_deref(), Some("/tmp/glove.txt"));
        assert!(cfg.with_override("no_such_key", "1").is_err());
    }

    #[test]
    fn merging_keeps_unmentioned_keys() {
        let base = ModelConfig {
            lstm_size: 50,
            ..ModelConfig::default()
        };
        let merged = base.merge_toml_str("learning_rate = 0.0005\nclip_gradients = 10.0\n").unwrap();
        assert_eq!(merged.lstm_size, 50);
        assert_eq!(merged.learning_rate, 0.0005);
        assert_eq!(merged.clip_gradients, Some(10.0));
        assert!(base.merge_toml_str("lstm = 3").is_err());
    }

    #[test]
    fn rejects_invalid() {
        assert!(ModelConfig::from_toml_str("patience = 0").is_err());
        let none = "use_s_er = false\nuse_s_ar = false\nuse_s_l = false\nuse_s_c = false\n";
        assert!(ModelConfig::from_toml_str(none).is_err());
        assert!(ModelConfig::from_toml_str("lstm_dropout = 1.0").is_err());
    }
}
