use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    #[serde(rename = "full")]
    Full,
    /// No graph learning: plain location table, no long-term preference.
    #[serde(rename = "woGraph")]
    WoGraph,
    /// Graph embeddings only: no category embedding, no raw user embedding.
    #[serde(rename = "onlyGraph")]
    OnlyGraph,
    /// Short-term preference left out of the preference vector.
    #[serde(rename = "woShort")]
    WoShort,
    /// No orientation module.
    #[serde(rename = "woMid")]
    WoMid,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::WoGraph,
        Ablation::OnlyGraph,
        Ablation::WoShort,
        Ablation::WoMid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::WoGraph => "woGraph",
            Ablation::OnlyGraph => "onlyGraph",
            Ablation::WoShort => "woShort",
            Ablation::WoMid => "woMid",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                format!(
                    "unknown ablation {s:?} (expected full, woGraph, onlyGraph, woShort or woMid)"
                )
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrientationMode {
    Attention,
    /// A GRU over the recent records warm-starts the current-trajectory GRU;
    /// no mid-term preference.
    Gru,
}

impl fmt::Display for OrientationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrientationMode::Attention => "attention",
            OrientationMode::Gru => "gru",
        })
    }
}

impl FromStr for OrientationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "attention" => Ok(OrientationMode::Attention),
            "gru" => Ok(OrientationMode::Gru),
            _ => Err(format!(
                "unknown orientation mode {s:?} (expected attention or gru)"
            )),
        }
    }
}

/// Model, optimizer and training settings. Every field has a default, so a
/// config file only lists overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Weight of the location loss; the category loss gets `1 - alpha`.
    pub alpha: f64,
    pub ablation: Ablation,
    pub orientation: OrientationMode,
    pub n_global: usize,
    pub n_user: usize,
    /// Preceding sub-trajectories used as the recent trajectory.
    pub recent_weeks: usize,

    pub location_dim: usize,
    pub category_dim: usize,
    pub user_dim: usize,
    /// Width of each Time2Vec block (weekday and hour).
    pub time_dim: usize,
    pub graph_dim: usize,
    pub gru_hidden: usize,
    pub orientation_hidden: usize,
    pub head_hidden: usize,

    pub edge_drop: f64,
    pub graph_dropout: f64,
    pub log_edge_features: bool,

    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Sub-trajectories per mini-batch; each contributes all its samples.
    pub batch_size: usize,
    pub seed: u64,
    /// No category information anywhere.
    pub dallas_mode: bool,
    /// Defaults to `!dallas_mode`.
    pub category_head: Option<bool>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            alpha: 0.7,
            ablation: Ablation::Full,
            orientation: OrientationMode::Attention,
            n_global: 2,
            n_user: 2,
            recent_weeks: 2,
            location_dim: 64,
            category_dim: 64,
            user_dim: 64,
            time_dim: 16,
            graph_dim: 128,
            gru_hidden: 256,
            orientation_hidden: 256,
            head_hidden: 512,
            edge_drop: 0.5,
            graph_dropout: 0.5,
            log_edge_features: false,
            lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            dallas_mode: false,
            category_head: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ModelConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serializes")
    }

    pub fn has_category_head(&self) -> bool {
        self.category_head.unwrap_or(!self.dallas_mode)
    }

    /// Category embeddings feed node features and record encodings.
    pub fn uses_category_embedding(&self) -> bool {
        !self.dallas_mode && self.ablation != Ablation::OnlyGraph
    }

    pub fn uses_graph(&self) -> bool {
        self.ablation != Ablation::WoGraph
    }

    pub fn uses_user_embedding(&self) -> bool {
        self.ablation != Ablation::OnlyGraph
    }

    pub fn uses_short(&self) -> bool {
        self.ablation != Ablation::WoShort
    }

    pub fn uses_mid(&self) -> bool {
        self.ablation != Ablation::WoMid && self.orientation == OrientationMode::Attention
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.alpha) {
            errs.push(format!("alpha = {} must lie in [0, 1]", self.alpha));
        }
        for (name, v) in [("n_global", self.n_global), ("n_user", self.n_user)] {
            if !(2..=5).contains(&v) {
                errs.push(format!("{name} = {v} must be between 2 and 5"));
            }
        }
        for (name, v) in [
            ("recent_weeks", self.recent_weeks),
            ("location_dim", self.location_dim),
            ("category_dim", self.category_dim),
            ("user_dim", self.user_dim),
            ("time_dim", self.time_dim),
            ("graph_dim", self.graph_dim),
            ("gru_hidden", self.gru_hidden),
            ("orientation_hidden", self.orientation_hidden),
            ("head_hidden", self.head_hidden),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("edge_drop", self.edge_drop),
            ("graph_dropout", self.graph_dropout),
        ] {
            if !(0.0..1.0).contains(&v) {
                errs.push(format!("{name} = {v} must lie in [0, 1)"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push(format!("lr = {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            errs.push(format!(
                "weight_decay = {} must be nonnegative",
                self.weight_decay
            ));
        }
        if self.dallas_mode && self.category_head == Some(true) {
            errs.push(
                "category_head = true requires category data, which dallas_mode disables".into(),
            );
        }
        let width = self.record_dim();
        if width % 2 != 0 {
            errs.push(format!(
                "record encoding width {width} must be even for the positional encoding"
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    /// Width of `Q(r)`.
    pub fn record_dim(&self) -> usize {
        self.graph_dim
            + if self.uses_category_embedding() {
                self.category_dim
            } else {
                0
            }
            + 2 * self.time_dim
    }

    /// Width of the initial node feature `h⁰`.
    pub fn node_dim(&self) -> usize {
        self.location_dim
            + if self.uses_category_embedding() {
                self.category_dim
            } else {
                0
            }
            + 2
    }

    /// Width of the preference vector φ.
    pub fn preference_dim(&self) -> usize {
        let mut w = 0;
        if self.uses_short() {
            w += self.gru_hidden;
        }
        if self.uses_mid() {
            w += self.record_dim();
        }
        if self.uses_graph() {
            w += self.graph_dim;
        }
        if self.uses_user_embedding() {
            w += self.user_dim;
        }
        w
    }
}
