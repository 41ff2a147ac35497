use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FusionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SingleEvent,
    SingleRgb,
    Pool,
    /// RGB tokens query event keys/values.
    AsymRgbToEv,
    /// Event tokens query RGB keys/values.
    AsymEvToRgb,
    Symmetric,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::SingleEvent,
        Strategy::SingleRgb,
        Strategy::Pool,
        Strategy::AsymRgbToEv,
        Strategy::AsymEvToRgb,
        Strategy::Symmetric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::SingleEvent => "single_event",
            Strategy::SingleRgb => "single_rgb",
            Strategy::Pool => "pool",
            Strategy::AsymRgbToEv => "asym_rgb_to_ev",
            Strategy::AsymEvToRgb => "asym_ev_to_rgb",
            Strategy::Symmetric => "symmetric",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = FusionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| FusionError::Config(format!("unknown strategy `{s}`")))
    }
}

/// Where the two modality streams meet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    Backbone,
    Encoder,
    Decoder,
}

impl Cutoff {
    pub const ALL: [Cutoff; 3] = [Cutoff::Backbone, Cutoff::Encoder, Cutoff::Decoder];

    pub fn name(self) -> &'static str {
        match self {
            Cutoff::Backbone => "backbone",
            Cutoff::Encoder => "encoder",
            Cutoff::Decoder => "decoder",
        }
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Cutoff {
    type Err = FusionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Cutoff::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| FusionError::Config(format!("unknown cutoff `{s}`")))
    }
}

/// Every `(strategy, cutoff)` pair. Single-modality strategies accept any
/// cutoff and ignore it.
pub fn valid_pairs() -> Vec<(Strategy, Cutoff)> {
    Strategy::ALL
        .into_iter()
        .flat_map(|s| Cutoff::ALL.into_iter().map(move |c| (s, c)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d: usize,
    pub heads: usize,
    pub patch: usize,
    pub n_queries: usize,
    pub cutoff: Cutoff,
    pub strategy: Strategy,
    pub ev_channels: usize,
    pub rgb_channels: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub layer_norm: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 1,
            patch: 16,
            n_queries: 5,
            cutoff: Cutoff::Encoder,
            strategy: Strategy::Pool,
            ev_channels: 2,
            rgb_channels: 3,
            encoder_layers: 1,
            decoder_layers: 1,
            layer_norm: false,
        }
    }
}

impl FusionConfig {
    pub fn with_strategy(mut self, strategy: Strategy, cutoff: Cutoff) -> Self {
        self.strategy = strategy;
        self.cutoff = cutoff;
        self
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: String| Err(FusionError::Config(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("d={} must be a positive multiple of heads={}", self.d, self.heads));
        }
        if self.patch == 0 || self.n_queries == 0 || self.ev_channels == 0 || self.rgb_channels == 0 {
            return bad("patch, n_queries and channel counts must be positive".into());
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return bad("encoder and decoder need at least one layer".into());
        }
        Ok(())
    }
}
