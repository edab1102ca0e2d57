use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SEGMENT_KNN;
use crate::model::mixing::DEFAULT_DELTA;
use crate::pathways::PathwayConfig;

/// Width of a concept embedding.
pub const WORD_DIM: usize = 300;

/// Every width and count that shapes the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Shot feature width `d`.
    pub input_dim: usize,
    pub word_dim: usize,
    /// Number of basis intents `k`.
    pub num_intents: usize,
    /// Basis intent embedding width `e`.
    pub intent_dim: usize,
    pub pathways: PathwayConfig,
    pub summary_layers: usize,
    pub intent_layers: usize,
    pub segment_knn: usize,
    pub local_width: usize,
    /// Width of the space where shot and intent features meet.
    pub relevance_width: usize,
    pub summary_hidden: usize,
    pub intent_hidden: usize,
    pub attention_dim: usize,
    pub attention_heads: usize,
    /// Shots per visual query.
    pub query_shots: usize,
    pub delta: f64,
}

impl ModelConfig {
    pub fn reference(input_dim: usize) -> Self {
        ModelConfig {
            input_dim,
            word_dim: WORD_DIM,
            num_intents: 20,
            intent_dim: 128,
            pathways: PathwayConfig::reference(input_dim),
            summary_layers: 3,
            intent_layers: 2,
            segment_knn: SEGMENT_KNN,
            local_width: 512,
            relevance_width: 1024,
            summary_hidden: 1024,
            intent_hidden: 2048,
            attention_dim: WORD_DIM,
            attention_heads: 5,
            query_shots: 5,
            delta: DEFAULT_DELTA,
        }
    }

    /// Same topology with narrow layers, sized for CPU training runs.
    pub fn toy(input_dim: usize) -> Self {
        let r = PathwayConfig::reference(input_dim);
        ModelConfig {
            pathways: PathwayConfig {
                input_dim,
                fine: r.fine.with_channels(16),
                coarse: r.coarse.with_channels(32),
            },
            intent_dim: 16,
            local_width: 16,
            relevance_width: 32,
            summary_hidden: 32,
            intent_hidden: 64,
            attention_dim: 20,
            ..Self::reference(input_dim)
        }
    }

    pub fn fine_channels(&self) -> usize {
        self.pathways.fine.channels()
    }

    pub fn coarse_channels(&self) -> usize {
        self.pathways.coarse.channels()
    }

    pub fn min_shots(&self) -> usize {
        self.pathways.min_shots()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("word_dim", self.word_dim),
            ("num_intents", self.num_intents),
            ("intent_dim", self.intent_dim),
            ("summary_layers", self.summary_layers),
            ("intent_layers", self.intent_layers),
            ("segment_knn", self.segment_knn),
            ("local_width", self.local_width),
            ("relevance_width", self.relevance_width),
            ("summary_hidden", self.summary_hidden),
            ("intent_hidden", self.intent_hidden),
            ("attention_dim", self.attention_dim),
            ("attention_heads", self.attention_heads),
            ("query_shots", self.query_shots),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.attention_dim.is_multiple_of(self.attention_heads) {
            return Err(Error::Config(format!(
                "attention width {} is not divisible by {} heads",
                self.attention_dim, self.attention_heads
            )));
        }
        if self.pathways.input_dim != self.input_dim {
            return Err(Error::Config(format!(
                "pathway input width {} differs from shot feature width {}",
                self.pathways.input_dim, self.input_dim
            )));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be >= 0, got {}", self.delta)));
        }
        Ok(())
    }
}
