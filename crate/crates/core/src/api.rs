//! Response types shared by the command line and the HTTP service. Both
//! serialize through the functions here so their outputs match byte for
//! byte.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_summary, EvalResult};
use crate::model::{mix_scores, select_summary, Model, Query, Selection};
use crate::store::{load_ground_truth, Dataset, EmbeddingTable, GroundTruth, VideoRecord};
use crate::tensor::Tensor;

/// A query as supplied by a user: two concepts or a set of shot indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QuerySpec {
    Text { c1: String, c2: String },
    Visual { shots: Vec<usize> },
}

impl QuerySpec {
    pub fn resolve(&self, table: Option<&EmbeddingTable>) -> Result<Query<f32>> {
        match self {
            QuerySpec::Text { c1, c2 } => {
                let table = table.ok_or_else(|| Error::Input("dataset has no embedding table".into()))?;
                Ok(Query::Text(table.text_query(c1, c2)?))
            }
            QuerySpec::Visual { shots } => Ok(Query::Visual(shots.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResponse {
    pub intent_probs: Vec<f32>,
    /// `[k][T]`
    pub intent_shot_scores: Vec<Vec<f32>>,
    pub delta: f64,
    pub video: String,
    pub checkpoint: String,
}

impl InferenceResponse {
    pub fn compute(
        model: &Model<f32>,
        checkpoint: &str,
        video: &str,
        features: &Tensor<f32>,
        query: &Query<f32>,
    ) -> Result<Self> {
        let (probs, h) = model.infer(features, query)?;
        Ok(Self::from_parts(model, checkpoint, video, probs, &h))
    }

    /// Builds the response from precomputed shot scores.
    pub fn from_parts(model: &Model<f32>, checkpoint: &str, video: &str, probs: Vec<f32>, h: &Tensor<f32>) -> Self {
        InferenceResponse {
            intent_probs: probs,
            intent_shot_scores: (0..h.rows()).map(|i| h.row(i).to_vec()).collect(),
            delta: model.config.delta,
            video: video.to_string(),
            checkpoint: checkpoint.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }

    /// Overall shot scores and the selected summary for this response.
    pub fn summarize(&self, delta: f64, mode: Selection) -> Result<SummaryResponse> {
        let k = self.intent_shot_scores.len();
        let t = self.intent_shot_scores.first().map_or(0, Vec::len);
        let h = Tensor::from_vec(&[k, t], self.intent_shot_scores.concat())?;
        let scores = mix_scores(&self.intent_probs, &h, delta as f32)?;
        Ok(SummaryResponse {
            video: self.video.clone(),
            checkpoint: self.checkpoint.clone(),
            delta,
            summary: select_summary(&scores, mode)?,
            scores,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryResponse {
    pub video: String,
    pub checkpoint: String,
    pub delta: f64,
    pub scores: Vec<f32>,
    pub summary: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareResponse {
    pub videos: Vec<String>,
    pub checkpoints: Vec<String>,
    pub concepts: Vec<String>,
}

impl PrepareResponse {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        Ok(PrepareResponse {
            videos: ds.video_ids()?,
            checkpoints: ds.checkpoint_ids()?,
            concepts: if ds.has_embeddings() {
                ds.embeddings()?.concepts().to_vec()
            } else {
                Vec::new()
            },
        })
    }
}

/// A summary to score against one video's ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRequest {
    pub video: String,
    pub summary: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<usize>>,
    /// Selects a specific query's ground truth instead of `gt.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<String>,
}

impl EvaluateRequest {
    /// The query's ground truth when `c1`/`c2` are given, otherwise the
    /// video's installed `gt.json`. `None` when neither exists.
    pub fn ground_truth(&self, dataset: &Dataset, record: &VideoRecord) -> Result<Option<GroundTruth>> {
        match (&self.c1, &self.c2) {
            (Some(c1), Some(c2)) => {
                Ok(record
                    .queries
                    .iter()
                    .find(|q| (&q.c1, &q.c2) == (c1, c2))
                    .map(|q| GroundTruth {
                        c1: q.c1.clone(),
                        c2: q.c2.clone(),
                        summary: q.summary.clone(),
                    }))
            }
            (None, None) => load_ground_truth(&dataset.video_dir(&self.video)),
            _ => Err(Error::Input("c1 and c2 must be given together".into())),
        }
    }

    pub fn evaluate(&self, record: &VideoRecord, gt: &GroundTruth) -> Result<EvalResult> {
        let mask = self.mask.clone().unwrap_or_default();
        evaluate_summary(&self.summary, &gt.summary, &record.tag_sets(), &mask)
    }

    pub fn missing_ground_truth(&self) -> String {
        match (&self.c1, &self.c2) {
            (Some(c1), Some(c2)) => format!("no ground truth for ({c1}, {c2}) on {}", self.video),
            _ => format!("no ground truth installed for {}", self.video),
        }
    }
}
