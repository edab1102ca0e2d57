//! Intent and summary modules, score mixing and summary selection.

mod cache;
mod config;
mod intent;
mod mixing;
mod summary;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cache::ScoreCache;
pub use config::{ModelConfig, WORD_DIM};
pub use intent::{IntentCache, IntentModule};
pub use mixing::{
    default_budget, mix_scores, mix_scores_backward, rank_desc, representative_shots, select_summary, Selection,
    DEFAULT_DELTA,
};
pub use summary::{SummaryCache, SummaryModule};

use crate::error::{Error, Result};
use crate::impl_module;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A query in model space.
#[derive(Debug, Clone, PartialEq)]
pub enum Query<S> {
    /// The two concept embeddings, `[2, word_dim]`.
    Text(Tensor<S>),
    /// Distinct shot indices into the video.
    Visual(Vec<usize>),
}

/// Both intent variants plus the summary module. The summary module never
/// sees the query, so one trained on text queries serves visual ones as is.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub summary: SummaryModule<S>,
    pub text_intent: IntentModule<S>,
    pub visual_intent: IntentModule<S>,
}

impl_module!(Model {
    summary,
    text_intent,
    visual_intent
});

/// Checks that visual query shots are distinct and inside `0..shots`.
pub fn validate_visual_query(indices: &[usize], shots: usize) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::Input("visual query has no shots".into()));
    }
    let mut seen = vec![false; shots];
    for &i in indices {
        if i >= shots {
            return Err(Error::Input(format!("query shot {i} is outside 0..{shots}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Input(format!("query shot {i} appears twice")));
        }
    }
    Ok(())
}

impl<S: Scalar> Model<S> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Model {
            config: config.clone(),
            summary: SummaryModule::new(config, &mut rng)?,
            text_intent: IntentModule::text(config, &mut rng)?,
            visual_intent: IntentModule::visual(config, &mut rng)?,
        })
    }

    pub fn delta(&self) -> S {
        S::lit(self.config.delta)
    }

    fn check_video(&self, video: &Tensor<S>) -> Result<()> {
        if video.shape().len() != 2 || video.cols() != self.config.input_dim {
            return Err(Error::dim(
                "video features",
                &[video.rows(), self.config.input_dim],
                video.shape(),
            ));
        }
        if !video.is_finite() {
            return Err(Error::NonFinite("video features".into()));
        }
        Ok(())
    }

    /// `H: [k, T]`, every shot scored under every basis intent.
    pub fn shot_scores(&self, video: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.summary_forward(video)?.0)
    }

    pub fn summary_forward(&self, video: &Tensor<S>) -> Result<(Tensor<S>, SummaryCache<S>)> {
        self.check_video(video)?;
        self.summary.forward(video)
    }

    pub fn intent_forward(&self, video: &Tensor<S>, query: &Query<S>) -> Result<(Vec<S>, IntentCache<S>)> {
        self.check_video(video)?;
        match query {
            Query::Text(words) => {
                let w = self.config.word_dim;
                if words.shape() != [2, w] {
                    return Err(Error::dim("text query", &[2, w], words.shape()));
                }
                let ego = words.clone().reshape(&[1, 2 * w])?;
                self.text_intent.forward(video, &ego, words)
            }
            Query::Visual(shots) => {
                validate_visual_query(shots, video.rows())?;
                let q = video.select_rows(shots);
                self.visual_intent.forward(video, &q, &q)
            }
        }
    }

    pub fn intent_probs(&self, video: &Tensor<S>, query: &Query<S>) -> Result<Vec<S>> {
        Ok(self.intent_forward(video, query)?.0)
    }

    pub fn intent_backward(&self, query: &Query<S>, cache: &IntentCache<S>, d_probs: &[S], grad: &mut Model<S>) {
        match query {
            Query::Text(_) => self.text_intent.backward(cache, d_probs, &mut grad.text_intent),
            Query::Visual(_) => self.visual_intent.backward(cache, d_probs, &mut grad.visual_intent),
        }
    }

    /// Intent distribution and per-intent shot scores; mixing is left to the
    /// caller.
    pub fn infer(&self, video: &Tensor<S>, query: &Query<S>) -> Result<(Vec<S>, Tensor<S>)> {
        let probs = self.intent_probs(video, query)?;
        let h = self.shot_scores(video)?;
        Ok((probs, h))
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        use crate::nn::Module;
        let mut out = Model::<T>::new(&self.config, 0).expect("config already validated");
        let values: Vec<T> = self.flatten().iter().map(|v| T::lit(v.as_f64())).collect();
        out.unflatten(&values);
        out
    }
}
