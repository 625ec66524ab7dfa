//! The language-model boundary.
//!
//! Everything model-specific sits behind [`SequenceScorer`] and
//! [`Generator`]. Log-probabilities are base 2 throughout; backends that
//! report natural logs convert at the boundary.

mod ipt;
mod ngram;
pub(crate) mod remote;

pub use ipt::{ipt, ipt_detailed, IptResult, DEFAULT_TRANSLATIONS};
pub use ngram::{NGramModel, NGRAM_FORMAT_VERSION};
pub use remote::{RemoteConfig, RemoteLLM, RetryPolicy, API_TOKEN_ENV};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScorerError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("backend cannot constrain element tokens")]
    ConstraintUnsupported,
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("cannot score an empty sequence")]
    EmptyText,
    #[error("model file: {0}")]
    Model(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub stop: Option<String>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams { temperature: 1.0, top_p: 1.0, max_tokens: 1024, stop: None }
    }
}

impl SamplingParams {
    pub fn new(temperature: f64, top_p: f64) -> Result<Self, ScorerError> {
        let p = SamplingParams { temperature, top_p, ..SamplingParams::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(ScorerError::InvalidParams(format!("temperature {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ScorerError::InvalidParams(format!("top_p {}", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(ScorerError::InvalidParams("max_tokens 0".into()));
        }
        Ok(())
    }
}

/// Backend tokens of a scored text with their base-2 log-probabilities.
/// Concatenating the tokens gives back the text; a backend may append an
/// empty end-of-sequence token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSequence {
    pub text: String,
    pub token_logprobs: Vec<(String, f64)>,
}

impl ScoredSequence {
    /// Cross entropy in bits.
    pub fn cross_entropy(&self) -> f64 {
        -self.token_logprobs.iter().map(|(_, lp)| lp).sum::<f64>()
    }

    pub fn perplexity(&self) -> Result<f64, ScorerError> {
        if self.token_logprobs.is_empty() {
            return Err(ScorerError::EmptyText);
        }
        Ok((self.cross_entropy() / self.token_logprobs.len() as f64).exp2())
    }
}

pub trait SequenceScorer: Send + Sync {
    fn backend_id(&self) -> String;

    /// Scores `text` as a continuation of `prompt`; only the tokens of
    /// `text` are returned.
    fn score_continuation(&self, prompt: &str, text: &str) -> Result<ScoredSequence, ScorerError>;

    fn score(&self, text: &str) -> Result<ScoredSequence, ScorerError> {
        self.score_continuation("", text)
    }
}

/// Element symbols the backend may emit on element lines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementConstraint {
    pub allowed: Vec<String>,
}

impl ElementConstraint {
    /// Every symbol in the embedded periodic table.
    pub fn periodic_table() -> Self {
        ElementConstraint { allowed: crate::elements::all_elements().iter().map(|r| r.symbol.clone()).collect() }
    }
}

pub trait Generator: Send + Sync {
    fn backend_id(&self) -> String;

    /// Draws one completion of `prompt`. Backends that cannot honour
    /// `constraint` return [`ScorerError::ConstraintUnsupported`].
    fn sample(
        &self,
        prompt: &str,
        params: &SamplingParams,
        seed: u64,
        constraint: Option<&ElementConstraint>,
    ) -> Result<String, ScorerError>;
}

/// `2^(CE/n)` over the backend's tokens of `text`.
pub fn perplexity(scorer: &dyn SequenceScorer, text: &str) -> Result<f64, ScorerError> {
    if text.is_empty() {
        return Err(ScorerError::EmptyText);
    }
    scorer.score(text)?.perplexity()
}

/// Temperature then nucleus truncation. Temperature is applied in log
/// space; nucleus keeps the shortest prefix of the probability-sorted
/// tokens (stable order on ties) whose mass reaches `top_p`.
pub fn apply_sampling_params(dist: &[f64], params: &SamplingParams) -> Vec<f64> {
    let mut probs: Vec<f64> = dist.to_vec();
    if params.temperature != 1.0 {
        let logs: Vec<f64> = probs.iter().map(|p| if *p > 0.0 { p.ln() / params.temperature } else { f64::NEG_INFINITY }).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        probs = logs.iter().map(|l| if l.is_finite() { (l - max).exp() } else { 0.0 }).collect();
    }
    normalize(&mut probs);
    if params.top_p < 1.0 {
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&i, &j| probs[j].total_cmp(&probs[i]));
        let mut cumulative = 0.0;
        let mut keep = vec![false; probs.len()];
        for &i in &order {
            keep[i] = true;
            cumulative += probs[i];
            if cumulative >= params.top_p - 1e-12 {
                break;
            }
        }
        for (p, k) in probs.iter_mut().zip(keep) {
            if !k {
                *p = 0.0;
            }
        }
        normalize(&mut probs);
    }
    probs
}

fn normalize(probs: &mut [f64]) {
    let total: f64 = probs.iter().sum();
    if total > 0.0 {
        for p in probs.iter_mut() {
            *p /= total;
        }
    }
}

/// Index drawn from a categorical distribution with one uniform variate.
pub(crate) fn draw_index(probs: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cumulative += p;
            last = i;
            if u < cumulative {
                return i;
            }
        }
    }
    last
}
