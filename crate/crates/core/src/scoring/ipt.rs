//! Increase in perplexity under translation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ScorerError, SequenceScorer};
use crate::augment::random_translation;
use crate::codec;
use crate::crystal::Crystal;
use crate::prompts;

pub const DEFAULT_TRANSLATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IptResult {
    /// `raw / mean_ppl`.
    pub value: f64,
    /// Mean excess perplexity over the best sampled translation.
    pub raw: f64,
    pub mean_ppl: f64,
    pub min_ppl: f64,
    pub perplexities: Vec<f64>,
    pub backend: String,
}

/// Draws `k` uniform translations, scores each encoded copy as a completion
/// of `prompt`, and compares every perplexity with the smallest of the same
/// `k` values.
pub fn ipt_detailed<R: Rng + ?Sized>(
    scorer: &dyn SequenceScorer,
    crystal: &Crystal,
    k: usize,
    prompt: &str,
    rng: &mut R,
) -> Result<IptResult, ScorerError> {
    if k < 2 {
        return Err(ScorerError::InvalidParams(format!("IPT needs at least 2 translations, got {k}")));
    }
    let texts: Vec<String> = (0..k).map(|_| codec::encode(&random_translation(crystal, rng)).into_string()).collect();
    let perplexities = texts
        .par_iter()
        .map(|t| scorer.score_continuation(prompt, t)?.perplexity())
        .collect::<Result<Vec<f64>, ScorerError>>()?;
    let min_ppl = perplexities.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_ppl = perplexities.iter().sum::<f64>() / k as f64;
    let raw = perplexities.iter().map(|p| p - min_ppl).sum::<f64>() / k as f64;
    Ok(IptResult { value: raw / mean_ppl, raw, mean_ppl, min_ppl, perplexities, backend: scorer.backend_id() })
}

/// Normalized IPT with the crystal scored as an unconditional generation.
pub fn ipt<R: Rng + ?Sized>(scorer: &dyn SequenceScorer, crystal: &Crystal, k: usize, rng: &mut R) -> Result<f64, ScorerError> {
    let prompt = prompts::build_generation_prompt(&[]).expect("no conditions to validate");
    Ok(ipt_detailed(scorer, crystal, k, &prompt, rng)?.value)
}
