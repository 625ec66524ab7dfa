//! Character n-gram baseline: Laplace-smoothed conditional counts over the
//! training alphabet plus an end-of-sequence symbol and an unknown-character
//! bucket. Scores and samples completions offline.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{apply_sampling_params, draw_index, ElementConstraint, Generator, SamplingParams, ScoredSequence, ScorerError, SequenceScorer};

pub const NGRAM_FORMAT_VERSION: u32 = 1;

/// Left padding before the first character.
const BOS: char = '\u{2}';

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    alphabet: Vec<char>,
    index: HashMap<char, usize>,
    /// context → (per-symbol counts, total)
    counts: HashMap<String, (Vec<u32>, u32)>,
    checksum: String,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    order: usize,
    alpha: f64,
    alphabet: String,
    /// context → sparse (symbol index, count) pairs
    contexts: BTreeMap<String, Vec<(usize, u32)>>,
    checksum: String,
}

fn checksum_of(file: &ModelFile) -> String {
    let payload = serde_json::to_vec(&(file.format_version, file.order, file.alpha, &file.alphabet, &file.contexts))
        .expect("model payload serializes");
    hex::encode(Sha256::digest(payload))
}

impl NGramModel {
    /// Trains on whole sequences (no prompt).
    pub fn train(corpus: &[String], order: usize, alpha: f64) -> Result<Self, ScorerError> {
        let pairs: Vec<(String, String)> = corpus.iter().map(|s| (String::new(), s.clone())).collect();
        NGramModel::train_pairs(&pairs, order, alpha)
    }

    /// Trains on completions, each conditioned on the tail of its prompt.
    /// Only completion characters (and the end symbol) are modelled.
    pub fn train_pairs(examples: &[(String, String)], order: usize, alpha: f64) -> Result<Self, ScorerError> {
        if examples.is_empty() || examples.iter().all(|(_, c)| c.is_empty()) {
            return Err(ScorerError::EmptyCorpus);
        }
        if order == 0 {
            return Err(ScorerError::InvalidParams("n-gram order must be at least 1".into()));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(ScorerError::InvalidParams(format!("smoothing alpha {alpha}")));
        }
        let mut alphabet: Vec<char> = examples.iter().flat_map(|(_, c)| c.chars()).collect();
        alphabet.sort_unstable();
        alphabet.dedup();
        let mut model = NGramModel::empty(order, alpha, alphabet);
        let vocab = model.vocab_size();
        for (prompt, completion) in examples {
            let padded = model.padded(prompt, completion);
            let start = prompt.chars().count();
            let targets: Vec<usize> = completion.chars().map(|c| model.symbol(c)).chain([model.end()]).collect();
            for (i, &t) in targets.iter().enumerate() {
                let ctx: String = padded[start + i..start + i + order - 1].iter().collect();
                let entry = model.counts.entry(ctx).or_insert_with(|| (vec![0; vocab], 0));
                entry.0[t] += 1;
                entry.1 += 1;
            }
        }
        model.checksum = checksum_of(&model.to_file());
        Ok(model)
    }

    fn empty(order: usize, alpha: f64, alphabet: Vec<char>) -> Self {
        let index = alphabet.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        NGramModel { order, alpha, alphabet, index, counts: HashMap::new(), checksum: String::new() }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Alphabet, end symbol, unknown bucket.
    fn vocab_size(&self) -> usize {
        self.alphabet.len() + 2
    }

    fn end(&self) -> usize {
        self.alphabet.len()
    }

    fn unknown(&self) -> usize {
        self.alphabet.len() + 1
    }

    fn symbol(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(self.unknown())
    }

    fn padded(&self, prompt: &str, completion: &str) -> Vec<char> {
        std::iter::repeat_n(BOS, self.order - 1).chain(prompt.chars()).chain(completion.chars()).collect()
    }

    fn probability(&self, ctx: &str, symbol: usize) -> f64 {
        let v = self.vocab_size() as f64;
        match self.counts.get(ctx) {
            Some((counts, total)) => (f64::from(counts[symbol]) + self.alpha) / (f64::from(*total) + self.alpha * v),
            None => 1.0 / v,
        }
    }

    /// Next-symbol distribution over alphabet + end (unknown bucket excluded).
    fn next_distribution(&self, ctx: &str) -> Vec<f64> {
        (0..=self.end()).map(|s| self.probability(ctx, s)).collect()
    }

    fn to_file(&self) -> ModelFile {
        let contexts = self
            .counts
            .iter()
            .map(|(ctx, (counts, _))| {
                let sparse = counts.iter().enumerate().filter(|(_, &n)| n > 0).map(|(i, &n)| (i, n)).collect();
                (ctx.clone(), sparse)
            })
            .collect();
        ModelFile {
            format_version: NGRAM_FORMAT_VERSION,
            order: self.order,
            alpha: self.alpha,
            alphabet: self.alphabet.iter().collect(),
            contexts,
            checksum: self.checksum.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScorerError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ScorerError::Model(e.to_string()))?;
        if file.format_version != NGRAM_FORMAT_VERSION {
            return Err(ScorerError::Model(format!("unsupported format version {}", file.format_version)));
        }
        let expected = checksum_of(&file);
        if expected != file.checksum {
            return Err(ScorerError::Model(format!("checksum mismatch: stored {}, computed {expected}", file.checksum)));
        }
        if file.order == 0 || !(file.alpha > 0.0) {
            return Err(ScorerError::Model("invalid order or alpha".into()));
        }
        let mut model = NGramModel::empty(file.order, file.alpha, file.alphabet.chars().collect());
        let vocab = model.vocab_size();
        for (ctx, sparse) in file.contexts {
            if ctx.chars().count() != model.order - 1 {
                return Err(ScorerError::Model(format!("context {ctx:?} has wrong length")));
            }
            let mut counts = vec![0; vocab];
            for (i, n) in sparse {
                *counts.get_mut(i).ok_or_else(|| ScorerError::Model(format!("symbol index {i} out of range")))? = n;
            }
            let total = counts.iter().sum();
            model.counts.insert(ctx, (counts, total));
        }
        model.checksum = file.checksum;
        Ok(model)
    }
}

impl SequenceScorer for NGramModel {
    fn backend_id(&self) -> String {
        format!("ngram(order={},alpha={},sha256={})", self.order, self.alpha, &self.checksum[..12])
    }

    /// One token per character plus a final empty end-of-sequence token.
    fn score_continuation(&self, prompt: &str, text: &str) -> Result<ScoredSequence, ScorerError> {
        let padded = self.padded(prompt, text);
        let start = prompt.chars().count();
        let mut token_logprobs = Vec::with_capacity(text.len() + 1);
        let tokens = text.chars().map(|c| (c.to_string(), self.symbol(c))).chain([(String::new(), self.end())]);
        for (i, (token, symbol)) in tokens.enumerate() {
            let ctx: String = padded[start + i..start + i + self.order - 1].iter().collect();
            token_logprobs.push((token, self.probability(&ctx, symbol).log2()));
        }
        Ok(ScoredSequence { text: text.to_string(), token_logprobs })
    }
}

impl Generator for NGramModel {
    fn backend_id(&self) -> String {
        SequenceScorer::backend_id(self)
    }

    fn sample(
        &self,
        prompt: &str,
        params: &SamplingParams,
        seed: u64,
        constraint: Option<&ElementConstraint>,
    ) -> Result<String, ScorerError> {
        if constraint.is_some() {
            return Err(ScorerError::ConstraintUnsupported);
        }
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut window: Vec<char> = self.padded(prompt, "");
        window.drain(..window.len() - (self.order - 1));
        let mut out = String::new();
        for _ in 0..params.max_tokens {
            let ctx: String = window.iter().collect();
            let probs = apply_sampling_params(&self.next_distribution(&ctx), params);
            let s = draw_index(&probs, rng.random::<f64>());
            if s == self.end() {
                break;
            }
            let c = self.alphabet[s];
            out.push(c);
            if self.order > 1 {
                window.remove(0);
                window.push(c);
            }
            if let Some(stop) = &params.stop {
                if out.ends_with(stop.as_str()) {
                    out.truncate(out.len() - stop.len());
                    break;
                }
            }
        }
        Ok(out)
    }
}

impl NGramModel {
    /// Post-sampling next-symbol distribution after `context`, indexed like
    /// [`NGramModel::alphabet`] with the end symbol last.
    pub fn sampling_distribution(&self, prompt: &str, context: &str, params: &SamplingParams) -> Vec<f64> {
        let padded = self.padded(prompt, context);
        let ctx: String = padded[padded.len() - (self.order - 1)..].iter().collect();
        apply_sampling_params(&self.next_distribution(&ctx), params)
    }
}
