//! Element-swap mutation: swap-table construction, single-swap proposals
//! (uniform or scorer-guided through the infill prompt), and one
//! mutate → relax → evaluate round over a set of seed crystals.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cif;
use crate::crystal::Crystal;
use crate::elements::{self, ElementRecord};
use crate::fingerprints::RdfConfig;
use crate::hull::{PhaseDiagram, StabilityClass, StabilityThresholds};
use crate::metrics;
use crate::prompts;
use crate::scoring::remote::{post_json, RemoteConfig};
use crate::scoring::{apply_sampling_params, draw_index, SamplingParams, ScorerError, SequenceScorer};
use crate::validity::{self, ValidityConfig};

pub const DEFAULT_TOLERANCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MutateError {
    #[error("no element of the crystal has a non-empty swap row")]
    NoSwappableElement,
    #[error("swap tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("relaxer: {0}")]
    Relax(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapEntry {
    pub symbol: String,
    pub state: i8,
    /// Å
    pub radius_diff: f64,
}

/// Element → substitutes sharing an oxidation state with an ionic radius
/// closer than the tolerance. A substitute reachable through several states
/// appears once per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapTable {
    pub tolerance: f64,
    pub rows: BTreeMap<String, Vec<SwapEntry>>,
}

fn similar_elements(target: &ElementRecord, all: &[ElementRecord], tolerance: f64) -> Vec<SwapEntry> {
    let mut found: Vec<(SwapEntry, u8)> = Vec::new();
    for (&state, &radius) in &target.ionic_radii {
        for el in all {
            if let Some(&other) = el.ionic_radii.get(&state) {
                let radius_diff = (radius - other).abs();
                if radius_diff < tolerance && el.symbol != target.symbol {
                    found.push((SwapEntry { symbol: el.symbol.clone(), state, radius_diff }, el.atomic_number));
                }
            }
        }
    }
    found.sort_by(|(a, za), (b, zb)| {
        a.radius_diff.total_cmp(&b.radius_diff).then(za.cmp(zb)).then(a.state.cmp(&b.state))
    });
    found.into_iter().map(|(e, _)| e).collect()
}

pub fn build_swap_table(tolerance: f64) -> Result<SwapTable, MutateError> {
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(MutateError::InvalidTolerance(tolerance));
    }
    let all = elements::all_elements();
    let rows = all.iter().map(|el| (el.symbol.clone(), similar_elements(el, all, tolerance))).collect();
    Ok(SwapTable { tolerance, rows })
}

impl SwapTable {
    pub fn row(&self, symbol: &str) -> &[SwapEntry] {
        self.rows.get(symbol).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_swappable(&self, symbol: &str) -> bool {
        !self.row(symbol).is_empty()
    }

    /// Distinct substitute symbols of a row in first-appearance order.
    pub fn substitutes(&self, symbol: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in self.row(symbol) {
            if !out.contains(&e.symbol.as_str()) {
                out.push(&e.symbol);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("swap table serializes")
    }
}

#[derive(Clone, Copy)]
pub enum MutationPolicy<'a> {
    /// New element drawn uniformly over the row entries.
    Uniform,
    /// New element drawn from the scorer's infill distribution restricted
    /// to the row, then sharpened or flattened by `temperature`.
    ScorerGuided { scorer: &'a dyn SequenceScorer, temperature: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mutation {
    pub crystal: Crystal,
    pub old: String,
    pub new: String,
    /// Scorer-guided proposal fell back to uniform because every candidate
    /// had zero probability.
    pub fallback_uniform: bool,
    /// Sampling distribution over the row, when scorer-guided.
    pub distribution: Vec<(String, f64)>,
}

/// Scorer probability of each candidate as the infill completion, restricted
/// to `candidates` and renormalized, then tempered.
pub fn guided_distribution(
    scorer: &dyn SequenceScorer,
    crystal: &Crystal,
    old: &str,
    candidates: &[&str],
    temperature: f64,
) -> Result<Vec<f64>, MutateError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(MutateError::InvalidTemperature(temperature));
    }
    let (prompt, _) = prompts::build_infill_prompt(crystal, old).expect("old element occurs in the crystal");
    let logps = candidates
        .iter()
        .map(|c| Ok(-scorer.score_continuation(&prompt, c)?.cross_entropy()))
        .collect::<Result<Vec<f64>, ScorerError>>()?;
    let max = logps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mass: Vec<f64> = if max.is_finite() { logps.iter().map(|l| (l - max).exp2()).collect() } else { vec![0.0; logps.len()] };
    let params = SamplingParams { temperature, ..SamplingParams::default() };
    Ok(apply_sampling_params(&mass, &params))
}

pub fn propose_mutation<R: Rng + ?Sized>(
    crystal: &Crystal,
    table: &SwapTable,
    policy: MutationPolicy<'_>,
    rng: &mut R,
) -> Result<Mutation, MutateError> {
    let swappable: Vec<&str> = crystal.distinct_elements().into_iter().filter(|e| table.is_swappable(e)).collect();
    if swappable.is_empty() {
        return Err(MutateError::NoSwappableElement);
    }
    let old = swappable[rng.random_range(0..swappable.len())].to_string();
    let row = table.row(&old);
    let (new, fallback_uniform, distribution) = match policy {
        MutationPolicy::Uniform => (row[rng.random_range(0..row.len())].symbol.clone(), false, Vec::new()),
        MutationPolicy::ScorerGuided { scorer, temperature } => {
            let candidates = table.substitutes(&old);
            let probs = guided_distribution(scorer, crystal, &old, &candidates, temperature)?;
            let distribution: Vec<(String, f64)> = candidates.iter().map(|c| c.to_string()).zip(probs.iter().copied()).collect();
            if probs.iter().sum::<f64>() > 0.0 {
                (candidates[draw_index(&probs, rng.random::<f64>())].to_string(), false, distribution)
            } else {
                (row[rng.random_range(0..row.len())].symbol.clone(), true, distribution)
            }
        }
    };
    Ok(Mutation { crystal: crystal.replace_element(&old, &new), old, new, fallback_uniform, distribution })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relaxed {
    pub crystal: Crystal,
    /// eV/atom
    pub energy_per_atom: Option<f64>,
}

pub trait Relaxer: Send + Sync {
    fn relax(&self, crystal: &Crystal) -> Result<Relaxed, MutateError>;
}

/// Returns the input unchanged and no energy.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRelaxer;

impl Relaxer for IdentityRelaxer {
    fn relax(&self, crystal: &Crystal) -> Result<Relaxed, MutateError> {
        Ok(Relaxed { crystal: crystal.clone(), energy_per_atom: None })
    }
}

/// Posts `{"cif": ...}` and expects `{"cif": ..., "energy_per_atom": ...}`.
#[derive(Debug, Clone)]
pub struct RemoteRelaxer {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteRelaxer {
    /// Uses the endpoint, timeouts, retry policy and token of `config`.
    pub fn new(config: RemoteConfig) -> Self {
        let agent = config.agent();
        RemoteRelaxer { config, agent }
    }
}

#[derive(Deserialize)]
struct RelaxResponse {
    cif: String,
    energy_per_atom: Option<f64>,
}

impl Relaxer for RemoteRelaxer {
    fn relax(&self, crystal: &Crystal) -> Result<Relaxed, MutateError> {
        let body = json!({ "cif": cif::write_cif(crystal, &crystal.composition().reduced_formula()) });
        let value = post_json(&self.agent, &self.config.endpoint, self.config.api_token.as_deref(), &body, &self.config.retry)?;
        let response: RelaxResponse = serde_json::from_value(value).map_err(|e| MutateError::Relax(format!("unexpected response: {e}")))?;
        let relaxed = cif::parse_cif(&response.cif).map_err(|e| MutateError::Relax(format!("returned CIF: {e}")))?;
        if let Some(e) = response.energy_per_atom {
            if !e.is_finite() {
                return Err(MutateError::Relax(format!("energy {e}")));
            }
        }
        Ok(Relaxed { crystal: relaxed, energy_per_atom: response.energy_per_atom })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed_index: usize,
    pub old: Option<String>,
    pub new: Option<String>,
    pub fallback_uniform: bool,
    pub crystal: Option<Crystal>,
    pub valid: Option<bool>,
    pub energy_per_atom: Option<f64>,
    pub e_above_hull: Option<f64>,
    pub stability: Option<StabilityClass>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub num_seeds: usize,
    pub num_mutated: usize,
    /// Over all seeds; `None` without energies.
    pub stable_fraction: Option<f64>,
    pub metastable_fraction: Option<f64>,
    /// Mean pairwise distances over the stable mutants, when at least two.
    pub stable_diversity_struct: Option<f64>,
    pub stable_diversity_comp: Option<f64>,
    pub outcomes: Vec<SeedOutcome>,
}

/// Proposals are drawn in seed order from `rng`; relaxation and evaluation
/// then run in parallel. Per-seed failures are recorded and the round
/// carries on.
pub fn mutation_round<R: Rng + ?Sized>(
    seeds: &[Crystal],
    table: &SwapTable,
    policy: MutationPolicy<'_>,
    relaxer: &dyn Relaxer,
    diagram: Option<&PhaseDiagram>,
    thresholds: &StabilityThresholds,
    rng: &mut R,
) -> RoundReport {
    let proposals: Vec<Result<Mutation, MutateError>> =
        seeds.iter().map(|s| propose_mutation(s, table, policy, rng)).collect();
    let validity_config = ValidityConfig::default();
    let outcomes: Vec<SeedOutcome> = proposals
        .into_par_iter()
        .enumerate()
        .map(|(seed_index, proposal)| {
            let mut out = SeedOutcome {
                seed_index,
                old: None,
                new: None,
                fallback_uniform: false,
                crystal: None,
                valid: None,
                energy_per_atom: None,
                e_above_hull: None,
                stability: None,
                error: None,
            };
            let m = match proposal {
                Ok(m) => m,
                Err(e) => {
                    out.error = Some(e.to_string());
                    return out;
                }
            };
            out.old = Some(m.old);
            out.new = Some(m.new);
            out.fallback_uniform = m.fallback_uniform;
            let relaxed = match relaxer.relax(&m.crystal) {
                Ok(r) => r,
                Err(e) => {
                    out.error = Some(e.to_string());
                    return out;
                }
            };
            out.valid = Some(validity::validate(&relaxed.crystal, &validity_config).is_valid());
            out.energy_per_atom = relaxed.energy_per_atom;
            if let (Some(d), Some(e)) = (diagram, relaxed.energy_per_atom) {
                match d.energy_above_hull(&relaxed.crystal.composition(), e) {
                    Ok(h) => {
                        out.e_above_hull = Some(h);
                        out.stability = Some(thresholds.classify(h));
                    }
                    Err(err) => out.error = Some(err.to_string()),
                }
            }
            out.crystal = Some(relaxed.crystal);
            out
        })
        .collect();

    let n = seeds.len();
    let with_energy = outcomes.iter().any(|o| o.stability.is_some());
    let fraction = |max: StabilityClass| {
        with_energy.then(|| {
            outcomes.iter().filter(|o| o.stability.is_some_and(|c| c <= max)).count() as f64 / n.max(1) as f64
        })
    };
    let stable: Vec<Crystal> = outcomes
        .iter()
        .filter(|o| o.stability == Some(StabilityClass::Stable))
        .filter_map(|o| o.crystal.clone())
        .collect();
    let standardizer = metrics::fit_standardizer(seeds);
    let diversity = metrics::diversity(&metrics::featurize(&stable, &RdfConfig::default(), &standardizer)).ok();
    RoundReport {
        num_seeds: n,
        num_mutated: outcomes.iter().filter(|o| o.new.is_some()).count(),
        stable_fraction: fraction(StabilityClass::Stable),
        metastable_fraction: fraction(StabilityClass::Metastable),
        stable_diversity_struct: diversity.map(|d| d.0),
        stable_diversity_comp: diversity.map(|d| d.1),
        outcomes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::{Lattice, Site};
    use crate::scoring::ScoredSequence;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(el: &str) -> Crystal {
        Crystal::new(Lattice::cubic(3.0).unwrap(), vec![Site::new(el, [0.0; 3]).unwrap()]).unwrap()
    }

    fn table_with(rows: &[(&str, &[&str])]) -> SwapTable {
        let rows = rows
            .iter()
            .map(|(k, v)| {
                (k.to_string(), v.iter().map(|s| SwapEntry { symbol: s.to_string(), state: 2, radius_diff: 0.01 }).collect())
            })
            .collect();
        SwapTable { tolerance: 0.1, rows }
    }

    struct Favours(&'static str);

    impl SequenceScorer for Favours {
        fn backend_id(&self) -> String {
            "favours".into()
        }

        fn score_continuation(&self, _prompt: &str, text: &str) -> Result<ScoredSequence, ScorerError> {
            let lp = if text == self.0 { -1.0 } else { -3.0 };
            Ok(ScoredSequence { text: text.into(), token_logprobs: vec![(text.into(), lp)] })
        }
    }

    #[test]
    fn table_predicate_and_determinism() {
        let t = build_swap_table(DEFAULT_TOLERANCE).unwrap();
        for (el, row) in &t.rows {
            let rec = elements::lookup(el).unwrap();
            for e in row {
                assert_ne!(&e.symbol, el);
                let other = elements::lookup(&e.symbol).unwrap();
                let d = (rec.ionic_radii[&e.state] - other.ionic_radii[&e.state]).abs();
                assert!(d < 0.1 && (d - e.radius_diff).abs() < 1e-15);
            }
            assert!(row.windows(2).all(|w| w[0].radius_diff <= w[1].radius_diff));
        }
        assert!(t.row("He").is_empty());
        assert_eq!(t.to_json(), build_swap_table(DEFAULT_TOLERANCE).unwrap().to_json());
        assert!(build_swap_table(0.0).is_err());
    }

    #[test]
    fn deterministic_single_swap() {
        let t = table_with(&[("Fe", &["Co"])]);
        let m = propose_mutation(&single("Fe"), &t, MutationPolicy::Uniform, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((m.old.as_str(), m.new.as_str()), ("Fe", "Co"));
        assert_eq!(m.crystal.sites()[0].element, "Co");
        assert_eq!(m.crystal.lattice, single("Fe").lattice);
        assert_eq!(
            propose_mutation(&single("He"), &t, MutationPolicy::Uniform, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(MutateError::NoSwappableElement)
        );
    }

    #[test]
    fn guided_cold_limit_picks_argmax() {
        let t = table_with(&[("Fe", &["Co", "Ni", "Mn"])]);
        let scorer = Favours("Ni");
        let policy = MutationPolicy::ScorerGuided { scorer: &scorer, temperature: 1e-6 };
        for seed in 0..20 {
            let m = propose_mutation(&single("Fe"), &t, policy, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(m.new, "Ni");
        }
        let warm = MutationPolicy::ScorerGuided { scorer: &scorer, temperature: 1.0 };
        let m = propose_mutation(&single("Fe"), &t, warm, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let total: f64 = m.distribution.iter().map(|d| d.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // 2^-1 : 2^-3 : 2^-3
        assert!((m.distribution[1].1 - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn round_without_energies() {
        let t = table_with(&[("Fe", &["Co"])]);
        let seeds = vec![single("Fe"), single("He")];
        let r = mutation_round(
            &seeds,
            &t,
            MutationPolicy::Uniform,
            &IdentityRelaxer,
            None,
            &StabilityThresholds::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!((r.num_seeds, r.num_mutated), (2, 1));
        assert_eq!(r.stable_fraction, None);
        assert!(r.outcomes[1].error.as_deref().unwrap().contains("swap row"));
        assert!(r.outcomes[0].valid.is_some() && r.outcomes[0].crystal.is_some());
    }
}
