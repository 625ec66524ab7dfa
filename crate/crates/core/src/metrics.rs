//! Distribution-level metrics: coverage, property Wasserstein distances,
//! diversity, novelty, and the assembled report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crystal::Crystal;
use crate::fingerprints::{self, euclidean, CrystalFingerprints, RdfConfig, Standardizer};
use crate::hull::{StabilityClass, StabilityThresholds};
use crate::validity::ValidityReport;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("{0} sample is empty")]
    EmptySample(&'static str),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Match thresholds on the structure and (standardized) composition distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub structure: f64,
    pub composition: f64,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Cutoffs { structure: 0.1, composition: 2.0 }
    }
}

/// Fingerprints of a crystal set. Crystals containing unknown elements
/// cannot be featurized and are counted in `excluded`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub structure: Vec<Vec<f64>>,
    /// Standardized.
    pub composition: Vec<Vec<f64>>,
    pub excluded: usize,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.structure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.structure.is_empty()
    }
}

/// Raw fingerprints in input order; `None` for crystals with unknown elements.
pub fn raw_fingerprints(crystals: &[Crystal], rdf: &RdfConfig) -> Vec<Option<CrystalFingerprints>> {
    crystals.par_iter().map(|c| CrystalFingerprints::of(c, rdf).ok()).collect()
}

pub fn featurize(crystals: &[Crystal], rdf: &RdfConfig, standardizer: &Standardizer) -> FeatureSet {
    let raw = raw_fingerprints(crystals, rdf);
    let mut set = FeatureSet { structure: Vec::new(), composition: Vec::new(), excluded: 0 };
    for fp in raw {
        match fp {
            Some(fp) => {
                set.composition.push(standardizer.apply(&fp.composition));
                set.structure.push(fp.structure);
            }
            None => set.excluded += 1,
        }
    }
    set
}

/// Standardizer fitted on the composition fingerprints of `crystals`.
pub fn fit_standardizer(crystals: &[Crystal]) -> Standardizer {
    let vectors: Vec<Vec<f64>> = crystals
        .par_iter()
        .filter_map(|c| fingerprints::comp_fingerprint(&c.composition()).ok())
        .collect();
    Standardizer::fit(&vectors)
}

/// Fit on train when available, else on test, else identity; returns the
/// statistics and the name of the set they came from.
pub fn select_standardizer(train: &[Crystal], test: &[Crystal]) -> (Standardizer, &'static str) {
    if !train.is_empty() {
        (fit_standardizer(train), "train")
    } else if !test.is_empty() {
        (fit_standardizer(test), "test")
    } else {
        (Standardizer::identity(fingerprints::COMPOSITION_LEN), "identity")
    }
}

fn matches(a: &FeatureSet, i: usize, b: &FeatureSet, j: usize, cut: &Cutoffs) -> bool {
    euclidean(&a.structure[i], &b.structure[j]) <= cut.structure
        && euclidean(&a.composition[i], &b.composition[j]) <= cut.composition
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub recall: f64,
    pub precision: f64,
}

pub fn coverage(samples: &FeatureSet, test: &FeatureSet, cut: &Cutoffs) -> Result<Coverage, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySample("generated"));
    }
    if test.is_empty() {
        return Err(MetricsError::EmptySample("test"));
    }
    let matrix: Vec<Vec<bool>> = (0..samples.len())
        .into_par_iter()
        .map(|i| (0..test.len()).map(|j| matches(samples, i, test, j, cut)).collect())
        .collect();
    let precision = matrix.iter().filter(|row| row.iter().any(|&m| m)).count() as f64 / samples.len() as f64;
    let recall = (0..test.len()).filter(|&j| matrix.iter().any(|row| row[j])).count() as f64 / test.len() as f64;
    Ok(Coverage { recall, precision })
}

/// Exact 1-Wasserstein distance between two empirical distributions:
/// the integral over t ∈ [0, 1] of the gap between the two piecewise-constant
/// quantile functions, whose breakpoints are i/n and j/m.
pub fn wasserstein_1d(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.is_empty() {
        return Err(MetricsError::EmptySample("first"));
    }
    if ys.is_empty() {
        return Err(MetricsError::EmptySample("second"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite("wasserstein input"));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    // walk the merged breakpoints with integer arithmetic: position i/n vs j/m
    let (mut i, mut j) = (0usize, 0usize);
    let mut t_prev = 0u128;
    let scale = (n as u128) * (m as u128);
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i as u128 + 1) * m as u128;
        let next_b = (j as u128 + 1) * n as u128;
        let t_next = next_a.min(next_b);
        total += (t_next - t_prev) as f64 * (a[i] - b[j]).abs();
        t_prev = t_next;
        if next_a == t_next {
            i += 1;
        }
        if next_b == t_next {
            j += 1;
        }
    }
    Ok(total / scale as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertySample {
    /// g/cm³
    pub density: f64,
    pub n_elements: u32,
}

impl PropertySample {
    /// `None` when a site carries an unknown element (no mass).
    pub fn of(crystal: &Crystal) -> Option<Self> {
        Some(PropertySample { density: crystal.density()?, n_elements: crystal.composition().num_elements() as u32 })
    }
}

/// `(wdist_rho, wdist_nel)`; crystals without a defined density are skipped.
pub fn property_wdist(samples: &[Crystal], reference: &[Crystal]) -> Result<(f64, f64), MetricsError> {
    let props = |set: &[Crystal]| -> Vec<PropertySample> { set.iter().filter_map(PropertySample::of).collect() };
    let (s, r) = (props(samples), props(reference));
    let rho = wasserstein_1d(
        &s.iter().map(|p| p.density).collect::<Vec<_>>(),
        &r.iter().map(|p| p.density).collect::<Vec<_>>(),
    )?;
    let nel = wasserstein_1d(
        &s.iter().map(|p| f64::from(p.n_elements)).collect::<Vec<_>>(),
        &r.iter().map(|p| f64::from(p.n_elements)).collect::<Vec<_>>(),
    )?;
    Ok((rho, nel))
}

fn mean_pairwise(vectors: &[Vec<f64>]) -> f64 {
    let n = vectors.len();
    let sum: f64 = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| euclidean(&vectors[i], &vectors[j])).sum::<f64>())
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    sum / (n * (n - 1) / 2) as f64
}

/// Mean pairwise `(structure, composition)` distance.
pub fn diversity(set: &FeatureSet) -> Result<(f64, f64), MetricsError> {
    if set.len() < 2 {
        return Err(MetricsError::TooFewSamples(set.len()));
    }
    Ok((mean_pairwise(&set.structure), mean_pairwise(&set.composition)))
}

/// Diversity divided by the same statistic on a reference set.
pub fn normalized_diversity(set: &FeatureSet, reference: &FeatureSet) -> Result<(f64, f64), MetricsError> {
    let (s, c) = diversity(set)?;
    let (rs, rc) = diversity(reference)?;
    Ok((s / rs, c / rc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Novelty {
    pub structure: f64,
    pub composition: f64,
    pub overall: f64,
}

fn nearest(v: &[f64], pool: &[Vec<f64>]) -> f64 {
    pool.iter().map(|p| euclidean(v, p)).fold(f64::INFINITY, f64::min)
}

/// A sample is novel on an axis when its nearest training fingerprint is
/// farther than the cutoff, and novel overall when novel on either axis.
/// With an empty training set every sample is novel.
pub fn novelty(samples: &FeatureSet, train: &FeatureSet, cut: &Cutoffs) -> Result<Novelty, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySample("generated"));
    }
    let flags: Vec<(bool, bool)> = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            (
                nearest(&samples.structure[i], &train.structure) > cut.structure,
                nearest(&samples.composition[i], &train.composition) > cut.composition,
            )
        })
        .collect();
    let n = flags.len() as f64;
    Ok(Novelty {
        structure: flags.iter().filter(|f| f.0).count() as f64 / n,
        composition: flags.iter().filter(|f| f.1).count() as f64 / n,
        overall: flags.iter().filter(|f| f.0 || f.1).count() as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Coverage cutoffs default to the novelty cutoffs.
    pub coverage: Cutoffs,
    pub novelty: Cutoffs,
    pub rdf: RdfConfig,
    /// Divide diversity by the test set's diversity.
    pub normalize_diversity: bool,
    pub stability: StabilityThresholds,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            coverage: Cutoffs::default(),
            novelty: Cutoffs::default(),
            rdf: RdfConfig::default(),
            normalize_diversity: false,
            stability: StabilityThresholds::default(),
        }
    }
}

/// One generated sample with its checks.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedSample {
    pub crystal: Crystal,
    pub validity: ValidityReport,
    /// eV/atom; `None` when no energy source could score it.
    pub e_above_hull: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    /// Valid samples with E_hull below the metastable threshold, over `denominator`.
    pub metastable_rate: f64,
    /// Valid samples with E_hull below the stable threshold, over `denominator`.
    pub stable_rate: f64,
    /// Every evaluated sample, valid or not.
    pub denominator: usize,
    pub with_energy: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_samples: usize,
    pub num_valid: usize,
    pub structural_validity_rate: f64,
    pub compositional_validity_rate: f64,
    pub validity_rate: f64,
    pub coverage_recall: Option<f64>,
    pub coverage_precision: Option<f64>,
    pub wdist_rho: Option<f64>,
    pub wdist_nel: Option<f64>,
    pub diversity_struct: Option<f64>,
    pub diversity_comp: Option<f64>,
    pub diversity_normalized: bool,
    pub novelty_struct: Option<f64>,
    pub novelty_comp: Option<f64>,
    pub novelty_overall: Option<f64>,
    /// Which samples novelty was computed over: "metastable" or "valid".
    pub novelty_subset: String,
    pub stability: Option<StabilitySummary>,
    pub excluded_unknown_elements: usize,
    pub standardizer_source: String,
    pub notes: Vec<String>,
    pub config: MetricsConfig,
}

fn rate(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

/// Assembles every metric. Coverage, property distances and diversity use
/// the valid samples; novelty uses the metastable subset when energies are
/// available. A metric that cannot be computed is left empty with a note.
pub fn full_report(
    samples: &[EvaluatedSample],
    test: &[Crystal],
    train: &[Crystal],
    config: &MetricsConfig,
) -> MetricsReport {
    let mut notes = Vec::new();
    let n = samples.len();
    let valid: Vec<&EvaluatedSample> = samples.iter().filter(|s| s.validity.is_valid()).collect();
    let valid_crystals: Vec<Crystal> = valid.iter().map(|s| s.crystal.clone()).collect();

    let (standardizer, standardizer_source) = select_standardizer(train, test);
    let sample_set = featurize(&valid_crystals, &config.rdf, &standardizer);
    let test_set = featurize(test, &config.rdf, &standardizer);
    let train_set = featurize(train, &config.rdf, &standardizer);

    let mut record = |name: &str, e: MetricsError| notes.push(format!("{name}: {e}"));

    let cov = coverage(&sample_set, &test_set, &config.coverage).map_err(|e| record("coverage", e)).ok();
    let wd = property_wdist(&valid_crystals, test).map_err(|e| record("property_wdist", e)).ok();
    let div = if config.normalize_diversity {
        normalized_diversity(&sample_set, &test_set)
    } else {
        diversity(&sample_set)
    }
    .map_err(|e| record("diversity", e))
    .ok();

    let stability = if samples.iter().any(|s| s.e_above_hull.is_some()) {
        let count = |class: StabilityClass| {
            valid
                .iter()
                .filter(|s| s.e_above_hull.is_some_and(|e| config.stability.classify(e) <= class))
                .count()
        };
        Some(StabilitySummary {
            metastable_rate: rate(count(StabilityClass::Metastable), n),
            stable_rate: rate(count(StabilityClass::Stable), n),
            denominator: n,
            with_energy: samples.iter().filter(|s| s.e_above_hull.is_some()).count(),
        })
    } else {
        None
    };

    let (novelty_pool, novelty_subset) = if stability.is_some() {
        let metastable: Vec<Crystal> = valid
            .iter()
            .filter(|s| s.e_above_hull.is_some_and(|e| config.stability.classify(e) != StabilityClass::Unstable))
            .map(|s| s.crystal.clone())
            .collect();
        (featurize(&metastable, &config.rdf, &standardizer), "metastable")
    } else {
        (sample_set.clone(), "valid")
    };
    let nov = novelty(&novelty_pool, &train_set, &config.novelty).map_err(|e| record("novelty", e)).ok();

    MetricsReport {
        num_samples: n,
        num_valid: valid.len(),
        structural_validity_rate: rate(samples.iter().filter(|s| s.validity.structural_valid).count(), n),
        compositional_validity_rate: rate(samples.iter().filter(|s| s.validity.compositional_valid).count(), n),
        validity_rate: rate(valid.len(), n),
        coverage_recall: cov.map(|c| c.recall),
        coverage_precision: cov.map(|c| c.precision),
        wdist_rho: wd.map(|w| w.0),
        wdist_nel: wd.map(|w| w.1),
        diversity_struct: div.map(|d| d.0),
        diversity_comp: div.map(|d| d.1),
        diversity_normalized: config.normalize_diversity,
        novelty_struct: nov.map(|v| v.structure),
        novelty_comp: nov.map(|v| v.composition),
        novelty_overall: nov.map(|v| v.overall),
        novelty_subset: novelty_subset.to_string(),
        stability,
        excluded_unknown_elements: sample_set.excluded + test_set.excluded + train_set.excluded,
        standardizer_source: standardizer_source.to_string(),
        notes,
        config: config.clone(),
    }
}

impl MetricsReport {
    /// Pretty JSON with keys in sorted order.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
        s.push('\n');
        s
    }

    /// Header line and one data row over the scalar fields.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let fields: Vec<(&str, String)> = vec![
            ("num_samples", self.num_samples.to_string()),
            ("num_valid", self.num_valid.to_string()),
            ("structural_validity_rate", self.structural_validity_rate.to_string()),
            ("compositional_validity_rate", self.compositional_validity_rate.to_string()),
            ("validity_rate", self.validity_rate.to_string()),
            ("coverage_recall", opt(self.coverage_recall)),
            ("coverage_precision", opt(self.coverage_precision)),
            ("wdist_rho", opt(self.wdist_rho)),
            ("wdist_nel", opt(self.wdist_nel)),
            ("diversity_struct", opt(self.diversity_struct)),
            ("diversity_comp", opt(self.diversity_comp)),
            ("novelty_struct", opt(self.novelty_struct)),
            ("novelty_comp", opt(self.novelty_comp)),
            ("novelty_overall", opt(self.novelty_overall)),
            ("metastable_rate", opt(self.stability.map(|s| s.metastable_rate))),
            ("stable_rate", opt(self.stability.map(|s| s.stable_rate))),
            ("coverage_structure_cutoff", self.config.coverage.structure.to_string()),
            ("coverage_composition_cutoff", self.config.coverage.composition.to_string()),
            ("novelty_structure_cutoff", self.config.novelty.structure.to_string()),
            ("novelty_composition_cutoff", self.config.novelty.composition.to_string()),
        ];
        let header: Vec<&str> = fields.iter().map(|f| f.0).collect();
        let row: Vec<&str> = fields.iter().map(|f| f.1.as_str()).collect();
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}
