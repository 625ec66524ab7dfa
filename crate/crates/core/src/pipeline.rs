//! Dataset ingestion, the rejection-sampling generation loop, conditional
//! evaluation, and the validity → energy → metrics evaluation chain with
//! its on-disk artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cif::{self, CifError};
use crate::codec;
use crate::crystal::{Composition, Crystal};
use crate::fingerprints::{self, FingerprintSidecar};
use crate::hull::{PhaseDiagram, StabilityClass, StabilityThresholds};
use crate::metrics::{self, EvaluatedSample, MetricsConfig, MetricsReport};
use crate::mutate::Relaxer;
use crate::prompts::{self, Completion, Condition, PromptError, PromptTask, StabilityTarget};
use crate::scoring::{ElementConstraint, Generator, SamplingParams, ScorerError};
use crate::validity::{self, ValidityConfig, ValidityReport};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("{accepted} of {requested} samples accepted before the retry budget of {budget} attempts ran out")]
    RetryBudgetExhausted { requested: usize, accepted: usize, budget: usize, attempts: Vec<SampleRecord> },
    #[error(transparent)]
    Backend(#[from] ScorerError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordProperties {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formula: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spacegroup_number: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_above_hull: Option<f64>,
}

impl RecordProperties {
    /// Prompt conditions available for this record, in template order.
    pub fn conditions(&self, thresholds: &StabilityThresholds) -> Vec<Condition> {
        let mut out = Vec::new();
        if let Some(f) = &self.formula {
            out.push(Condition::ChemicalFormula(f.clone()));
        }
        if let Some(n) = self.spacegroup_number.filter(|n| (1..=230).contains(n)) {
            out.push(Condition::SpaceGroupNumber(n));
        }
        if let Some(e) = self.e_above_hull {
            let target = if e < thresholds.metastable { StabilityTarget::Metastable } else { StabilityTarget::Unstable };
            out.push(Condition::StabilityClass(target));
        }
        if let Some(g) = self.band_gap {
            out.push(Condition::BandGap(g));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub cif: String,
    pub crystal: Crystal,
    pub properties: RecordProperties,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantinedRecord {
    /// 1-based data row.
    pub row: usize,
    pub id: String,
    pub reason: String,
}

/// Input column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub id: String,
    pub cif: String,
    pub formula: String,
    pub spacegroup_number: String,
    pub band_gap: String,
    pub e_above_hull: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "id".into(),
            cif: "cif".into(),
            formula: "formula".into(),
            spacegroup_number: "spacegroup_number".into(),
            band_gap: "band_gap".into(),
            e_above_hull: "e_above_hull".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.8, val: 0.1, test: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Records with more sites are filtered out.
    pub max_sites: usize,
    pub columns: ColumnMap,
    pub split: Option<SplitFractions>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { max_sites: 30, columns: ColumnMap::default(), split: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub total_rows: usize,
    /// Ids of records dropped by the site-count filter.
    pub filtered: Vec<String>,
    pub quarantined: Vec<QuarantinedRecord>,
    /// Indices into `records`.
    pub split: Option<Split>,
}

impl Dataset {
    pub fn crystals(&self, indices: &[usize]) -> Vec<Crystal> {
        indices.iter().map(|&i| self.records[i].crystal.clone()).collect()
    }
}

fn optional<T: std::str::FromStr>(row: &csv::StringRecord, idx: Option<usize>, name: &str) -> Result<Option<T>, String> {
    match idx.and_then(|i| row.get(i)).map(str::trim).filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|_| format!("column {name}: cannot parse {v:?}")),
    }
}

/// Parses `id,cif[,formula,spacegroup_number,band_gap,e_above_hull]` rows.
/// Unparseable rows are quarantined with their reason; oversized cells are
/// counted as filtered. A missing required column is fatal.
pub fn ingest_reader<R: Read>(reader: R, config: &IngestConfig, seed: u64) -> Result<Dataset, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| PipelineError::Dataset(e.to_string()))?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let cols = &config.columns;
    let id_col = find(&cols.id).ok_or_else(|| PipelineError::Dataset(format!("missing column {:?}", cols.id)))?;
    let cif_col = find(&cols.cif).ok_or_else(|| PipelineError::Dataset(format!("missing column {:?}", cols.cif)))?;
    let (formula_col, sg_col, gap_col, ehull_col) =
        (find(&cols.formula), find(&cols.spacegroup_number), find(&cols.band_gap), find(&cols.e_above_hull));

    let mut dataset = Dataset { records: Vec::new(), total_rows: 0, filtered: Vec::new(), quarantined: Vec::new(), split: None };
    for (i, row) in rdr.records().enumerate() {
        dataset.total_rows += 1;
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                dataset.quarantined.push(QuarantinedRecord { row: row_no, id: String::new(), reason: format!("CSV: {e}") });
                continue;
            }
        };
        let id = row.get(id_col).unwrap_or("").trim().to_string();
        let Some(cif_text) = row.get(cif_col) else {
            dataset.quarantined.push(QuarantinedRecord { row: row_no, id, reason: "missing cif field".into() });
            continue;
        };
        let crystal = match cif::parse_cif(cif_text) {
            Ok(c) => c,
            Err(e) => {
                let kind = match e {
                    CifError::MalformedCif(_) => "MalformedCif",
                    CifError::NonP1Cif(_) => "NonP1Cif",
                    CifError::PartialOccupancy { .. } => "PartialOccupancy",
                    CifError::Geometry(_) => "Geometry",
                };
                dataset.quarantined.push(QuarantinedRecord { row: row_no, id, reason: format!("{kind}: {e}") });
                continue;
            }
        };
        let properties = (|| -> Result<RecordProperties, String> {
            Ok(RecordProperties {
                formula: optional::<String>(&row, formula_col, &cols.formula)?,
                spacegroup_number: optional(&row, sg_col, &cols.spacegroup_number)?,
                band_gap: optional(&row, gap_col, &cols.band_gap)?,
                e_above_hull: optional(&row, ehull_col, &cols.e_above_hull)?,
            })
        })();
        let properties = match properties {
            Ok(p) => p,
            Err(reason) => {
                dataset.quarantined.push(QuarantinedRecord { row: row_no, id, reason });
                continue;
            }
        };
        if crystal.num_sites() > config.max_sites {
            dataset.filtered.push(id);
            continue;
        }
        dataset.records.push(DatasetRecord { id, cif: cif_text.to_string(), crystal, properties });
    }
    if let Some(fr) = config.split {
        dataset.split = Some(split_indices(dataset.records.len(), &fr, seed)?);
    }
    Ok(dataset)
}

pub fn ingest(path: &Path, config: &IngestConfig, seed: u64) -> Result<Dataset, PipelineError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    ingest_reader(io::BufReader::new(file), config, seed)
}

/// Seeded shuffle, then contiguous train / val / test blocks.
pub fn split_indices(n: usize, fractions: &SplitFractions, seed: u64) -> Result<Split, PipelineError> {
    let SplitFractions { train, val, test } = *fractions;
    if [train, val, test].iter().any(|f| !(*f >= 0.0)) || (train + val + test - 1.0).abs() > 1e-9 {
        return Err(PipelineError::InvalidRequest(format!("split fractions {train}/{val}/{test} must be non-negative and sum to 1")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train * n as f64).round() as usize;
    let n_val = ((val * n as f64).round() as usize).min(n - n_train);
    Ok(Split {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

/// Seed of attempt `index` under `root`; independent of batching.
pub fn attempt_seed(root: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(root ^ mix(index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    pub params: SamplingParams,
    pub root_seed: u64,
    pub attempt_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub attempt: usize,
    pub raw_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crystal: Option<Crystal>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejected_reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validity: Option<ValidityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_per_atom: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_hull: Option<f64>,
    pub provenance: Provenance,
}

impl SampleRecord {
    pub fn accepted(&self) -> bool {
        self.crystal.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub num_samples: usize,
    /// Attempt budget is this many attempts per requested sample.
    pub max_retries_per_sample: usize,
    /// Ask the backend to restrict element lines to real symbols.
    pub constrain_elements: bool,
    /// Attempts evaluated concurrently; does not affect results.
    pub jobs: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig { num_samples: 100, max_retries_per_sample: 10, constrain_elements: false, jobs: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Every attempt in order, accepted or rejected.
    pub attempts: Vec<SampleRecord>,
    /// Set when the backend could not constrain tokens and unknown elements
    /// are rejected after decoding instead.
    pub constraint_fallback: bool,
}

impl Generation {
    pub fn accepted(&self) -> impl Iterator<Item = &SampleRecord> {
        self.attempts.iter().filter(|s| s.accepted())
    }
}

fn interpret(task: &PromptTask, raw: &str, post_hoc_elements: bool) -> Result<Crystal, String> {
    let crystal = match prompts::parse_completion(task, raw) {
        Ok(Completion::Crystal(c)) => c,
        Ok(Completion::Element(el)) => match task {
            PromptTask::Infill { crystal, masked_element } => crystal.replace_element(masked_element, &el),
            PromptTask::Generate { .. } => unreachable!("generation tasks decode crystals"),
        },
        Err(e) => {
            let kind = match e {
                PromptError::Decode(_) => "DecodeError",
                PromptError::InvalidElementCompletion(_) => "InvalidElementCompletion",
                PromptError::InvalidSpaceGroup(_) | PromptError::ElementNotPresent(_) => "InvalidTask",
            };
            return Err(format!("{kind}: {e}"));
        }
    };
    if post_hoc_elements {
        let unknown = crystal.unknown_elements();
        if !unknown.is_empty() {
            return Err(format!("UnknownElement: {unknown:?}"));
        }
    }
    Ok(crystal)
}

/// Rejection loop: draws until `config.num_samples` completions parse, or
/// the attempt budget runs out. Attempt `i` uses `attempt_seed(seed, i)`,
/// so the result does not depend on `config.jobs`.
pub fn generate(
    generator: &dyn Generator,
    task: &PromptTask,
    params: &SamplingParams,
    config: &GenerationConfig,
    seed: u64,
) -> Result<Generation, PipelineError> {
    if config.num_samples == 0 {
        return Err(PipelineError::InvalidRequest("num_samples must be at least 1".into()));
    }
    params.validate()?;
    let prompt = task.prompt().map_err(|e| PipelineError::InvalidRequest(e.to_string()))?;
    let budget = config.num_samples.saturating_mul(config.max_retries_per_sample.max(1));
    let mut constraint = config.constrain_elements.then(ElementConstraint::periodic_table);
    let mut constraint_fallback = false;
    let backend = generator.backend_id();
    let mut attempts: Vec<SampleRecord> = Vec::new();
    let mut accepted = 0;

    while accepted < config.num_samples && attempts.len() < budget {
        let start = attempts.len();
        let width = (config.num_samples - accepted).max(config.jobs.max(1)).min(budget - start);
        let draws: Vec<Result<String, ScorerError>> = (start..start + width)
            .into_par_iter()
            .map(|i| generator.sample(&prompt, params, attempt_seed(seed, i as u64), constraint.as_ref()))
            .collect();
        if constraint.is_some() && draws.iter().any(|d| matches!(d, Err(ScorerError::ConstraintUnsupported))) {
            constraint = None;
            constraint_fallback = true;
            continue;
        }
        for (offset, draw) in draws.into_iter().enumerate() {
            if accepted == config.num_samples {
                break;
            }
            let raw_text = draw?;
            let i = start + offset;
            let (crystal, rejected_reason) = match interpret(task, &raw_text, constraint_fallback) {
                Ok(c) => {
                    accepted += 1;
                    (Some(c), None)
                }
                Err(reason) => (None, Some(reason)),
            };
            attempts.push(SampleRecord {
                attempt: i,
                raw_text,
                crystal,
                rejected_reason,
                validity: None,
                energy_per_atom: None,
                e_hull: None,
                provenance: Provenance {
                    backend: backend.clone(),
                    params: params.clone(),
                    root_seed: seed,
                    attempt_seed: attempt_seed(seed, i as u64),
                },
            });
        }
    }
    if accepted < config.num_samples {
        return Err(PipelineError::RetryBudgetExhausted { requested: config.num_samples, accepted, budget, attempts });
    }
    Ok(Generation { attempts, constraint_fallback })
}

/// Precomputed energies keyed by reduced formula. Entries that carry a
/// structure are matched by structure fingerprint as well.
#[derive(Debug, Clone, Default)]
pub struct EnergyTable {
    entries: BTreeMap<String, Vec<(Option<Vec<f64>>, f64)>>,
    pub structure_cutoff: f64,
}

#[derive(Debug, Deserialize)]
struct EnergyRow {
    formula: String,
    energy_per_atom: f64,
    #[serde(default)]
    cif: Option<String>,
}

impl EnergyTable {
    pub fn new(structure_cutoff: f64) -> Self {
        EnergyTable { entries: BTreeMap::new(), structure_cutoff }
    }

    pub fn insert(&mut self, comp: &Composition, structure: Option<&Crystal>, energy_per_atom: f64) {
        let fp = structure.map(fingerprints::struct_fingerprint);
        self.entries.entry(comp.reduced_formula()).or_default().push((fp, energy_per_atom));
    }

    /// Reads `formula,energy_per_atom[,cif]` rows.
    pub fn from_csv<R: Read>(reader: R, structure_cutoff: f64) -> Result<Self, PipelineError> {
        let mut table = EnergyTable::new(structure_cutoff);
        let mut rdr = csv::Reader::from_reader(reader);
        for (i, row) in rdr.deserialize::<EnergyRow>().enumerate() {
            let row = row.map_err(|e| PipelineError::Dataset(format!("energy row {}: {e}", i + 1)))?;
            let comp = Composition::parse_formula(&row.formula)
                .map_err(|e| PipelineError::Dataset(format!("energy row {}: {e}", i + 1)))?;
            let crystal = match row.cif.as_deref().filter(|c| !c.trim().is_empty()) {
                Some(text) => {
                    Some(cif::parse_cif(text).map_err(|e| PipelineError::Dataset(format!("energy row {}: {e}", i + 1)))?)
                }
                None => None,
            };
            table.insert(&comp, crystal.as_ref(), row.energy_per_atom);
        }
        Ok(table)
    }

    /// Formula match; among structure-bearing entries the nearest fingerprint
    /// within the cutoff wins, otherwise the first formula-only entry.
    pub fn lookup(&self, crystal: &Crystal) -> Option<f64> {
        let candidates = self.entries.get(&crystal.composition().reduced_formula())?;
        let fp = fingerprints::struct_fingerprint(crystal);
        let structural = candidates
            .iter()
            .filter_map(|(f, e)| f.as_ref().map(|f| (fingerprints::euclidean(f, &fp), *e)))
            .filter(|(d, _)| *d <= self.structure_cutoff)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        structural.map(|(_, e)| e).or_else(|| candidates.iter().find(|(f, _)| f.is_none()).map(|(_, e)| *e))
    }
}

pub enum EnergySource<'a> {
    None,
    Relaxer(&'a dyn Relaxer),
    Lookup(&'a EnergyTable),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: Condition,
    pub num_samples: usize,
    pub num_evaluated: usize,
    pub num_satisfied: usize,
    pub rate: Option<f64>,
    pub oracle_unavailable: bool,
}

/// Compares each intended condition with what the accepted samples show.
/// Formulas compare reduced compositions; stability needs `e_hull` on the
/// samples; space group and band gap have no oracle here.
pub fn evaluate_conditions(samples: &[SampleRecord], intended: &[Condition], thresholds: &StabilityThresholds) -> Vec<ConditionRow> {
    let accepted: Vec<&SampleRecord> = samples.iter().filter(|s| s.accepted()).collect();
    intended
        .iter()
        .map(|cond| {
            let verdicts: Option<Vec<Option<bool>>> = match cond {
                Condition::ChemicalFormula(f) => {
                    let want = Composition::parse_formula(f).ok().map(|c| c.reduced());
                    Some(
                        accepted
                            .iter()
                            .map(|s| want.as_ref().map(|w| s.crystal.as_ref().unwrap().composition().reduced() == *w))
                            .collect(),
                    )
                }
                Condition::StabilityClass(target) => Some(
                    accepted
                        .iter()
                        .map(|s| {
                            s.e_hull.map(|e| {
                                let metastable = thresholds.classify(e) != StabilityClass::Unstable;
                                metastable == (*target == StabilityTarget::Metastable)
                            })
                        })
                        .collect(),
                ),
                Condition::SpaceGroupNumber(_) | Condition::BandGap(_) => None,
            };
            let (evaluated, satisfied) = match &verdicts {
                Some(v) => (v.iter().flatten().count(), v.iter().flatten().filter(|b| **b).count()),
                None => (0, 0),
            };
            ConditionRow {
                condition: cond.clone(),
                num_samples: accepted.len(),
                num_evaluated: evaluated,
                num_satisfied: satisfied,
                rate: (evaluated > 0).then(|| satisfied as f64 / evaluated as f64),
                oracle_unavailable: verdicts.is_none(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub validity: ValidityConfig,
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub root_seed: u64,
    pub config: serde_json::Value,
    /// File name → sha256.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationOutput {
    pub report: MetricsReport,
    pub samples: Vec<SampleRecord>,
    pub sidecar: FingerprintSidecar,
}

/// Validity, then energies and hull distances when a source is given, then
/// the metrics report. Stage failures become notes in the report.
pub fn run_evaluation(
    samples: Vec<SampleRecord>,
    test: &[Crystal],
    train: &[Crystal],
    energy: &EnergySource<'_>,
    diagram: Option<&PhaseDiagram>,
    config: &EvaluationConfig,
) -> EvaluationOutput {
    let mut notes = Vec::new();
    let samples: Vec<SampleRecord> = samples
        .into_par_iter()
        .map(|mut s| {
            if let Some(c) = &s.crystal {
                let report = validity::validate(c, &config.validity);
                let energy = match energy {
                    EnergySource::None => None,
                    _ if !report.is_valid() => None,
                    EnergySource::Relaxer(r) => r.relax(c).ok().and_then(|r| r.energy_per_atom),
                    EnergySource::Lookup(t) => t.lookup(c),
                };
                s.energy_per_atom = energy;
                s.e_hull = match (diagram, energy) {
                    (Some(d), Some(e)) => d.energy_above_hull(&c.composition(), e).ok(),
                    _ => None,
                };
                s.validity = Some(report);
            }
            s
        })
        .collect();
    match (energy, diagram) {
        (EnergySource::None, _) => notes.push("no energy source configured; stability columns omitted".to_string()),
        (_, None) => notes.push("no reference phase diagram; stability columns omitted".to_string()),
        _ => {}
    }
    let evaluated: Vec<EvaluatedSample> = samples
        .iter()
        .filter_map(|s| {
            Some(EvaluatedSample {
                crystal: s.crystal.clone()?,
                validity: s.validity.clone()?,
                e_above_hull: s.e_hull,
            })
        })
        .collect();
    let mut report = metrics::full_report(&evaluated, test, train, &config.metrics);
    notes.append(&mut report.notes);
    report.notes = notes;
    let (standardizer, source) = metrics::select_standardizer(train, test);
    let sidecar = FingerprintSidecar {
        composition_features: fingerprints::COMPOSITION_FEATURES.iter().map(|s| s.to_string()).collect(),
        rdf: config.metrics.rdf,
        standardizer,
        standardizer_source: source.to_string(),
    };
    EvaluationOutput { report, samples, sidecar }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn samples_jsonl(samples: &[SampleRecord]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    out
}

/// Writes `samples.jsonl`, `report.json`, `report.csv`, `fingerprints.json`
/// and `manifest.json` (hashes of the others plus seed and config).
pub fn write_artifacts(
    dir: &Path,
    output: &EvaluationOutput,
    root_seed: u64,
    config: &impl Serialize,
) -> Result<Manifest, PipelineError> {
    let files: Vec<(&str, String)> = vec![
        ("samples.jsonl", samples_jsonl(&output.samples)),
        ("report.json", output.report.to_canonical_json()),
        ("report.csv", output.report.to_csv()),
        ("fingerprints.json", {
            let mut s = serde_json::to_string_pretty(&serde_json::to_value(&output.sidecar).expect("sidecar")).expect("sidecar");
            s.push('\n');
            s
        }),
    ];
    let mut manifest = Manifest {
        root_seed,
        config: serde_json::to_value(config).expect("config serializes"),
        files: BTreeMap::new(),
    };
    for (name, contents) in &files {
        write_atomic(&dir.join(name), contents.as_bytes())?;
        manifest.files.insert(name.to_string(), sha256_hex(contents.as_bytes()));
    }
    let mut text = serde_json::to_string_pretty(&serde_json::to_value(&manifest).expect("manifest")).expect("manifest");
    text.push('\n');
    write_atomic(&dir.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}

/// Encoded training corpus: `(prompt, completion)` pairs drawn with the
/// task curriculum from seeded augmentations of each record.
pub fn training_pairs(
    records: &[DatasetRecord],
    augment: &crate::augment::AugmentConfig,
    thresholds: &StabilityThresholds,
    epochs: usize,
    seed: u64,
) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(records.len() * epochs);
    for _ in 0..epochs {
        for r in records {
            let crystal = augment.apply(&r.crystal, &mut rng);
            let props = r.properties.conditions(thresholds);
            if let Ok(ex) = prompts::sample_training_example(&crystal, &props, &mut rng) {
                out.push((ex.prompt, ex.completion));
            }
        }
    }
    out
}

/// Encodes each record after a seeded augmentation; no prompts.
pub fn encoded_corpus(records: &[Crystal], augment: &crate::augment::AugmentConfig, epochs: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(records.len() * epochs);
    for _ in 0..epochs {
        for c in records {
            out.push(codec::encode(&augment.apply(c, &mut rng)).into_string());
        }
    }
    out
}
