//! Structural (atom overlap) and compositional (charge neutrality) validity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crystal::{Composition, Crystal};
use crate::elements::{self, UnknownElement};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidityError {
    #[error(transparent)]
    UnknownElement(#[from] UnknownElement),
    #[error("{distinct} distinct elements exceeds the charge-search limit of {limit}")]
    SearchSpaceExceeded { distinct: usize, limit: usize },
}

/// How a pair of sites is judged to overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum OverlapMode {
    /// Overlap when d < 0.5 · min(r_i, r_j) with empirical radii.
    RadiusFraction,
    /// Overlap when d < the given cutoff in Å.
    AbsoluteCutoff(f64),
}

impl Default for OverlapMode {
    fn default() -> Self {
        OverlapMode::RadiusFraction
    }
}

pub const RADIUS_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidityConfig {
    pub mode: OverlapMode,
    pub include_extended_states: bool,
    pub max_distinct_elements: usize,
}

impl Default for ValidityConfig {
    fn default() -> Self {
        ValidityConfig { mode: OverlapMode::RadiusFraction, include_extended_states: false, max_distinct_elements: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralVerdict {
    pub valid: bool,
    pub min_pair_distance: f64,
    /// Site indices; equal indices mean a site and its own periodic image.
    pub closest_pair: (usize, usize),
}

/// Every unordered site pair under the minimum-image convention, plus each
/// site against its own periodic images.
pub fn structural_validity(crystal: &Crystal, mode: OverlapMode) -> Result<StructuralVerdict, ValidityError> {
    let sites = crystal.sites();
    let radii: Vec<f64> = match mode {
        OverlapMode::RadiusFraction => sites
            .iter()
            .map(|s| elements::lookup(&s.element).map(|r| r.empirical_radius))
            .collect::<Result<_, _>>()?,
        OverlapMode::AbsoluteCutoff(_) => Vec::new(),
    };
    let threshold = |i: usize, j: usize| match mode {
        OverlapMode::RadiusFraction => RADIUS_FRACTION * radii[i].min(radii[j]),
        OverlapMode::AbsoluteCutoff(x) => x,
    };
    let lattice = &crystal.lattice;
    let mut verdict = StructuralVerdict { valid: true, min_pair_distance: f64::INFINITY, closest_pair: (0, 0) };
    for i in 0..sites.len() {
        for j in i..sites.len() {
            let d = lattice.min_image_distance_with(sites[i].frac(), sites[j].frac(), i == j);
            if d < threshold(i, j) {
                verdict.valid = false;
            }
            if d < verdict.min_pair_distance {
                verdict.min_pair_distance = d;
                verdict.closest_pair = (i, j);
            }
        }
    }
    Ok(verdict)
}

/// Searches for one oxidation state per element with zero net charge.
///
/// Depth-first over the elements' state sets; a branch is cut as soon as
/// the remaining elements cannot bring the partial sum back to zero.
pub fn compositional_validity(
    comp: &Composition,
    config: &ValidityConfig,
) -> Result<Option<BTreeMap<String, i8>>, ValidityError> {
    if comp.num_elements() > config.max_distinct_elements {
        return Err(ValidityError::SearchSpaceExceeded {
            distinct: comp.num_elements(),
            limit: config.max_distinct_elements,
        });
    }
    let mut entries: Vec<(&str, i64, &[i8])> = Vec::new();
    for (el, &n) in comp.counts() {
        let rec = elements::lookup(el)?;
        entries.push((el.as_str(), i64::from(n), rec.oxidation_states(config.include_extended_states)));
    }
    // suffix bounds on the achievable remaining charge
    let mut suffix_min = vec![0i64; entries.len() + 1];
    let mut suffix_max = vec![0i64; entries.len() + 1];
    for k in (0..entries.len()).rev() {
        let (_, n, states) = entries[k];
        let lo = states.iter().copied().min().unwrap_or(0);
        let hi = states.iter().copied().max().unwrap_or(0);
        suffix_min[k] = suffix_min[k + 1] + n * i64::from(lo);
        suffix_max[k] = suffix_max[k + 1] + n * i64::from(hi);
    }

    fn search(
        k: usize,
        partial: i64,
        entries: &[(&str, i64, &[i8])],
        suffix_min: &[i64],
        suffix_max: &[i64],
        chosen: &mut Vec<i8>,
    ) -> bool {
        if partial + suffix_min[k] > 0 || partial + suffix_max[k] < 0 {
            return false;
        }
        if k == entries.len() {
            return partial == 0;
        }
        let (_, n, states) = entries[k];
        for &s in states {
            chosen.push(s);
            if search(k + 1, partial + n * i64::from(s), entries, suffix_min, suffix_max, chosen) {
                return true;
            }
            chosen.pop();
        }
        false
    }

    let mut chosen = Vec::with_capacity(entries.len());
    if search(0, 0, &entries, &suffix_min, &suffix_max, &mut chosen) {
        Ok(Some(entries.iter().zip(chosen).map(|((el, _, _), s)| (el.to_string(), s)).collect()))
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub structural_valid: bool,
    pub compositional_valid: bool,
    pub unknown_elements: Vec<String>,
    pub min_pair_distance: f64,
    pub closest_pair: (usize, usize),
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oxidation_assignment: Option<BTreeMap<String, i8>>,
    pub mode: OverlapMode,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.structural_valid && self.compositional_valid
    }
}

/// Never fails: problems are reported as false flags plus notes.
pub fn validate(crystal: &Crystal, config: &ValidityConfig) -> ValidityReport {
    let unknown = crystal.unknown_elements();
    let mut notes = Vec::new();
    let geometry = structural_validity(crystal, OverlapMode::AbsoluteCutoff(0.0)).expect("cutoff mode needs no radii");
    let mut report = ValidityReport {
        structural_valid: false,
        compositional_valid: false,
        unknown_elements: unknown.clone(),
        min_pair_distance: geometry.min_pair_distance,
        closest_pair: geometry.closest_pair,
        oxidation_assignment: None,
        mode: config.mode,
        notes: Vec::new(),
    };
    if !unknown.is_empty() {
        notes.push(format!("unknown elements {unknown:?}; validity checks skipped"));
        report.notes = notes;
        return report;
    }
    match structural_validity(crystal, config.mode) {
        Ok(v) => report.structural_valid = v.valid,
        Err(e) => notes.push(e.to_string()),
    }
    match compositional_validity(&crystal.composition(), config) {
        Ok(Some(assignment)) => {
            report.compositional_valid = true;
            report.oxidation_assignment = Some(assignment);
        }
        Ok(None) => {}
        Err(e) => notes.push(e.to_string()),
    }
    report.notes = notes;
    report
}
