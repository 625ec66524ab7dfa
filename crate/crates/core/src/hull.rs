//! Energy above the convex hull from user-supplied reference energies.
//!
//! Energies are consumed as given: any dataset-specific corrections must
//! already be applied. The hull value at a composition is found by a small
//! linear program over the reference phases rather than by geometric hull
//! construction, so any number of elements is handled the same way.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::crystal::{Composition, CrystalError};
use crate::lp::{self, LinearProgram, LpError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HullError {
    #[error("no pure-element reference phase for {0}")]
    MissingElementReference(String),
    #[error("composition cannot be decomposed into reference phases: {0}")]
    InfeasibleComposition(String),
    #[error("invalid reference phase {id:?}: {reason}")]
    InvalidPhase { id: String, reason: String },
    #[error("reference CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Formula(#[from] CrystalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePhase {
    pub id: String,
    pub composition: Composition,
    /// eV/atom
    pub energy_per_atom: f64,
}

impl ReferencePhase {
    pub fn new(id: impl Into<String>, composition: Composition, energy_per_atom: f64) -> Result<Self, HullError> {
        let id = id.into();
        if composition.is_empty() {
            return Err(HullError::InvalidPhase { id, reason: "empty composition".into() });
        }
        if !energy_per_atom.is_finite() {
            return Err(HullError::InvalidPhase { id, reason: format!("energy {energy_per_atom}") });
        }
        Ok(ReferencePhase { id, composition, energy_per_atom })
    }

    pub fn from_formula(id: impl Into<String>, formula: &str, energy_per_atom: f64) -> Result<Self, HullError> {
        ReferencePhase::new(id, Composition::parse_formula(formula)?, energy_per_atom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDiagram {
    /// Canonically ordered so results do not depend on input order.
    phases: Vec<ReferencePhase>,
    formation: Vec<f64>,
    elemental_references: BTreeMap<String, f64>,
}

/// One phase of the hull decomposition and its atom-fraction weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTerm {
    pub id: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullResult {
    /// eV/atom
    pub e_above_hull: f64,
    /// Formation energy of the query, eV/atom.
    pub formation_energy: f64,
    /// Formation energy of the hull at the query composition, eV/atom.
    pub hull_formation_energy: f64,
    pub decomposition: Vec<DecompositionTerm>,
}

fn canonical_key(p: &ReferencePhase) -> (Vec<(String, u64)>, u64, String) {
    let fractions = p
        .composition
        .elements()
        .map(|e| (e.to_string(), p.composition.fraction(e).to_bits()))
        .collect();
    (fractions, p.energy_per_atom.to_bits(), p.id.clone())
}

pub fn build_diagram(phases: Vec<ReferencePhase>) -> Result<PhaseDiagram, HullError> {
    let mut phases = phases;
    for p in &phases {
        if p.composition.is_empty() || !p.energy_per_atom.is_finite() {
            return Err(HullError::InvalidPhase { id: p.id.clone(), reason: "empty composition or non-finite energy".into() });
        }
    }
    phases.sort_by_cached_key(canonical_key);

    let mut elemental_references: BTreeMap<String, f64> = BTreeMap::new();
    for p in phases.iter().filter(|p| p.composition.num_elements() == 1) {
        let el = p.composition.elements().next().unwrap().to_string();
        let e = elemental_references.entry(el).or_insert(p.energy_per_atom);
        *e = e.min(p.energy_per_atom);
    }
    let elements: BTreeSet<&str> = phases.iter().flat_map(|p| p.composition.elements()).collect();
    if let Some(missing) = elements.iter().find(|e| !elemental_references.contains_key(**e)) {
        return Err(HullError::MissingElementReference(missing.to_string()));
    }
    let mut diagram = PhaseDiagram { phases, formation: Vec::new(), elemental_references };
    diagram.formation = diagram
        .phases
        .iter()
        .map(|p| diagram.formation_energy_per_atom(&p.composition, p.energy_per_atom))
        .collect::<Result<_, _>>()?;
    Ok(diagram)
}

impl PhaseDiagram {
    pub fn phases(&self) -> &[ReferencePhase] {
        &self.phases
    }

    pub fn elements(&self) -> impl Iterator<Item = &str> {
        self.elemental_references.keys().map(String::as_str)
    }

    pub fn elemental_references(&self) -> &BTreeMap<String, f64> {
        &self.elemental_references
    }

    fn check_covered(&self, comp: &Composition) -> Result<(), HullError> {
        if comp.is_empty() {
            return Err(HullError::InfeasibleComposition("empty composition".into()));
        }
        match comp.elements().find(|e| !self.elemental_references.contains_key(*e)) {
            Some(e) => Err(HullError::MissingElementReference(e.to_string())),
            None => Ok(()),
        }
    }

    pub fn formation_energy_per_atom(&self, comp: &Composition, e_per_atom: f64) -> Result<f64, HullError> {
        self.check_covered(comp)?;
        let reference: f64 = comp.elements().map(|e| comp.fraction(e) * self.elemental_references[e]).sum();
        Ok(e_per_atom - reference)
    }

    /// Hull decomposition of `comp` and the query's distance above it.
    /// Only phases whose elements are a subset of the query's take part.
    pub fn hull_result(&self, comp: &Composition, e_per_atom: f64) -> Result<HullResult, HullError> {
        let formation_energy = self.formation_energy_per_atom(comp, e_per_atom)?;
        let elements: Vec<&str> = comp.elements().collect();
        let candidates: Vec<usize> = (0..self.phases.len())
            .filter(|&j| self.phases[j].composition.elements().all(|e| comp.get(e) > 0))
            .collect();
        let constraints: Vec<Vec<f64>> = elements
            .iter()
            .map(|e| candidates.iter().map(|&j| self.phases[j].composition.fraction(e)).collect())
            .collect();
        let program = LinearProgram {
            objective: candidates.iter().map(|&j| self.formation[j]).collect(),
            constraints,
            rhs: elements.iter().map(|e| comp.fraction(e)).collect(),
        };
        let solution = match lp::solve(&program) {
            Ok(s) => s,
            Err(LpError::Infeasible(r)) => {
                // elemental references make every covered composition feasible
                return Err(HullError::InfeasibleComposition(format!("phase-one residual {r:e}")));
            }
            Err(e) => return Err(HullError::InfeasibleComposition(e.to_string())),
        };
        let decomposition = candidates
            .iter()
            .zip(&solution.x)
            .filter(|(_, &w)| w > 1e-12)
            .map(|(&j, &w)| DecompositionTerm { id: self.phases[j].id.clone(), weight: w })
            .collect();
        Ok(HullResult {
            e_above_hull: formation_energy - solution.objective,
            formation_energy,
            hull_formation_energy: solution.objective,
            decomposition,
        })
    }

    pub fn energy_above_hull(&self, comp: &Composition, e_per_atom: f64) -> Result<f64, HullError> {
        Ok(self.hull_result(comp, e_per_atom)?.e_above_hull)
    }
}

pub fn formation_energy_per_atom(diagram: &PhaseDiagram, comp: &Composition, e_per_atom: f64) -> Result<f64, HullError> {
    diagram.formation_energy_per_atom(comp, e_per_atom)
}

pub fn energy_above_hull(diagram: &PhaseDiagram, comp: &Composition, e_per_atom: f64) -> Result<f64, HullError> {
    diagram.energy_above_hull(comp, e_per_atom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    Stable,
    Metastable,
    Unstable,
}

/// Half-open bands: stable below `stable`, metastable in `[stable, metastable)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityThresholds {
    pub stable: f64,
    pub metastable: f64,
}

impl Default for StabilityThresholds {
    fn default() -> Self {
        StabilityThresholds { stable: 0.0, metastable: 0.1 }
    }
}

impl StabilityThresholds {
    pub fn classify(&self, e_hull: f64) -> StabilityClass {
        if e_hull < self.stable {
            StabilityClass::Stable
        } else if e_hull < self.metastable {
            StabilityClass::Metastable
        } else {
            StabilityClass::Unstable
        }
    }
}

pub fn classify(e_hull: f64) -> StabilityClass {
    StabilityThresholds::default().classify(e_hull)
}

#[derive(Debug, Deserialize)]
struct ReferenceRow {
    id: String,
    formula: String,
    energy_per_atom: f64,
}

/// Reads `id,formula,energy_per_atom` rows.
pub fn read_reference_csv<R: Read>(reader: R) -> Result<Vec<ReferencePhase>, HullError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ReferenceRow>().enumerate() {
        let row = row.map_err(|e| HullError::Csv(format!("row {}: {e}", i + 1)))?;
        out.push(ReferencePhase::from_formula(row.id, &row.formula, row.energy_per_atom)?);
    }
    Ok(out)
}
