//! Prompt templates and the stochastic training-task sampler.
//!
//! Template strings are frozen; `tests/golden/` pins them byte for byte.
//! Sequence sentinels (`<s>`, `</s>`) belong to the model backend and are
//! not part of these strings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{self, DecodeError};
use crate::crystal::Crystal;
use crate::elements;

pub const GENERATION_HEADER: &str = "Below is a description of a bulk material.";
pub const GENERATION_INSTRUCTION: &str = " Generate a description of the lengths and angles of the lattice vectors and then the element type and coordinates for each atom within the lattice:\n\n";
pub const INFILL_HEADER: &str =
    "Below is a partial description of a bulk material where one element has been replaced with the string \"[MASK]\":\n\n";
pub const INFILL_INSTRUCTION: &str = "\n\nGenerate an element that could replace [MASK] in the bulk material:\n\n";
pub const MASK: &str = "[MASK]";

/// Fraction of training examples that are generation tasks.
pub const GENERATION_FRACTION: f64 = 2.0 / 3.0;
/// Per-property inclusion probability in conditional generation prompts.
pub const PROPERTY_INCLUSION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityTarget {
    Metastable,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Condition {
    ChemicalFormula(String),
    SpaceGroupNumber(u16),
    StabilityClass(StabilityTarget),
    /// eV
    BandGap(f64),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("space group number {0} outside 1..=230")]
    InvalidSpaceGroup(u16),
    #[error("element {0:?} does not occur in the crystal")]
    ElementNotPresent(String),
    #[error("completion {0:?} is not an element symbol")]
    InvalidElementCompletion(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

impl Condition {
    pub fn validate(&self) -> Result<(), PromptError> {
        match self {
            Condition::SpaceGroupNumber(n) if !(1..=230).contains(n) => Err(PromptError::InvalidSpaceGroup(*n)),
            _ => Ok(()),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Condition::ChemicalFormula(_) => 0,
            Condition::SpaceGroupNumber(_) => 1,
            Condition::StabilityClass(_) => 2,
            Condition::BandGap(_) => 3,
        }
    }

    /// The sentence appended to the generation header, with its leading space.
    pub fn sentence(&self) -> String {
        match self {
            Condition::ChemicalFormula(f) => format!(" The chemical formula is {f}."),
            Condition::SpaceGroupNumber(n) => format!(" The spacegroup number is {n}."),
            Condition::StabilityClass(StabilityTarget::Metastable) => {
                " The energy above the convex hull is below 0.1 eV per atom.".to_string()
            }
            Condition::StabilityClass(StabilityTarget::Unstable) => {
                " The energy above the convex hull is above 0.1 eV per atom.".to_string()
            }
            Condition::BandGap(gap) => format!(" The band gap is {} eV.", crate::crystal::format_fixed(*gap, 2)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum PromptTask {
    Generate { conditions: Vec<Condition> },
    Infill { crystal: Crystal, masked_element: String },
}

impl PromptTask {
    pub fn prompt(&self) -> Result<String, PromptError> {
        match self {
            PromptTask::Generate { conditions } => build_generation_prompt(conditions),
            PromptTask::Infill { crystal, masked_element } => Ok(build_infill_prompt(crystal, masked_element)?.0),
        }
    }
}

/// Condition sentences appear in the fixed order formula, space group,
/// stability, band gap regardless of input order.
pub fn build_generation_prompt(conditions: &[Condition]) -> Result<String, PromptError> {
    let mut sorted: Vec<&Condition> = conditions.iter().collect();
    sorted.sort_by_key(|c| c.rank());
    let mut out = String::from(GENERATION_HEADER);
    for c in sorted {
        c.validate()?;
        out.push_str(&c.sentence());
    }
    out.push_str(GENERATION_INSTRUCTION);
    Ok(out)
}

/// Returns the infill prompt and the target symbol.
pub fn build_infill_prompt(crystal: &Crystal, element: &str) -> Result<(String, String), PromptError> {
    if !crystal.sites().iter().any(|s| s.element == element) {
        return Err(PromptError::ElementNotPresent(element.to_string()));
    }
    let encoded = codec::encode(crystal);
    // element lines are the odd-numbered lines after the two lattice lines
    let masked: Vec<&str> = encoded
        .as_str()
        .split('\n')
        .enumerate()
        .map(|(i, line)| if i >= 2 && i % 2 == 0 && line == element { MASK } else { line })
        .collect();
    let prompt = format!("{INFILL_HEADER}{}{INFILL_INSTRUCTION}", masked.join("\n"));
    Ok((prompt, element.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prompt: String,
    /// The only part that contributes to the training loss.
    pub completion: String,
    pub task: PromptTask,
}

/// Two thirds generation (each available property kept with probability
/// 1/2), one third infilling with the masked element drawn uniformly from
/// the distinct elements.
pub fn sample_training_example<R: Rng + ?Sized>(
    crystal: &Crystal,
    properties: &[Condition],
    rng: &mut R,
) -> Result<TrainingExample, PromptError> {
    if rng.random_bool(GENERATION_FRACTION) {
        let conditions: Vec<Condition> = properties
            .iter()
            .filter(|_| rng.random_bool(PROPERTY_INCLUSION))
            .cloned()
            .collect();
        let prompt = build_generation_prompt(&conditions)?;
        Ok(TrainingExample {
            prompt,
            completion: codec::encode(crystal).into_string(),
            task: PromptTask::Generate { conditions },
        })
    } else {
        let distinct = crystal.distinct_elements();
        let element = distinct[rng.random_range(0..distinct.len())].to_string();
        let (prompt, target) = build_infill_prompt(crystal, &element)?;
        Ok(TrainingExample {
            prompt,
            completion: target,
            task: PromptTask::Infill { crystal: crystal.clone(), masked_element: element },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Completion {
    Crystal(Crystal),
    Element(String),
}

pub fn parse_completion(task: &PromptTask, text: &str) -> Result<Completion, PromptError> {
    match task {
        PromptTask::Generate { .. } => Ok(Completion::Crystal(codec::decode(text)?)),
        PromptTask::Infill { .. } => {
            let token = text.split_whitespace().next().unwrap_or("");
            if elements::is_valid_symbol(token) {
                Ok(Completion::Element(token.to_string()))
            } else {
                Err(PromptError::InvalidElementCompletion(token.to_string()))
            }
        }
    }
}
