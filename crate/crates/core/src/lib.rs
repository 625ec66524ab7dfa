//! Text-as-crystals toolkit: crystal geometry, string encodings, prompt
//! construction, validity and stability checks, distribution metrics,
//! language-model scoring and element-swap mutation.

pub mod augment;
pub mod config;
pub mod cif;
pub mod codec;
pub mod crystal;
pub mod elements;
pub mod fingerprints;
pub mod hull;
pub mod lp;
pub mod metrics;
pub mod mutate;
pub mod pipeline;
pub mod prompts;
pub mod scoring;
pub mod validity;

pub use crystal::{Composition, Crystal, Lattice, Site};
