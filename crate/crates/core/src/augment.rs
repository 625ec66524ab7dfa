//! Training-time augmentations.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crystal::Crystal;

/// `augment.translate` / `augment.permute` in the training config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub translate: bool,
    /// Off by default: shuffling atom order hurts sample validity.
    pub permute: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { translate: true, permute: false }
    }
}

impl AugmentConfig {
    pub fn apply<R: Rng + ?Sized>(&self, crystal: &Crystal, rng: &mut R) -> Crystal {
        let mut out = crystal.clone();
        if self.translate {
            out = random_translation(&out, rng);
        }
        if self.permute {
            out = permute_sites(&out, rng);
        }
        out
    }
}

/// Shifts every site by the same vector drawn uniformly from [0, 1)³.
pub fn random_translation<R: Rng + ?Sized>(crystal: &Crystal, rng: &mut R) -> Crystal {
    let shift = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    crystal.translate(shift)
}

pub fn permute_sites<R: Rng + ?Sized>(crystal: &Crystal, rng: &mut R) -> Crystal {
    let mut order: Vec<usize> = (0..crystal.num_sites()).collect();
    order.shuffle(rng);
    crystal.with_sites_permuted(&order)
}
