//! Composition and structure featurizations used by coverage, diversity
//! and novelty.
//!
//! * Composition: fraction-weighted mean and standard deviation of six
//!   element properties (12 entries). Distances are taken after per-dimension
//!   standardization with statistics frozen from a reference set.
//! * Structure: Gaussian-smeared radial distribution function on 100 grid
//!   points r = 0.1, 0.2, …, 10.0 Å, normalized by the ideal-gas shell count
//!   and by the number of sites.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::crystal::{Composition, Crystal};
use crate::elements::{self, UnknownElement};

pub const COMPOSITION_FEATURES: [&str; 6] =
    ["atomic_number", "atomic_mass", "empirical_radius", "electronegativity", "period", "group"];
pub const COMPOSITION_LEN: usize = 2 * COMPOSITION_FEATURES.len();

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FingerprintError {
    #[error(transparent)]
    UnknownElement(#[from] UnknownElement),
    #[error("cannot compare a {0} fingerprint with a {1} fingerprint")]
    KindMismatch(&'static str, &'static str),
    #[error("fingerprint lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "vector", rename_all = "snake_case")]
pub enum Fingerprint {
    Composition(Vec<f64>),
    Structure(Vec<f64>),
}

impl Fingerprint {
    fn kind(&self) -> &'static str {
        match self {
            Fingerprint::Composition(_) => "composition",
            Fingerprint::Structure(_) => "structure",
        }
    }

    pub fn vector(&self) -> &[f64] {
        match self {
            Fingerprint::Composition(v) | Fingerprint::Structure(v) => v,
        }
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Euclidean distance between fingerprints of the same kind. Composition
/// fingerprints are expected to be standardized already (see [`Standardizer`]).
pub fn distance(f1: &Fingerprint, f2: &Fingerprint) -> Result<f64, FingerprintError> {
    if std::mem::discriminant(f1) != std::mem::discriminant(f2) {
        return Err(FingerprintError::KindMismatch(f1.kind(), f2.kind()));
    }
    let (a, b) = (f1.vector(), f2.vector());
    if a.len() != b.len() {
        return Err(FingerprintError::LengthMismatch(a.len(), b.len()));
    }
    Ok(euclidean(a, b))
}

fn element_features(symbol: &str) -> Result<[f64; 6], UnknownElement> {
    let r = elements::lookup(symbol)?;
    Ok([
        f64::from(r.atomic_number),
        r.atomic_mass,
        r.empirical_radius,
        r.electronegativity.unwrap_or(0.0),
        f64::from(r.period),
        f64::from(r.group),
    ])
}

pub fn comp_fingerprint(comp: &Composition) -> Result<Vec<f64>, FingerprintError> {
    let total = f64::from(comp.total_atoms());
    let rows: Vec<(f64, [f64; 6])> = comp
        .counts()
        .iter()
        .map(|(el, &n)| Ok((f64::from(n) / total, element_features(el)?)))
        .collect::<Result<_, UnknownElement>>()?;
    let mut out = vec![0.0; COMPOSITION_LEN];
    for k in 0..6 {
        let mean: f64 = rows.iter().map(|(w, f)| w * f[k]).sum();
        let var: f64 = rows.iter().map(|(w, f)| w * (f[k] - mean) * (f[k] - mean)).sum();
        out[k] = mean;
        out[6 + k] = var.max(0.0).sqrt();
    }
    Ok(out)
}

/// Per-dimension mean / standard deviation frozen from a reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(len: usize) -> Self {
        Standardizer { mean: vec![0.0; len], std: vec![1.0; len] }
    }

    /// Dimensions with zero spread keep scale 1.
    pub fn fit(vectors: &[Vec<f64>]) -> Self {
        let Some(first) = vectors.first() else {
            return Standardizer::identity(COMPOSITION_LEN);
        };
        let n = vectors.len() as f64;
        let len = first.len();
        let mut mean = vec![0.0; len];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x / n;
            }
        }
        let mut std = vec![0.0; len];
        for v in vectors {
            for ((s, x), m) in std.iter_mut().zip(v).zip(&mean) {
                *s += (x - m) * (x - m) / n;
            }
        }
        for s in &mut std {
            *s = s.sqrt();
            if !(*s > 1e-12) {
                *s = 1.0;
            }
        }
        Standardizer { mean, std }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdfConfig {
    pub r_max: f64,
    pub bins: usize,
    pub sigma: f64,
}

impl Default for RdfConfig {
    fn default() -> Self {
        RdfConfig { r_max: 10.0, bins: 100, sigma: 0.1 }
    }
}

impl RdfConfig {
    pub fn dr(&self) -> f64 {
        self.r_max / self.bins as f64
    }

    /// Grid point of bin `k`.
    pub fn radius(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.dr()
    }

    /// Pairs beyond this radius contribute less than 1e-8 of a count to any bin.
    fn pair_cutoff(&self) -> f64 {
        self.r_max + 6.0 * self.sigma
    }
}

/// Smeared pair counts per bin, before any normalization. Each pair adds
/// `dr · N(r_k; d, σ)` to bin k, so an isolated shell of n neighbours sums to ≈ n.
pub fn rdf_counts(crystal: &Crystal, config: &RdfConfig) -> Vec<f64> {
    let lattice = &crystal.lattice;
    let m = lattice.matrix();
    let cutoff = config.pair_cutoff();
    let reach = lattice.heights().map(|h| (cutoff / h).ceil() as i64 + 1);
    let dr = config.dr();
    let norm = dr / (config.sigma * (2.0 * PI).sqrt());
    let window = (6.0 * config.sigma / dr).ceil() as i64;
    let sites = crystal.sites();
    let mut distances = Vec::new();
    for si in sites {
        for sj in sites {
            let fi = si.frac();
            let fj = sj.frac();
            let d = [fj[0] - fi[0], fj[1] - fi[1], fj[2] - fi[2]].map(|x| x - x.round());
            for a in -reach[0]..=reach[0] {
                for b in -reach[1]..=reach[1] {
                    for c in -reach[2]..=reach[2] {
                        let f = [d[0] + a as f64, d[1] + b as f64, d[2] + c as f64];
                        let mut sq = 0.0;
                        for axis in 0..3 {
                            let x = f[0] * m[0][axis] + f[1] * m[1][axis] + f[2] * m[2][axis];
                            sq += x * x;
                        }
                        let r = sq.sqrt();
                        if r >= 1e-8 && r <= cutoff {
                            distances.push(r);
                        }
                    }
                }
            }
        }
    }
    // accumulate in sorted order so site order cannot change the rounding
    distances.sort_by(f64::total_cmp);

    let mut counts = vec![0.0; config.bins];
    for r in distances {
        let centre = (r / dr).round() as i64 - 1;
        for k in (centre - window).max(0)..=(centre + window).min(config.bins as i64 - 1) {
            let rk = config.radius(k as usize);
            let z = (rk - r) / config.sigma;
            counts[k as usize] += norm * (-0.5 * z * z).exp();
        }
    }
    counts
}

pub fn struct_fingerprint_with(crystal: &Crystal, config: &RdfConfig) -> Vec<f64> {
    let counts = rdf_counts(crystal, config);
    let n = crystal.num_sites() as f64;
    let density = n / crystal.lattice.volume();
    let dr = config.dr();
    counts
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let r = config.radius(k);
            c / (n * density * 4.0 * PI * r * r * dr)
        })
        .collect()
}

pub fn struct_fingerprint(crystal: &Crystal) -> Vec<f64> {
    struct_fingerprint_with(crystal, &RdfConfig::default())
}

/// Both fingerprints of one crystal; the composition part is raw (not standardized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalFingerprints {
    pub structure: Vec<f64>,
    pub composition: Vec<f64>,
}

impl CrystalFingerprints {
    pub fn of(crystal: &Crystal, config: &RdfConfig) -> Result<Self, FingerprintError> {
        Ok(CrystalFingerprints {
            composition: comp_fingerprint(&crystal.composition())?,
            structure: struct_fingerprint_with(crystal, config),
        })
    }
}

/// Fingerprint configuration plus frozen standardization statistics; written
/// as a JSON sidecar next to metric reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintSidecar {
    pub composition_features: Vec<String>,
    pub rdf: RdfConfig,
    pub standardizer: Standardizer,
    pub standardizer_source: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::{Lattice, Site};
    use proptest::prelude::*;

    #[test]
    fn composition_examples() {
        let fe = comp_fingerprint(&Composition::from_counts([("Fe", 3)])).unwrap();
        assert_eq!(&fe[6..], &[0.0; 6]);
        assert_eq!(fe[0], 26.0);
        let a = comp_fingerprint(&Composition::from_counts([("Na", 1), ("Cl", 1)])).unwrap();
        let b = comp_fingerprint(&Composition::from_counts([("Na", 2), ("Cl", 2)])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], 14.0);
        assert_eq!(a[6], 3.0);
        assert!(comp_fingerprint(&Composition::from_counts([("Ln", 1)])).is_err());
    }

    #[test]
    fn simple_cubic_first_shell() {
        let c = Crystal::new(Lattice::cubic(4.0).unwrap(), vec![Site::new("Po", [0.0; 3]).unwrap()]).unwrap();
        let cfg = RdfConfig::default();
        let counts = rdf_counts(&c, &cfg);
        let peak = (0..50).max_by(|&i, &j| counts[i].total_cmp(&counts[j])).unwrap();
        assert!((cfg.radius(peak) - 4.0).abs() < 1e-9);
        // bins 3.5..=4.5 hold the 6 face neighbours; the next shell is at 5.66 Å
        let shell: f64 = (34..=44).map(|k| counts[k]).sum();
        assert!((shell - 6.0).abs() < 1e-6, "{shell}");
        assert!(counts[..30].iter().all(|&x| x < 1e-12));
    }

    #[test]
    fn distance_contract() {
        let a = Fingerprint::Structure(vec![0.0, 3.0]);
        let b = Fingerprint::Structure(vec![4.0, 0.0]);
        assert_eq!(distance(&a, &b).unwrap(), 5.0);
        assert_eq!(distance(&a, &a).unwrap(), 0.0);
        let c = Fingerprint::Composition(vec![0.0, 3.0]);
        assert!(matches!(distance(&a, &c), Err(FingerprintError::KindMismatch(..))));
        let d = Fingerprint::Structure(vec![1.0]);
        assert!(matches!(distance(&a, &d), Err(FingerprintError::LengthMismatch(2, 1))));
    }

    #[test]
    fn standardizer() {
        let s = Standardizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.apply(&[4.0, 6.0]), vec![2.0, 1.0]);
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(
            a in prop::collection::vec(-5.0..5.0f64, 8),
            b in prop::collection::vec(-5.0..5.0f64, 8),
            c in prop::collection::vec(-5.0..5.0f64, 8),
        ) {
            let (a, b, c) = (Fingerprint::Structure(a), Fingerprint::Structure(b), Fingerprint::Structure(c));
            let ab = distance(&a, &b).unwrap();
            prop_assert_eq!(ab, distance(&b, &a).unwrap());
            prop_assert!(ab <= distance(&a, &c).unwrap() + distance(&c, &b).unwrap() + 1e-12);
        }
    }
}
