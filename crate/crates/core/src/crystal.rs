//! Lattices, sites, compositions and periodic geometry.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::elements;

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CrystalError {
    #[error("degenerate cell: {0}")]
    DegenerateCell(String),
    #[error("a crystal needs at least one site")]
    NoSites,
    #[error("non-finite fractional coordinate")]
    NonFiniteCoordinate,
    #[error("invalid formula {0:?}")]
    InvalidFormula(String),
}

/// Unit cell: lengths in Å, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatticeParams", into = "LatticeParams")]
pub struct Lattice {
    a: f64,
    b: f64,
    c: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct LatticeParams {
    a: f64,
    b: f64,
    c: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl TryFrom<LatticeParams> for Lattice {
    type Error = CrystalError;
    fn try_from(p: LatticeParams) -> Result<Self, Self::Error> {
        Lattice::new(p.a, p.b, p.c, p.alpha, p.beta, p.gamma)
    }
}

impl From<Lattice> for LatticeParams {
    fn from(l: Lattice) -> Self {
        LatticeParams { a: l.a, b: l.b, c: l.c, alpha: l.alpha, beta: l.beta, gamma: l.gamma }
    }
}

/// Volume from cell parameters; fails when the metric determinant is not positive.
pub fn cell_volume(a: f64, b: f64, c: f64, alpha: f64, beta: f64, gamma: f64) -> Result<f64, CrystalError> {
    let (ca, cb, cg) = (
        alpha.to_radians().cos(),
        beta.to_radians().cos(),
        gamma.to_radians().cos(),
    );
    let radicand = 1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg;
    if !(radicand > 1e-12) {
        return Err(CrystalError::DegenerateCell(format!(
            "metric radicand {radicand} for angles ({alpha}, {beta}, {gamma})"
        )));
    }
    Ok(a * b * c * radicand.sqrt())
}

impl Lattice {
    pub fn new(a: f64, b: f64, c: f64, alpha: f64, beta: f64, gamma: f64) -> Result<Self, CrystalError> {
        for (name, v) in [("a", a), ("b", b), ("c", c)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CrystalError::DegenerateCell(format!("length {name} = {v}")));
            }
        }
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !(v.is_finite() && v > 0.0 && v < 180.0) {
                return Err(CrystalError::DegenerateCell(format!("angle {name} = {v}")));
            }
        }
        cell_volume(a, b, c, alpha, beta, gamma)?;
        Ok(Lattice { a, b, c, alpha, beta, gamma })
    }

    pub fn cubic(a: f64) -> Result<Self, CrystalError> {
        Lattice::new(a, a, a, 90.0, 90.0, 90.0)
    }

    pub fn lengths(&self) -> Vec3 {
        [self.a, self.b, self.c]
    }

    pub fn angles(&self) -> Vec3 {
        [self.alpha, self.beta, self.gamma]
    }

    /// `[a, b, c, alpha, beta, gamma]`
    pub fn parameters(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.alpha, self.beta, self.gamma]
    }

    pub fn volume(&self) -> f64 {
        cell_volume(self.a, self.b, self.c, self.alpha, self.beta, self.gamma)
            .expect("lattice validated at construction")
    }

    /// Row vectors of the cell: a along x, b in the xy-plane.
    pub fn matrix(&self) -> [Vec3; 3] {
        let (ca, cb) = (self.alpha.to_radians().cos(), self.beta.to_radians().cos());
        let (sg, cg) = self.gamma.to_radians().sin_cos();
        let cy = self.c * (ca - cb * cg) / sg;
        let cz = self.volume() / (self.a * self.b * sg);
        [
            [self.a, 0.0, 0.0],
            [self.b * cg, self.b * sg, 0.0],
            [self.c * cb, cy, cz],
        ]
    }

    pub fn frac_to_cart(&self, frac: Vec3) -> Vec3 {
        let m = self.matrix();
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            *o = frac[0] * m[0][k] + frac[1] * m[1][k] + frac[2] * m[2][k];
        }
        out
    }

    /// Perpendicular distances between opposite cell faces.
    pub fn heights(&self) -> Vec3 {
        let m = self.matrix();
        let v = self.volume();
        [
            v / norm(cross(m[1], m[2])),
            v / norm(cross(m[2], m[0])),
            v / norm(cross(m[0], m[1])),
        ]
    }

    /// Minimum over the 27 neighbouring images of |cart(f1 - f2 + offset)|.
    ///
    /// Exact whenever the true minimum is below half the shortest cell height.
    pub fn min_image_distance(&self, f1: Vec3, f2: Vec3) -> f64 {
        self.min_image_distance_with(f1, f2, false)
    }

    /// Like [`Lattice::min_image_distance`], optionally skipping the zero
    /// offset (the distance from a site to its own periodic copies).
    pub(crate) fn min_image_distance_with(&self, f1: Vec3, f2: Vec3, skip_origin: bool) -> f64 {
        let m = self.matrix();
        // centre the difference first so the window is symmetric about it
        let d = [f1[0] - f2[0], f1[1] - f2[1], f1[2] - f2[2]].map(|x| x - x.round());
        let mut best = f64::INFINITY;
        for i in -1..=1 {
            for j in -1..=1 {
                for k in -1..=1 {
                    if skip_origin && i == 0 && j == 0 && k == 0 {
                        continue;
                    }
                    let f = [d[0] + f64::from(i), d[1] + f64::from(j), d[2] + f64::from(k)];
                    let mut sq = 0.0;
                    for axis in 0..3 {
                        let x = f[0] * m[0][axis] + f[1] * m[1][axis] + f[2] * m[2][axis];
                        sq += x * x;
                    }
                    best = best.min(sq);
                }
            }
        }
        best.sqrt()
    }

    /// Cell parameters rounded to the given number of decimals.
    pub fn quantized(&self, decimals: u32) -> Result<Self, CrystalError> {
        let p = self.parameters().map(|v| round_decimals(v, decimals));
        Lattice::new(p[0], p[1], p[2], p[3], p[4], p[5])
    }
}

pub(crate) fn cross(u: Vec3, v: Vec3) -> Vec3 {
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

pub(crate) fn norm(u: Vec3) -> f64 {
    (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
}

/// Wrap into [0, 1).
pub fn wrap_unit(x: f64) -> f64 {
    let w = x - x.floor();
    // x slightly below an integer can produce exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w + 0.0
    }
}

/// Formats `value` with `decimals` digits, rounding the exact binary value
/// to nearest with ties to even.
pub fn format_fixed(value: f64, decimals: usize) -> String {
    let s = format!("{value:.decimals$}");
    // never emit "-0.00"
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn round_decimals(value: f64, decimals: u32) -> f64 {
    format_fixed(value, decimals as usize)
        .parse()
        .expect("formatted float parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub element: String,
    frac: Vec3,
}

impl Site {
    /// Coordinates are wrapped into [0, 1).
    pub fn new(element: impl Into<String>, frac: Vec3) -> Result<Self, CrystalError> {
        if frac.iter().any(|v| !v.is_finite()) {
            return Err(CrystalError::NonFiniteCoordinate);
        }
        Ok(Site { element: element.into(), frac: frac.map(wrap_unit) })
    }

    pub fn frac(&self) -> Vec3 {
        self.frac
    }

    pub fn is_known_element(&self) -> bool {
        elements::is_valid_symbol(&self.element)
    }
}

/// A lattice plus an ordered, non-empty list of sites (P1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crystal {
    pub lattice: Lattice,
    sites: Vec<Site>,
}

impl Crystal {
    pub fn new(lattice: Lattice, sites: Vec<Site>) -> Result<Self, CrystalError> {
        if sites.is_empty() {
            return Err(CrystalError::NoSites);
        }
        Ok(Crystal { lattice, sites })
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn composition(&self) -> Composition {
        let mut counts = BTreeMap::new();
        for s in &self.sites {
            *counts.entry(s.element.clone()).or_insert(0u32) += 1;
        }
        Composition { counts }
    }

    /// Distinct elements in order of first appearance.
    pub fn distinct_elements(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for s in &self.sites {
            if !seen.contains(&s.element.as_str()) {
                seen.push(&s.element);
            }
        }
        seen
    }

    /// Distinct symbols that are not in the element table, in order of first appearance.
    pub fn unknown_elements(&self) -> Vec<String> {
        self.distinct_elements()
            .into_iter()
            .filter(|e| !elements::is_valid_symbol(e))
            .map(str::to_string)
            .collect()
    }

    pub fn translate(&self, shift: Vec3) -> Crystal {
        let sites = self
            .sites
            .iter()
            .map(|s| Site {
                element: s.element.clone(),
                frac: [s.frac[0] + shift[0], s.frac[1] + shift[1], s.frac[2] + shift[2]].map(wrap_unit),
            })
            .collect();
        Crystal { lattice: self.lattice, sites }
    }

    /// Same lattice and coordinates with every `from` site renamed to `to`.
    pub fn replace_element(&self, from: &str, to: &str) -> Crystal {
        let sites = self
            .sites
            .iter()
            .map(|s| Site {
                element: if s.element == from { to.to_string() } else { s.element.clone() },
                frac: s.frac,
            })
            .collect();
        Crystal { lattice: self.lattice, sites }
    }

    pub fn with_sites_permuted(&self, order: &[usize]) -> Crystal {
        assert_eq!(order.len(), self.sites.len(), "permutation length");
        Crystal {
            lattice: self.lattice,
            sites: order.iter().map(|&i| self.sites[i].clone()).collect(),
        }
    }

    /// Cell parameters and coordinates rounded to `decimals`; coordinates that
    /// round to 1 wrap to 0.
    pub fn quantized(&self, decimals: u32) -> Result<Crystal, CrystalError> {
        let lattice = self.lattice.quantized(decimals)?;
        let sites = self
            .sites
            .iter()
            .map(|s| Site::new(s.element.clone(), s.frac.map(|v| round_decimals(v, decimals))))
            .collect::<Result<_, _>>()?;
        Crystal::new(lattice, sites)
    }

    /// Total mass over volume, g/cm³. `None` if an element is unknown.
    pub fn density(&self) -> Option<f64> {
        let mut mass = 0.0;
        for s in &self.sites {
            mass += elements::lookup(&s.element).ok()?.atomic_mass;
        }
        Some(mass / self.lattice.volume() * AMU_PER_A3_TO_G_PER_CM3)
    }
}

pub const AMU_PER_A3_TO_G_PER_CM3: f64 = 1.660_539_066_60;

/// Element symbol → positive count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Composition {
    counts: BTreeMap<String, u32>,
}

impl Composition {
    /// Zero counts are dropped; repeated symbols accumulate.
    pub fn from_counts<S: Into<String>>(pairs: impl IntoIterator<Item = (S, u32)>) -> Self {
        let mut counts = BTreeMap::new();
        for (el, n) in pairs {
            if n > 0 {
                *counts.entry(el.into()).or_insert(0) += n;
            }
        }
        Composition { counts }
    }

    /// Parses `Element[count]` repeated, e.g. `"Li2O"` or `"Pm2ZnRh"`.
    pub fn parse_formula(formula: &str) -> Result<Self, CrystalError> {
        let err = || CrystalError::InvalidFormula(formula.to_string());
        let chars: Vec<char> = formula.trim().chars().collect();
        if chars.is_empty() {
            return Err(err());
        }
        let mut pairs = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if !chars[i].is_ascii_uppercase() {
                return Err(err());
            }
            let start = i;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_lowercase() {
                i += 1;
            }
            let symbol: String = chars[start..i].iter().collect();
            let digits_start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let count = if digits_start == i {
                1
            } else {
                let n: u32 = chars[digits_start..i].iter().collect::<String>().parse().map_err(|_| err())?;
                if n == 0 {
                    return Err(err());
                }
                n
            };
            pairs.push((symbol, count));
        }
        Ok(Composition::from_counts(pairs))
    }

    pub fn counts(&self) -> &BTreeMap<String, u32> {
        &self.counts
    }

    pub fn get(&self, element: &str) -> u32 {
        self.counts.get(element).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.counts.len()
    }

    pub fn total_atoms(&self) -> u32 {
        self.counts.values().sum()
    }

    pub fn elements(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn fraction(&self, element: &str) -> f64 {
        f64::from(self.get(element)) / f64::from(self.total_atoms())
    }

    pub fn gcd(&self) -> u32 {
        self.counts.values().fold(0, |g, &n| gcd(g, n))
    }

    pub fn reduced(&self) -> Composition {
        let g = self.gcd().max(1);
        Composition { counts: self.counts.iter().map(|(e, n)| (e.clone(), n / g)).collect() }
    }

    pub fn scaled(&self, k: u32) -> Composition {
        Composition::from_counts(self.counts.iter().map(|(e, &n)| (e.clone(), n * k)))
    }

    pub fn unknown_elements(&self) -> Vec<String> {
        self.counts.keys().filter(|e| !elements::is_valid_symbol(e)).cloned().collect()
    }

    /// Counts divided by their gcd, elements ordered by electronegativity
    /// (ties alphabetical), elements without electronegativity after those,
    /// unknown symbols last.
    pub fn reduced_formula(&self) -> String {
        let reduced = self.reduced();
        let mut keyed: Vec<(u8, f64, &str, u32)> = reduced
            .counts
            .iter()
            .map(|(e, &n)| match elements::lookup(e) {
                Ok(rec) => match rec.electronegativity {
                    Some(x) => (0, x, e.as_str(), n),
                    None => (1, 0.0, e.as_str(), n),
                },
                Err(_) => (2, 0.0, e.as_str(), n),
            })
            .collect();
        keyed.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.cmp(y.2)));
        let mut out = String::new();
        for (_, _, e, n) in keyed {
            out.push_str(e);
            if n != 1 {
                out.push_str(&n.to_string());
            }
        }
        out
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.reduced_formula())
    }
}

pub(crate) fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn composition_of(crystal: &Crystal) -> Composition {
    crystal.composition()
}

pub fn reduced_formula(comp: &Composition) -> String {
    comp.reduced_formula()
}

pub fn translate(crystal: &Crystal, shift: Vec3) -> Crystal {
    crystal.translate(shift)
}

pub fn min_image_distance(lattice: &Lattice, f1: Vec3, f2: Vec3) -> f64 {
    lattice.min_image_distance(f1, f2)
}

pub fn frac_to_cart(lattice: &Lattice, frac: Vec3) -> Vec3 {
    lattice.frac_to_cart(frac)
}
