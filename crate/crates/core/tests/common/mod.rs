//! Shared test fixtures: synthetic crystals, datasets, and oracles written
//! independently of the library code they check.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crystal_kit::lp::{self, LinearProgram};
use crystal_kit::{cif, Composition, Crystal, Lattice, Site};
use rand::Rng;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// The six hallucination listings: (file stem, text).
pub fn listings() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(fixtures_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "cif"))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

// Rough ionic radii (Å) used only to size the prototype cells.
const CATIONS_1: [(&str, f64); 5] = [("Li", 0.76), ("Na", 1.02), ("K", 1.38), ("Rb", 1.52), ("Cs", 1.67)];
const ANIONS_1: [(&str, f64); 4] = [("F", 1.33), ("Cl", 1.81), ("Br", 1.96), ("I", 2.20)];
const CATIONS_2: [(&str, f64); 5] = [("Mg", 0.72), ("Ca", 1.00), ("Sr", 1.18), ("Ba", 1.35), ("Zn", 0.74)];
const ANIONS_2: [(&str, f64); 3] = [("O", 1.40), ("S", 1.84), ("Se", 1.98)];
const CATIONS_4: [(&str, f64); 4] = [("Ti", 0.61), ("Zr", 0.72), ("Sn", 0.69), ("Hf", 0.71)];

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, xs: &'a [(&'a str, f64)]) -> (&'a str, f64) {
    xs[rng.random_range(0..xs.len())]
}

fn build(a: f64, b: f64, c: f64, sites: &[(&str, [f64; 3])]) -> Crystal {
    let lattice = Lattice::new(a, b, c, 90.0, 90.0, 90.0).unwrap();
    Crystal::new(lattice, sites.iter().map(|(e, f)| Site::new(*e, *f).unwrap()).collect()).unwrap()
}

/// Charge-balanced crystals from six prototypes with the first site at the
/// origin, sized from ionic radii with a little jitter. Every result is
/// structurally and compositionally valid.
pub fn prototype_crystal<R: Rng + ?Sized>(rng: &mut R) -> Crystal {
    let jitter = |rng: &mut R| 1.0 + rng.random_range(-0.03..0.03);
    match rng.random_range(0..6) {
        0 => {
            let ((a, ra), (x, rx)) = (pick(rng, &CATIONS_1), pick(rng, &ANIONS_1));
            let l = 2.0 * (ra + rx) * jitter(rng);
            build(l, l, l, &[
                (a, [0.0, 0.0, 0.0]), (a, [0.0, 0.5, 0.5]), (a, [0.5, 0.0, 0.5]), (a, [0.5, 0.5, 0.0]),
                (x, [0.5, 0.0, 0.0]), (x, [0.0, 0.5, 0.0]), (x, [0.0, 0.0, 0.5]), (x, [0.5, 0.5, 0.5]),
            ])
        }
        1 => {
            let ((a, ra), (x, rx)) = (pick(rng, &CATIONS_2), pick(rng, &ANIONS_2));
            let l = 2.0 / 3f64.sqrt() * (ra + rx) * jitter(rng) * 1.05;
            build(l, l, l, &[(a, [0.0, 0.0, 0.0]), (x, [0.5, 0.5, 0.5])])
        }
        2 => {
            let ((a, ra), (b, rb)) = (pick(rng, &CATIONS_2), pick(rng, &CATIONS_4));
            let l = (2.0 * (rb + 1.40)).max(2f64.sqrt() * (ra + 1.40)) * jitter(rng);
            build(l, l, l, &[
                (a, [0.0, 0.0, 0.0]), (b, [0.5, 0.5, 0.5]),
                ("O", [0.5, 0.5, 0.0]), ("O", [0.5, 0.0, 0.5]), ("O", [0.0, 0.5, 0.5]),
            ])
        }
        3 => {
            let ((a, ra), (x, rx)) = (pick(rng, &CATIONS_2), pick(rng, &ANIONS_1));
            let l = 4.0 / 3f64.sqrt() * (ra + rx) * jitter(rng) * 1.05;
            let mut sites = vec![(a, [0.0, 0.0, 0.0]), (a, [0.0, 0.5, 0.5]), (a, [0.5, 0.0, 0.5]), (a, [0.5, 0.5, 0.0])];
            for &p in &[0.25, 0.75] {
                for &q in &[0.25, 0.75] {
                    for &r in &[0.25, 0.75] {
                        sites.push((x, [p, q, r]));
                    }
                }
            }
            build(l, l, l, &sites)
        }
        4 => {
            let ((a, ra), (x, rx)) = (pick(rng, &CATIONS_2), pick(rng, &ANIONS_2));
            let l = 4.0 / 3f64.sqrt() * (ra + rx) * jitter(rng) * 1.05;
            build(l, l, l, &[
                (a, [0.0, 0.0, 0.0]), (a, [0.0, 0.5, 0.5]), (a, [0.5, 0.0, 0.5]), (a, [0.5, 0.5, 0.0]),
                (x, [0.25, 0.25, 0.25]), (x, [0.25, 0.75, 0.75]), (x, [0.75, 0.25, 0.75]), (x, [0.75, 0.75, 0.25]),
            ])
        }
        _ => {
            let ((a, ra), (x, rx)) = (pick(rng, &CATIONS_2), pick(rng, &ANIONS_2));
            let l = 2.0 * (ra + rx) * jitter(rng);
            let c = l * rng.random_range(1.4..1.8);
            build(l, l, c, &[(a, [0.0, 0.0, 0.0]), (x, [0.5, 0.5, 0.3]), (a, [0.5, 0.5, 0.6]), (x, [0.0, 0.0, 0.9])])
        }
    }
}

/// Crystal with `n` copies of `base` stacked along a.
pub fn supercell_a(base: &Crystal, n: usize) -> Crystal {
    let [a, b, c, al, be, ga] = base.lattice.parameters();
    let lattice = Lattice::new(a * n as f64, b, c, al, be, ga).unwrap();
    let mut sites = Vec::new();
    for k in 0..n {
        for s in base.sites() {
            let f = s.frac();
            sites.push(Site::new(s.element.clone(), [(f[0] + k as f64) / n as f64, f[1], f[2]]).unwrap());
        }
    }
    Crystal::new(lattice, sites).unwrap()
}

const POOL: [&str; 24] = [
    "H", "Li", "Be", "B", "C", "N", "O", "F", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "K", "Ca", "Ti", "Fe", "Cu", "Zn",
    "Sr", "Ba", "La",
];

/// Arbitrary geometry: any cell, 1 to 20 sites anywhere, real symbols.
pub fn random_crystal<R: Rng + ?Sized>(rng: &mut R) -> Crystal {
    let lattice = loop {
        let l = [rng.random_range(2.0..15.0), rng.random_range(2.0..15.0), rng.random_range(2.0..15.0)];
        let ang = [rng.random_range(60.0..120.0), rng.random_range(60.0..120.0), rng.random_range(60.0..120.0)];
        if let Ok(lat) = Lattice::new(l[0], l[1], l[2], ang[0], ang[1], ang[2]) {
            if lat.volume() > 1.0 {
                break lat;
            }
        }
    };
    let n = rng.random_range(1..=20);
    let sites = (0..n)
        .map(|_| {
            let el = POOL[rng.random_range(0..POOL.len())];
            Site::new(el, [rng.random(), rng.random(), rng.random()]).unwrap()
        })
        .collect();
    Crystal::new(lattice, sites).unwrap()
}

/// Dataset CSV with an `id,cif,formula` header.
pub fn dataset_csv(rows: &[(String, String)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "cif", "formula"]).unwrap();
    for (id, text) in rows {
        let formula = cif::parse_cif(text).map(|c| c.composition().reduced_formula()).unwrap_or_default();
        w.write_record([id.as_str(), text.as_str(), formula.as_str()]).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

// ---------------------------------------------------------------------------
// Hull oracles. A system is a list of (composition, energy per atom) phases.

pub type Phase = (Composition, f64);

fn elements_of(phases: &[Phase]) -> Vec<String> {
    let mut els: Vec<String> = phases.iter().flat_map(|(c, _)| c.elements().map(str::to_string)).collect();
    els.sort();
    els.dedup();
    els
}

fn fractions(c: &Composition, els: &[String]) -> Vec<f64> {
    let n: u32 = els.iter().map(|e| c.get(e)).sum();
    els.iter().map(|e| c.get(e) as f64 / n as f64).collect()
}

/// Lowest elemental energy per element.
fn chemical_potentials(phases: &[Phase], els: &[String]) -> Vec<f64> {
    els.iter()
        .map(|e| {
            phases
                .iter()
                .filter(|(c, _)| c.num_elements() == 1 && c.get(e) > 0)
                .map(|(_, en)| *en)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn formation(c: &Composition, e: f64, els: &[String], mu: &[f64]) -> f64 {
    e - fractions(c, els).iter().zip(mu).map(|(x, m)| x * m).sum::<f64>()
}

/// Points in fraction space with formation energies.
fn lift(phases: &[Phase], query: &Phase) -> (Vec<(Vec<f64>, f64)>, (Vec<f64>, f64)) {
    let els = elements_of(phases);
    let mu = chemical_potentials(phases, &els);
    let pts = phases.iter().map(|(c, e)| (fractions(c, &els), formation(c, *e, &els, &mu))).collect();
    let q = (fractions(&query.0, &els), formation(&query.0, query.1, &els, &mu));
    (pts, q)
}

/// Hull energy at the query composition by explicit hull construction:
/// monotone-chain lower hull for binaries, enumeration of lower facets for
/// ternaries. Returns the query's energy above that hull.
pub fn hull_construction_oracle(phases: &[Phase], query: &Phase) -> f64 {
    let (pts, (qf, qe)) = lift(phases, query);
    let hull = match qf.len() {
        2 => {
            let mut p: Vec<(f64, f64)> = pts.iter().map(|(f, e)| (f[1], *e)).collect();
            p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let mut lower: Vec<(f64, f64)> = Vec::new();
            for pt in p {
                if lower.last().is_some_and(|l| l.0 == pt.0) {
                    continue;
                }
                while lower.len() >= 2 {
                    let (o, a) = (lower[lower.len() - 2], lower[lower.len() - 1]);
                    let cross = (a.0 - o.0) * (pt.1 - o.1) - (a.1 - o.1) * (pt.0 - o.0);
                    if cross <= 0.0 {
                        lower.pop();
                    } else {
                        break;
                    }
                }
                lower.push(pt);
            }
            let x = qf[1];
            lower
                .windows(2)
                .find(|w| w[0].0 <= x && x <= w[1].0)
                .map(|w| w[0].1 + (w[1].1 - w[0].1) * (x - w[0].0) / (w[1].0 - w[0].0))
                .expect("query inside [0, 1]")
        }
        3 => {
            let p: Vec<(f64, f64, f64)> = pts.iter().map(|(f, e)| (f[1], f[2], *e)).collect();
            let (qx, qy) = (qf[1], qf[2]);
            let mut best = f64::INFINITY;
            for i in 0..p.len() {
                for j in i + 1..p.len() {
                    for k in j + 1..p.len() {
                        let (a, b, c) = (p[i], p[j], p[k]);
                        let det = (b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1);
                        if det.abs() < 1e-12 {
                            continue;
                        }
                        // plane e = a.2 + gx (x - a.0) + gy (y - a.1)
                        let gx = ((b.2 - a.2) * (c.1 - a.1) - (c.2 - a.2) * (b.1 - a.1)) / det;
                        let gy = ((b.0 - a.0) * (c.2 - a.2) - (c.0 - a.0) * (b.2 - a.2)) / det;
                        let plane = |x: f64, y: f64| a.2 + gx * (x - a.0) + gy * (y - a.1);
                        if p.iter().any(|q| q.2 < plane(q.0, q.1) - 1e-10) {
                            continue;
                        }
                        let l1 = ((b.1 - c.1) * (qx - c.0) + (c.0 - b.0) * (qy - c.1)) / ((b.1 - c.1) * (a.0 - c.0) + (c.0 - b.0) * (a.1 - c.1));
                        let l2 = ((c.1 - a.1) * (qx - c.0) + (a.0 - c.0) * (qy - c.1)) / ((b.1 - c.1) * (a.0 - c.0) + (c.0 - b.0) * (a.1 - c.1));
                        let l3 = 1.0 - l1 - l2;
                        if l1 >= -1e-12 && l2 >= -1e-12 && l3 >= -1e-12 {
                            best = best.min(plane(qx, qy));
                        }
                    }
                }
            }
            assert!(best.is_finite(), "no lower facet contains the query");
            best
        }
        n => panic!("construction oracle handles 2 or 3 elements, got {n}"),
    };
    qe - hull
}

/// Dual form: the hull at the query is the largest height `t` of a plane
/// through (f_q, t) that stays below every phase. For a gradient `g` that
/// height is min_j (ê_j − g·(f_j − f_q)); it is concave in `g`. Gradients
/// are searched on a grid of step `step` (the last coordinate eliminated by
/// Σf = 1); for ternaries the second gradient component is maximized
/// exactly for each grid value of the first.
pub fn hull_grid_oracle(phases: &[Phase], query: &Phase, step: f64) -> f64 {
    let (pts, (qf, qe)) = lift(phases, query);
    let d: Vec<(Vec<f64>, f64)> = pts.iter().map(|(f, e)| (f[1..].iter().zip(&qf[1..]).map(|(a, b)| a - b).collect(), *e)).collect();
    let height_1d = |g: f64| d.iter().map(|(df, e)| e - g * df[0]).fold(f64::INFINITY, f64::min);
    let height_2d = |g1: f64| {
        // lines in g2: e − g1 Δ1 − g2 Δ2; maximize their lower envelope
        let lines: Vec<(f64, f64)> = d.iter().map(|(df, e)| (e - g1 * df[0], -df[1])).collect();
        let env = |g2: f64| lines.iter().map(|(c, s)| c + s * g2).fold(f64::INFINITY, f64::min);
        let mut best = f64::NEG_INFINITY;
        for (i, a) in lines.iter().enumerate() {
            if a.1 == 0.0 {
                best = best.max(env(0.0));
            }
            for b in &lines[i + 1..] {
                if (a.1 > 0.0) != (b.1 > 0.0) && a.1 != b.1 {
                    best = best.max(env((b.0 - a.0) / (a.1 - b.1)));
                }
            }
        }
        best
    };
    let f = |k: i64| if qf.len() == 2 { height_1d(k as f64 * step) } else { height_2d(k as f64 * step) };
    // integer ternary search on the concave grid sequence
    let (mut lo, mut hi) = (-(1e3 / step) as i64, (1e3 / step) as i64);
    while hi - lo > 2 {
        let m1 = lo + (hi - lo) / 3;
        let m2 = hi - (hi - lo) / 3;
        let (f1, f2) = (f(m1), f(m2));
        if f1 < f2 {
            lo = m1 + 1;
        } else if f1 > f2 {
            hi = m2 - 1;
        } else {
            lo = m1;
            hi = m2;
        }
    }
    let hull = (lo..=hi).map(f).fold(f64::NEG_INFINITY, f64::max);
    qe - hull
}

/// Random binary or ternary reference set: every elemental reference
/// (sometimes with a higher-energy polymorph) plus compounds with small
/// counts and formation energies in [-0.5, 0.3] eV/atom; the query uses
/// every element of the system.
pub fn random_system<R: Rng + ?Sized>(rng: &mut R, ternary: bool) -> (Vec<Phase>, Phase) {
    let mut pool = POOL.to_vec();
    let mut els = Vec::new();
    for _ in 0..if ternary { 3 } else { 2 } {
        els.push(pool.swap_remove(rng.random_range(0..pool.len())));
    }
    let mu: Vec<f64> = els.iter().map(|_| rng.random_range(-5.0..-1.0)).collect();
    let mut phases: Vec<Phase> = Vec::new();
    for (e, m) in els.iter().zip(&mu) {
        phases.push((Composition::from_counts([(*e, 1)]), *m));
        if rng.random_bool(0.5) {
            phases.push((Composition::from_counts([(*e, 2)]), m + rng.random_range(0.0..0.2)));
        }
    }
    let compound = |rng: &mut R, all: bool| -> Composition {
        loop {
            let counts: Vec<u32> = els.iter().map(|_| rng.random_range(if all { 1 } else { 0 }..=4)).collect();
            if counts.iter().filter(|&&c| c > 0).count() >= 2 {
                return Composition::from_counts(els.iter().zip(counts).filter(|(_, c)| *c > 0).map(|(e, c)| (*e, c)));
            }
        }
    };
    let absolute = |c: &Composition, formation: f64| {
        let n = c.total_atoms() as f64;
        formation + els.iter().zip(&mu).map(|(e, m)| c.get(e) as f64 / n * m).sum::<f64>()
    };
    let n_compounds = rng.random_range(2..if ternary { 9 } else { 6 });
    for _ in 0..n_compounds {
        let c = compound(rng, false);
        let ef = rng.random_range(-0.5..0.3);
        let e = absolute(&c, ef);
        phases.push((c, e));
    }
    let qc = compound(rng, true);
    let qe = absolute(&qc, rng.random_range(-0.5..0.3));
    (phases, (qc, qe))
}

// ---------------------------------------------------------------------------
// Transportation oracle for the 1-D Wasserstein distance.

/// Exact optimal transport cost between uniform empirical measures, posed as
/// a transportation LP over the full m×n coupling with integer marginals
/// (row sums n, column sums m) and solved by simplex.
pub fn transport_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let (m, n) = (xs.len(), ys.len());
    let var = |i: usize, j: usize| i * n + j;
    let objective: Vec<f64> = xs.iter().flat_map(|x| ys.iter().map(move |y| (x - y).abs())).collect();
    let mut constraints = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..m {
        let mut row = vec![0.0; m * n];
        (0..n).for_each(|j| row[var(i, j)] = 1.0);
        constraints.push(row);
        rhs.push(n as f64);
    }
    // the last column constraint is implied by the others
    for j in 0..n.saturating_sub(1) {
        let mut row = vec![0.0; m * n];
        (0..m).for_each(|i| row[var(i, j)] = 1.0);
        constraints.push(row);
        rhs.push(m as f64);
    }
    let sol = lp::solve(&LinearProgram { objective, constraints, rhs }).expect("transport LP is feasible");
    sol.objective / (m * n) as f64
}

/// Element counts of a `_chemical_formula_sum` value such as `'Met8 Cu10 N5'`.
pub fn formula_sum_multiset(text: &str) -> BTreeMap<String, u32> {
    let line = text.lines().find(|l| l.starts_with("_chemical_formula_sum")).expect("formula sum present");
    let value = line["_chemical_formula_sum".len()..].trim().trim_matches('\'');
    value
        .split_whitespace()
        .map(|tok| {
            let split = tok.find(|c: char| c.is_ascii_digit()).unwrap_or(tok.len());
            let count = if split == tok.len() { 1 } else { tok[split..].parse().unwrap() };
            (tok[..split].to_string(), count)
        })
        .collect()
}

/// Value of a numeric CIF tag.
pub fn cif_number(text: &str, tag: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(tag).filter(|r| r.starts_with(char::is_whitespace)))
        .unwrap_or_else(|| panic!("{tag} missing"))
        .trim()
        .parse()
        .unwrap()
}
