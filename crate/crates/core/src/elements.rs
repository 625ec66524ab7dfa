//! Embedded periodic-table data.
//!
//! The table is compiled in from `data/elements.csv` (Z = 1..=103) and is
//! checked against `data/SHA256SUMS` the first time it is touched. Symbols
//! are case-sensitive: `"Fe"` is an element, `"fe"` is not.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use serde::Serialize;
use sha2::{Digest, Sha256};

const ELEMENTS_CSV: &str = include_str!("../data/elements.csv");
const EXTENDED_CSV: &str = include_str!("../data/extended_oxidation_states.csv");
const CHECKSUMS: &str = include_str!("../data/SHA256SUMS");

pub const TABLE_SIZE: usize = 103;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown element symbol {0:?}")]
pub struct UnknownElement(pub String);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElementRecord {
    pub symbol: String,
    pub atomic_number: u8,
    /// amu
    pub atomic_mass: f64,
    /// Å
    pub empirical_radius: f64,
    /// Pauling scale; `None` for the light noble gases.
    pub electronegativity: Option<f64>,
    pub period: u8,
    pub group: u8,
    pub common_oxidation_states: Vec<i8>,
    /// Superset of `common_oxidation_states` including rare states.
    pub extended_oxidation_states: Vec<i8>,
    /// One radius (Å) per oxidation state.
    pub ionic_radii: BTreeMap<i8, f64>,
}

impl ElementRecord {
    pub fn oxidation_states(&self, extended: bool) -> &[i8] {
        if extended {
            &self.extended_oxidation_states
        } else {
            &self.common_oxidation_states
        }
    }
}

struct PeriodicTable {
    records: Vec<ElementRecord>,
    by_symbol: HashMap<String, usize>,
}

fn table() -> &'static PeriodicTable {
    static TABLE: OnceLock<PeriodicTable> = OnceLock::new();
    TABLE.get_or_init(|| load().unwrap_or_else(|e| panic!("embedded element table is corrupt: {e}")))
}

fn expected_digest(file: &str) -> Option<&'static str> {
    CHECKSUMS.lines().find_map(|line| {
        let mut parts = line.split_whitespace();
        let digest = parts.next()?;
        (parts.next()? == file).then_some(digest)
    })
}

fn verify(file: &str, contents: &str) -> Result<(), String> {
    let expected = expected_digest(file).ok_or_else(|| format!("no checksum for {file}"))?;
    let actual = hex::encode(Sha256::digest(contents.as_bytes()));
    if actual != expected {
        return Err(format!("{file}: checksum {actual} != {expected}"));
    }
    Ok(())
}

fn parse_states(field: &str) -> Result<Vec<i8>, String> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|s| s.parse::<i8>().map_err(|e| format!("bad oxidation state {s:?}: {e}")))
        .collect()
}

fn parse_radii(field: &str) -> Result<BTreeMap<i8, f64>, String> {
    let mut out = BTreeMap::new();
    if field.is_empty() {
        return Ok(out);
    }
    for pair in field.split(';') {
        let (state, radius) = pair
            .split_once(':')
            .ok_or_else(|| format!("bad ionic radius entry {pair:?}"))?;
        let state: i8 = state.parse().map_err(|e| format!("{pair:?}: {e}"))?;
        let radius: f64 = radius.parse().map_err(|e| format!("{pair:?}: {e}"))?;
        out.insert(state, radius);
    }
    Ok(out)
}

fn load() -> Result<PeriodicTable, String> {
    verify("elements.csv", ELEMENTS_CSV)?;
    verify("extended_oxidation_states.csv", EXTENDED_CSV)?;

    let mut extended: HashMap<String, Vec<i8>> = HashMap::new();
    let mut reader = csv::Reader::from_reader(EXTENDED_CSV.as_bytes());
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        extended.insert(row[0].to_string(), parse_states(&row[1])?);
    }

    let mut records = Vec::with_capacity(TABLE_SIZE);
    let mut reader = csv::Reader::from_reader(ELEMENTS_CSV.as_bytes());
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        let num = |i: usize| row[i].parse::<f64>().map_err(|e| format!("{:?}: {e}", &row[i]));
        let int = |i: usize| row[i].parse::<u8>().map_err(|e| format!("{:?}: {e}", &row[i]));
        let symbol = row[0].to_string();
        let common = parse_states(&row[7])?;
        let record = ElementRecord {
            atomic_number: int(1)?,
            atomic_mass: num(2)?,
            empirical_radius: num(3)?,
            electronegativity: if row[4].is_empty() { None } else { Some(num(4)?) },
            period: int(5)?,
            group: int(6)?,
            extended_oxidation_states: extended.remove(&symbol).unwrap_or_else(|| common.clone()),
            common_oxidation_states: common,
            ionic_radii: parse_radii(&row[8])?,
            symbol,
        };
        check_record(&record, records.len() + 1)?;
        records.push(record);
    }
    if records.len() != TABLE_SIZE {
        return Err(format!("expected {TABLE_SIZE} elements, found {}", records.len()));
    }
    let by_symbol = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.symbol.clone(), i))
        .collect();
    Ok(PeriodicTable { records, by_symbol })
}

fn check_record(r: &ElementRecord, expected_z: usize) -> Result<(), String> {
    if usize::from(r.atomic_number) != expected_z {
        return Err(format!("{}: atomic numbers out of order", r.symbol));
    }
    if r.empirical_radius <= 0.0 || r.ionic_radii.values().any(|&v| v <= 0.0) {
        return Err(format!("{}: non-positive radius", r.symbol));
    }
    if r.common_oxidation_states.is_empty() {
        return Err(format!("{}: empty oxidation state set", r.symbol));
    }
    if let Some(state) = r
        .ionic_radii
        .keys()
        .find(|s| !r.common_oxidation_states.contains(s))
    {
        return Err(format!("{}: ionic radius for non-listed state {state}", r.symbol));
    }
    if r.common_oxidation_states.iter().any(|s| !r.extended_oxidation_states.contains(s)) {
        return Err(format!("{}: extended states must include common states", r.symbol));
    }
    Ok(())
}

pub fn lookup(symbol: &str) -> Result<&'static ElementRecord, UnknownElement> {
    let t = table();
    t.by_symbol
        .get(symbol)
        .map(|&i| &t.records[i])
        .ok_or_else(|| UnknownElement(symbol.to_string()))
}

pub fn is_valid_symbol(token: &str) -> bool {
    table().by_symbol.contains_key(token)
}

/// Ordered by atomic number.
pub fn all_elements() -> &'static [ElementRecord] {
    &table().records
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iron() {
        let fe = lookup("Fe").unwrap();
        assert_eq!(fe.atomic_number, 26);
        assert_eq!(all_elements()[25].symbol, "Fe");
    }

    #[test]
    fn hallucinated_symbols_are_rejected() {
        for s in ["Ln", "Gro", "Mande", "Met", "L", "Le", "fe", "", "FE"] {
            assert!(!is_valid_symbol(s), "{s}");
            assert_eq!(lookup(s), Err(UnknownElement(s.to_string())));
        }
        assert!(is_valid_symbol("O"));
    }

    #[test]
    fn table_shape() {
        let all = all_elements();
        assert_eq!(all.len(), 103);
        assert_eq!(all[0].symbol, "H");
        assert_eq!(all[102].symbol, "Lr");
        for r in all {
            assert_eq!(lookup(&r.symbol).unwrap(), r);
        }
    }

    #[test]
    fn noble_gases_are_neutral() {
        for s in ["He", "Ne", "Ar", "Rn"] {
            assert_eq!(lookup(s).unwrap().common_oxidation_states, vec![0]);
        }
    }

    #[test]
    fn checksum_mismatch_is_detected() {
        assert!(verify("elements.csv", "symbol\n").is_err());
        assert!(verify("missing.csv", ELEMENTS_CSV).is_err());
    }
}
