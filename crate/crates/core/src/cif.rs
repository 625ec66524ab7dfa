//! Reader and writer for the P1 subset of CIF emitted by pymatgen.
//!
//! Only single-block files whose only symmetry operation is the identity
//! are accepted; anything that would need symmetry expansion is rejected.
//! Unknown tags are kept as warnings in [`CifDocument::warnings`].

use crate::crystal::{format_fixed, Crystal, CrystalError, Lattice, Site, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CifError {
    #[error("malformed CIF: {0}")]
    MalformedCif(String),
    #[error("not a P1 structure: {0}")]
    NonP1Cif(String),
    #[error("partial occupancy {occupancy} at site {label}")]
    PartialOccupancy { label: String, occupancy: f64 },
    #[error(transparent)]
    Geometry(#[from] CrystalError),
}

fn malformed(msg: impl Into<String>) -> CifError {
    CifError::MalformedCif(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CifSite {
    pub type_symbol: String,
    pub label: String,
    pub frac: Vec3,
    pub occupancy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CifDocument {
    pub data_name: String,
    pub cell: Lattice,
    pub formula_structural: Option<String>,
    pub formula_sum: Option<String>,
    /// As written in the file; never used for computation.
    pub declared_volume: Option<f64>,
    pub sites: Vec<CifSite>,
    pub warnings: Vec<String>,
}

impl CifDocument {
    /// Element symbol of a site: the leading letters of its type symbol
    /// (`"Met0+"` → `"Met"`), falling back to the label.
    fn element_of(site: &CifSite) -> Result<String, CifError> {
        let leading = |s: &str| -> String { s.chars().take_while(|c| c.is_ascii_alphabetic()).collect() };
        let sym = leading(&site.type_symbol);
        let sym = if sym.is_empty() { leading(&site.label) } else { sym };
        if sym.is_empty() {
            return Err(malformed(format!("site {:?} has no element symbol", site.label)));
        }
        Ok(sym)
    }

    pub fn to_crystal(&self) -> Result<Crystal, CifError> {
        let sites = self
            .sites
            .iter()
            .map(|s| Ok(Site::new(Self::element_of(s)?, s.frac)?))
            .collect::<Result<Vec<_>, CifError>>()?;
        Ok(Crystal::new(self.cell, sites)?)
    }
}

const KNOWN_TAGS: &[&str] = &[
    "_symmetry_space_group_name_h-m",
    "_space_group_name_h-m_alt",
    "_symmetry_int_tables_number",
    "_space_group_it_number",
    "_chemical_formula_structural",
    "_chemical_formula_sum",
    "_cell_volume",
    "_cell_formula_units_z",
    "_cell_length_a",
    "_cell_length_b",
    "_cell_length_c",
    "_cell_angle_alpha",
    "_cell_angle_beta",
    "_cell_angle_gamma",
];

/// Splits a line into whitespace-separated tokens, honouring single and
/// double quotes.
fn tokenize(line: &str) -> Result<Vec<String>, CifError> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if c == '#' {
            break;
        }
        if c == '\'' || c == '"' {
            chars.next();
            let mut tok = String::new();
            let mut closed = false;
            while let Some(d) = chars.next() {
                // a quote only closes when followed by whitespace or end of line
                if d == c && chars.peek().is_none_or(|n| n.is_whitespace()) {
                    closed = true;
                    break;
                }
                tok.push(d);
            }
            if !closed {
                return Err(malformed(format!("unterminated quote in {line:?}")));
            }
            out.push(tok);
        } else {
            let mut tok = String::new();
            while let Some(&d) = chars.peek() {
                if d.is_whitespace() {
                    break;
                }
                tok.push(d);
                chars.next();
            }
            out.push(tok);
        }
    }
    Ok(out)
}

/// Number with an optional standard uncertainty, e.g. `0.391(6)`.
fn parse_number(tok: &str) -> Result<f64, CifError> {
    let core = match tok.find('(') {
        Some(i) if tok.ends_with(')') && tok[i + 1..tok.len() - 1].chars().all(|c| c.is_ascii_digit()) => &tok[..i],
        Some(_) => return Err(malformed(format!("bad number {tok:?}"))),
        None => tok,
    };
    let v: f64 = core.parse().map_err(|_| malformed(format!("bad number {tok:?}")))?;
    if !v.is_finite() {
        return Err(malformed(format!("non-finite number {tok:?}")));
    }
    Ok(v)
}

struct Loop {
    tags: Vec<String>,
    values: Vec<String>,
    line: usize,
}

impl Loop {
    fn column(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    fn rows(&self) -> impl Iterator<Item = &[String]> {
        self.values.chunks(self.tags.len())
    }
}

pub fn parse_cif_document(text: &str) -> Result<CifDocument, CifError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut data_name = None;
    let mut items: Vec<(String, String)> = Vec::new();
    let mut loops: Vec<Loop> = Vec::new();
    let mut warnings = Vec::new();

    let mut i = 0;
    while i < lines.len() {
        let tokens = tokenize(lines[i])?;
        i += 1;
        let Some(first) = tokens.first() else { continue };
        if let Some(name) = first.strip_prefix("data_") {
            if data_name.is_some() {
                return Err(malformed("multiple data blocks"));
            }
            data_name = Some(name.to_string());
        } else if first.eq_ignore_ascii_case("loop_") {
            let start = i;
            let mut lp = Loop { tags: Vec::new(), values: Vec::new(), line: start };
            lp.tags.extend(tokens[1..].iter().map(|t| t.to_ascii_lowercase()));
            // header tags
            while i < lines.len() {
                let toks = tokenize(lines[i])?;
                match toks.first() {
                    Some(t) if t.starts_with('_') => {
                        lp.tags.extend(toks.iter().map(|t| t.to_ascii_lowercase()));
                        i += 1;
                    }
                    None => i += 1,
                    _ => break,
                }
            }
            // values until the next tag, loop or block
            while i < lines.len() {
                let toks = tokenize(lines[i])?;
                match toks.first() {
                    None => {
                        i += 1;
                        if !lp.values.is_empty() {
                            break;
                        }
                    }
                    Some(t) if t.starts_with('_') || t.eq_ignore_ascii_case("loop_") || t.starts_with("data_") => break,
                    Some(_) => {
                        lp.values.extend(toks);
                        i += 1;
                    }
                }
            }
            if lp.tags.is_empty() {
                return Err(malformed(format!("loop at line {start} has no tags")));
            }
            if lp.values.len() % lp.tags.len() != 0 {
                return Err(malformed(format!(
                    "truncated loop at line {start}: {} values for {} columns",
                    lp.values.len(),
                    lp.tags.len()
                )));
            }
            loops.push(lp);
        } else if first.starts_with('_') {
            if data_name.is_none() {
                return Err(malformed("tag before data_ block header"));
            }
            let tag = first.to_ascii_lowercase();
            let value = if tokens.len() >= 2 {
                tokens[1..].join(" ")
            } else {
                // value on the following line (possibly a ;-delimited text field)
                let Some(next) = lines.get(i) else {
                    return Err(malformed(format!("tag {first} has no value")));
                };
                if let Some(rest) = next.strip_prefix(';') {
                    let mut buf = rest.to_string();
                    i += 1;
                    loop {
                        let Some(l) = lines.get(i) else {
                            return Err(malformed(format!("unterminated text field for {first}")));
                        };
                        i += 1;
                        if l.starts_with(';') {
                            break;
                        }
                        buf.push('\n');
                        buf.push_str(l);
                    }
                    buf
                } else {
                    let toks = tokenize(next)?;
                    i += 1;
                    if toks.is_empty() || toks[0].starts_with('_') {
                        return Err(malformed(format!("tag {first} has no value")));
                    }
                    toks.join(" ")
                }
            };
            items.push((tag, value));
        } else {
            return Err(malformed(format!("unexpected content at line {i}: {:?}", lines[i - 1])));
        }
    }

    let data_name = data_name.ok_or_else(|| malformed("missing data_ block header"))?;
    let item = |tag: &str| items.iter().find(|(t, _)| t == tag).map(|(_, v)| v.as_str());
    for (tag, _) in &items {
        if !KNOWN_TAGS.contains(&tag.as_str()) {
            warnings.push(format!("skipped unknown tag {tag}"));
        }
    }

    check_p1(&item, &loops)?;

    let mut cell = [0.0; 6];
    let cell_tags = [
        "_cell_length_a",
        "_cell_length_b",
        "_cell_length_c",
        "_cell_angle_alpha",
        "_cell_angle_beta",
        "_cell_angle_gamma",
    ];
    for (slot, tag) in cell.iter_mut().zip(cell_tags) {
        *slot = parse_number(item(tag).ok_or_else(|| malformed(format!("missing {tag}")))?)?;
    }
    let cell = Lattice::new(cell[0], cell[1], cell[2], cell[3], cell[4], cell[5])?;

    let atoms = loops
        .iter()
        .find(|l| l.tags.iter().any(|t| t.starts_with("_atom_site_fract_")))
        .ok_or_else(|| malformed("missing _atom_site loop with fractional coordinates"))?;
    let col = |tag: &str| atoms.column(tag);
    let (cx, cy, cz) = match (col("_atom_site_fract_x"), col("_atom_site_fract_y"), col("_atom_site_fract_z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(malformed(format!("atom loop at line {} lacks fract_x/y/z", atoms.line))),
    };
    let c_type = col("_atom_site_type_symbol");
    let c_label = col("_atom_site_label");
    if c_type.is_none() && c_label.is_none() {
        return Err(malformed("atom loop has neither type symbols nor labels"));
    }
    let c_occ = col("_atom_site_occupancy");
    for tag in &atoms.tags {
        if !tag.starts_with("_atom_site_") {
            warnings.push(format!("skipped unknown loop column {tag}"));
        }
    }
    for lp in &loops {
        let known = std::ptr::eq(lp, atoms) || lp.tags.iter().all(|t| t.starts_with("_symmetry_equiv_pos") || t.starts_with("_space_group_symop"));
        if !known {
            warnings.push(format!("skipped loop starting with {}", lp.tags[0]));
        }
    }

    let mut sites = Vec::new();
    for row in atoms.rows() {
        let label = c_label.map(|c| row[c].clone()).unwrap_or_else(|| row[c_type.unwrap()].clone());
        let type_symbol = c_type.map(|c| row[c].clone()).unwrap_or_else(|| label.clone());
        let frac = [parse_number(&row[cx])?, parse_number(&row[cy])?, parse_number(&row[cz])?];
        let occupancy = match c_occ {
            Some(c) if row[c] != "?" && row[c] != "." => parse_number(&row[c])?,
            _ => 1.0,
        };
        if (occupancy - 1.0).abs() > 1e-6 {
            return Err(CifError::PartialOccupancy { label, occupancy });
        }
        sites.push(CifSite { type_symbol, label, frac, occupancy });
    }
    if sites.is_empty() {
        return Err(malformed("atom loop has no rows"));
    }

    let declared_volume = item("_cell_volume").map(parse_number).transpose()?;
    Ok(CifDocument {
        data_name,
        cell,
        formula_structural: item("_chemical_formula_structural").map(str::to_string),
        formula_sum: item("_chemical_formula_sum").map(str::to_string),
        declared_volume,
        sites,
        warnings,
    })
}

fn normalize_op(op: &str) -> String {
    op.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_lowercase()
}

fn check_p1<'a>(item: &impl Fn(&str) -> Option<&'a str>, loops: &[Loop]) -> Result<(), CifError> {
    for tag in ["_symmetry_space_group_name_h-m", "_space_group_name_h-m_alt"] {
        if let Some(hm) = item(tag) {
            let hm: String = hm.chars().filter(|c| !c.is_whitespace()).collect();
            if hm != "P1" {
                return Err(CifError::NonP1Cif(format!("space group {hm}")));
            }
        }
    }
    for tag in ["_symmetry_int_tables_number", "_space_group_it_number"] {
        if let Some(n) = item(tag) {
            if n.trim() != "1" {
                return Err(CifError::NonP1Cif(format!("space group number {n}")));
            }
        }
    }
    for lp in loops {
        let col = lp
            .column("_symmetry_equiv_pos_as_xyz")
            .or_else(|| lp.column("_space_group_symop_operation_xyz"));
        if let Some(c) = col {
            let ops: Vec<String> = lp.rows().map(|r| normalize_op(&r[c])).collect();
            if ops.len() != 1 || ops[0] != "x,y,z" {
                return Err(CifError::NonP1Cif(format!("symmetry operations {ops:?}")));
            }
        }
    }
    Ok(())
}

pub fn parse_cif(text: &str) -> Result<Crystal, CifError> {
    parse_cif_document(text)?.to_crystal()
}

/// Writes the pymatgen-style P1 dialect.
///
/// `_chemical_formula_sum` lists elements in order of first appearance;
/// `_cell_formula_units_Z` is the gcd of the element counts.
pub fn write_cif(crystal: &Crystal, name: &str) -> String {
    let lattice = &crystal.lattice;
    let comp = crystal.composition();
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("data_{name}"));
    line("_symmetry_space_group_name_H-M   'P 1'".into());
    let [a, b, c, alpha, beta, gamma] = lattice.parameters();
    for (tag, v) in [("length_a", a), ("length_b", b), ("length_c", c)] {
        line(format!("_cell_{tag}   {}", format_fixed(v, 4)));
    }
    for (tag, v) in [("angle_alpha", alpha), ("angle_beta", beta), ("angle_gamma", gamma)] {
        line(format!("_cell_{tag}   {}", format_fixed(v, 4)));
    }
    line("_symmetry_Int_Tables_number   1".into());
    line(format!("_chemical_formula_structural   {}", comp.reduced_formula()));
    let sum: Vec<String> = crystal
        .distinct_elements()
        .into_iter()
        .map(|e| format!("{e}{}", comp.get(e)))
        .collect();
    line(format!("_chemical_formula_sum   '{}'", sum.join(" ")));
    line(format!("_cell_volume   {}", format_fixed(lattice.volume(), 8)));
    line(format!("_cell_formula_units_Z   {}", comp.gcd()));
    line("loop_".into());
    line(" _symmetry_equiv_pos_site_id".into());
    line(" _symmetry_equiv_pos_as_xyz".into());
    line("  1  'x, y, z'".into());
    line("loop_".into());
    for tag in [
        "type_symbol",
        "label",
        "symmetry_multiplicity",
        "fract_x",
        "fract_y",
        "fract_z",
        "occupancy",
    ] {
        line(format!(" _atom_site_{tag}"));
    }
    for (i, site) in crystal.sites().iter().enumerate() {
        let [x, y, z] = site.frac().map(|v| format_fixed(v, 4));
        line(format!("  {el}  {el}{i}  1  {x}  {y}  {z}  1", el = site.element));
    }
    out
}
