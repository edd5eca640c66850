//! Fixed-column PDB reader (ATOM, HETATM, CONECT records).
//!
//! Connectivity comes from CONECT records when any are present; repeated
//! partners on a CONECT record raise the bond order. Without CONECT records
//! bonds are inferred from distances. Explicit hydrogens are folded into
//! their heavy neighbour; files without any hydrogen get implicit counts
//! from default valences.

use std::collections::{BTreeMap, HashMap};

use super::{Atom, Bond, BondOrder, Element, GraphSource, MolGraph, ParseError};

/// Slack added to the covalent-radius sum when inferring bonds, angstrom.
pub const BOND_TOLERANCE: f64 = 0.45;

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Pdb {
        line,
        message: message.into(),
    }
}

/// 1-based inclusive column slice; `None` when the line is too short.
fn columns(line: &str, from: usize, to: usize) -> Option<&str> {
    let bytes = line.as_bytes();
    if bytes.len() < from {
        return None;
    }
    let end = to.min(bytes.len());
    line.get(from - 1..end)
}

struct PdbAtom {
    serial: i64,
    element: Element,
    charge: i8,
    pos: [f64; 3],
}

fn element_from_fields(line: &str, line_no: usize) -> Result<Element, ParseError> {
    if let Some(sym) = columns(line, 77, 78).map(str::trim).filter(|s| !s.is_empty()) {
        return normalise_symbol(sym).ok_or_else(|| err(line_no, format!("unknown element `{sym}`")));
    }
    let name = columns(line, 13, 16).unwrap_or("");
    let letters: String = name.chars().filter(|c| c.is_ascii_alphabetic()).collect();
    if letters.is_empty() {
        return Err(err(line_no, "no element symbol and empty atom name"));
    }
    // Two-letter elements are left-justified in column 13.
    if !name.starts_with(' ') && letters.len() >= 2 {
        if let Some(e) = normalise_symbol(&letters[..2]) {
            if e.symbol().len() == 2 {
                return Ok(e);
            }
        }
    }
    normalise_symbol(&letters[..1]).ok_or_else(|| {
        err(
            line_no,
            format!("cannot infer element from atom name `{}`", name.trim()),
        )
    })
}

fn normalise_symbol(sym: &str) -> Option<Element> {
    let mut chars = sym.chars();
    let first = chars.next()?.to_ascii_uppercase();
    let rest: String = chars.map(|c| c.to_ascii_lowercase()).collect();
    let symbol = format!("{first}{rest}");
    Element::from_symbol(&symbol).filter(|e| *e != Element::Wildcard)
}

fn parse_charge(line: &str, line_no: usize) -> Result<i8, ParseError> {
    let field = columns(line, 79, 80).map(str::trim).unwrap_or("");
    if field.is_empty() {
        return Ok(0);
    }
    let (digits, sign) = field.split_at(field.len() - 1);
    let magnitude: i8 = if digits.is_empty() {
        1
    } else {
        digits
            .parse()
            .map_err(|_| err(line_no, format!("bad charge field `{field}`")))?
    };
    match sign {
        "+" => Ok(magnitude),
        "-" => Ok(-magnitude),
        _ => Err(err(line_no, format!("bad charge field `{field}`"))),
    }
}

fn parse_atom_line(line: &str, line_no: usize) -> Result<PdbAtom, ParseError> {
    let num = |from: usize, to: usize, what: &str| -> Result<f64, ParseError> {
        let text = columns(line, from, to)
            .ok_or_else(|| err(line_no, format!("line too short for {what}")))?
            .trim();
        text.parse()
            .map_err(|_| err(line_no, format!("{what} is not numeric: `{text}`")))
    };
    let serial_text = columns(line, 7, 11).unwrap_or("").trim();
    let serial: i64 = serial_text
        .parse()
        .map_err(|_| err(line_no, format!("bad atom serial `{serial_text}`")))?;
    let pos = [num(31, 38, "x")?, num(39, 46, "y")?, num(47, 54, "z")?];
    Ok(PdbAtom {
        serial,
        element: element_from_fields(line, line_no)?,
        charge: parse_charge(line, line_no)?,
        pos,
    })
}

fn parse_conect_line(line: &str, line_no: usize) -> Result<(i64, Vec<i64>), ParseError> {
    let field = |from: usize, to: usize| columns(line, from, to).map(str::trim).unwrap_or("");
    let parse = |text: &str| -> Result<i64, ParseError> {
        text.parse()
            .map_err(|_| err(line_no, format!("bad CONECT serial `{text}`")))
    };
    let source = parse(field(7, 11))?;
    let mut partners = Vec::new();
    for start in [12, 17, 22, 27] {
        let text = field(start, start + 4);
        if !text.is_empty() {
            partners.push(parse(text)?);
        }
    }
    Ok((source, partners))
}

pub fn parse_pdb(bytes: &[u8]) -> Result<MolGraph, ParseError> {
    let text = String::from_utf8_lossy(bytes);
    let mut atoms: Vec<PdbAtom> = Vec::new();
    let mut conect: Vec<(usize, i64, Vec<i64>)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        let record = columns(line, 1, 6).unwrap_or("").trim_end();
        match record {
            "ATOM" | "HETATM" => atoms.push(parse_atom_line(line, line_no)?),
            "CONECT" => {
                let (src, partners) = parse_conect_line(line, line_no)?;
                conect.push((line_no, src, partners));
            }
            "ENDMDL" => break,
            _ => {}
        }
    }
    if atoms.is_empty() {
        return Err(err(0, "no ATOM/HETATM records"));
    }

    let index: HashMap<i64, usize> = atoms.iter().enumerate().map(|(i, a)| (a.serial, i)).collect();
    let mut bonds = if conect.is_empty() {
        infer_bonds(&atoms)
    } else {
        conect_bonds(&conect, &index)?
    };
    bonds.sort_by_key(|b| (b.a, b.b));

    let had_hydrogens = atoms.iter().any(|a| a.element == Element::H);
    let mut graph = MolGraph {
        atoms: atoms
            .iter()
            .map(|a| {
                let mut atom = Atom::new(a.element);
                atom.formal_charge = a.charge;
                atom
            })
            .collect(),
        bonds,
        source: GraphSource::Pdb,
    };
    if had_hydrogens {
        graph.fold_explicit_hydrogens();
    } else {
        fill_valence_hydrogens(&mut graph);
    }
    Ok(graph)
}

fn conect_bonds(
    records: &[(usize, i64, Vec<i64>)],
    index: &HashMap<i64, usize>,
) -> Result<Vec<Bond>, ParseError> {
    // (from, to) -> multiplicity as listed on `from`'s records
    let mut listed: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    for (line_no, src, partners) in records {
        let a = *index
            .get(src)
            .ok_or_else(|| err(*line_no, format!("CONECT references unknown atom {src}")))?;
        for p in partners {
            let b = *index
                .get(p)
                .ok_or_else(|| err(*line_no, format!("CONECT references unknown atom {p}")))?;
            if a == b {
                return Err(err(*line_no, "CONECT bonds an atom to itself"));
            }
            *listed.entry((a, b)).or_default() += 1;
        }
    }
    let mut pairs: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    for (&(a, b), &n) in &listed {
        let key = (a.min(b), a.max(b));
        let e = pairs.entry(key).or_default();
        *e = (*e).max(n);
    }
    Ok(pairs
        .into_iter()
        .map(|((a, b), n)| Bond {
            a,
            b,
            order: match n {
                1 => BondOrder::Single,
                2 => BondOrder::Double,
                _ => BondOrder::Triple,
            },
        })
        .collect())
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn within_bonding(a: &PdbAtom, b: &PdbAtom) -> Option<f64> {
    let d = distance(&a.pos, &b.pos);
    let limit = a.element.covalent_radius() + b.element.covalent_radius() + BOND_TOLERANCE;
    (d <= limit).then_some(d)
}

/// Single bonds between atoms closer than the sum of their covalent radii
/// plus [`BOND_TOLERANCE`]. A hydrogen bonds only to its nearest candidate.
fn infer_bonds(atoms: &[PdbAtom]) -> Vec<Bond> {
    let mut bonds = Vec::new();
    for i in 0..atoms.len() {
        if atoms[i].element == Element::H {
            continue;
        }
        for j in (i + 1)..atoms.len() {
            if atoms[j].element != Element::H && within_bonding(&atoms[i], &atoms[j]).is_some() {
                bonds.push(Bond {
                    a: i,
                    b: j,
                    order: BondOrder::Single,
                });
            }
        }
    }
    for (h, atom) in atoms.iter().enumerate() {
        if atom.element != Element::H {
            continue;
        }
        let nearest = atoms
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != h)
            .filter_map(|(j, other)| within_bonding(atom, other).map(|d| (j, d)))
            .min_by(|x, y| x.1.total_cmp(&y.1));
        if let Some((j, _)) = nearest {
            bonds.push(Bond {
                a: h.min(j),
                b: h.max(j),
                order: BondOrder::Single,
            });
        }
    }
    bonds
}

fn fill_valence_hydrogens(graph: &mut MolGraph) {
    let mut sum = vec![0u32; graph.atoms.len()];
    for b in &graph.bonds {
        let units = b.order.half_units() / 2;
        sum[b.a] += units;
        sum[b.b] += units;
    }
    for (atom, s) in graph.atoms.iter_mut().zip(sum) {
        if atom.formal_charge != 0 {
            continue;
        }
        let h = atom
            .element
            .default_valences()
            .iter()
            .find(|&&v| v >= s)
            .map_or(0, |v| v - s);
        atom.implicit_h = h as u8;
    }
}
