//! SMILES subset parser.
//!
//! Supported: organic-subset atoms (`B C N O P S F Cl Br I`, aromatic
//! `b c n o p s`), bracket atoms with isotope, explicit H count, charge and
//! atom class, bonds `- = # :`, branches, ring closures (`1`-`9`, `%nn`),
//! the wildcard `*` and dot-separated components. Stereo marks (`/ \ @`)
//! are accepted and dropped.

use std::collections::HashMap;

use super::{Atom, Bond, BondOrder, Element, GraphSource, MolGraph, ParseError};

fn err(offset: usize, message: impl Into<String>) -> ParseError {
    ParseError::Smiles {
        offset,
        message: message.into(),
    }
}

struct RingOpen {
    atom: usize,
    bond: Option<BondOrder>,
    offset: usize,
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    atoms: Vec<Atom>,
    /// Whether each atom was written in brackets (its H count is then explicit).
    bracketed: Vec<bool>,
    atom_offsets: Vec<usize>,
    bonds: Vec<Bond>,
    rings: HashMap<u32, RingOpen>,
}

pub fn parse_smiles(text: &str) -> Result<MolGraph, ParseError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(err(0, "empty SMILES"));
    }
    let mut p = Parser {
        chars: trimmed.chars().collect(),
        pos: 0,
        atoms: Vec::new(),
        bracketed: Vec::new(),
        atom_offsets: Vec::new(),
        bonds: Vec::new(),
        rings: HashMap::new(),
    };
    p.run()?;
    p.assign_implicit_hydrogens()?;
    let mut graph = MolGraph {
        atoms: p.atoms,
        bonds: p.bonds,
        source: GraphSource::Smiles,
    };
    graph.fold_explicit_hydrogens();
    Ok(graph)
}

impl Parser {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), ParseError> {
        // Atom that the next atom bonds to; None at the start of a component.
        let mut prev: Option<usize> = None;
        let mut branch_stack: Vec<(Option<usize>, usize)> = Vec::new();
        let mut pending_bond: Option<(BondOrder, usize)> = None;
        // Whether the most recent token can be followed by a bond / ring digit.
        let mut after_atom = false;

        while let Some(c) = self.peek() {
            let offset = self.pos;
            match c {
                '(' => {
                    if prev.is_none() || !after_atom {
                        return Err(err(offset, "branch must follow an atom"));
                    }
                    if pending_bond.is_some() {
                        return Err(err(offset, "bond symbol before branch"));
                    }
                    branch_stack.push((prev, offset));
                    self.pos += 1;
                    after_atom = false;
                }
                ')' => {
                    let (restore, open_at) =
                        branch_stack.pop().ok_or_else(|| err(offset, "unbalanced ')'"))?;
                    if pending_bond.is_some() {
                        return Err(err(offset, "dangling bond before ')'"));
                    }
                    if !after_atom {
                        return Err(err(open_at, "empty branch"));
                    }
                    prev = restore;
                    self.pos += 1;
                    after_atom = true;
                }
                '-' | '=' | '#' | ':' | '/' | '\\' => {
                    if pending_bond.is_some() {
                        return Err(err(offset, "two consecutive bond symbols"));
                    }
                    if prev.is_none() {
                        return Err(err(offset, "bond without a preceding atom"));
                    }
                    let order = match c {
                        '=' => BondOrder::Double,
                        '#' => BondOrder::Triple,
                        ':' => BondOrder::Aromatic,
                        _ => BondOrder::Single,
                    };
                    // '/' and '\' only carry stereo; they stay single bonds.
                    pending_bond = Some((order, offset));
                    self.pos += 1;
                }
                '.' => {
                    if pending_bond.is_some() || !branch_stack.is_empty() && !after_atom {
                        return Err(err(offset, "unexpected '.'"));
                    }
                    if prev.is_none() {
                        return Err(err(offset, "'.' without a preceding atom"));
                    }
                    prev = None;
                    after_atom = false;
                    self.pos += 1;
                }
                '0'..='9' | '%' => {
                    let atom = match prev {
                        Some(a) if after_atom => a,
                        _ => return Err(err(offset, "ring closure must follow an atom")),
                    };
                    let label = self.ring_label()?;
                    let bond = pending_bond.take().map(|(o, _)| o);
                    self.ring_closure(atom, label, bond, offset)?;
                }
                _ => {
                    let atom_index = self.atom()?;
                    if let Some(from) = prev {
                        let order = match pending_bond.take() {
                            Some((o, _)) => o,
                            None => self.default_order(from, atom_index),
                        };
                        self.add_bond(from, atom_index, order, offset)?;
                    } else if let Some((_, at)) = pending_bond.take() {
                        return Err(err(at, "bond without a preceding atom"));
                    }
                    prev = Some(atom_index);
                    after_atom = true;
                }
            }
        }

        if let Some((_, at)) = pending_bond {
            return Err(err(at, "dangling bond at end of input"));
        }
        if let Some((_, at)) = branch_stack.last() {
            return Err(err(*at, "unbalanced '('"));
        }
        if let Some(open) = self.rings.values().min_by_key(|r| r.offset) {
            return Err(err(open.offset, "unmatched ring closure"));
        }
        if prev.is_none() {
            return Err(err(self.chars.len(), "SMILES ends without an atom"));
        }
        Ok(())
    }

    fn ring_label(&mut self) -> Result<u32, ParseError> {
        let offset = self.pos;
        let c = self.chars[self.pos];
        if c == '%' {
            let digits: String = self.chars[self.pos + 1..]
                .iter()
                .take(2)
                .take_while(|d| d.is_ascii_digit())
                .collect();
            if digits.len() != 2 {
                return Err(err(offset, "'%' must be followed by two digits"));
            }
            self.pos += 3;
            Ok(digits.parse().expect("two ascii digits"))
        } else {
            self.pos += 1;
            Ok(c.to_digit(10).expect("ascii digit"))
        }
    }

    fn ring_closure(
        &mut self,
        atom: usize,
        label: u32,
        bond: Option<BondOrder>,
        offset: usize,
    ) -> Result<(), ParseError> {
        match self.rings.remove(&label) {
            None => {
                self.rings.insert(label, RingOpen { atom, bond, offset });
                Ok(())
            }
            Some(open) => {
                if open.atom == atom {
                    return Err(err(offset, "ring closure bonds an atom to itself"));
                }
                let order = match (open.bond, bond) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(err(offset, "conflicting ring-closure bond orders"))
                    }
                    (Some(a), _) | (None, Some(a)) => a,
                    (None, None) => self.default_order(open.atom, atom),
                };
                self.add_bond(open.atom, atom, order, offset)
            }
        }
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder, offset: usize) -> Result<(), ParseError> {
        if self
            .bonds
            .iter()
            .any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a))
        {
            return Err(err(offset, "duplicate bond"));
        }
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }

    fn push_atom(&mut self, atom: Atom, bracketed: bool, offset: usize) -> usize {
        self.atoms.push(atom);
        self.bracketed.push(bracketed);
        self.atom_offsets.push(offset);
        self.atoms.len() - 1
    }

    fn atom(&mut self) -> Result<usize, ParseError> {
        let offset = self.pos;
        let c = self.chars[self.pos];
        if c == '[' {
            return self.bracket_atom();
        }
        let next = self.chars.get(self.pos + 1).copied();
        let (element, aromatic, len) = match (c, next) {
            ('C', Some('l')) => (Element::Cl, false, 2),
            ('B', Some('r')) => (Element::Br, false, 2),
            ('*', _) => (Element::Wildcard, false, 1),
            ('B', _) => (Element::B, false, 1),
            ('C', _) => (Element::C, false, 1),
            ('N', _) => (Element::N, false, 1),
            ('O', _) => (Element::O, false, 1),
            ('P', _) => (Element::P, false, 1),
            ('S', _) => (Element::S, false, 1),
            ('F', _) => (Element::F, false, 1),
            ('I', _) => (Element::I, false, 1),
            ('b', _) => (Element::B, true, 1),
            ('c', _) => (Element::C, true, 1),
            ('n', _) => (Element::N, true, 1),
            ('o', _) => (Element::O, true, 1),
            ('p', _) => (Element::P, true, 1),
            ('s', _) => (Element::S, true, 1),
            _ => return Err(err(offset, format!("unexpected character '{c}'"))),
        };
        self.pos += len;
        let mut atom = Atom::new(element);
        atom.aromatic = aromatic;
        Ok(self.push_atom(atom, false, offset))
    }

    fn bracket_atom(&mut self) -> Result<usize, ParseError> {
        let open = self.pos;
        let close = self.chars[open..]
            .iter()
            .position(|&c| c == ']')
            .map(|k| open + k)
            .ok_or_else(|| err(open, "unterminated bracket atom"))?;
        let body: Vec<char> = self.chars[open + 1..close].to_vec();
        let mut i = 0;
        let at = |i: usize| open + 1 + i;

        let digits: String = body.iter().take_while(|c| c.is_ascii_digit()).collect();
        i += digits.len();
        let isotope = if digits.is_empty() {
            None
        } else {
            Some(
                digits
                    .parse::<u16>()
                    .map_err(|_| err(at(0), "isotope out of range"))?,
            )
        };

        let first = *body.get(i).ok_or_else(|| err(at(i), "missing element symbol"))?;
        let (element, aromatic, len) = if first == '*' {
            (Element::Wildcard, false, 1)
        } else if first.is_ascii_lowercase() {
            let two: String = body[i..].iter().take(2).collect();
            match two.as_str() {
                "se" | "as" => return Err(err(at(i), format!("unknown element '{two}'"))),
                _ => {}
            }
            let sym = first.to_ascii_uppercase().to_string();
            let e = Element::from_symbol(&sym)
                .filter(|e| {
                    matches!(
                        e,
                        Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
                    )
                })
                .ok_or_else(|| err(at(i), format!("unknown aromatic element '{first}'")))?;
            (e, true, 1)
        } else if first.is_ascii_uppercase() {
            let second = body.get(i + 1).copied().filter(|c| c.is_ascii_lowercase());
            let two = second.map(|s| format!("{first}{s}"));
            match two.as_deref().and_then(Element::from_symbol) {
                Some(e) => (e, false, 2),
                None => {
                    let e = Element::from_symbol(&first.to_string())
                        .ok_or_else(|| err(at(i), format!("unknown element '{first}'")))?;
                    // e.g. [Xe] or [Na]: a lowercase follower that is not an H count
                    if let Some(s) = second {
                        if s != 'h' {
                            return Err(err(at(i), format!("unknown element '{first}{s}'")));
                        }
                    }
                    (e, false, 1)
                }
            }
        } else {
            return Err(err(at(i), format!("unexpected '{first}' in bracket atom")));
        };
        i += len;

        // chirality
        while body.get(i) == Some(&'@') {
            i += 1;
        }
        if body.get(i).is_some_and(|c| c.is_ascii_uppercase() && *c != 'H') {
            // @TH1, @AL2, @SP3 ... stereo classes
            while body
                .get(i)
                .is_some_and(|c| c.is_ascii_alphanumeric() && *c != 'H')
            {
                i += 1;
            }
        }

        let mut hcount = 0u8;
        if body.get(i) == Some(&'H') {
            i += 1;
            let d: String = body[i..].iter().take_while(|c| c.is_ascii_digit()).collect();
            i += d.len();
            hcount = if d.is_empty() {
                1
            } else {
                d.parse().map_err(|_| err(at(i), "hydrogen count out of range"))?
            };
        }

        let mut charge: i32 = 0;
        if let Some(&sign) = body.get(i).filter(|c| **c == '+' || **c == '-') {
            let unit = if sign == '+' { 1 } else { -1 };
            i += 1;
            let d: String = body[i..].iter().take_while(|c| c.is_ascii_digit()).collect();
            if !d.is_empty() {
                i += d.len();
                charge = unit * d.parse::<i32>().map_err(|_| err(at(i), "charge out of range"))?;
            } else {
                charge = unit;
                while body.get(i) == Some(&sign) {
                    charge += unit;
                    i += 1;
                }
            }
        }

        if body.get(i) == Some(&':') {
            i += 1;
            let d: String = body[i..].iter().take_while(|c| c.is_ascii_digit()).collect();
            if d.is_empty() {
                return Err(err(at(i), "atom class needs digits"));
            }
            i += d.len();
        }
        if i != body.len() {
            return Err(err(at(i), format!("unexpected '{}' in bracket atom", body[i])));
        }
        let charge = i8::try_from(charge).map_err(|_| err(open, "charge out of range"))?;

        self.pos = close + 1;
        let atom = Atom {
            element,
            formal_charge: charge,
            aromatic,
            implicit_h: if element == Element::Wildcard { 0 } else { hcount },
            isotope,
        };
        Ok(self.push_atom(atom, true, open))
    }

    /// Implicit hydrogens for unbracketed atoms: smallest default valence that
    /// accommodates the bond-order sum. Aromatic atoms contribute one extra
    /// unit and only use their lowest valence, falling back to zero hydrogens.
    fn assign_implicit_hydrogens(&mut self) -> Result<(), ParseError> {
        let mut order_sum = vec![0u32; self.atoms.len()];
        for b in &self.bonds {
            let units = match b.order {
                BondOrder::Single | BondOrder::Aromatic => 1,
                BondOrder::Double => 2,
                BondOrder::Triple => 3,
            };
            order_sum[b.a] += units;
            order_sum[b.b] += units;
        }
        // atoms, bracket flags, offsets and sums are parallel arrays
        #[allow(clippy::needless_range_loop)]
        for i in 0..self.atoms.len() {
            if self.bracketed[i] || self.atoms[i].element == Element::Wildcard {
                continue;
            }
            let atom = &self.atoms[i];
            let valences = atom.element.default_valences();
            let h = if atom.aromatic {
                let sum = order_sum[i] + 1;
                valences[0].saturating_sub(sum)
            } else {
                let sum = order_sum[i];
                match valences.iter().find(|&&v| v >= sum) {
                    Some(v) => v - sum,
                    None => {
                        return Err(err(
                            self.atom_offsets[i],
                            format!(
                                "valence violation: {} with bond order sum {sum}",
                                atom.element.symbol()
                            ),
                        ))
                    }
                }
            };
            self.atoms[i].implicit_h = h as u8;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offset_of(e: ParseError) -> usize {
        e.position()
    }

    #[test]
    fn methane() {
        let g = parse_smiles("C").unwrap();
        assert_eq!(g.atoms.len(), 1);
        assert_eq!(g.atoms[0].implicit_h, 4);
    }

    #[test]
    fn cyclopropane() {
        let g = parse_smiles("C1CC1").unwrap();
        assert_eq!(g.cycle_rank(), 1);
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Single));
        assert!(g.atoms.iter().all(|a| a.implicit_h == 2));
    }

    #[test]
    fn unmatched_ring_closure() {
        let e = parse_smiles("C1CC").unwrap_err();
        assert_eq!(offset_of(e), 1);
    }

    #[test]
    fn styrene_repeat_unit() {
        let g = parse_smiles("*C(c1ccccc1)C*").unwrap();
        let carbons = g.atoms.iter().filter(|a| a.element == Element::C).count();
        assert_eq!(carbons, 8);
        assert_eq!(g.wildcard_count(), 2);
        assert_eq!(g.cycle_rank(), 1);
        let h: u32 = g.atoms.iter().map(|a| u32::from(a.implicit_h)).sum();
        assert_eq!(h, 8);
        assert_eq!(g.atoms.iter().filter(|a| a.aromatic).count(), 6);
    }

    #[test]
    fn bonds_and_branches() {
        let g = parse_smiles("CC(=O)O").unwrap();
        assert_eq!(g.bonds.len(), 3);
        assert_eq!(g.bonds[1].order, BondOrder::Double);
        let hs: Vec<u8> = g.atoms.iter().map(|a| a.implicit_h).collect();
        assert_eq!(hs, vec![3, 0, 0, 1]);

        let g = parse_smiles("C#N").unwrap();
        assert_eq!(g.atoms[0].implicit_h, 1);
        assert_eq!(g.atoms[1].implicit_h, 0);
    }

    #[test]
    fn halogens_two_letter() {
        let g = parse_smiles("ClCBr").unwrap();
        let el: Vec<Element> = g.atoms.iter().map(|a| a.element).collect();
        assert_eq!(el, vec![Element::Cl, Element::C, Element::Br]);
        assert_eq!(g.atoms[1].implicit_h, 2);
    }

    #[test]
    fn bracket_atoms() {
        let g = parse_smiles("[NH4+]").unwrap();
        assert_eq!(g.atoms[0].formal_charge, 1);
        assert_eq!(g.atoms[0].implicit_h, 4);

        let g = parse_smiles("[13CH3][O-]").unwrap();
        assert_eq!(g.atoms[0].isotope, Some(13));
        assert_eq!(g.atoms[0].implicit_h, 3);
        assert_eq!(g.atoms[1].formal_charge, -1);
        assert_eq!(g.atoms[1].implicit_h, 0);

        let g = parse_smiles("[Fe++]").unwrap_err();
        assert!(matches!(g, ParseError::Smiles { .. }));

        let g = parse_smiles("[C@@H](F)(Cl)Br").unwrap();
        assert_eq!(g.atoms[0].implicit_h, 1);
        let g = parse_smiles("[CH2:12]").unwrap();
        assert_eq!(g.atoms[0].implicit_h, 2);
        let g = parse_smiles("[O--]").unwrap();
        assert_eq!(g.atoms[0].formal_charge, -2);
    }

    #[test]
    fn aromatic_hydrogens() {
        let g = parse_smiles("c1ccncc1").unwrap();
        let n = g.atoms.iter().find(|a| a.element == Element::N).unwrap();
        assert_eq!(n.implicit_h, 0);
        let c: u32 = g.atoms.iter().map(|a| u32::from(a.implicit_h)).sum();
        assert_eq!(c, 5);
        let g = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(g.atoms[3].implicit_h, 1);
        let g = parse_smiles("c1ccoc1").unwrap();
        assert_eq!(g.atoms[3].implicit_h, 0);
    }

    #[test]
    fn percent_ring_labels_and_ring_bond_orders() {
        let g = parse_smiles("C%10CC%10").unwrap();
        assert_eq!(g.cycle_rank(), 1);
        let g = parse_smiles("C=1CC1").unwrap();
        assert_eq!(g.bonds.last().unwrap().order, BondOrder::Double);
        assert!(parse_smiles("C=1CC#1").is_err());
    }

    #[test]
    fn stereo_marks_ignored() {
        let g = parse_smiles("F/C=C/F").unwrap();
        assert_eq!(g.bonds.len(), 3);
        assert_eq!(g.bonds[0].order, BondOrder::Single);
    }

    #[test]
    fn components() {
        let g = parse_smiles("C.C").unwrap();
        assert_eq!(g.component_count(), 2);
        assert!(parse_smiles(".C").is_err());
        assert!(parse_smiles("C.").is_err());
    }

    #[test]
    fn structural_errors_report_offsets() {
        assert_eq!(offset_of(parse_smiles("C(C").unwrap_err()), 1);
        assert_eq!(offset_of(parse_smiles("CC)C").unwrap_err()), 2);
        assert_eq!(offset_of(parse_smiles("CXC").unwrap_err()), 1);
        assert_eq!(offset_of(parse_smiles("C(C)(C)(C)(C)C").unwrap_err()), 0);
        assert_eq!(offset_of(parse_smiles("C()C").unwrap_err()), 1);
        assert!(parse_smiles("C11").is_err());
        assert!(parse_smiles("C12CC12").is_err());
        assert!(parse_smiles("C=").is_err());
        assert!(parse_smiles("").is_err());
        assert!(parse_smiles("[CH4").is_err());
        assert!(parse_smiles("=C").is_err());
    }

    #[test]
    fn wildcard_has_no_hydrogen() {
        let g = parse_smiles("*CC*").unwrap();
        assert_eq!(g.atoms[0].implicit_h, 0);
        assert_eq!(g.atoms[1].implicit_h, 2);
    }
}
