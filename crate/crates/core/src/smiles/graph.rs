//! Minimal SMILES graph reader: atoms, bonds, and implicit hydrogens.
//!
//! Only what molecular weight and the strict valence check need. Chirality
//! and cis/trans marks are read and discarded.

use std::collections::HashMap;

use super::vocab::{tokenize, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Element {
    H,
    B,
    C,
    N,
    O,
    F,
    Si,
    P,
    S,
    Cl,
    Br,
    Sn,
    I,
}

impl Element {
    pub fn from_symbol(s: &str) -> Option<Element> {
        Some(match s {
            "H" => Element::H,
            "B" => Element::B,
            "C" | "c" => Element::C,
            "N" | "n" => Element::N,
            "O" | "o" => Element::O,
            "F" => Element::F,
            "Si" => Element::Si,
            "P" | "p" => Element::P,
            "S" | "s" => Element::S,
            "Cl" => Element::Cl,
            "Br" => Element::Br,
            "Sn" => Element::Sn,
            "I" => Element::I,
            _ => return None,
        })
    }

    /// Allowed valences, smallest first.
    pub fn default_valences(self) -> &'static [u32] {
        match self {
            Element::B => &[3],
            Element::C => &[4],
            Element::N => &[3, 5],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
            Element::F | Element::Cl | Element::Br | Element::I => &[1],
            Element::H => &[1],
            Element::Si | Element::Sn => &[4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    fn valence_units(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    /// `None` for a bracket atom without an element symbol.
    pub element: Option<Element>,
    pub aromatic: bool,
    pub bracket: bool,
    /// Explicit hydrogen count (bracket atoms only).
    pub hcount: u32,
    pub charge: i32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

#[derive(Debug, Clone, Default)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl MolGraph {
    /// Sum of bond valence units at `atom`, aromatic bonds counted as 1.
    pub fn bond_units(&self, atom: usize) -> u32 {
        self.bonds
            .iter()
            .filter(|b| b.a == atom || b.b == atom)
            .map(|b| b.order.valence_units())
            .sum()
    }

    /// Implicit hydrogens for organic-subset atoms; bracket atoms carry theirs
    /// explicitly.
    pub fn implicit_hydrogens(&self, atom: usize) -> u32 {
        let a = &self.atoms[atom];
        let Some(el) = a.element else { return 0 };
        if a.bracket {
            return 0;
        }
        // An aromatic atom gives up one slot to the delocalized system.
        let used = self.bond_units(atom) + u32::from(a.aromatic);
        el.default_valences()
            .iter()
            .find(|&&v| v >= used)
            .map_or(0, |&v| v - used)
    }

    /// Atoms whose bond units exceed their largest allowed valence.
    pub fn valence_violations(&self) -> Vec<usize> {
        (0..self.atoms.len())
            .filter(|&i| {
                let a = &self.atoms[i];
                match a.element {
                    Some(el) if !a.bracket => {
                        let max = el.default_valences().iter().copied().max().unwrap_or(0);
                        self.bond_units(i) > max
                    }
                    _ => false,
                }
            })
            .collect()
    }

    /// Atoms that lie on at least one cycle.
    pub fn ring_atoms(&self) -> Vec<bool> {
        let n = self.atoms.len();
        let mut adj = vec![Vec::new(); n];
        for (e, b) in self.bonds.iter().enumerate() {
            adj[b.a].push((b.b, e));
            adj[b.b].push((b.a, e));
        }
        let mut on_ring = vec![false; n];
        // a bond is on a cycle iff its ends stay connected without it
        for (skip, b) in self.bonds.iter().enumerate() {
            if b.a == b.b {
                continue;
            }
            let mut seen = vec![false; n];
            let mut stack = vec![b.a];
            seen[b.a] = true;
            while let Some(u) = stack.pop() {
                for &(v, e) in &adj[u] {
                    if e != skip && !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            if seen[b.b] {
                on_ring[b.a] = true;
                on_ring[b.b] = true;
            }
        }
        on_ring
    }

    /// Aromatic atoms outside every ring; such strings cannot be kekulized.
    pub fn aromaticity_violations(&self) -> Vec<usize> {
        let ring = self.ring_atoms();
        (0..self.atoms.len())
            .filter(|&i| self.atoms[i].aromatic && !ring[i])
            .collect()
    }
}

fn bond_for(tok: &str) -> Option<BondOrder> {
    match tok {
        "-" | "/" | "\\" => Some(BondOrder::Single),
        "=" => Some(BondOrder::Double),
        "#" => Some(BondOrder::Triple),
        _ => None,
    }
}

fn is_aromatic_symbol(tok: &str) -> bool {
    matches!(tok, "c" | "n" | "o" | "p" | "s")
}

/// Parses bracket contents `[isotope? symbol chirality? H<n>? charge?]`.
fn parse_bracket(inner: &[&str], smiles: &str) -> Result<Atom> {
    let bad = || Error::InvalidSmiles(smiles.to_string());
    let mut i = 0;
    while i < inner.len() && inner[i].chars().all(|c| c.is_ascii_digit()) {
        i += 1;
    }
    let mut atom = Atom {
        element: None,
        aromatic: false,
        bracket: true,
        hcount: 0,
        charge: 0,
    };
    if let Some(sym) = inner.get(i) {
        if let Some(el) = Element::from_symbol(sym) {
            atom.element = Some(el);
            atom.aromatic = is_aromatic_symbol(sym);
            i += 1;
        }
    }
    if matches!(inner.get(i), Some(&"@") | Some(&"@@")) {
        i += 1;
    }
    // "[H]" is the element itself; a trailing H after an element is a count.
    if atom.element.is_some() && inner.get(i) == Some(&"H") {
        i += 1;
        atom.hcount = 1;
        if let Some(d) = inner.get(i).and_then(|t| t.parse::<u32>().ok()) {
            atom.hcount = d;
            i += 1;
        }
    }
    while let Some(&sign @ ("+" | "-")) = inner.get(i) {
        let unit = if sign == "+" { 1 } else { -1 };
        i += 1;
        if let Some(d) = inner.get(i).and_then(|t| t.parse::<i32>().ok()) {
            atom.charge += unit * d;
            i += 1;
        } else {
            atom.charge += unit;
        }
    }
    if i != inner.len() {
        return Err(bad());
    }
    Ok(atom)
}

/// Builds the atom/bond graph. Structural problems (unbalanced groups,
/// dangling bonds, unmatched ring labels) are reported as `InvalidSmiles`.
pub fn parse(smiles: &str) -> Result<MolGraph> {
    let vocab = Vocabulary::zinc();
    let seq = tokenize(smiles)?;
    let toks: Vec<&str> = seq.ids.iter().map(|&i| vocab.text(i).unwrap()).collect();
    let bad = || Error::InvalidSmiles(smiles.to_string());

    let mut g = MolGraph::default();
    let mut prev: Option<usize> = None;
    let mut branches: Vec<Option<usize>> = Vec::new();
    let mut pending: Option<BondOrder> = None;
    let mut rings: HashMap<&str, (usize, Option<BondOrder>)> = HashMap::new();

    let mut i = 0;
    while i < toks.len() {
        let tok = toks[i];
        let new_atom = if tok == "[" {
            let close = toks[i..].iter().position(|&t| t == "]").ok_or_else(bad)? + i;
            let atom = parse_bracket(&toks[i + 1..close], smiles)?;
            i = close;
            Some(atom)
        } else if let Some(el) = Element::from_symbol(tok) {
            Some(Atom {
                element: Some(el),
                aromatic: is_aromatic_symbol(tok),
                bracket: false,
                hcount: 0,
                charge: 0,
            })
        } else {
            None
        };

        if let Some(atom) = new_atom {
            let idx = g.atoms.len();
            let aromatic = atom.aromatic;
            g.atoms.push(atom);
            if let Some(p) = prev {
                let order = pending.take().unwrap_or(if aromatic && g.atoms[p].aromatic {
                    BondOrder::Aromatic
                } else {
                    BondOrder::Single
                });
                g.bonds.push(Bond { a: p, b: idx, order });
            } else if pending.is_some() {
                return Err(bad());
            }
            prev = Some(idx);
        } else if let Some(order) = bond_for(tok) {
            if prev.is_none() || pending.is_some() {
                return Err(bad());
            }
            pending = Some(order);
        } else if tok == "(" {
            if prev.is_none() {
                return Err(bad());
            }
            branches.push(prev);
        } else if tok == ")" {
            if pending.is_some() {
                return Err(bad());
            }
            prev = branches.pop().ok_or_else(bad)?;
        } else if tok.chars().all(|c| c.is_ascii_digit()) {
            let cur = prev.ok_or_else(bad)?;
            match rings.remove(tok) {
                Some((open, open_order)) => {
                    if open == cur {
                        return Err(bad());
                    }
                    let order = pending.take().or(open_order).unwrap_or(
                        if g.atoms[open].aromatic && g.atoms[cur].aromatic {
                            BondOrder::Aromatic
                        } else {
                            BondOrder::Single
                        },
                    );
                    g.bonds.push(Bond {
                        a: open,
                        b: cur,
                        order,
                    });
                }
                None => {
                    rings.insert(tok, (cur, pending.take()));
                }
            }
        } else {
            // stray charge, chirality, or ] outside a bracket
            return Err(bad());
        }
        i += 1;
    }
    if pending.is_some() || !branches.is_empty() || !rings.is_empty() || g.atoms.is_empty() {
        return Err(bad());
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hydrogens(s: &str) -> Vec<u32> {
        let g = parse(s).unwrap();
        (0..g.atoms.len()).map(|i| g.implicit_hydrogens(i)).collect()
    }

    #[test]
    fn implicit_hydrogens_follow_default_valence() {
        assert_eq!(hydrogens("C"), [4]);
        assert_eq!(hydrogens("CC=O"), [3, 1, 0]);
        assert_eq!(hydrogens("C#N"), [1, 0]);
        assert_eq!(hydrogens("c1ccccc1"), [1; 6]);
        assert_eq!(hydrogens("c1ccncc1"), [1, 1, 1, 0, 1, 1]);
        assert_eq!(hydrogens("CCl"), [3, 0]);
        assert_eq!(hydrogens("CS(=O)(=O)C"), [3, 0, 0, 0, 3]);
    }

    #[test]
    fn bracket_atoms_take_explicit_counts() {
        let g = parse("[NH3+]C").unwrap();
        assert_eq!(g.atoms[0].hcount, 3);
        assert_eq!(g.atoms[0].charge, 1);
        let g = parse("C[C@@H](O)F").unwrap();
        assert_eq!(g.atoms[1].hcount, 1);
        let g = parse("[H]").unwrap();
        assert_eq!(g.atoms[0].element, Some(Element::H));
        assert_eq!(g.atoms[0].hcount, 0);
        let g = parse("[O-]").unwrap();
        assert_eq!(g.atoms[0].charge, -1);
    }

    #[test]
    fn ring_closure_bonds_are_added() {
        let g = parse("C1CCCCC1").unwrap();
        assert_eq!(g.bonds.len(), 6);
        let g = parse("C=1CCCCC=1").unwrap();
        assert_eq!(g.bonds.last().unwrap().order, BondOrder::Double);
    }

    #[test]
    fn structural_errors() {
        for s in ["=C", "C=", "(C)", "C(", "C)", "C1CC", "C11", "C+", "[C", "c1ccccc"] {
            assert!(parse(s).is_err(), "{s}");
        }
    }

    #[test]
    fn valence_violation_detected() {
        assert!(parse("C(C)(C)(C)(C)C").unwrap().valence_violations() == vec![0]);
        assert!(parse("O=O").unwrap().valence_violations().is_empty());
        assert_eq!(parse("CO(C)C").unwrap().valence_violations(), vec![1]);
    }
}
