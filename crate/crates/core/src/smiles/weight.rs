use super::graph::{self, Element};
use super::validity::check_validity;
use crate::error::{Error, Result};

/// Standard atomic weights (IUPAC 2021 conventional values), g/mol.
pub fn atomic_weight(el: Element) -> f64 {
    match el {
        Element::H => 1.008,
        Element::B => 10.81,
        Element::C => 12.011,
        Element::N => 14.007,
        Element::O => 15.999,
        Element::F => 18.998_403_162,
        Element::Si => 28.085,
        Element::P => 30.973_761_998,
        Element::S => 32.06,
        Element::Cl => 35.45,
        Element::Br => 79.904,
        Element::Sn => 118.71,
        Element::I => 126.904_47,
    }
}

/// Average molecular weight with implicit hydrogens filled in.
pub fn molecular_weight(s: &str) -> Result<f64> {
    molecular_weight_with(s, false)
}

/// In `strict` mode a bracket atom without a known element is an error;
/// otherwise it contributes only its explicit hydrogens.
pub fn molecular_weight_with(s: &str, strict: bool) -> Result<f64> {
    if !check_validity(s).valid {
        return Err(Error::InvalidSmiles(s.to_string()));
    }
    let g = graph::parse(s)?;
    let h = atomic_weight(Element::H);
    let mut total = 0.0;
    for (i, atom) in g.atoms.iter().enumerate() {
        match atom.element {
            Some(el) => total += atomic_weight(el),
            None if strict => {
                return Err(Error::UnsupportedAtom {
                    smiles: s.to_string(),
                    atom: format!("atom {i}"),
                })
            }
            None => {}
        }
        total += h * f64::from(atom.hcount + g.implicit_hydrogens(i));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: weight from an explicit formula.
    fn formula(counts: &[(Element, u32)]) -> f64 {
        counts
            .iter()
            .map(|&(el, n)| atomic_weight(el) * f64::from(n))
            .sum()
    }

    #[test]
    fn small_molecules() {
        assert!((molecular_weight("C").unwrap() - 16.043).abs() < 1e-9);
        assert!((molecular_weight("O").unwrap() - 18.015).abs() < 1e-9);
        assert!((molecular_weight("[H]").unwrap() - 1.008).abs() < 1e-12);
    }

    #[test]
    fn matches_formula_oracle() {
        use Element::*;
        let cases: &[(&str, &[(Element, u32)])] = &[
            ("c1ccccc1", &[(C, 6), (H, 6)]),
            ("CCO", &[(C, 2), (H, 6), (O, 1)]),
            ("CC(=O)O", &[(C, 2), (H, 4), (O, 2)]),
            ("c1ccncc1", &[(C, 5), (H, 5), (N, 1)]),
            ("Clc1ccccc1", &[(C, 6), (H, 5), (Cl, 1)]),
            ("C[NH3+]", &[(C, 1), (H, 6), (N, 1)]),
            ("c1ccc2ccccc2c1", &[(C, 10), (H, 8)]),
            ("c1ccoc1", &[(C, 4), (H, 4), (O, 1)]),
            ("CS(=O)(=O)C", &[(C, 2), (H, 6), (S, 1), (O, 2)]),
            ("C#N", &[(C, 1), (H, 1), (N, 1)]),
            // C20H21NO4 by hand count
            (
                "COc1ccc(N2CC(C(=O)Oc3cc(C)ccc3C)CC2=O)cc1",
                &[(C, 20), (H, 21), (N, 1), (O, 4)],
            ),
        ];
        for (s, f) in cases {
            let got = molecular_weight(s).unwrap();
            assert!((got - formula(f)).abs() < 1e-9, "{s}: {got} vs {}", formula(f));
        }
    }

    #[test]
    fn invalid_input_is_rejected() {
        assert!(matches!(molecular_weight("C(C"), Err(Error::InvalidSmiles(_))));
        assert!(matches!(molecular_weight(""), Err(Error::InvalidSmiles(_))));
    }

    #[test]
    fn strict_mode_rejects_element_free_brackets() {
        assert!(molecular_weight_with("C[+]", false).is_ok());
        assert!(matches!(
            molecular_weight_with("C[+]", true),
            Err(Error::UnsupportedAtom { .. })
        ));
    }
}
