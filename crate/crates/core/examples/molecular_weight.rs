//! Average molecular weight with implicit hydrogens.

use mdvae::smiles::molecular_weight;

fn main() {
    let inputs: Vec<String> = std::env::args().skip(1).collect();
    let inputs = if inputs.is_empty() {
        ["C", "CCO", "c1ccccc1", "CC(=O)Oc1ccccc1C(=O)O", "C[NH3+]"].map(String::from).to_vec()
    } else {
        inputs
    };
    for s in &inputs {
        match molecular_weight(s) {
            Ok(w) => println!("{s:<30} {w:>10.3} g/mol"),
            Err(e) => println!("{s:<30} {e}"),
        }
    }
}
