//! Shrinks QITE operator pools with the odd-Y rule and the Z2 symmetries of
//! the Hamiltonian.
//!
//! ```text
//! cargo run --example pauli_reduction
//! ```

use qitekit::pauli::{build_hamiltonian, pauli_pool, ModelSpec};
use qitekit::symmetry::{find_z2_symmetries, reduce_pool, StabilizerGroup};

fn main() -> qitekit::Result<()> {
    for (name, spec, domain) in [
        ("tfim", ModelSpec::tfim(4, 1.0, 1.0), 2),
        ("tfim", ModelSpec::tfim(4, 1.0, 1.0), 4),
        ("xxz", ModelSpec::xxz(4, 1.0, 1.0), 4),
    ] {
        let h = build_hamiltonian(&spec)?;
        let sym = find_z2_symmetries(&h);
        let pool = pauli_pool(&h, domain)?;
        let real = reduce_pool(&pool, &StabilizerGroup::empty(4), true);
        let reduced = reduce_pool(&pool, &sym, true);
        let gens: Vec<String> = sym.generators().iter().map(|g| g.label()).collect();
        println!("{name} D={domain}: symmetries {gens:?}");
        println!("  {} strings, {} with odd Y, {} after symmetry", pool.len(), real.len(), reduced.len());
        let labels: Vec<String> = reduced.iter().map(|p| p.label()).collect();
        println!("  kept: {}", labels.join(" "));
    }
    Ok(())
}
