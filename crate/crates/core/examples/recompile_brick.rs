//! Fits brick circuits of U3 and CNOT gates to the exact propagator
//! exp(-iHt) of a three-site chain. The fit runs on a maximally entangled
//! state with a reference register, so the fidelity is |Tr(V†U)|² / 64.

use qitekit::oracle::EigenSystem;
use qitekit::pauli::{build_hamiltonian, ModelSpec};
use qitekit::recompile::{recompile_on_state, BrickTemplate, GateFamily, RecompileOptions};
use qitekit::statesim::StateVector;

fn main() -> qitekit::Result<()> {
    let h = build_hamiltonian(&ModelSpec::tfim(3, 1.0, 1.0))?;
    let u = EigenSystem::of(&h)?.propagator(0.3);
    let phi = StateVector::maximally_entangled(3)?;
    for rounds in 1..=4 {
        let template = BrickTemplate::new(3, rounds, GateFamily::U3)?;
        let fit = recompile_on_state(&u, &phi, &template, &RecompileOptions { seed: 11, ..RecompileOptions::default() })?;
        println!(
            "{rounds} rounds: {} parameters, {} CNOTs, fidelity {:.6} after {} iterations",
            template.n_params(),
            template.circuit(&fit.parameters)?.cnot_count(),
            fit.fidelity,
            fit.iterations
        );
    }
    Ok(())
}
