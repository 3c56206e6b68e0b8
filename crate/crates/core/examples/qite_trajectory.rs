//! Imaginary-time trajectory of a four-site Ising chain from |0001>,
//! compared with exact evolution.

use qitekit::oracle::{exact_ite_with, EigenSystem};
use qitekit::pauli::{build_hamiltonian, ModelSpec};
use qitekit::qite::{run_qite, QiteConfig};
use qitekit::statesim::StateVector;
use qitekit::symmetry::find_z2_symmetries;

fn main() -> qitekit::Result<()> {
    let h = build_hamiltonian(&ModelSpec::tfim(4, 1.0, 1.0))?;
    let psi = StateVector::basis_state(4, 0b1000);
    let cfg = QiteConfig { delta_tau: 0.01, n_steps: 100, domain: 2, ..QiteConfig::default() };
    let traj = run_qite(&psi, &h, &cfg, &find_z2_symmetries(&h))?;

    let es = EigenSystem::of(&h)?;
    let hm = h.to_matrix()?;
    println!("{:>6} {:>10} {:>10}", "tau", "qite", "exact");
    for (tau, e) in traj.energy_curve().into_iter().step_by(10) {
        let phi = exact_ite_with(&es, &psi, tau)?;
        let v = nalgebra::DVector::from_column_slice(phi.amplitudes());
        let exact = (v.adjoint() * &hm * &v)[(0, 0)].re;
        println!("{tau:>6.2} {e:>10.5} {exact:>10.5}");
    }
    println!("ground energy {:.5}, pool size {}", es.values[0], traj.pools[0].len());
    Ok(())
}
