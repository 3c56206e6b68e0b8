//! Thermal energy of the two-site chain from QITE on every basis state,
//! exact and with 8000 shots per expectation.

use qitekit::measure::Backend;
use qitekit::oracle::exact_thermal;
use qitekit::pauli::{build_hamiltonian, ModelSpec};
use qitekit::qite::{QiteConfig, UnitaryMode};
use qitekit::thermal::{beta_grid, thermal_observable, TraceConfig};

fn main() -> qitekit::Result<()> {
    let h = build_hamiltonian(&ModelSpec::tfim(2, 1.0, 1.0))?;
    let qite = QiteConfig {
        delta_tau: 0.1,
        regularizer: 0.0,
        unitary_mode: UnitaryMode::MergedTwoSite,
        ..QiteConfig::default()
    };
    let trace = TraceConfig { betas: beta_grid(2.0, 0.1, 2), ..TraceConfig::default() };
    let ideal = thermal_observable(&h, &h, &trace, &qite, &Backend::exact())?;
    let shots = thermal_observable(&h, &h, &trace, &qite, &Backend::sampled(8000, 1))?;
    println!("{:>5} {:>9} {:>16} {:>9}", "beta", "ideal", "8000 shots", "exact");
    for (a, b) in ideal.points.iter().zip(&shots.points) {
        println!(
            "{:>5.1} {:>9.4} {:>9.4} ± {:.4} {:>9.4}",
            a.beta,
            a.value,
            b.value,
            b.variance.sqrt(),
            exact_thermal(&h, &h, a.beta)?
        );
    }
    Ok(())
}
