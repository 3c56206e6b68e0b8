//! Thermal energy from a random subset of basis states against the full
//! trace, four-site chain.

use qitekit::measure::Backend;
use qitekit::oracle::exact_thermal;
use qitekit::pauli::{build_hamiltonian, ModelSpec};
use qitekit::qite::QiteConfig;
use qitekit::thermal::{beta_grid, thermal_observable, TraceConfig, TraceMode};

fn main() -> qitekit::Result<()> {
    let h = build_hamiltonian(&ModelSpec::tfim(4, 3.0, 1.0))?;
    let qite = QiteConfig { delta_tau: 0.05, ..QiteConfig::default() };
    let betas = beta_grid(1.0, 0.05, 2);
    let full = thermal_observable(&h, &h, &TraceConfig { betas: betas.clone(), ..TraceConfig::default() }, &qite, &Backend::exact())?;
    let stochastic: Vec<_> = [10, 5]
        .into_iter()
        .map(|n_samples| {
            let t = TraceConfig { mode: TraceMode::Stochastic, n_samples, seed: 3, betas: betas.clone() };
            thermal_observable(&h, &h, &t, &qite, &Backend::exact())
        })
        .collect::<qitekit::Result<_>>()?;
    println!("{:>5} {:>9} {:>18} {:>18} {:>9}", "beta", "full", "10 states", "5 states", "exact");
    for (k, f) in full.points.iter().enumerate() {
        let (a, b) = (stochastic[0].points[k], stochastic[1].points[k]);
        println!(
            "{:>5.1} {:>9.4} {:>9.4} ± {:<6.4} {:>9.4} ± {:<6.4} {:>9.4}",
            f.beta,
            f.value,
            a.value,
            a.variance.sqrt(),
            b.value,
            b.variance.sqrt(),
            exact_thermal(&h, &h, f.beta)?
        );
    }
    Ok(())
}
