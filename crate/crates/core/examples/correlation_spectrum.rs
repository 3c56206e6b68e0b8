//! Dynamical correlation <Z0(t) Z0> of the two-site chain from the ancilla
//! circuit and its spectral density.

use std::f64::consts::PI;

use qitekit::measure::Backend;
use qitekit::oracle::transition_amplitudes;
use qitekit::pauli::{build_hamiltonian, ModelSpec, PauliString};
use qitekit::qite::{QiteConfig, UnitaryMode};
use qitekit::thermal::{dynamical_correlation, spectral_density, CorrelationConfig, TimeMode, TraceConfig};

fn main() -> qitekit::Result<()> {
    let h = build_hamiltonian(&ModelSpec::tfim(2, 3.0, 1.0))?;
    let z0 = PauliString::from_label("ZI")?;
    let qite = QiteConfig {
        delta_tau: 0.1,
        regularizer: 0.0,
        unitary_mode: UnitaryMode::MergedTwoSite,
        ..QiteConfig::default()
    };
    let mut corr = CorrelationConfig::new(z0, z0, PI / 16.0, 128);
    corr.time_mode = TimeMode::Kak;
    for beta in [0.2, 1.8] {
        let run = dynamical_correlation(&h, beta, &corr, &TraceConfig::default(), &qite, &Backend::sampled(8000, 4))?;
        let s = spectral_density(&run.series)?;
        println!("beta = {beta}");
        for (t, c) in run.series.times().iter().zip(&run.series.values).step_by(16) {
            println!("  t = {t:5.2}  C = {:+.4} {:+.4}i", c.re, c.im);
        }
        for (w, p) in s.peaks(0.05) {
            println!("  peak at ω = {w:+.2}, |S|² = {p:.4}");
        }
        for tr in transition_amplitudes(&z0, &h, beta)? {
            println!("  line at ω = {:+.3}, weight {:.4}", tr.frequency, tr.amplitude);
        }
    }
    Ok(())
}
