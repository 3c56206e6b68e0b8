//! Thermal energy of the four-site chain under gate and readout noise, with
//! each combination of readout correction and symmetry post-selection.

use qitekit::measure::{Backend, NoiseParams, ReadoutMitigation};
use qitekit::oracle::exact_thermal;
use qitekit::pauli::{build_hamiltonian, ModelSpec};
use qitekit::qite::QiteConfig;
use qitekit::thermal::{beta_grid, thermal_observable, TraceConfig};

fn main() -> qitekit::Result<()> {
    let h = build_hamiltonian(&ModelSpec::tfim(4, 3.0, 1.0))?;
    let qite = QiteConfig { delta_tau: 0.05, ..QiteConfig::default() };
    let trace = TraceConfig { betas: beta_grid(0.5, 0.05, 1), ..TraceConfig::default() };
    let calibrated = ReadoutMitigation::Calibrated { shots_per_state: 1000 };
    for (name, post_select, readout) in [
        ("raw", false, ReadoutMitigation::Off),
        ("readout", false, calibrated),
        ("post-select", true, ReadoutMitigation::Off),
        ("both", true, calibrated),
    ] {
        let backend = Backend {
            shots: Some(8000),
            noise: Some(NoiseParams::default()),
            post_select,
            readout,
            seed: 2,
            ..Backend::default()
        };
        let s = thermal_observable(&h, &h, &trace, &qite, &backend)?;
        let err: f64 = s.points.iter().map(|p| (p.value - exact_thermal(&h, &h, p.beta).unwrap()).abs()).sum::<f64>()
            / s.points.len() as f64;
        let last = s.points.last().unwrap();
        println!("{name:>12}: mean |ΔE| {err:.3}, E(β = {}) = {:.3}", last.beta, last.value);
    }
    Ok(())
}
