//! Acceptance suite: one PASS/FAIL line per headline criterion.
//!
//! Runs as a plain binary so that every criterion is evaluated and printed
//! even when an earlier one fails. The process exits zero unless
//! `ACCEPTANCE_STRICT` is set, in which case any FAIL makes it exit one.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use qitekit::linalg::{haar_unitary, hermitian_eigen, CMat};
use qitekit::measure::{Backend, NoiseParams, ReadoutMitigation};
use qitekit::mitigation::{phase_scale_correct, MitigationOrder};
use qitekit::oracle::{exact_corr_series_with, exact_ite_with, exact_thermal, transition_amplitudes_with, EigenSystem};
use qitekit::pauli::{build_hamiltonian, pauli_pool, ModelSpec, PauliString, PauliSum};
use qitekit::qite::{run_qite, PoolReduction, QiteConfig, QiteTrajectory, UnitaryMode};
use qitekit::recompile::{kak_decompose, reconstruction_error};
use qitekit::statesim::StateVector;
use qitekit::symmetry::{find_z2_symmetries, reduce_pool, StabilizerGroup};
use qitekit::thermal::{
    beta_grid, dynamical_correlation, spectral_density, thermal_observable, thermal_observables, CorrelationConfig,
    CorrelationSeries, Spectrum, TimeMode, TraceConfig, TraceMode,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn tfim(n: usize, j: f64, h: f64) -> PauliSum {
    build_hamiltonian(&ModelSpec::tfim(n, j, h)).unwrap()
}

fn ps(s: &str) -> PauliString {
    PauliString::from_label(s).unwrap()
}

fn energy(h: &CMat, psi: &StateVector) -> f64 {
    let v = nalgebra::DVector::from_column_slice(psi.amplitudes());
    (v.adjoint() * h * &v)[(0, 0)].re
}

fn superposition(n: usize, basis: &[usize]) -> StateVector {
    let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
    for &b in basis {
        amps[b] = Complex64::new(1.0 / (basis.len() as f64).sqrt(), 0.0);
    }
    StateVector::from_amplitudes(n, amps).unwrap()
}

fn max_abs(a: impl Iterator<Item = f64>) -> f64 {
    a.map(f64::abs).fold(0.0, f64::max)
}

/// Reduced vs unreduced trajectories, and both against exact evolution.
fn reduction_case(h: &PauliSum, psi: &StateVector, cfg: &QiteConfig) -> (f64, f64) {
    let sym = find_z2_symmetries(h);
    let run = |reduction| {
        let c = QiteConfig { pool_reduction: reduction, ..cfg.clone() };
        run_qite(psi, h, &c, &sym).unwrap()
    };
    let (red, raw): (QiteTrajectory, QiteTrajectory) = (run(PoolReduction::Full), run(PoolReduction::None));
    let es = EigenSystem::of(h).unwrap();
    let hm = h.to_matrix().unwrap();
    let (a, b) = (red.energy_curve(), raw.energy_curve());
    let equiv = max_abs(a.iter().zip(&b).map(|(x, y)| x.1 - y.1));
    let exact = max_abs(
        a.iter().chain(&b).map(|(tau, e)| e - energy(&hm, &exact_ite_with(&es, psi, *tau).unwrap())),
    );
    (equiv, exact)
}

fn pauli_reduction_equivalence() -> Outcome {
    let start = Instant::now();
    let h_tfim = tfim(4, 1.0, 1.0);
    let cfg_tfim = QiteConfig { delta_tau: 0.01, n_steps: 100, domain: 2, regularizer: 0.2, ..QiteConfig::default() };
    let (eq_a, ex_a) = reduction_case(&h_tfim, &StateVector::basis_state(4, 8), &cfg_tfim);
    let h_xxz = build_hamiltonian(&ModelSpec::xxz(4, 1.0, 1.0)).unwrap();
    let cfg_xxz = QiteConfig {
        delta_tau: 0.03,
        n_steps: 33,
        domain: 4,
        regularizer: 0.0,
        unitary_mode: UnitaryMode::Exact,
        ..QiteConfig::default()
    };
    let (eq_b, ex_b) = reduction_case(&h_xxz, &superposition(4, &[5, 10]), &cfg_xxz);
    let secs = start.elapsed().as_secs_f64();
    let ok = eq_a <= 1e-6 && eq_b <= 1e-6 && ex_a <= 5e-3 && ex_b <= 5e-3 && secs < 60.0;
    (
        ok,
        format!(
            "tfim reduced-vs-full {eq_a:.1e}, vs exact {ex_a:.2e}; xxz reduced-vs-full {eq_b:.1e}, vs exact {ex_b:.2e} \
             (limits 1e-6, 5e-3); {secs:.1}s"
        ),
    )
}

fn pool_cardinalities() -> Outcome {
    let count = |h: &PauliSum, d: usize, sym: &StabilizerGroup| {
        let pool = pauli_pool(h, d).unwrap();
        (pool.len(), reduce_pool(&pool, sym, true).len())
    };
    let t = tfim(4, 1.0, 1.0);
    let tfim_d2 = count(&t, 2, &find_z2_symmetries(&t));
    let t_odd = count(&t, 2, &StabilizerGroup::empty(4)).1;
    let x = build_hamiltonian(&ModelSpec::xxz(4, 1.0, 1.0)).unwrap();
    let xxz_d4 = count(&x, 4, &find_z2_symmetries(&x));
    let x_odd = count(&x, 4, &StabilizerGroup::empty(4)).1;
    let zzzz = StabilizerGroup::new(4, vec![ps("ZZZZ")]).unwrap();
    let odd_y = count(&t, 4, &zzzz);
    let ok = (t_odd, tfim_d2.1, x_odd, xxz_d4.1, odd_y.1) == (16, 6, 120, 6, 28);
    (
        ok,
        format!(
            "tfim D=2 {t_odd}->{}, xxz D=4 {x_odd}->{}, odd-Y D=4 with Z⊗4 -> {} (want 16->6, 120->6, 28)",
            tfim_d2.1, xxz_d4.1, odd_y.1
        ),
    )
}

fn two_site_qite(dt: f64) -> QiteConfig {
    QiteConfig { delta_tau: dt, domain: 2, regularizer: 0.0, unitary_mode: UnitaryMode::MergedTwoSite, ..QiteConfig::default() }
}

/// Operator norm of `i[A, B]` for Hermitian `A`, `B`.
fn commutator_norm(a: &PauliSum, b: &PauliSum) -> f64 {
    let (a, b) = (a.to_matrix().unwrap(), b.to_matrix().unwrap());
    let c = (&a * &b - &b * &a) * Complex64::new(0.0, 1.0);
    let (vals, _) = hermitian_eigen(&c);
    max_abs(vals.into_iter())
}

fn thermal_energy_two_site() -> Outcome {
    let h = tfim(2, 1.0, 1.0);
    let dt = 0.1;
    let beta_max = 2.0;
    let trace = TraceConfig { betas: beta_grid(beta_max, dt, 1), ..TraceConfig::default() };
    let q = two_site_qite(dt);
    let hx = PauliSum::from_terms(2, [(1.0, ps("XX"))]).unwrap();
    let hz = PauliSum::from_terms(2, [(1.0, ps("ZI")), (1.0, ps("IZ"))]).unwrap();
    let bound = 0.5 * dt * commutator_norm(&hx, &hz) * beta_max / 2.0;
    let exact = |b: f64| exact_thermal(&h, &h, b).unwrap();
    let s = thermal_observable(&h, &h, &trace, &q, &Backend::exact()).unwrap();
    let dev = max_abs(s.points.iter().map(|p| p.value - exact(p.beta)));
    let sampled = thermal_observable(&h, &h, &trace, &q, &Backend::sampled(8000, 11)).unwrap();
    let nonzero: Vec<_> = sampled.points.iter().filter(|p| p.beta > 0.0).collect();
    let mape = 100.0 * nonzero.iter().map(|p| ((p.value - exact(p.beta)) / exact(p.beta)).abs()).sum::<f64>()
        / nonzero.len() as f64;
    let ok = dev <= 2.0 * bound && mape <= 4.0;
    (ok, format!("noiseless max dev {dev:.4} (limit {:.3}); 8000-shot MAPE {mape:.2}% (limit 4%)", 2.0 * bound))
}

fn symmetry_relations() -> Outcome {
    let q = two_site_qite(0.1);
    let trace = TraceConfig { betas: (0..10).map(|k| 0.2 * k as f64).collect(), ..TraceConfig::default() };
    let x01 = PauliSum::from_terms(2, [(1.0, ps("XX"))]).unwrap();
    let mut worst: f64 = 0.0;
    for (k, j) in [1.0, 3.0].into_iter().enumerate() {
        let run = |jj: f64, seed: u64| {
            let h = tfim(2, jj, 1.0);
            thermal_observables(&[h.clone(), x01.clone()], &h, &trace, &q, &Backend::sampled(8000, seed)).unwrap()
        };
        let (a, b) = (run(j, 100 + k as u64), run(-j, 200 + k as u64));
        for i in 0..trace.betas.len() {
            for (obs, sign) in [(0, -1.0), (1, 1.0)] {
                let (pa, pb) = (a[obs].points[i], b[obs].points[i]);
                let diff = (pa.value + sign * pb.value).abs();
                let sigma = (pa.variance + pb.variance).sqrt();
                let z = if diff < 1e-12 { 0.0 } else { diff / sigma };
                worst = worst.max(z);
            }
        }
    }
    (worst <= 3.0, format!("largest deviation {worst:.2} combined σ over J=±1, ±3 and 10 β points (limit 3)"))
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

fn mitigation_ordering() -> Outcome {
    let h = tfim(4, 3.0, 1.0);
    let dt = 0.05;
    let trace = TraceConfig { betas: beta_grid(0.5, dt, 1), ..TraceConfig::default() };
    let q = QiteConfig { delta_tau: dt, domain: 2, unitary_mode: UnitaryMode::Recompiled, ..QiteConfig::default() };
    let calibrated = ReadoutMitigation::Calibrated { shots_per_state: 1000 };
    let settings = [(false, ReadoutMitigation::Off), (false, calibrated), (true, ReadoutMitigation::Off), (true, calibrated)];
    let mut metric = vec![Vec::new(); 4];
    for rep in 0..5u64 {
        for (k, &(post_select, readout)) in settings.iter().enumerate() {
            let b = Backend {
                shots: Some(8000),
                noise: Some(NoiseParams::default()),
                post_select,
                readout,
                order: MitigationOrder::default(),
                seed: 1000 + rep,
            };
            let s = thermal_observable(&h, &h, &trace, &q, &b).unwrap();
            let err = s.points.iter().map(|p| (p.value - exact_thermal(&h, &h, p.beta).unwrap()).abs()).sum::<f64>()
                / s.points.len() as f64;
            metric[k].push(err);
        }
    }
    let stats: Vec<(f64, f64)> = metric.iter().map(|m| mean_sd(m)).collect();
    let se = |k: usize| stats[k].1 / 5f64.sqrt();
    let (raw, ro, ps_, both) = (stats[0].0, stats[1].0, stats[2].0, stats[3].0);
    let best_single = if ro <= ps_ { 1 } else { 2 };
    let single = stats[best_single].0;
    let ok1 = both <= single + 3.0 * (se(3).powi(2) + se(best_single).powi(2)).sqrt();
    let ok2 = ro.max(ps_) <= raw + 3.0 * (se(0).powi(2) + se(1).max(se(2)).powi(2)).sqrt();
    (
        ok1 && ok2,
        format!("mean |ΔE| raw {raw:.3}, readout {ro:.3}, post-select {ps_:.3}, both {both:.3} (5 repetitions)"),
    )
}

fn recompilation() -> Outcome {
    let h = tfim(4, 3.0, 1.0);
    let sym = find_z2_symmetries(&h);
    let mut qite_fits = (0, 0);
    let start = Instant::now();
    for domain in [2, 4] {
        let q = QiteConfig {
            delta_tau: 0.05,
            n_steps: 10,
            domain,
            unitary_mode: UnitaryMode::Recompiled,
            ..QiteConfig::default()
        };
        for i in 0..16 {
            let t = run_qite(&StateVector::basis_state(4, i), &h, &q, &sym).unwrap();
            let (a, b) = t.fit_success(0.999).unwrap();
            qite_fits = (qite_fits.0 + a, qite_fits.1 + b);
        }
    }
    let qite_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let mut corr = CorrelationConfig::new(ps("ZIII"), ps("ZIII"), PI / 16.0, 128);
    corr.time_mode = TimeMode::Recompiled;
    let trace = TraceConfig { mode: TraceMode::Stochastic, n_samples: 2, seed: 5, ..TraceConfig::default() };
    let q = QiteConfig { delta_tau: 0.05, unitary_mode: UnitaryMode::Recompiled, ..QiteConfig::default() };
    let run = dynamical_correlation(&h, 0.2, &corr, &trace, &q, &Backend::exact()).unwrap();
    let rt_ok = run.fit_fidelities.iter().filter(|f| **f >= 0.999).count();
    let rt_total = run.fit_fidelities.len();
    let rt_mean = run.fit_fidelities.iter().sum::<f64>() / rt_total as f64;
    let rt_secs = start.elapsed().as_secs_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let kak_worst = (0..1000)
        .map(|_| {
            let u = haar_unitary(4, &mut rng);
            reconstruction_error(&u, &kak_decompose(&u).unwrap().circuit()).unwrap()
        })
        .fold(0.0, f64::max);
    let qite_rate = qite_fits.0 as f64 / qite_fits.1 as f64;
    let rt_rate = rt_ok as f64 / rt_total as f64;
    let ok = qite_rate >= 0.95 && rt_rate >= 0.95 && kak_worst <= 1e-8;
    (
        ok,
        format!(
            "QITE steps {}/{} at F≥0.999 ({qite_secs:.0}s); real-time {rt_ok}/{rt_total} (mean F {rt_mean:.4}, \
             {rt_secs:.0}s); KAK worst error {kak_worst:.1e} over 1000 unitaries",
            qite_fits.0, qite_fits.1
        ),
    )
}

fn stochastic_trace() -> Outcome {
    let h = tfim(4, 3.0, 1.0);
    let dt = 0.05;
    let betas = beta_grid(0.5, dt, 1);
    let q = QiteConfig { delta_tau: dt, unitary_mode: UnitaryMode::Recompiled, ..QiteConfig::default() };
    let b = Backend::sampled(8000, 77);
    let full = thermal_observable(&h, &h, &TraceConfig { betas: betas.clone(), ..TraceConfig::default() }, &q, &b).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let t = TraceConfig { mode: TraceMode::Stochastic, n_samples: 10, seed, betas: betas.clone() };
        let s = thermal_observable(&h, &h, &t, &q, &b).unwrap();
        for (a, f) in s.points.iter().zip(&full.points) {
            worst = worst.max((a.value - f.value).abs() / a.variance.sqrt());
        }
    }
    (worst <= 2.0, format!("largest |stochastic − full| is {worst:.2} σ over 5 seeds and β ≤ 0.5 (limit 2)"))
}

fn series_of(values: Vec<Complex64>, beta: f64, dt: f64) -> CorrelationSeries {
    let n = values.len();
    CorrelationSeries::new(beta, dt, values, vec![0.0; n], vec![0.0; n]).unwrap()
}

/// Peak frequencies matched one-to-one to `targets` within one bin.
fn peaks_match(s: &Spectrum, targets: &[f64]) -> bool {
    let peaks: Vec<f64> = s.peaks(0.05).into_iter().map(|p| p.0).collect();
    let tol = s.resolution() + 1e-9;
    peaks.len() == targets.len()
        && targets.iter().all(|t| peaks.iter().any(|p| (p - t).abs() <= tol))
        && peaks.iter().all(|p| targets.iter().any(|t| (p - t).abs() <= tol))
}

fn correlation_and_spectrum() -> Outcome {
    let h = tfim(2, 3.0, 1.0);
    let es = EigenSystem::of(&h).unwrap();
    let z0 = ps("ZI");
    let dt = PI / 16.0;
    let mut corr = CorrelationConfig::new(z0, z0, dt, 128);
    corr.time_mode = TimeMode::Kak;
    let q = two_site_qite(0.1);
    let trace = TraceConfig::default();
    let mut worst: f64 = 0.0;
    for (k, beta) in [0.2, 1.8].into_iter().enumerate() {
        let run = dynamical_correlation(&h, beta, &corr, &trace, &q, &Backend::sampled(8000, 300 + k as u64)).unwrap();
        let exact = exact_corr_series_with(&es, &z0, &z0, beta, &corr.times()).unwrap();
        let d = max_abs(run.series.values.iter().zip(&exact).flat_map(|(a, b)| [a.re - b.re, a.im - b.im]));
        worst = worst.max(d);
    }

    let run = dynamical_correlation(&h, 0.2, &corr, &trace, &q, &Backend::sampled(8000, 310)).unwrap();
    let spec = spectral_density(&run.series).unwrap();
    let amps = transition_amplitudes_with(&es, &z0, 0.2).unwrap();
    // Same relative power threshold as the peak finder.
    let top = amps.iter().map(|t| t.amplitude.powi(2)).fold(0.0, f64::max);
    let lines: Vec<f64> = amps.iter().filter(|t| t.amplitude.powi(2) >= 0.05 * top).map(|t| t.frequency).collect();
    let bins_ok = peaks_match(&spec, &lines);

    let betas = beta_grid(2.0, 0.1, 1);
    let mut gap = Vec::new();
    for (k, &beta) in betas.iter().enumerate() {
        let run = dynamical_correlation(&h, beta, &corr, &trace, &q, &Backend::sampled(8000, 400 + k as u64)).unwrap();
        let s = spectral_density(&run.series).unwrap();
        let (hi, lo) = (s.values[s.nearest_bin(7.18)].norm(), s.values[s.nearest_bin(5.94)].norm());
        gap.push(hi - lo);
    }
    let crossover = (1..betas.len()).find(|&k| gap[k - 1] < 0.0 && gap[k] >= 0.0).map(|k| {
        let (b0, b1, g0, g1) = (betas[k - 1], betas[k], gap[k - 1], gap[k]);
        b0 + (b1 - b0) * (-g0) / (g1 - g0)
    });
    let cross_ok = crossover.is_some_and(|b| (b - 0.4).abs() <= 0.1);

    let h4 = tfim(4, 3.0, 1.0);
    let z4 = ps("ZIII");
    let corr4 = CorrelationConfig::new(z4, z4, dt, 128);
    let q4 = QiteConfig { delta_tau: 0.05, unitary_mode: UnitaryMode::Recompiled, ..QiteConfig::default() };
    let noisy = Backend { shots: Some(8000), noise: Some(NoiseParams::default()), seed: 7, ..Backend::default() };
    let run4 = dynamical_correlation(&h4, 0.2, &corr4, &trace, &q4, &noisy).unwrap();
    let raw0 = run4.series.values[0];
    let fixed = phase_scale_correct(&run4.series).unwrap();
    let t0_ok = fixed.values[0] == Complex64::new(1.0, 0.0);
    let spec4 = spectral_density(&fixed).unwrap();
    let set4 = [0.0, 4.90, -4.90, 6.37, -6.37, 7.84];
    let set_ok = peaks_match(&spec4, &set4);
    let found: Vec<String> = spec4.peaks(0.05).iter().map(|p| format!("{:.2}", p.0)).collect();

    let exact_series = series_of(exact_corr_series_with(&es, &z0, &z0, 0.2, &corr.times()).unwrap(), 0.2, dt);
    let exact_peaks: Vec<String> =
        spectral_density(&exact_series).unwrap().peaks(0.05).iter().map(|p| format!("{:.2}", p.0)).collect();

    let ok = worst <= 0.02 && bins_ok && cross_ok && t0_ok && set_ok;
    (
        ok,
        format!(
            "2-site max |Δ| {worst:.4} (limit 0.02); peaks on transition lines {bins_ok} (exact-series peaks {exact_peaks:?}); \
             crossover β {} (want 0.4±0.1); 4-site raw C(0) {:.3}{:+.3}i → corrected 1: {t0_ok}; peak set {found:?} \
             matches {{0, ±4.90, ±6.37, 7.84}}: {set_ok}",
            crossover.map_or("none".to_string(), |b| format!("{b:.2}")),
            raw0.re,
            raw0.im
        ),
    )
}

fn variance_formulas() -> Outcome {
    let h = tfim(2, 1.0, 1.0);
    let q = two_site_qite(0.1);
    let mut out = Vec::new();
    for mode in [TraceMode::Full, TraceMode::Stochastic] {
        let mut values = Vec::new();
        let mut formula = Vec::new();
        for rep in 0..100u64 {
            let trace = TraceConfig { mode, n_samples: 2, seed: 5000 + rep, betas: vec![1.0] };
            let s = thermal_observable(&h, &h, &trace, &q, &Backend::sampled(8000, 6000 + rep)).unwrap();
            values.push(s.points[0].value);
            formula.push(s.points[0].variance);
        }
        let empirical = mean_sd(&values).1;
        let predicted = (formula.iter().sum::<f64>() / formula.len() as f64).sqrt();
        out.push((mode, empirical, predicted, predicted / empirical));
    }
    let ok = out.iter().all(|o| (0.5..=2.0).contains(&o.3));
    let detail = out
        .iter()
        .map(|(m, e, p, r)| format!("{m:?}: formula σ {p:.4} vs empirical {e:.4} (ratio {r:.2})"))
        .collect::<Vec<_>>()
        .join("; ");
    (ok, format!("{detail}; limit ×2"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("pauli-reduction-equivalence", pauli_reduction_equivalence),
        ("pool-cardinalities", pool_cardinalities),
        ("thermal-energy-two-site", thermal_energy_two_site),
        ("symmetry-relations", symmetry_relations),
        ("mitigation-ordering", mitigation_ordering),
        ("recompilation", recompilation),
        ("stochastic-trace", stochastic_trace),
        ("correlation-and-spectrum", correlation_and_spectrum),
        ("variance-formulas", variance_formulas),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let (ok, detail) = f();
        if !ok {
            failed += 1;
        }
        println!("{} {name}: {detail} [{:.1}s]", if ok { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
