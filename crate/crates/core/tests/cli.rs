use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Proc;

use qitekit::cli::{read_csv, run, Command, ExperimentConfig, UnitaryFile, SCHEMA_VERSION};
use qitekit::linalg::haar_unitary;
use qitekit::oracle::exact_thermal;
use qitekit::pauli::{build_hamiltonian, ModelSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn bin() -> Proc {
    Proc::new(env!("CARGO_BIN_EXE_qitekit"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(text: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(&format!("schema_version = 1\n{text}")).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn csv(path: &Path) -> (String, Vec<String>, Vec<Vec<f64>>) {
    read_csv(&fs::read_to_string(path).unwrap()).unwrap()
}

const SAMPLED_THERMAL: &str = r#"
observables = ["H", "XX"]
[qite]
delta_tau = 0.1
regularizer = 0.0
unitary_mode = "merged_two_site"
[trace]
beta_max = 1.0
[measurement]
mode = "sampled"
shots = 500
"#;

#[test]
fn same_seed_gives_identical_bytes() {
    let dirs: Vec<TempDir> = (0..3).map(|_| TempDir::new().unwrap()).collect();
    for (k, d) in dirs.iter().enumerate() {
        let mut cfg = config(SAMPLED_THERMAL, d.path());
        cfg.seed = if k < 2 { 42 } else { 43 };
        run(Command::Thermal, &cfg).unwrap();
        run(Command::Spectrum, &cfg).unwrap();
    }
    for name in ["thermal_energy.csv", "thermal_xx.csv", "corr.csv", "spectrum.csv"] {
        let read = |k: usize| fs::read(dirs[k].path().join(name)).unwrap();
        assert_eq!(read(0), read(1), "{name}");
        assert_ne!(read(0), read(2), "{name}");
    }
}

#[test]
fn every_csv_is_versioned_and_carries_the_oracle() {
    let d = TempDir::new().unwrap();
    let cfg = config("[correlation]\nn_t = 16\n", d.path());
    for cmd in [Command::Qite, Command::Thermal, Command::Spectrum, Command::Calibrate] {
        run(cmd, &cfg).unwrap();
    }
    let expect: [(&str, &str, &[&str]); 5] = [
        ("qite.csv", "qite", &["step", "tau", "energy", "c", "residual", "exact_energy"]),
        ("thermal_energy.csv", "thermal", &["beta", "value", "variance", "exact_value"]),
        ("corr.csv", "corr", &["t", "re", "im", "re_err", "im_err", "exact_re", "exact_im"]),
        ("spectrum.csv", "spectrum", &["omega", "s_re", "s_im", "s_abs2", "exact_abs2"]),
        ("calibration.csv", "calibration", &["observed", "prepared", "probability", "exact_probability"]),
    ];
    for (file, kind, header) in expect {
        let text = fs::read_to_string(d.path().join(file)).unwrap();
        assert!(!text.contains('\r'));
        let (schema, cols, rows) = read_csv(&text).unwrap();
        assert_eq!(schema, format!("qitekit-{kind} v{SCHEMA_VERSION}"));
        assert_eq!(cols, header);
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.len() == header.len()));
    }
    let (_, _, rows) = csv(&d.path().join("corr.csv"));
    assert_eq!(rows.len(), 16);
    assert!((rows[0][1] - 1.0).abs() < 1e-12);
}

#[test]
fn zero_steps_gives_the_initial_energy_only() {
    let d = TempDir::new().unwrap();
    let cfg = config("[initial]\nbasis = [0]\n[qite]\nn_steps = 0\n", d.path());
    run(Command::Qite, &cfg).unwrap();
    let (_, _, rows) = csv(&d.path().join("qite.csv"));
    assert_eq!(rows.len(), 1);
    // |00> of X0X1 + Z0 + Z1.
    assert!((rows[0][2] - 2.0).abs() < 1e-12);
}

#[test]
fn beta_zero_grid_gives_one_exact_row() {
    let d = TempDir::new().unwrap();
    let cfg = config("[trace]\nbetas = [0.0]\n", d.path());
    run(Command::Thermal, &cfg).unwrap();
    let (_, _, rows) = csv(&d.path().join("thermal_energy.csv"));
    assert_eq!(rows.len(), 1);
    let h = build_hamiltonian(&ModelSpec::tfim(2, 1.0, 1.0)).unwrap();
    assert_eq!(rows[0][0], 0.0);
    assert!((rows[0][1] - exact_thermal(&h, &h, 0.0).unwrap()).abs() < 1e-12);
    assert_eq!(rows[0][2], 0.0);
}

#[test]
fn thermal_rows_track_the_oracle() {
    let d = TempDir::new().unwrap();
    let cfg = config("[qite]\ndelta_tau = 0.1\nregularizer = 0.0\n[trace]\nbeta_max = 1.0\n", d.path());
    run(Command::Thermal, &cfg).unwrap();
    let (_, _, rows) = csv(&d.path().join("thermal_energy.csv"));
    assert_eq!(rows.len(), 6);
    for r in rows {
        assert!((r[1] - r[3]).abs() < 0.05, "{r:?}");
    }
}

#[test]
fn kak_and_recompile_accept_unitary_files() {
    let d = TempDir::new().unwrap();
    let u = haar_unitary(4, &mut ChaCha8Rng::seed_from_u64(3));
    let input = d.path().join("u.json");
    fs::write(&input, serde_json::to_string(&UnitaryFile::from_matrix(&u)).unwrap()).unwrap();
    let mut cfg = config("", &d.path().join("out"));
    cfg.kak.input = Some(input.clone());
    cfg.recompile.input = Some(input);
    cfg.recompile.rounds = 4;
    run(Command::Kak, &cfg).unwrap();
    run(Command::Recompile, &cfg).unwrap();
    let kak: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("out/kak.json")).unwrap()).unwrap();
    assert_eq!(kak["cnot_count"], 3);
    assert!(kak["reconstruction_error"].as_f64().unwrap() < 1e-8);
    let rec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("out/recompile.json")).unwrap()).unwrap();
    assert!(rec["fidelity"].as_f64().unwrap() > 0.9);
}

#[test]
fn exit_code_two_for_config_errors() {
    let d = TempDir::new().unwrap();
    let cases = [
        "seed = 1\n",
        "schema_version = 2\n",
        "schema_version = 1\nbogus = 3\n",
        "schema_version = 1\n[correlation]\nn_t = 0\n",
        "schema_version = 1\n[qite]\ndelta_tau = -0.1\n",
        "schema_version = 1\n[model]\nkind = \"tfim\"\nn_sites = 1\n",
    ];
    for text in cases {
        let cfg = write_config(d.path(), text);
        let status = bin().arg("--config").arg(&cfg).arg("--out").arg(d.path().join("o")).arg("corr").status().unwrap();
        assert_eq!(status.code(), Some(2), "{text}");
    }
    let missing = bin().args(["--config", "/nonexistent/config.toml", "qite"]).status().unwrap();
    assert_eq!(missing.code(), Some(2));
    let no_input = bin().arg("--out").arg(d.path().join("o")).arg("recompile").status().unwrap();
    assert_eq!(no_input.code(), Some(2));
}

#[test]
fn exit_code_three_for_aborted_trajectories() {
    let d = TempDir::new().unwrap();
    // With one shot per string, <X + Z> on |00> reads 2 half the time and the
    // squared norm 1 - 2Δτ E + 2Δτ² <H²> hits zero at Δτ = 1/2.
    let cfg = write_config(
        d.path(),
        r#"schema_version = 1
[model]
kind = "custom"
n_sites = 2
terms = [{ coefficient = 1.0, label = "XI" }, { coefficient = 1.0, label = "ZI" }]
[qite]
delta_tau = 0.5
n_steps = 20
domain = 1
regularizer = 0.0
[measurement]
mode = "sampled"
shots = 1
[correlation]
beta = 1.0
"#,
    );
    let status = bin().arg("--config").arg(&cfg).args(["--seed", "1", "--out"]).arg(d.path()).arg("qite").status().unwrap();
    assert_eq!(status.code(), Some(3));
    let (_, _, rows) = csv(&d.path().join("qite.csv"));
    assert_eq!(rows.len(), 1);
}

#[test]
fn flags_override_the_config() {
    let d = TempDir::new().unwrap();
    let out = d.path().join("flagged");
    let status = bin().args(["--seed", "9", "--shots", "200", "--noise", "--out"]).arg(&out).arg("thermal").status().unwrap();
    assert_eq!(status.code(), Some(0));
    let (_, _, rows) = csv(&out.join("thermal_energy.csv"));
    assert!(rows.iter().skip(1).any(|r| r[2] > 0.0));
    let again = d.path().join("again");
    bin().args(["--seed", "9", "--shots", "200", "--noise", "--out"]).arg(&again).arg("thermal").status().unwrap();
    assert_eq!(fs::read(out.join("thermal_energy.csv")).unwrap(), fs::read(again.join("thermal_energy.csv")).unwrap());
}

#[test]
fn default_config_round_trips() {
    let out = bin().arg("default-config").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), ExperimentConfig::default());
}

#[test]
fn shipped_configs_validate() {
    let mut n = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap().validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 7);
}

#[test]
fn two_site_correlation_config_runs() {
    let d = TempDir::new().unwrap();
    let mut cfg = ExperimentConfig::load(&configs_dir().join("tfim2_corr.toml")).unwrap();
    cfg.output_dir = d.path().to_path_buf();
    run(Command::Spectrum, &cfg).unwrap();
    let (_, _, rows) = csv(&d.path().join("corr.csv"));
    assert_eq!(rows.len(), 128);
    let worst = rows.iter().map(|r| (r[1] - r[5]).abs().max((r[2] - r[6]).abs())).fold(0.0, f64::max);
    assert!(worst < 0.06, "{worst}");
}
