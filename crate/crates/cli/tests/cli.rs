use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qinvert(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qinvert"))
        .args(args)
        .current_dir(dir)
        .env_remove("QINVERT_OUT")
        .output()
        .expect("spawn qinvert")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

// Small qubit scenario: known bias, sinusoidal σz drive, a 20 ns horizon.
const QUBIT: &str = r#"
name = "tiny_qubit"
frequency_convention = "angular"
seed = 5
horizon = "20 ns"
observables = ["Z"]
outputs = ["verdict", "forward_record", "inversion_report"]

[model]
kind = "pauli"
qubits = 1
drift = [{ op = "X", coefficient = "1 MHz" }]
controls = [{ name = "u", op = "Z" }]
initial_state = { kind = "equator", phase = "0 deg" }

[signals.u]
shape = "sinusoid"
amplitude = "0.03 rad/ns"
frequency = "0.1 rad/ns"

[integrator]
dt = "0.01 ns"

[[variants]]
name = "only"
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn list_shows_bundled_scenarios() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qinvert(&["list"], tmp.path());
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.lines().count() >= 5, "{out}");
    for name in ["ramsey_ambiguity", "two_qubit_single_g", "mimo_three_signals", "noise_study", "lsq_baseline"] {
        assert!(out.contains(name), "missing {name}");
    }
}

#[test]
fn validate_accepts_a_good_file() {
    let tmp = tempfile::tempdir().unwrap();
    let f = write(tmp.path(), "q.toml", QUBIT);
    let o = qinvert(&["validate", &f], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).trim_end().ends_with("ok"));
}

#[test]
fn validate_names_the_bad_field() {
    let tmp = tempfile::tempdir().unwrap();
    let f = write(tmp.path(), "q.toml", &QUBIT.replace("observables = [\"Z\"]\n", ""));
    let o = qinvert(&["validate", &f], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("observables"), "{}", stderr(&o));

    let f = write(tmp.path(), "units.toml", &QUBIT.replace("\"20 ns\"", "20"));
    let o = qinvert(&["validate", &f], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizon"), "{}", stderr(&o));
}

#[test]
fn non_invertible_inversion_is_a_runtime_failure() {
    // Without the bias, σz commutes with the drive and the record carries no information.
    let tmp = tempfile::tempdir().unwrap();
    let f = write(tmp.path(), "q.toml", &QUBIT.replace("drift = [{ op = \"X\", coefficient = \"1 MHz\" }]\n", ""));
    let o = qinvert(&["run", &f, "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn run_writes_into_out_dir_and_env_root() {
    let tmp = tempfile::tempdir().unwrap();
    let f = write(tmp.path(), "q.toml", QUBIT);
    let o = qinvert(&["run", &f, "--out", "explicit"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("explicit/tiny_qubit/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert!(manifest["artifacts"].as_array().unwrap().len() >= 4);

    let o = Command::new(env!("CARGO_BIN_EXE_qinvert"))
        .args(["run", &f, "--seed", "9"])
        .current_dir(tmp.path())
        .env("QINVERT_OUT", tmp.path().join("from_env"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("from_env/tiny_qubit/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
}

#[test]
fn parallel_jobs_run_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write(tmp.path(), "a.toml", QUBIT);
    let b = write(tmp.path(), "b.toml", &QUBIT.replace("tiny_qubit", "tiny_qubit_b"));
    let o = qinvert(&["run", &a, &b, "--jobs", "2", "--out", "out"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["tiny_qubit", "tiny_qubit_b"] {
        assert!(tmp.path().join("out").join(name).join("manifest.json").exists());
    }
}
