use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use qinvert_core::scenario::{run_scenario, validate, ScenarioError};

fn files_under(root: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for name in ["ramsey_ambiguity", "noise_study"] {
        let (ma, da) = run_scenario(Path::new(name), a.path(), Some(7)).unwrap();
        let (mb, db) = run_scenario(Path::new(name), b.path(), Some(7)).unwrap();
        assert_eq!(ma.artifacts.len(), mb.artifacts.len());
        for f in files_under(&da) {
            assert_eq!(fs::read(da.join(&f)).unwrap(), fs::read(db.join(&f)).unwrap(), "{name}/{f}");
        }
    }
}

#[test]
fn different_seed_changes_noisy_records() {
    let dir = tempfile::tempdir().unwrap();
    let (_, d1) = run_scenario(Path::new("noise_study"), &dir.path().join("a"), Some(1)).unwrap();
    let (_, d2) = run_scenario(Path::new("noise_study"), &dir.path().join("b"), Some(2)).unwrap();
    let f = "measurement_high/r00/inversion.csv";
    assert_ne!(fs::read(d1.join(f)).unwrap(), fs::read(d2.join(f)).unwrap());
}

#[test]
fn manifest_lists_every_artifact_with_its_hash() {
    use sha2::{Digest, Sha256};
    let dir = tempfile::tempdir().unwrap();
    let (manifest, out) = run_scenario(Path::new("two_qubit_single_g"), dir.path(), None).unwrap();
    let listed: BTreeSet<String> = manifest.artifacts.iter().map(|a| a.path.clone()).collect();
    let mut on_disk = files_under(&out);
    assert!(on_disk.remove("manifest.json"));
    assert_eq!(listed, on_disk);
    for a in &manifest.artifacts {
        let bytes = fs::read(out.join(&a.path)).unwrap();
        assert_eq!(a.sha256, hex::encode(Sha256::digest(&bytes)), "{}", a.path);
        assert_eq!(a.bytes, bytes.len());
    }
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(json["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(json["seed"], 1);
    let head = fs::read_to_string(out.join("single/inversion.csv")).unwrap();
    assert!(head.starts_with("t,u1_hat,smin,smax,flag\n"));
    let head = fs::read_to_string(out.join("redundant/record.csv")).unwrap();
    assert!(head.starts_with("t,y1,y2\n"));
}

#[test]
fn validation_reports_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let src = qinvert_core::scenario::bundled("mimo_three_signals").unwrap();

    let missing = dir.path().join("missing.toml");
    fs::write(&missing, src.replacen("observables = [\"XI\", \"YI\", \"IX\"]\n", "", 1)).unwrap();
    match validate(&missing) {
        Err(ScenarioError::Validation(msg)) => assert!(msg.contains("missing field `observables`"), "{msg}"),
        other => panic!("{other:?}"),
    }

    let short = dir.path().join("short.toml");
    fs::write(&short, src.replacen("observables = [\"XI\", \"YI\", \"IX\"]", "observables = [\"XI\", \"YI\"]", 1)).unwrap();
    match validate(&short) {
        Err(ScenarioError::Validation(msg)) => {
            assert!(msg.contains("under-instrumented") && msg.contains("rank 3"), "{msg}")
        }
        other => panic!("{other:?}"),
    }

    assert!(validate(Path::new("mimo_three_signals")).is_ok());
}
