mod common;

use std::path::Path;

use common::scenarios;
use duallearn::harness::{capacity_sweep, run_scenario, Manifest, ScenarioConfig, SweepAxis};
use duallearn::Error;
use sha2::{Digest, Sha256};

fn smoke(seeds: Vec<u64>, certificates: bool) -> (ScenarioConfig, std::path::PathBuf) {
    let (mut cfg, base) = ScenarioConfig::load(&scenarios().join("smoke.json")).unwrap();
    cfg.seeds = seeds;
    cfg.certificates.enabled = certificates;
    (cfg, base)
}

fn read_manifest(out: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn smoke_scenario_writes_a_hashed_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, base) = smoke(vec![3], true);
    let outcome = run_scenario(&cfg, &base, dir.path(), 1).unwrap();
    let report = outcome.runs[0].report.as_ref().unwrap();
    assert!(!report.any_violated());

    for f in ["unparam.json", "phi_star.csv", "predictors.csv", "oscillation.csv", "scenario.json", "manifest.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    for f in ["trace.csv", "meta.json", "certificates.json", "certificates.txt"] {
        assert!(dir.path().join("seed_3").join(f).is_file(), "{f}");
    }
    let manifest = read_manifest(dir.path());
    assert!(manifest.files.iter().any(|e| e.path == "seed_3/trace.csv"));
    assert!(manifest.files.iter().any(|e| e.path.starts_with("seed_3/checkpoints/")));
    for e in &manifest.files {
        let bytes = std::fs::read(dir.path().join(&e.path)).unwrap();
        assert_eq!(bytes.len() as u64, e.bytes, "{}", e.path);
        assert_eq!(hex::encode(Sha256::digest(&bytes)), e.sha256, "{}", e.path);
    }
    // the emitted scenario reloads to the same configuration
    let (back, _) = ScenarioConfig::load(&dir.path().join("scenario.json")).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn reruns_and_worker_counts_reproduce_traces() {
    let (cfg, base) = smoke(vec![0, 1], false);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_scenario(&cfg, &base, a.path(), 1).unwrap();
    run_scenario(&cfg, &base, b.path(), 2).unwrap();
    for f in ["seed_0/trace.csv", "seed_1/trace.csv", "predictors.csv", "oscillation.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn failures_leave_an_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, base) = smoke(vec![0], false);
    cfg.problem = "missing.problem.json".into();
    assert!(run_scenario(&cfg, &base, dir.path(), 1).is_err());
    let rec: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("error.json")).unwrap()).unwrap();
    assert_eq!(rec["stage"], "unparam");
    assert!(rec["seed"].is_null());
    assert!(read_manifest(dir.path()).files.iter().any(|e| e.path == "error.json"));
}

#[test]
fn invalid_scenarios_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, base) = smoke(vec![], false);
    assert!(matches!(run_scenario(&cfg, &base, dir.path(), 1), Err(Error::Config(_))));
    cfg.seeds = vec![0];
    cfg.schema_version = 99;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn sweeps_need_three_values_and_skip_flat_trends() {
    let (cfg, base) = smoke(vec![0, 1], false);
    let two = SweepAxis::ProjectionDim(vec![Some(1), None]);
    assert!(matches!(capacity_sweep(&cfg, &base, &two, None, 1), Err(Error::Config(_))));

    // the convex smoke problem ends feasible at every capacity
    let flat = SweepAxis::ProjectionDim(vec![Some(1), Some(2), None]);
    let result = capacity_sweep(&cfg, &base, &flat, None, 1).unwrap();
    assert_eq!(result.rows.len(), 3);
    assert!(result.rows.windows(2).all(|w| w[0].capacity <= w[1].capacity));
    if result.rows.iter().all(|r| r.median_violation == result.rows[0].median_violation) {
        assert_eq!(result.spearman, None);
    }
}
