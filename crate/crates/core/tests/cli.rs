use std::path::Path;
use std::process::{Command, Output};

fn duallearn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duallearn")).args(args).current_dir(cwd).output().unwrap()
}

fn smoke_scenario(dir: &Path) {
    let out = duallearn(&["gen-data", "--kind", "smoke", "--out", "."], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scenario = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/smoke.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&scenario).unwrap();
    v["seeds"] = serde_json::json!([0]);
    std::fs::write(dir.join("smoke.json"), v.to_string()).unwrap();
}

#[test]
fn generated_data_matches_the_bundled_copy() {
    let dir = tempfile::tempdir().unwrap();
    smoke_scenario(dir.path());
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for f in ["smoke.csv", "smoke.problem.json"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(bundled.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn verify_then_report() {
    let dir = tempfile::tempdir().unwrap();
    smoke_scenario(dir.path());
    let out = duallearn(&["verify", "--config", "smoke.json", "--out", "run", "--seed", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("run/seed_2/certificates.json").is_file());
    assert!(!dir.path().join("run/seed_0").exists());

    let out = duallearn(&["report", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Gamma2") && text.contains("duality_gap"), "{text}");

    let out = duallearn(&["solve-unparam", "--config", "smoke.json", "--out", "exact"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("P*_u"));
    assert!(dir.path().join("exact/manifest.json").is_file());
}

#[test]
fn usage_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(duallearn(&["train"], dir.path()).status.code(), Some(2));
    assert_eq!(duallearn(&["report", "--out", "nothing"], dir.path()).status.code(), Some(2));
    smoke_scenario(dir.path());
    let out = duallearn(&["sweep", "--config", "smoke.json", "--axis", "projection:1,full"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = duallearn(&["sweep", "--config", "smoke.json", "--axis", "depth:1,2,3"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
