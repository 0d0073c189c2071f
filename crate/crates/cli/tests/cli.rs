use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_opcoorbit"));
    c.env_remove("OPCOORBIT_OUT");
    c
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn selftest_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["selftest", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("PASS moyal"));
    assert!(!text.contains("FAIL"));
    assert!(dir.path().join("selftest.json").exists());
}

#[test]
fn reports_are_byte_identical_across_runs_and_threads() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let args = ["underspread", "--n", "24", "--a", "2", "--b", "2", "--k-grid", "0,5,20,144", "--seed", "7", "--trials", "2", "--reproducible"];
    let s1 = bin().args(args).args(["--threads", "1", "--out"]).arg(d1.path()).status().unwrap();
    let s2 = bin().args(args).args(["--threads", "2", "--out"]).arg(d2.path()).status().unwrap();
    assert!(s1.success() && s2.success());
    for name in ["underspread.json", "underspread_seed7.csv", "underspread_seed8.csv", "underspread_ranked_seed8.csv"] {
        assert_eq!(read(d1.path(), name), read(d2.path(), name), "{name}");
    }
    let json: serde_json::Value = serde_json::from_slice(&read(d1.path(), "underspread.json")).unwrap();
    assert_eq!(json["config"]["n"], 24);
    assert_eq!(json["seeds"], serde_json::json!([7, 8]));
    assert!(json["version"].is_string());
    let csv = String::from_utf8(read(d1.path(), "underspread_seed7.csv")).unwrap();
    assert!(csv.starts_with("K,app_err,wne,sigma_tail\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn env_var_overrides_out() {
    let flag = tempfile::tempdir().unwrap();
    let env = tempfile::tempdir().unwrap();
    let status = bin()
        .env("OPCOORBIT_OUT", env.path())
        .args(["localize", "--n", "24", "--a", "2", "--b", "2", "--out"])
        .arg(flag.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(env.path().join("localize.json").exists());
    assert!(env.path().join("localize.csv").exists());
    assert!(!flag.path().join("localize.json").exists());
}

#[test]
fn invalid_configs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["underspread", "--n", "24", "--a", "5"],
        &["scenarios", "--n", "24", "--a", "2", "--b", "2", "--k-grid", "1000"],
        &["decay", "--n", "24", "--p-grid", "2.5"],
        // a = b = N samples only the origin: not a frame
        &["localize", "--n", "12", "--a", "12", "--b", "12"],
    ];
    for args in cases {
        let out = bin().args(args).arg("--out").arg(dir.path()).output().unwrap();
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
}

#[test]
fn denoise_and_decay_write_curves() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["denoise", "--n", "24", "--a", "2", "--b", "2", "--snr-db", "10", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let csv = String::from_utf8(read(dir.path(), "denoise_seed0.csv")).unwrap();
    assert!(csv.starts_with("K,noisy_err,clean_err\n"));
    let status = bin()
        .args(["decay", "--n", "24", "--a", "2", "--b", "2", "--alpha", "1,4", "--k-grid", "0,10,144", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["decay_alpha1_rank1_seed0.csv", "decay_alpha4_rank6_seed0.csv", "decay_gaussian_rank1_seed0.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}
