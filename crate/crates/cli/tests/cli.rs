use std::path::Path;
use std::process::{Command, Output};

fn resgame(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resgame"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = resgame(&["--case", "two-bus", "--mode", "c1", "run"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["result.toml", "bids.csv", "oos.csv"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("status=Optimal"));
}

#[test]
fn exported_case_runs_from_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("case");
    assert!(resgame(&["--case", "two-bus", "export"], &case).status.success());
    let a = resgame(&["--case", "two-bus", "--mode", "c2", "run"], &dir.path().join("a"));
    let b = resgame(
        &["--case", case.to_str().unwrap(), "--mode", "c2", "run"],
        &dir.path().join("b"),
    );
    assert!(a.status.success() && b.status.success());
    // same case, config and samples, so the printed line differs only in timing
    let strip = |o: &Output| {
        String::from_utf8_lossy(&o.stdout)
            .split(" (")
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn validate_vi_passes_on_two_bus() {
    let dir = tempfile::tempdir().unwrap();
    let o = resgame(&["validate-vi", "--fixtures", "two-bus"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn missing_case_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = resgame(&["--case", "/nonexistent/case", "run"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}
