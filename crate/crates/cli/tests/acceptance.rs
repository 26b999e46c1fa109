//! Acceptance gate: the twelve numbered criteria at full scale.
//!
//! Tolerances live in the suite itself (`gmclab_core::acceptance`); this
//! target runs each criterion, prints one pass/fail line and enforces the
//! stated wall-clock limits. Criterion 12 additionally runs the binary with
//! one and four workers and compares the result files byte for byte.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use gmclab_core::acceptance::{run_criterion, runtime_limit, SuiteContext, SuiteOptions};
use gmclab_core::config::Scale;

fn context() -> &'static SuiteContext {
    static CTX: OnceLock<SuiteContext> = OnceLock::new();
    CTX.get_or_init(|| SuiteContext::new(SuiteOptions { scale: Scale::Full, ..SuiteOptions::default() }))
}

fn criterion(id: u32) {
    let out = run_criterion(context(), id);
    let in_time = runtime_limit(id).is_none_or(|l| out.elapsed_seconds <= l);
    println!("{}", out.line());
    if !out.pass {
        println!("{}", serde_json::to_string_pretty(&out.measured).unwrap());
    }
    assert!(out.pass, "criterion {id} failed: {}", out.line());
    assert!(in_time, "criterion {id} exceeded its runtime limit: {}", out.line());
}

#[test]
fn criterion_01_thresholds() {
    criterion(1);
}

#[test]
fn criterion_02_ordering() {
    criterion(2);
}

#[test]
fn criterion_03_pd() {
    criterion(3);
}

#[test]
fn criterion_04_first_moment() {
    criterion(4);
}

#[test]
fn criterion_05_scaling() {
    criterion(5);
}

#[test]
fn criterion_06_pairing() {
    criterion(6);
}

#[test]
fn criterion_07_representation() {
    criterion(7);
}

#[test]
fn criterion_08_pde() {
    criterion(8);
}

#[test]
fn criterion_09_envelope() {
    criterion(9);
}

#[test]
fn criterion_10_synthetic() {
    criterion(10);
}

#[test]
fn criterion_11_bounds() {
    criterion(11);
}

fn verify_with_workers(dir: &Path, workers: usize) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_gmclab"))
        .args(["verify", "--scale", "quick", "--tags", "thresholds,scaling,pairing,representation,synthetic"])
        .args(["--workers", &workers.to_string(), "--out"])
        .arg(dir)
        .env("RUST_LOG", "warn")
        .status()
        .expect("run gmclab");
    assert_eq!(status.code(), Some(0));
    std::fs::read(dir.join("verify.json")).expect("result file")
}

#[test]
fn criterion_12_determinism() {
    criterion(12);
    let tmp = tempfile::tempdir().unwrap();
    let (d1, d4) = (tmp.path().join("w1"), tmp.path().join("w4"));
    let a = verify_with_workers(&d1, 1);
    let b = verify_with_workers(&d4, 4);
    // Only the output directory differs between the two configs.
    let norm = |v: Vec<u8>, d: &Path| String::from_utf8(v).unwrap().replace(&*d.to_string_lossy(), "OUT");
    let pass = norm(a, &d1) == norm(b, &d4);
    println!("criterion 12 [determinism] cli --workers 1 vs 4: {}", if pass { "PASS" } else { "FAIL" });
    assert!(pass);
}
