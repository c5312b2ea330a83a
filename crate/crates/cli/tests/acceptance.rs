//! One test per acceptance criterion. Each prints a single PASS/FAIL line
//! with the measured quantities and the wall time. The tests share a lock
//! so that timings are not inflated by each other.

use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use tic_core::validation::{self, CriterionOutcome, ValidationConfig};

static SERIAL: Mutex<()> = Mutex::new(());

fn criterion(f: fn(&ValidationConfig) -> CriterionOutcome, budget: Option<Duration>) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let outcome = f(&ValidationConfig::default());
    let elapsed = start.elapsed();
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let line = outcome.summary_line();
    let line = if in_time {
        line
    } else {
        line.replacen("[PASS]", "[FAIL]", 1)
    };
    println!("{line} ({:.3} s)", elapsed.as_secs_f64());
    assert!(outcome.passed, "{}", outcome.detail);
    assert!(in_time, "took {elapsed:?}, budget {budget:?}");
}

#[test]
fn criterion_01_riccati_accuracy() {
    criterion(validation::riccati_accuracy, Some(Duration::from_secs(1)));
}

#[test]
fn criterion_02_terminal_identities() {
    criterion(validation::terminal_identities, None);
}

#[test]
fn criterion_03_time_consistency_reduction() {
    criterion(validation::time_consistency_reduction, Some(Duration::from_secs(1)));
}

#[test]
fn criterion_04_zero_control_cost() {
    criterion(validation::zero_control_cost, Some(Duration::from_secs(1)));
}

#[test]
fn criterion_05_ansatz_consistency() {
    criterion(validation::ansatz_consistency, Some(Duration::from_secs(1)));
}

#[test]
fn criterion_06_monte_carlo_agreement() {
    criterion(validation::monte_carlo_agreement, Some(Duration::from_secs(60)));
}

#[test]
fn criterion_07_sweep_dominance() {
    criterion(validation::sweep_dominance, Some(Duration::from_secs(5)));
}

#[test]
fn criterion_08_initial_control_ordering() {
    criterion(validation::initial_control_ordering, None);
}

#[test]
fn criterion_09_pde_vs_riccati() {
    criterion(validation::pde_vs_riccati, Some(Duration::from_secs(60)));
}

#[test]
fn criterion_10_diagonal_identity() {
    criterion(validation::diagonal_identity, None);
}

#[test]
fn criterion_11_augmentation_reduction() {
    criterion(validation::augmentation_reduction, None);
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_12_determinism() {
    criterion(validation::thread_independence, None);

    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let status = Command::new(env!("CARGO_BIN_EXE_tic"))
                .current_dir(dir.path())
                .args(["validate", "--out", "out"])
                .output()
                .unwrap();
            assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
            (tree(&dir.path().join("out")), status.stdout)
        })
        .collect();
    let identical = runs[0] == runs[1];
    println!(
        "[{}] criterion 12 determinism: two `tic validate` runs, {} file(s), byte-identical output trees: {identical} ({:.3} s)",
        if identical { "PASS" } else { "FAIL" },
        runs[0].0.len(),
        start.elapsed().as_secs_f64()
    );
    assert!(identical);
}
