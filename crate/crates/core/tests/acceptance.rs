//! Acceptance suite: runs every criterion and prints one PASS/FAIL line each.
//! Positional arguments select criteria by number; flags from the test
//! runner are ignored.

use hopf_shear::selftest::{run_criterion, CRITERIA};
use std::process::ExitCode;

fn main() -> ExitCode {
    let selected: Vec<u8> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.trim_start_matches("criterion_").parse().ok())
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for &(id, _) in CRITERIA.iter().filter(|(id, _)| selected.is_empty() || selected.contains(id)) {
        let outcome = run_criterion(id);
        println!("{outcome}");
        ran += 1;
        if !outcome.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
