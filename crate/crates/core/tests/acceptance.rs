//! Acceptance criteria 1-10, one line per criterion. Runs without the test
//! harness so the lines are printed even when everything passes.

use std::process::ExitCode;
use std::time::Instant;

use pricelearn::verify::{run_check, Status, VerifyOptions, CHECK_IDS};

fn main() -> ExitCode {
    let opts = VerifyOptions::default();
    let mut failed = Vec::new();
    for id in CHECK_IDS {
        let start = Instant::now();
        let outcome = run_check(id, &opts);
        println!("{outcome} ({:.1}s)", start.elapsed().as_secs_f64());
        if outcome.status != Status::Pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", CHECK_IDS.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: criteria not passing: {failed:?}");
        ExitCode::FAILURE
    }
}
