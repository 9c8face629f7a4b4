//! Acceptance suite: one PASS/FAIL line per criterion on the reference
//! instance (T = 1, τ = 0.5, σ = ε = c = 1, n_t = 200).
//!
//! Runs without the libtest harness so the lines are always printed. The
//! process fails when the set of failing criteria differs from
//! `KNOWN_FAILURES`, in either direction.

mod common;

use std::time::Instant;

use delay_mfg::checks::{self, CheckOutcome};
use delay_mfg::cli::{parse_config_str, run, Command};
use delay_mfg::riccati::GameParams;

const N_T: usize = 200;
const PATHS: usize = 10_000;
const SEED: u64 = 42;

/// Criteria that fail on the reference instance, with the reason.
const KNOWN_FAILURES: [(u8, &str); 1] = [(
    6,
    "at t0 = 0 the E0 and E3 parts of the N = 2 gap cancel, so gap(2) sits below the 1/N line",
)];

/// Runtime budget of each criterion in seconds.
fn budget(id: u8) -> f64 {
    match id {
        1 => 10.0,
        2 | 3 | 12 => 60.0,
        4 => 30.0,
        5 | 6 | 7 | 9 => 120.0,
        8 => 180.0,
        _ => 5.0,
    }
}

fn determinism() -> CheckOutcome {
    let start = Instant::now();
    let parsed = parse_config_str("M = 500\ndump_paths = true\n", &[]).expect("valid config");
    let mut bad = Vec::new();
    for cmd in Command::ALL {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run(cmd, &parsed, a.path(), false);
        let rb = run(cmd, &parsed, b.path(), false);
        if ra.is_err() || rb.is_err() {
            bad.push(format!("{} errored", cmd.name()));
            continue;
        }
        for f in common::differing_files(a.path(), b.path()) {
            bad.push(format!("{}/{f}", cmd.name()));
        }
    }
    CheckOutcome {
        id: 12,
        name: "determinism".into(),
        passed: bad.is_empty(),
        detail: if bad.is_empty() {
            "all five subcommands byte-identical (timing fields excluded)".into()
        } else {
            format!("differs: {}", bad.join(", "))
        },
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn main() {
    let p = GameParams::default();
    let suite: Vec<Box<dyn Fn() -> CheckOutcome>> = vec![
        Box::new(|| checks::boundary(&p, N_T, 4)),
        Box::new(|| checks::pde_order(&p, N_T, 4)),
        Box::new(|| checks::oracle_agreement(&p, N_T)),
        Box::new(|| checks::master_equation(&p, N_T)),
        Box::new(|| checks::almost_solution(&p, N_T)),
        Box::new(|| checks::convergence_rate(&p, N_T, 0.0)),
        Box::new(|| checks::monte_carlo(&p, N_T, PATHS, SEED)),
        Box::new(|| checks::deviation(&p, N_T, PATHS, SEED, 0.2)),
        Box::new(|| checks::moments(&p, N_T, PATHS, SEED, 16)),
        Box::new(|| checks::adjointness(p.tau, SEED)),
        Box::new(|| checks::degenerate(&p, N_T)),
        Box::new(determinism),
    ];
    let mut failed = Vec::new();
    for check in &suite {
        let mut c = check();
        let limit = budget(c.id);
        if c.seconds > limit {
            c.passed = false;
            c.detail = format!("{} [over the {limit} s budget]", c.detail);
        }
        println!("{}", c.line());
        if !c.passed {
            failed.push(c.id);
        }
    }
    let known: Vec<u8> = KNOWN_FAILURES.iter().map(|(id, _)| *id).collect();
    for (id, why) in KNOWN_FAILURES {
        println!("known failure, criterion {id}: {why}");
    }
    let passed = suite.len() - failed.len();
    println!("acceptance: {passed}/{} criteria pass", suite.len());
    if failed != known {
        eprintln!("acceptance: failing set {failed:?} differs from the documented {known:?}");
        std::process::exit(1);
    }
}
