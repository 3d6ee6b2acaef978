//! Hidden-width sweep on the fairness problem: post-settling violation and the
//! nested-family fit residual to the unparametrized solution.
//!
//! `cargo run --release --example capacity_sweep [iterations]`

use std::path::Path;

use duallearn::harness::{capacity_sweep, ScenarioConfig, SweepAxis};

fn main() -> duallearn::Result<()> {
    let scenarios = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let (mut cfg, base) = ScenarioConfig::load(&scenarios.join("fairness.json"))?;
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    cfg.ascent.iterations = iterations;
    cfg.ascent.t0 = iterations / 2;
    cfg.seeds = vec![0, 1];
    cfg.unconstrained_baseline = false;
    cfg.certificates.enabled = false;
    let result = capacity_sweep(&cfg, &base, &SweepAxis::HiddenWidth(vec![4, 16, 64]), None, 1)?;
    for r in &result.rows {
        println!("width {:>3}: median max violation {:.3e}  nu {:.4}", r.label, r.median_violation, r.nu.unwrap_or(f64::NAN));
    }
    match result.spearman {
        Some(rho) => println!("spearman(width, violation) = {rho:.2}"),
        None => println!("flat axis"),
    }
    Ok(())
}
