//! Shortened counterfactual-fairness run (mlp2, seven KL constraints) with
//! predictor comparison and post-settling oscillation statistics.
//!
//! `cargo run --release --example fairness_scenario [iterations]`

use std::path::Path;

use duallearn::harness::{run_seed, Prepared, ScenarioConfig};

fn main() -> duallearn::Result<()> {
    let scenarios = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let (mut cfg, base) = ScenarioConfig::load(&scenarios.join("fairness.json"))?;
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    cfg.ascent.iterations = iterations;
    cfg.ascent.t0 = iterations / 2;
    let prep = Prepared::new(&cfg, &base, false)?;
    let run = run_seed(&prep, &cfg, 0)?;

    let o = &run.oscillation;
    println!("settled at t={} ({} iterations after)", o.settle_index, o.post_settling_iterations);
    for (i, (f, c)) in o.violation_frequency.iter().zip(&o.sign_changes).enumerate() {
        println!("  constraint {}: violated {:>5.1}% of iterations, {c} sign changes", i + 1, 100.0 * f);
    }
    println!("  any constraint violated {:.1}% of iterations", 100.0 * o.any_violation_frequency);
    for p in &run.predictors {
        println!(
            "{:<13} test accuracy {:.4}  max train violation {:.3e}",
            p.predictor.name(),
            p.accuracy.unwrap_or(f64::NAN),
            p.max_violation
        );
    }
    Ok(())
}
