//! Runs the smoke scenario end to end and prints every certificate.

use std::path::Path;

fn main() -> duallearn::Result<()> {
    let scenarios = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let (mut cfg, base) = duallearn::harness::ScenarioConfig::load(&scenarios.join("smoke.json"))?;
    cfg.seeds.truncate(1);
    let out = std::env::temp_dir().join("duallearn-smoke");
    let outcome = duallearn::harness::run_scenario(&cfg, &base, &out, 1)?;
    for run in &outcome.runs {
        if let Some(report) = &run.report {
            print!("{}", report.render_text());
        }
    }
    println!("artifacts under {}", out.display());
    Ok(())
}
