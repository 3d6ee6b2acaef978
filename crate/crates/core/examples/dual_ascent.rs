//! Dual ascent with a linear model on the bundled smoke problem, compared
//! against the exact parametrized dual the linear family admits.

use std::path::Path;

use duallearn::dual::{run_dual_ascent, PredictorKind};
use duallearn::harness::{compare_predictors, Prepared, RunSeeds, ScenarioConfig};

fn main() -> duallearn::Result<()> {
    let scenarios = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let (cfg, base) = ScenarioConfig::load(&scenarios.join("smoke.json"))?;
    let prep = Prepared::new(&cfg, &base, false)?;
    let init = prep.init_model(&cfg.model, RunSeeds::new(0).model_init)?;
    let trace = run_dual_ascent(&prep.train, &init, &cfg.ascent)?;

    for t in [1, 10, 50, 100, 200] {
        let r = trace.record(t);
        println!(
            "t={t:>3}  lambda={:?}  slacks={:?}  L={:.6}  g_p={:.6}",
            r.lambda.as_slice().iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            r.slacks.iter().map(|v| format!("{v:+.2e}")).collect::<Vec<_>>(),
            r.lagrangian,
            r.exact_dual.unwrap_or(f64::NAN)
        );
    }
    let best = trace.best();
    println!("best iterate t={} with Lagrangian {:.6}; S^2 = {:.3e}", best.t, best.lagrangian, trace.s2_estimate);

    for row in compare_predictors(&prep, &trace, None, 0)? {
        if row.predictor != PredictorKind::Unconstrained {
            println!("{:<10} test objective {:.4}  max train violation {:.2e}", row.predictor.name(), row.test_objective, row.max_violation);
        }
    }
    Ok(())
}
