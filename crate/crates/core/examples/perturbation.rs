//! Perturbation function `P(eps)` of the smoke problem and the discrete Fenchel
//! residual `|P^dagger(lambda) + g_u(lambda)|` over a grid.

use std::path::Path;

use duallearn::harness::{Prepared, ScenarioConfig};
use duallearn::problem::DualVector;
use duallearn::unparam::{fenchel_residual, perturbation_value};

fn main() -> duallearn::Result<()> {
    let scenarios = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let (cfg, base) = ScenarioConfig::load(&scenarios.join("smoke.json"))?;
    let prep = Prepared::new(&cfg, &base, true)?;
    let lambda_star = prep.unparam.as_ref().expect("solved").lambda_star.clone();

    for e in [-0.2, -0.1, 0.0, 0.1, 0.2] {
        let p = perturbation_value(&prep.train, &[e, e])?;
        println!("P({e:+.1}, {e:+.1}) = {:.6}  feasible = {}", p.value, p.feasible);
    }

    let grid: Vec<Vec<f64>> = (-8..=8)
        .flat_map(|i| (-8..=8).map(move |j| vec![0.05 * i as f64, 0.05 * j as f64]))
        .collect();
    let lambdas = vec![lambda_star, DualVector::new(vec![0.1, 0.1])?];
    let report = fenchel_residual(&prep.train, &lambdas, &grid)?;
    println!("max Fenchel residual over the grid: {:.3e}", report.max_residual);
    Ok(())
}
