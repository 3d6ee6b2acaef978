//! Exact solve of the one-sample problem `min E[(phi - 1)^2]  s.t.  E[phi] <= 0`,
//! whose KKT point is `lambda* = 2`, `phi* = 0`, `P* = 1`.

use duallearn::problem::{ConstraintSpec, DualVector, OutputGeometry, PointwiseLoss, ProblemSpec, RawData, Sample};
use duallearn::unparam::{dual_function_unparam, UnparamConfig, UnparamSolver};

fn main() -> duallearn::Result<()> {
    let raw = RawData {
        samples: vec![Sample::new(vec![0.0], vec![], 1.0, 1.0)],
        schema: vec![],
    };
    let problem = ProblemSpec::new(
        raw,
        PointwiseLoss::squared(),
        vec![ConstraintSpec::new(PointwiseLoss::mean_output(vec![]), 0.0)],
        1,
        OutputGeometry::UnconstrainedReals,
    )?;

    for l in [0.0, 1.0, 2.0, 3.0] {
        let (g, slack) = dual_function_unparam(&problem, &DualVector::new(vec![l])?)?;
        println!("g_u({l}) = {g:.6}   slack = {:.6}", slack[0]);
    }

    let sol = UnparamSolver::new(&problem)?.solve(&UnparamConfig::default())?;
    println!(
        "lambda* = {:.10}  phi* = {:.3e}  P* = {:.10}  D* = {:.10}  residual = {:.1e}",
        sol.lambda_star.as_slice()[0],
        sol.phi_star.row(0)[0],
        sol.primal_value,
        sol.dual_value,
        sol.optimality_residual
    );
    Ok(())
}
