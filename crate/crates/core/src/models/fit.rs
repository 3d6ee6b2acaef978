//! Least-squares regression of a model onto a target function table, used to
//! measure how closely the family approximates a given unparametrized function.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::models::oracle::{descend, OracleConfig};
use crate::models::{Arch, ModelContext, ParamModel, Projection};
use crate::problem::{empirical_l2_distance, FunctionTable, ProblemSpec};

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: ParamModel,
    /// Empirical L2 distance between the fitted outputs and the targets.
    pub residual: f64,
}

/// Fits a fresh seeded member of `arch` (behind `projection`) to `targets`.
pub fn fit_to_targets(
    targets: &FunctionTable,
    arch: Arch,
    projection: Option<Projection>,
    cfg: &OracleConfig,
    problem: &ProblemSpec,
) -> Result<FitOutcome> {
    let init = ParamModel::init(arch, problem.dataset().input_dim(), problem.output_dim(), projection, cfg.seed)?;
    fit_to_targets_from(targets, &init, cfg, problem)
}

/// Fits starting from `init`. The returned residual never exceeds the
/// residual of `init`.
///
/// The output layer is solved in closed form first; the network then
/// descends on all parameters and the output layer is re-solved at the end.
pub fn fit_to_targets_from(targets: &FunctionTable, init: &ParamModel, cfg: &OracleConfig, problem: &ProblemSpec) -> Result<FitOutcome> {
    let ds = problem.dataset();
    if targets.rows() != ds.support_size() || targets.dim() != problem.output_dim() {
        return Err(Error::Shape {
            expected: format!("{}x{} targets", ds.support_size(), problem.output_dim()),
            got: format!("{}x{}", targets.rows(), targets.dim()),
        });
    }
    let ctx = ModelContext::new(problem, init)?;
    let mut model = init.clone();
    solve_output_layer(&ctx, &mut model, targets)?;
    if let Arch::Mlp2 { .. } = model.arch {
        let d = descend(|m| ctx.fit_loss_and_grad(m, targets), cfg, &model)?;
        model = d.model;
        solve_output_layer(&ctx, &mut model, targets)?;
    }
    let fitted = ctx.forward(&model)?;
    let residual = empirical_l2_distance(&fitted, targets, ds)?;
    // the closed-form solves are minimizers, but guard against round-off
    let start = empirical_l2_distance(&ctx.forward(init)?, targets, ds)?;
    if residual > start {
        return Ok(FitOutcome {
            model: init.clone(),
            residual: start,
        });
    }
    Ok(FitOutcome { model, residual })
}

/// Replaces the last affine layer with the weighted least-squares solution.
fn solve_output_layer(ctx: &ModelContext<'_>, model: &mut ParamModel, targets: &FunctionTable) -> Result<()> {
    let features = match model.arch {
        Arch::Linear => ctx.inputs.clone(),
        Arch::Mlp2 { .. } => model.hidden(&ctx.inputs),
    };
    let n = features.nrows();
    let k = features.ncols();
    let d = model.output_dim;
    let mass = ctx.problem.dataset().mass();
    let mut a = DMatrix::zeros(n, k + 1);
    let mut b = DMatrix::zeros(n, d);
    for i in 0..n {
        let s = mass[i].sqrt();
        for c in 0..k {
            a[(i, c)] = s * features[(i, c)];
        }
        a[(i, k)] = s;
        for c in 0..d {
            b[(i, c)] = s * targets.row(i)[c];
        }
    }
    let svd = a.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(1e-300);
    let sol = svd.solve(&b, eps).map_err(|e| Error::Structural(format!("least squares failed: {e}")))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "output-layer least squares".into(),
            sample: 0,
        });
    }
    let off = model.param_count() - (d * k + d);
    for c in 0..d {
        for j in 0..k {
            model.theta[off + c * k + j] = sol[(j, c)];
        }
        model.theta[off + d * k + c] = sol[(k, c)];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tests::toy_fairness;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> OracleConfig {
        OracleConfig {
            max_steps: 200,
            step_size: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn constant_targets_absorbed_by_bias() {
        let p = toy_fairness(30, 1);
        let t = FunctionTable::constant(p.dataset().support_size(), &[0.3, -1.7]);
        for arch in [Arch::Linear, Arch::Mlp2 { hidden_width: 4 }] {
            let f = fit_to_targets(&t, arch, None, &cfg(), &p).unwrap();
            assert!(f.residual <= 1e-6, "{arch:?}: {}", f.residual);
        }
    }

    #[test]
    fn planted_linear_member_is_recovered() {
        let p = toy_fairness(40, 2);
        let mut planted = ParamModel::init(Arch::Linear, p.dataset().input_dim(), 2, None, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        planted.theta.iter_mut().for_each(|t| *t = rng.random_range(-2.0..2.0));
        let t = planted.forward(p.dataset()).unwrap();
        let f = fit_to_targets(&t, Arch::Linear, None, &cfg(), &p).unwrap();
        assert!(f.residual <= 1e-4, "{}", f.residual);
    }

    #[test]
    fn fit_never_worse_than_init() {
        let p = toy_fairness(40, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let vals = (0..p.dataset().support_size() * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = FunctionTable::from_vec(p.dataset().support_size(), 2, vals).unwrap();
        let init = ParamModel::init(Arch::Mlp2 { hidden_width: 6 }, p.dataset().input_dim(), 2, None, 2).unwrap();
        let start = empirical_l2_distance(&init.forward(p.dataset()).unwrap(), &t, p.dataset()).unwrap();
        let f = fit_to_targets_from(&t, &init, &cfg(), &p).unwrap();
        assert!(f.residual <= start);
    }
}
