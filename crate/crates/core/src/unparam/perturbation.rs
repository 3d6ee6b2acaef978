//! The perturbation function `P*(eps)` (optimal value with constraints
//! tightened to `ell(phi) + eps <= 0`) and its discrete Fenchel conjugate.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::{DualVector, ProblemSpec};
use crate::unparam::{UnparamConfig, UnparamSolver};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationPoint {
    pub epsilon: Vec<f64>,
    /// `+inf` when the perturbed problem has no strictly feasible point.
    pub value: f64,
    pub feasible: bool,
}

pub fn perturbation_value(problem: &ProblemSpec, epsilon: &[f64]) -> Result<PerturbationPoint> {
    perturbation_value_with(problem, epsilon, &UnparamConfig::default())
}

pub(crate) fn perturbation_value_with(problem: &ProblemSpec, epsilon: &[f64], cfg: &UnparamConfig) -> Result<PerturbationPoint> {
    let shifted = problem.perturbed(epsilon)?;
    match UnparamSolver::new(&shifted)?.solve(cfg) {
        Ok(sol) => Ok(PerturbationPoint {
            epsilon: epsilon.to_vec(),
            value: sol.primal_value,
            feasible: true,
        }),
        Err(Error::Infeasible { .. }) | Err(Error::DualUnbounded { .. }) => Ok(PerturbationPoint {
            epsilon: epsilon.to_vec(),
            value: f64::INFINITY,
            feasible: false,
        }),
        Err(e) => Err(e),
    }
}

/// Writes `eps_1..eps_m, value, feasible` rows.
pub fn write_perturbation_csv(points: &[PerturbationPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let m = points.first().map_or(0, |p| p.epsilon.len());
    let mut header: Vec<String> = (1..=m).map(|i| format!("eps_{i}")).collect();
    header.push("value".into());
    header.push("feasible".into());
    w.write_record(&header)?;
    for p in points {
        let mut rec: Vec<String> = p.epsilon.iter().map(|v| format!("{v:e}")).collect();
        rec.push(if p.feasible { format!("{:e}", p.value) } else { "inf".into() });
        rec.push(p.feasible.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct FenchelReport {
    pub max_residual: f64,
    /// Discrete conjugate `max_eps lambda^T eps - P*(eps)` per grid multiplier.
    pub conjugate: Vec<f64>,
    /// `g_u` per grid multiplier.
    pub dual: Vec<f64>,
    pub points: Vec<PerturbationPoint>,
}

/// Compares the conjugate of `P*` over `epsilon_grid` with `-g_u` on
/// `lambda_grid`. The grid conjugate under-estimates the true one, so the
/// residual shrinks as the grid is refined around the maximizing `eps`.
pub fn fenchel_residual(problem: &ProblemSpec, lambda_grid: &[DualVector], epsilon_grid: &[Vec<f64>]) -> Result<FenchelReport> {
    if lambda_grid.is_empty() || epsilon_grid.is_empty() {
        return Err(Error::Config("fenchel_residual needs nonempty grids".into()));
    }
    let cfg = UnparamConfig::default();
    let points: Vec<PerturbationPoint> = epsilon_grid.iter().map(|e| perturbation_value_with(problem, e, &cfg)).collect::<Result<_>>()?;
    let mut solver = UnparamSolver::new(problem)?;
    let mut conjugate = Vec::with_capacity(lambda_grid.len());
    let mut dual = Vec::with_capacity(lambda_grid.len());
    let mut max_residual: f64 = 0.0;
    for l in lambda_grid {
        let conj = points
            .iter()
            .filter(|p| p.feasible)
            .map(|p| l.as_slice().iter().zip(&p.epsilon).map(|(a, b)| a * b).sum::<f64>() - p.value)
            .fold(f64::NEG_INFINITY, f64::max);
        let g = solver.dual(l.as_slice())?.value;
        max_residual = max_residual.max((conj + g).abs());
        conjugate.push(conj);
        dual.push(g);
    }
    Ok(FenchelReport {
        max_residual,
        conjugate,
        dual,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unparam::tests::one_sample;

    #[test]
    fn zero_perturbation_is_the_optimum() {
        let p = one_sample(0.0);
        let pt = perturbation_value(&p, &[0.0]).unwrap();
        assert!(pt.feasible && (pt.value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn relaxed_constraint_goes_slack() {
        // E[phi] <= 1: the unconstrained minimizer phi = 1 is feasible
        let pt = perturbation_value(&one_sample(0.0), &[-1.0]).unwrap();
        assert!(pt.value.abs() < 1e-8);
    }

    #[test]
    fn dense_grid_matches_closed_form() {
        let p = one_sample(0.0);
        let eps: Vec<Vec<f64>> = (0..=300).map(|k| vec![-1.5 + 0.01 * k as f64]).collect();
        let lambdas: Vec<DualVector> = [0.0, 0.5, 1.0, 2.0, 3.0].iter().map(|&l| DualVector::new(vec![l]).unwrap()).collect();
        let r = fenchel_residual(&p, &lambdas, &eps).unwrap();
        assert!(r.max_residual <= 1e-3, "{}", r.max_residual);
        // closed form: conjugate = lambda^2/4 - lambda
        for (l, c) in lambdas.iter().zip(&r.conjugate) {
            let x = l.as_slice()[0];
            assert!((c - (x * x / 4.0 - x)).abs() <= 1e-3);
        }
    }
}
