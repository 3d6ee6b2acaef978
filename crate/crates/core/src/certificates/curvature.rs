//! Empirical curvature of the unparametrized dual along a multiplier segment.

use serde::{Deserialize, Serialize};

use crate::certificates::ConstantEstimates;
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::unparam::UnparamSolver;

/// Relative slack allowed when comparing measured curvature with the envelope.
pub const CURVATURE_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureAudit {
    /// Smallest secant strong-concavity `-(dg . dl) / |dl|^2` between sample points.
    pub mu_empirical: f64,
    /// Largest secant Lipschitz ratio `|dg| / |dl|`.
    pub beta_empirical: f64,
    pub mu_envelope: f64,
    pub beta_envelope: f64,
    pub degenerate: bool,
    pub within_envelope: bool,
}

/// Samples `g_u` and its gradient at `points` evenly spaced points between
/// `a` and `b` and compares secant curvatures with `(mu_g, beta_g)` of `constants`.
pub fn curvature_audit(problem: &ProblemSpec, a: &[f64], b: &[f64], points: usize, constants: &ConstantEstimates) -> Result<CurvatureAudit> {
    if a.len() != problem.m() || b.len() != problem.m() {
        return Err(Error::Shape {
            expected: format!("{} multipliers", problem.m()),
            got: format!("{} and {}", a.len(), b.len()),
        });
    }
    let span: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    if span < 1e-12 {
        return Ok(CurvatureAudit {
            mu_empirical: f64::INFINITY,
            beta_empirical: 0.0,
            mu_envelope: constants.mu_g,
            beta_envelope: constants.beta_g,
            degenerate: true,
            within_envelope: true,
        });
    }
    let k = points.max(2);
    let mut solver = UnparamSolver::new(problem)?;
    let mut samples = Vec::with_capacity(k);
    for j in 0..k {
        let g = j as f64 / (k - 1) as f64;
        let l: Vec<f64> = a.iter().zip(b).map(|(x, y)| (1.0 - g) * x + g * y).collect();
        let grad = solver.dual(&l)?.slacks;
        samples.push((l, grad));
    }
    let mut mu = f64::INFINITY;
    let mut beta: f64 = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let dl: Vec<f64> = samples[j].0.iter().zip(&samples[i].0).map(|(x, y)| x - y).collect();
            let dg: Vec<f64> = samples[j].1.iter().zip(&samples[i].1).map(|(x, y)| x - y).collect();
            let ll: f64 = dl.iter().map(|v| v * v).sum();
            let gl: f64 = dg.iter().zip(&dl).map(|(x, y)| x * y).sum();
            let gg: f64 = dg.iter().map(|v| v * v).sum();
            mu = mu.min(-gl / ll);
            beta = beta.max((gg / ll).sqrt());
        }
    }
    Ok(CurvatureAudit {
        mu_empirical: mu,
        beta_empirical: beta,
        mu_envelope: constants.mu_g,
        beta_envelope: constants.beta_g,
        degenerate: false,
        within_envelope: mu >= constants.mu_g * (1.0 - CURVATURE_TOLERANCE) && beta <= constants.beta_g * (1.0 + CURVATURE_TOLERANCE),
    })
}
