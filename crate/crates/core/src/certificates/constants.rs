//! Estimation of the regularity constants the bounds are stated in.
//!
//! Gradient norms and Hessian spectra are measured in the support metric:
//! the Riesz representer of a table gradient `g` has squared norm
//! `sum_k |g_k|^2 / pi_k`, and a block Hessian `H` acts as
//! `D^{-1/2} H D^{-1/2}` with `D = diag(pi)`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dual::DualTrace;
use crate::error::{Error, Result};
use crate::models::fit::fit_to_targets_from;
use crate::models::oracle::OracleConfig;
use crate::models::ParamModel;
use crate::problem::blocks::BlockSystem;
use crate::problem::{DualVector, FunctionTable, LossKind, ProblemSpec};
use crate::unparam::{UnparamSolution, UnparamSolver};

/// Below this `sigma` the constraint Jacobian is treated as rank deficient.
pub const SIGMA_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    Declared,
    ProbeEstimated,
    /// Computed from a surrogate (e.g. the best-iterate multiplier standing in for the optimum).
    Surrogate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimates {
    pub m: usize,
    pub lipschitz: f64,
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub sigma: f64,
    pub nu: f64,
    pub lambda_u_l1: f64,
    pub lambda_p_l1: f64,
    pub lambda_tilde_l1: f64,
    pub delta: f64,
    pub mu_g: f64,
    pub beta_g: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    pub provenance: BTreeMap<String, Provenance>,
}

impl ConstantEstimates {
    /// Fills the derived constants from the primitive ones.
    #[allow(clippy::too_many_arguments)]
    pub fn from_primitives(
        m: usize,
        lipschitz: f64,
        smoothness: f64,
        strong_convexity: f64,
        sigma: f64,
        nu: f64,
        lambda_u_l1: f64,
        lambda_p_l1: f64,
        lambda_tilde_l1: f64,
    ) -> Self {
        let delta = lambda_u_l1.max(lambda_p_l1);
        Self {
            m,
            lipschitz,
            smoothness,
            strong_convexity,
            sigma,
            nu,
            lambda_u_l1,
            lambda_p_l1,
            lambda_tilde_l1,
            delta,
            mu_g: curvature_lower(strong_convexity, sigma, smoothness, delta),
            beta_g: (m as f64).sqrt() * lipschitz * lipschitz / strong_convexity,
            kappa0: smoothness / strong_convexity,
            kappa1: lipschitz / sigma,
            provenance: BTreeMap::new(),
        }
    }

    pub fn with_lambda_tilde(mut self, l1: f64, provenance: Provenance) -> Self {
        self.lambda_tilde_l1 = l1;
        self.provenance.insert("lambda_tilde".into(), provenance);
        self
    }

    pub fn licq_holds(&self) -> bool {
        self.sigma >= SIGMA_FLOOR
    }

    /// Strong-concavity constant with `Delta` computed from an arbitrary multiplier norm.
    pub fn mu_g_for(&self, lambda_l1: f64) -> f64 {
        curvature_lower(self.strong_convexity, self.sigma, self.smoothness, self.lambda_u_l1.max(lambda_l1))
    }
}

fn curvature_lower(mu0: f64, sigma: f64, beta: f64, delta: f64) -> f64 {
    mu0 * sigma * sigma / (beta * beta * (1.0 + delta) * (1.0 + delta))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Random probe tables on top of the solution-path points.
    pub probes: usize,
    pub seed: u64,
    /// Relative size of random perturbations around solution-path tables.
    pub scale: f64,
    /// Fit settings used to measure `nu`.
    pub fit: OracleConfig,
    /// Points on the segment between the optimal multipliers used as `nu` targets.
    pub segment_points: usize,
    /// Additional multipliers whose Lagrangian minimizers are `nu` targets.
    #[serde(default)]
    pub extra_lambdas: Vec<Vec<f64>>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            probes: 200,
            seed: 0,
            scale: 0.5,
            fit: OracleConfig {
                max_steps: 300,
                ..Default::default()
            },
            segment_points: 5,
            extra_lambdas: Vec::new(),
        }
    }
}

/// Support-metric norm of a table gradient.
pub(crate) fn metric_norm(grad: &[f64], mass: &[f64], d: usize) -> f64 {
    let mut s = 0.0;
    for (k, &p) in mass.iter().enumerate() {
        if p > 0.0 {
            s += grad[k * d..(k + 1) * d].iter().map(|g| g * g).sum::<f64>() / p;
        }
    }
    s.sqrt()
}

/// Largest metric gradient norm and Hessian spectral norm over losses `0..=m`
/// and the given tables.
pub fn lipschitz_and_smoothness(problem: &ProblemSpec, tables: &[FunctionTable]) -> Result<(f64, f64)> {
    let system = BlockSystem::new(problem);
    let mass = problem.dataset().mass();
    let d = problem.output_dim();
    let mut lip: f64 = 0.0;
    let mut smooth: f64 = 0.0;
    for table in tables {
        for i in 0..=problem.m() {
            let g = problem.loss_gradient(i, table)?;
            lip = lip.max(metric_norm(&g, mass, d));
        }
        for (b, block) in system.blocks.iter().enumerate() {
            let x = system.gather(b, table);
            let n = x.len();
            let scale: Vec<f64> = block.rows.iter().flat_map(|&r| std::iter::repeat_n(1.0 / mass[r].sqrt(), d)).collect();
            for i in 0..=problem.m() {
                let mut h = vec![0.0; n * n];
                system.accumulate(problem, b, &x, i, 1.0, None, Some(&mut h))?;
                if h.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let hm = DMatrix::from_fn(n, n, |r, c| 0.5 * (h[r * n + c] + h[c * n + r]) * scale[r] * scale[c]);
                let top = hm.symmetric_eigenvalues().iter().fold(0.0f64, |a, v| a.max(v.abs()));
                smooth = smooth.max(top);
            }
        }
    }
    Ok((lip, smooth))
}

/// Strong convexity of the objective in the support metric, when it has a closed form.
pub fn objective_strong_convexity(problem: &ProblemSpec) -> Option<f64> {
    let obj = problem.objective();
    if let Some(mu) = obj.declared.strong_convexity {
        return Some(mu);
    }
    let tau = obj.regularizer;
    match obj.kind {
        LossKind::SquaredError => {
            let mut w = vec![0.0; problem.dataset().support_size()];
            for t in problem.terms(0) {
                w[t.row] += t.weight;
            }
            let min_ratio = w
                .iter()
                .zip(problem.dataset().mass())
                .filter(|(_, p)| **p > 0.0)
                .map(|(w, p)| w / p)
                .fold(f64::INFINITY, f64::min);
            Some(2.0 * min_ratio + tau)
        }
        // softmax cross-entropy is convex but flat along constant logit shifts
        LossKind::CrossEntropy | LossKind::KlPair => Some(tau),
        LossKind::MeanOutput => Some(tau),
    }
}

/// `sigma`: square root of the smallest eigenvalue of the constraint Jacobian Gram at `table`.
pub fn jacobian_sigma(problem: &ProblemSpec, table: &FunctionTable) -> Result<f64> {
    let solver = UnparamSolver::new(problem)?;
    let k = solver.jacobian_gram(table)?;
    let low = k.symmetric_eigenvalues().iter().fold(f64::INFINITY, |a, v| a.min(*v));
    Ok(low.max(0.0).sqrt())
}

fn segment(a: &[f64], b: &[f64], points: usize) -> Vec<Vec<f64>> {
    let k = points.max(2);
    (0..k)
        .map(|j| {
            let g = j as f64 / (k - 1) as f64;
            a.iter().zip(b).map(|(x, y)| (1.0 - g) * x + g * y).collect()
        })
        .collect()
}

/// Largest fit residual of the family (starting from `start`) over `targets`.
pub fn fit_residual(problem: &ProblemSpec, start: &ParamModel, targets: &[FunctionTable], fit: &OracleConfig) -> Result<f64> {
    let mut nu: f64 = 0.0;
    for t in targets {
        nu = nu.max(fit_to_targets_from(t, start, fit, problem)?.residual);
    }
    Ok(nu)
}

/// Estimates every constant from the problem, its exact solution and a dual-ascent run.
///
/// `lambda_p` stands in for the parametrized dual optimum (the best iterate
/// unless an exact reference is available). `lambda_tilde_l1` starts equal to
/// `||lambda_p||_1`; use [`ConstantEstimates::with_lambda_tilde`] once the
/// tilted ascent has run.
pub fn estimate_constants(
    problem: &ProblemSpec,
    unparam: &UnparamSolution,
    trace: &DualTrace,
    lambda_p: &DualVector,
    cfg: &ProbeConfig,
) -> Result<ConstantEstimates> {
    let mut solver = UnparamSolver::new(problem)?;
    let lu = unparam.lambda_star.as_slice();
    let lp = lambda_p.as_slice();
    let mut lambdas = segment(lu, lp, cfg.segment_points);
    lambdas.extend(cfg.extra_lambdas.iter().cloned());
    let mut path = vec![unparam.phi_star.clone()];
    for l in &lambdas {
        if l.len() != problem.m() {
            return Err(Error::Shape {
                expected: format!("{} multipliers", problem.m()),
                got: format!("{}", l.len()),
            });
        }
        path.push(solver.minimize(l)?);
    }
    let nu_targets = path.clone();
    let best = trace.best_model()?;
    let last = trace.last_model()?;
    let ctx_tables = [best.forward(problem.dataset())?, last.forward(problem.dataset())?];
    path.extend(ctx_tables);

    let mut probes = path.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pick = Uniform::new(0, path.len()).map_err(|e| Error::Config(e.to_string()))?;
    let mix = Uniform::new(0.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    for _ in 0..cfg.probes {
        let a = &path[pick.sample(&mut rng)];
        let b = &path[pick.sample(&mut rng)];
        let g: f64 = mix.sample(&mut rng);
        let rms = (a.as_slice().iter().map(|v| v * v).sum::<f64>() / a.as_slice().len().max(1) as f64).sqrt();
        let s = cfg.scale * (1.0 + rms);
        let vals: Vec<f64> = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (1.0 - g) * x + g * y + s * z
            })
            .collect();
        probes.push(FunctionTable::from_vec(a.rows(), a.dim(), vals)?);
    }

    let mut provenance = BTreeMap::new();
    let (mut lip, mut smooth) = lipschitz_and_smoothness(problem, &probes)?;
    provenance.insert("lipschitz".into(), Provenance::ProbeEstimated);
    provenance.insert("smoothness".into(), Provenance::ProbeEstimated);
    let losses: Vec<_> = (0..=problem.m()).map(|i| problem.loss(i)).collect();
    if losses.iter().all(|l| l.declared.lipschitz.is_some()) {
        lip = losses.iter().filter_map(|l| l.declared.lipschitz).fold(0.0, f64::max);
        provenance.insert("lipschitz".into(), Provenance::Declared);
    }
    if losses.iter().all(|l| l.declared.smoothness.is_some()) {
        smooth = losses.iter().filter_map(|l| l.declared.smoothness).fold(0.0, f64::max);
        provenance.insert("smoothness".into(), Provenance::Declared);
    }
    let mu0 = objective_strong_convexity(problem).ok_or_else(|| Error::Config("no strong convexity constant for the objective".into()))?;
    provenance.insert(
        "strong_convexity".into(),
        if problem.objective().declared.strong_convexity.is_some() {
            Provenance::Declared
        } else {
            Provenance::Analytic
        },
    );
    let sigma = jacobian_sigma(problem, &unparam.phi_star)?;
    provenance.insert("sigma".into(), Provenance::Analytic);
    let nu = fit_residual(problem, best, &nu_targets, &cfg.fit)?;
    provenance.insert("nu".into(), Provenance::ProbeEstimated);
    provenance.insert("lambda_p".into(), Provenance::Surrogate);
    provenance.insert("lambda_tilde".into(), Provenance::Surrogate);
    let mut c = ConstantEstimates::from_primitives(
        problem.m(),
        lip,
        smooth,
        mu0,
        sigma,
        nu,
        unparam.lambda_star.l1(),
        lambda_p.l1(),
        lambda_p.l1(),
    );
    c.provenance = provenance;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ConstraintSpec, OutputGeometry, PointwiseLoss, RawData, Sample};
    use crate::unparam::tests::one_sample;

    #[test]
    fn squared_error_curvature_is_two() {
        let p = one_sample(0.0);
        assert_eq!(objective_strong_convexity(&p), Some(2.0));
    }

    #[test]
    fn mean_constraint_with_unit_weights_has_unit_sigma() {
        let n = 4;
        let samples = (0..n).map(|i| Sample::new(vec![i as f64], vec![], 0.0, 1.0 / n as f64)).collect();
        let raw = RawData { samples, schema: vec![] };
        let c = ConstraintSpec::new(PointwiseLoss::mean_output(vec![]), 0.0);
        let p = ProblemSpec::new(raw, PointwiseLoss::squared(), vec![c], 1, OutputGeometry::UnconstrainedReals).unwrap();
        let table = FunctionTable::zeros(n, 1);
        // Jacobian row is the weight vector; its metric norm is sqrt(sum w^2 / w) = 1
        assert!((jacobian_sigma(&p, &table).unwrap() - 1.0).abs() < 1e-12);
        // a duplicated constraint makes the Gram singular
        let c = ConstraintSpec::new(PointwiseLoss::mean_output(vec![]), 0.0);
        let samples = (0..n).map(|i| Sample::new(vec![i as f64], vec![], 0.0, 1.0 / n as f64)).collect();
        let p = ProblemSpec::new(RawData { samples, schema: vec![] }, PointwiseLoss::squared(), vec![c.clone(), c], 1, OutputGeometry::UnconstrainedReals)
            .unwrap();
        assert!(jacobian_sigma(&p, &table).unwrap() < SIGMA_FLOOR);
    }

    #[test]
    fn one_sample_smoothness_is_objective_curvature() {
        let p = one_sample(0.0);
        let (lip, beta) = lipschitz_and_smoothness(&p, &[FunctionTable::from_vec(1, 1, vec![0.0]).unwrap()]).unwrap();
        // gradients: objective 2(phi - 1) = -2, constraint 1
        assert!((lip - 2.0).abs() < 1e-12);
        assert!((beta - 2.0).abs() < 1e-12);
    }

    #[test]
    fn derived_constants_follow_their_formulas() {
        let c = ConstantEstimates::from_primitives(3, 2.0, 4.0, 0.5, 0.3, 0.1, 1.0, 2.0, 1.5);
        assert_eq!(c.delta, 2.0);
        assert_eq!(c.mu_g, 0.5 * 0.09 / (16.0 * 9.0));
        assert_eq!(c.beta_g, 3f64.sqrt() * 4.0 / 0.5);
        assert_eq!(c.kappa0, 8.0);
        assert_eq!(c.kappa1, 2.0 / 0.3);
    }
}
