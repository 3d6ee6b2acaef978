//! Exact solution of the convex problem over all function tables on the
//! finite support: Lagrangian minimizers, the differentiable dual function,
//! optimal multipliers and the perturbation function.

pub(crate) mod maximize;
mod perturbation;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::blocks::BlockSystem;
use crate::problem::{DualVector, FunctionTable, ProblemSpec};

pub use perturbation::{fenchel_residual, perturbation_value, write_perturbation_csv, FenchelReport, PerturbationPoint};

use maximize::{maximize, DualEval, MaximizeConfig};

/// Newton iteration limits for a single block.
const BLOCK_MAX_ITER: usize = 100;
const BLOCK_GRAD_TOL: f64 = 1e-13;

/// Solver for the unparametrized problem. Keeps the last Lagrangian
/// minimizer to warm-start the next one.
pub struct UnparamSolver<'a> {
    problem: &'a ProblemSpec,
    system: BlockSystem,
    warm: FunctionTable,
}

/// `g_u(lambda)` with its gradient (the slacks at the minimizer).
#[derive(Clone, Debug)]
pub struct DualPoint {
    pub value: f64,
    pub slacks: Vec<f64>,
    pub objective: f64,
    pub minimizer: FunctionTable,
}

impl<'a> UnparamSolver<'a> {
    pub fn new(problem: &'a ProblemSpec) -> Result<Self> {
        problem.check_strongly_convex()?;
        Ok(Self {
            problem,
            system: BlockSystem::new(problem),
            warm: FunctionTable::zeros(problem.dataset().support_size(), problem.output_dim()),
        })
    }

    pub fn problem(&self) -> &ProblemSpec {
        self.problem
    }

    /// Unique minimizer of `L(., lambda)`, computed block by block.
    pub fn minimize(&mut self, lambda: &[f64]) -> Result<FunctionTable> {
        if lambda.len() != self.problem.m() || lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Structural(format!("need {} nonnegative multipliers", self.problem.m())));
        }
        let mut coefs = vec![1.0];
        coefs.extend_from_slice(lambda);
        let mut table = self.warm.clone();
        for b in 0..self.system.blocks.len() {
            let x0 = self.system.gather(b, &table);
            let x = self.newton_block(b, x0, &coefs)?;
            self.system.scatter(b, &x, &mut table);
        }
        self.warm = table.clone();
        Ok(table)
    }

    fn newton_block(&self, b: usize, mut x: Vec<f64>, coefs: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        let mut value = self.system.combined(self.problem, b, &x, coefs, &mut g, Some(&mut h))?;
        for _ in 0..BLOCK_MAX_ITER {
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm <= BLOCK_GRAD_TOL {
                break;
            }
            let step = newton_step(&h, &g, n);
            let slope: f64 = step.iter().zip(&g).map(|(s, g)| s * g).sum();
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + alpha * s).collect();
                let v = self.system.combined_value(self.problem, b, &cand, coefs);
                if let Ok(v) = v {
                    if v <= value + 1e-4 * alpha * slope {
                        moved = cand != x;
                        x = cand;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
            value = self.system.combined(self.problem, b, &x, coefs, &mut g, Some(&mut h))?;
        }
        Ok(x)
    }

    /// `g_u(lambda)` and the slacks at the minimizer.
    pub fn dual(&mut self, lambda: &[f64]) -> Result<DualPoint> {
        let minimizer = self.minimize(lambda)?;
        let objective = self.problem.objective_value(&minimizer)?;
        let slacks = self.problem.slacks(&minimizer)?;
        let value = objective + lambda.iter().zip(&slacks).map(|(l, s)| l * s).sum::<f64>();
        Ok(DualPoint {
            value,
            slacks,
            objective,
            minimizer,
        })
    }

    /// `-J H^{-1} J^T` at the minimizer `table` for multipliers `lambda`.
    pub fn dual_hessian(&self, table: &FunctionTable, lambda: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.problem.m();
        let mut coefs = vec![1.0];
        coefs.extend_from_slice(lambda);
        let mut out = DMatrix::zeros(m, m);
        for b in 0..self.system.blocks.len() {
            let x = self.system.gather(b, table);
            let n = x.len();
            let jac = self.system.constraint_grads(self.problem, b, &x)?;
            if jac.iter().all(|r| r.iter().all(|v| *v == 0.0)) {
                continue;
            }
            let mut g = vec![0.0; n];
            let mut h = vec![0.0; n * n];
            self.system.combined(self.problem, b, &x, &coefs, &mut g, Some(&mut h))?;
            let hm = regularized(&h, n);
            let jt = DMatrix::from_fn(n, m, |r, c| jac[c][r]);
            let sol = match hm.clone().cholesky() {
                Some(ch) => ch.solve(&jt),
                None => hm.pseudo_inverse(1e-14).map_err(|e| Error::Structural(e.to_string()))? * &jt,
            };
            out -= jt.transpose() * sol;
        }
        Ok(out)
    }

    /// Constraint Jacobian Gram matrix in the support metric,
    /// `K_ij = sum_k <grad_k l_i, grad_k l_j> / pi_k`, at `table`.
    pub fn jacobian_gram(&self, table: &FunctionTable) -> Result<DMatrix<f64>> {
        let m = self.problem.m();
        let d = self.problem.output_dim();
        let mass = self.problem.dataset().mass();
        let grads: Vec<Vec<f64>> = (1..=m).map(|i| self.problem.loss_gradient(i, table)).collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(m, m, |i, j| {
            let mut s = 0.0;
            for (k, &p) in mass.iter().enumerate() {
                if p > 0.0 {
                    for c in 0..d {
                        s += grads[i][k * d + c] * grads[j][k * d + c] / p;
                    }
                }
            }
            s
        }))
    }

    /// Maximizes `g_u` over `lambda >= 0`.
    pub fn solve(&mut self, cfg: &UnparamConfig) -> Result<UnparamSolution> {
        self.phase_one(cfg)?;
        let start = vec![0.0; self.problem.m()];
        let best = maximize(
            |l, need_hess| self.eval(l, need_hess),
            &start,
            MaximizeConfig {
                tol: cfg.internal_tol,
                max_iter: cfg.max_iter,
                cap: cfg.lambda_cap,
            },
        )?;
        let lambda = DualVector::projected(best.lambda);
        let dual = self.dual(lambda.as_slice())?;
        let residual = maximize::projected_residual(lambda.as_slice(), &dual.slacks);
        let kkt = lambda.as_slice().iter().zip(&dual.slacks).map(|(l, s)| l * s).collect();
        Ok(UnparamSolution {
            lambda_star: lambda,
            dual_value: dual.value,
            primal_value: dual.objective,
            slacks: dual.slacks,
            kkt_residuals: kkt,
            optimality_residual: residual,
            iterations: best.iterations,
            phi_star: dual.minimizer,
        })
    }

    /// Looks for a strictly feasible table by descending a smoothed maximum
    /// of the slacks; stops as soon as every slack is negative.
    pub fn phase_one(&mut self, cfg: &UnparamConfig) -> Result<FunctionTable> {
        let p = self.problem;
        let m = p.m();
        let kappa = cfg.phase_one_sharpness;
        let mut table = FunctionTable::zeros(p.dataset().support_size(), p.output_dim());
        let eval = |t: &FunctionTable| -> Result<(f64, Vec<f64>, Vec<f64>)> {
            let s = p.slacks(t)?;
            let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = s.iter().map(|v| (kappa * (v - top)).exp()).collect();
            let z: f64 = w.iter().sum();
            let value = top + z.ln() / kappa;
            let mut grad = vec![0.0; t.as_slice().len()];
            for i in 0..m {
                let gi = p.loss_gradient(i + 1, t)?;
                for (a, b) in grad.iter_mut().zip(gi) {
                    *a += w[i] / z * b;
                }
            }
            Ok((value, grad, s))
        };
        let (mut value, mut grad, mut slacks) = eval(&table)?;
        let mut best = slacks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut best_slacks = slacks.clone();
        let mut step: f64 = 1.0;
        for _ in 0..cfg.phase_one_steps {
            let top = slacks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if top < best {
                best = top;
                best_slacks = slacks.clone();
            }
            if top < 0.0 {
                return Ok(table);
            }
            // steepest descent in the support metric (gradient scaled by 1/pi)
            let mass = p.dataset().mass();
            let d = p.output_dim();
            let dir: Vec<f64> = grad
                .iter()
                .enumerate()
                .map(|(k, g)| if mass[k / d] > 0.0 { -g / mass[k / d] } else { 0.0 })
                .collect();
            let slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
            if slope.abs() < 1e-30 {
                break;
            }
            let mut accepted = false;
            let mut trial = (2.0 * step).min(1e6);
            for _ in 0..60 {
                let cand = FunctionTable::from_vec(table.rows(), table.dim(), table.as_slice().iter().zip(&dir).map(|(a, b)| a + trial * b).collect())?;
                if let Ok((v, g, s)) = eval(&cand) {
                    if v <= value + 1e-4 * trial * slope {
                        table = cand;
                        value = v;
                        grad = g;
                        slacks = s;
                        accepted = true;
                        step = trial;
                        break;
                    }
                }
                trial *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let top = slacks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if top < 0.0 {
            return Ok(table);
        }
        if top < best {
            best = top;
            best_slacks = slacks;
        }
        Err(Error::Infeasible {
            best_max_slack: best,
            witness_slacks: best_slacks,
        })
    }

    fn eval(&mut self, lambda: &[f64], need_hess: bool) -> Result<DualEval> {
        let dp = self.dual(lambda)?;
        let hess = if need_hess { Some(self.dual_hessian(&dp.minimizer, lambda)?) } else { None };
        Ok(DualEval {
            value: dp.value,
            grad: dp.slacks,
            hess,
        })
    }
}

fn regularized(h: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_row_slice(n, n, h);
    for i in 0..n {
        m[(i, i)] += 1e-12;
    }
    m
}

/// Newton step `-H^{-1} g`, with a Levenberg shift when `H` is not positive definite.
fn newton_step(h: &[f64], g: &[f64], n: usize) -> Vec<f64> {
    let base = regularized(h, n);
    let rhs = DVector::from_column_slice(g);
    let scale = (0..n).map(|i| base[(i, i)].abs()).fold(0.0, f64::max).max(1e-12);
    let mut shift = 0.0;
    loop {
        let mut a = base.clone();
        for i in 0..n {
            a[(i, i)] += shift;
        }
        if let Some(ch) = a.cholesky() {
            return ch.solve(&rhs).iter().map(|v| -v).collect();
        }
        shift = if shift == 0.0 { 1e-8 * scale } else { shift * 10.0 };
        if shift > 1e8 * scale {
            return g.iter().map(|v| -v / scale).collect();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnparamConfig {
    /// Projected-residual tolerance of the dual maximization.
    pub internal_tol: f64,
    pub max_iter: usize,
    pub lambda_cap: f64,
    pub phase_one_steps: usize,
    pub phase_one_sharpness: f64,
}

impl Default for UnparamConfig {
    fn default() -> Self {
        Self {
            internal_tol: 1e-11,
            max_iter: 200,
            lambda_cap: 1e6,
            phase_one_steps: 2000,
            phase_one_sharpness: 100.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnparamSolution {
    pub lambda_star: DualVector,
    #[serde(skip)]
    pub phi_star: FunctionTable,
    pub dual_value: f64,
    pub primal_value: f64,
    pub slacks: Vec<f64>,
    /// `lambda_i * slack_i` per constraint.
    pub kkt_residuals: Vec<f64>,
    /// `||lambda - max(0, lambda + grad g)||_inf` at the returned multipliers.
    pub optimality_residual: f64,
    pub iterations: usize,
}

impl UnparamSolution {
    pub fn duality_gap(&self) -> f64 {
        (self.primal_value - self.dual_value).abs()
    }

    /// Writes `unparam.json` and the minimizer as `phi_star.csv` (`row, out_1..out_d`).
    pub fn write(&self, json: &Path, phi_csv: &Path) -> Result<()> {
        std::fs::write(json, serde_json::to_string_pretty(self)? + "\n")?;
        let mut w = csv::Writer::from_path(phi_csv)?;
        let d = self.phi_star.dim();
        let mut header = vec!["row".to_string()];
        header.extend((1..=d).map(|c| format!("out_{c}")));
        w.write_record(&header)?;
        for r in 0..self.phi_star.rows() {
            let mut rec = vec![r.to_string()];
            rec.extend(self.phi_star.row(r).iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Unique minimizer of `L(., lambda)` over function tables.
pub fn minimize_lagrangian_unparam(problem: &ProblemSpec, lambda: &DualVector) -> Result<FunctionTable> {
    UnparamSolver::new(problem)?.minimize(lambda.as_slice())
}

/// `(g_u(lambda), grad g_u(lambda))`; the gradient is the slack vector at the minimizer.
pub fn dual_function_unparam(problem: &ProblemSpec, lambda: &DualVector) -> Result<(f64, Vec<f64>)> {
    let dp = UnparamSolver::new(problem)?.dual(lambda.as_slice())?;
    Ok((dp.value, dp.slacks))
}

pub fn solve_unparam_dual(problem: &ProblemSpec, cfg: &UnparamConfig) -> Result<UnparamSolution> {
    UnparamSolver::new(problem)?.solve(cfg)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::problem::{AttributeSchema, ConstraintSpec, OutputGeometry, PointwiseLoss, RawData, Sample, Transform};

    pub(crate) fn one_sample(level: f64) -> ProblemSpec {
        let raw = RawData {
            samples: vec![Sample::new(vec![0.0], vec![], 1.0, 1.0)],
            schema: vec![],
        };
        ProblemSpec::new(
            raw,
            PointwiseLoss::squared(),
            vec![ConstraintSpec::new(PointwiseLoss::mean_output(vec![]), level)],
            1,
            OutputGeometry::UnconstrainedReals,
        )
        .unwrap()
    }

    #[test]
    fn one_sample_minimizer() {
        let p = one_sample(0.0);
        let phi = minimize_lagrangian_unparam(&p, &DualVector::zeros(1)).unwrap();
        assert!((phi.row(0)[0] - 1.0).abs() < 1e-12);
        let phi = minimize_lagrangian_unparam(&p, &DualVector::new(vec![1.0]).unwrap()).unwrap();
        assert!((phi.row(0)[0] - 0.5).abs() < 1e-12);
        let (g, s) = dual_function_unparam(&p, &DualVector::new(vec![1.0]).unwrap()).unwrap();
        assert!((g - 0.75).abs() < 1e-12 && (s[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_sample_kkt() {
        let sol = solve_unparam_dual(&one_sample(0.0), &UnparamConfig::default()).unwrap();
        assert!((sol.lambda_star.as_slice()[0] - 2.0).abs() < 1e-8);
        assert!(sol.phi_star.row(0)[0].abs() < 1e-8);
        assert!((sol.primal_value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn loose_constraint_is_inactive() {
        let sol = solve_unparam_dual(&one_sample(50.0), &UnparamConfig::default()).unwrap();
        assert_eq!(sol.lambda_star.as_slice(), &[0.0]);
        assert!((sol.phi_star.row(0)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_without_regularizer_is_rejected() {
        let raw = RawData {
            samples: vec![Sample::new(vec![0.0], vec![0], 1.0, 1.0)],
            schema: vec![AttributeSchema::new("g", 2)],
        };
        let p = ProblemSpec::new(
            raw,
            PointwiseLoss::cross_entropy(0.0),
            vec![ConstraintSpec::counterfactual(Transform::swap(0, 0, 1), 0.01)],
            2,
            OutputGeometry::ProbabilitySimplexViaLogits,
        )
        .unwrap();
        assert!(matches!(minimize_lagrangian_unparam(&p, &DualVector::zeros(1)), Err(Error::Config(_))));
    }

    #[test]
    fn infeasible_is_reported() {
        let raw = RawData {
            samples: vec![Sample::new(vec![0.0], vec![], 1.0, 1.0)],
            schema: vec![],
        };
        // E[phi] <= -1 and -E[phi] <= -1
        let p = ProblemSpec::new(
            raw,
            PointwiseLoss::squared(),
            vec![
                ConstraintSpec::new(PointwiseLoss::mean_output(vec![]), -1.0),
                ConstraintSpec::new(PointwiseLoss::mean_output(vec![-1.0]), -1.0),
            ],
            1,
            OutputGeometry::UnconstrainedReals,
        )
        .unwrap();
        match solve_unparam_dual(&p, &UnparamConfig::default()) {
            Err(Error::Infeasible { best_max_slack, .. }) => assert!(best_max_slack >= 0.0),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn kl_shrinks_as_multiplier_grows() {
        let raw = RawData {
            samples: vec![
                Sample::new(vec![1.0], vec![0], 1.0, 0.5),
                Sample::new(vec![-1.0], vec![1], 0.0, 0.5),
            ],
            schema: vec![AttributeSchema::new("g", 2)],
        };
        let p = ProblemSpec::new(
            raw,
            PointwiseLoss::cross_entropy(0.1),
            vec![ConstraintSpec::counterfactual(Transform::swap(0, 0, 1), 0.0)],
            2,
            OutputGeometry::ProbabilitySimplexViaLogits,
        )
        .unwrap();
        let mut solver = UnparamSolver::new(&p).unwrap();
        let mut prev = f64::INFINITY;
        for l in [0.0, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0] {
            let kl = solver.dual(&[l]).unwrap().slacks[0];
            assert!(kl <= prev + 1e-15, "lambda {l}: {kl} > {prev}");
            prev = kl;
        }
    }
}
