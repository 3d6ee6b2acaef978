//! Exact dual quantities for the linear family.
//!
//! With linear models, `L(f_theta, lambda)` is the output-space Lagrangian
//! composed with a linear map, so (for convex losses) its minimum over
//! `theta` is found by Newton's method and `g_p`, `D*_p` and oracle gaps are
//! computable to machine precision.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::{Arch, ModelContext, ParamModel};
use crate::problem::blocks::BlockSystem;
use crate::problem::{DualVector, FunctionTable, ProblemSpec};
use crate::unparam::maximize::{maximize, projected_residual, DualEval, MaximizeConfig};
use crate::unparam::UnparamConfig;

pub struct LinearReference<'a> {
    ctx: ModelContext<'a>,
    system: BlockSystem,
    warm: ParamModel,
}

#[derive(Clone, Debug)]
pub struct LinearDualPoint {
    pub value: f64,
    pub objective: f64,
    pub slacks: Vec<f64>,
    pub model: ParamModel,
}

#[derive(Clone, Debug)]
pub struct LinearSolution {
    pub lambda_star: DualVector,
    pub model: ParamModel,
    pub dual_value: f64,
    /// Objective at the Lagrangian minimizer for `lambda_star`.
    pub primal_value: f64,
    pub slacks: Vec<f64>,
    pub optimality_residual: f64,
}

impl<'a> LinearReference<'a> {
    /// `template` fixes the projection; its parameters are only a warm start.
    pub fn new(problem: &'a ProblemSpec, template: &ParamModel) -> Result<Self> {
        if template.arch != Arch::Linear {
            return Err(Error::Config("the exact reference needs the linear family".into()));
        }
        Ok(Self {
            ctx: ModelContext::new(problem, template)?,
            system: BlockSystem::new(problem),
            warm: template.clone(),
        })
    }

    fn problem(&self) -> &'a ProblemSpec {
        self.ctx.problem
    }

    fn param_grad(&self, model: &ParamModel, table_grad: &[f64]) -> Vec<f64> {
        model.backward(&self.ctx.inputs, None, table_grad)
    }

    /// Parameter index of output `c`, input column `j` (`j == fan_in` is the bias).
    fn index(&self, c: usize, j: usize) -> usize {
        let p = self.warm.fan_in();
        if j == p {
            self.warm.output_dim * p + c
        } else {
            c * p + j
        }
    }

    /// `d^2 L / d theta^2` assembled from the block Hessians in output space.
    fn param_hessian(&self, table: &FunctionTable, coefs: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.warm.output_dim;
        let p = self.warm.fan_in();
        let np = self.warm.param_count();
        let x = &self.ctx.inputs;
        let xbar = |row: usize, j: usize| if j == p { 1.0 } else { x[(row, j)] };
        let mut out = DMatrix::zeros(np, np);
        for b in 0..self.system.blocks.len() {
            let rows = &self.system.blocks[b].rows;
            let v = self.system.gather(b, table);
            let n = v.len();
            let mut g = vec![0.0; n];
            let mut h = vec![0.0; n * n];
            self.system.combined(self.problem(), b, &v, coefs, &mut g, Some(&mut h))?;
            for (lr, &r) in rows.iter().enumerate() {
                for (ls, &s) in rows.iter().enumerate() {
                    for c in 0..d {
                        for c2 in 0..d {
                            let hv = h[(lr * d + c) * n + ls * d + c2];
                            if hv == 0.0 {
                                continue;
                            }
                            for j in 0..=p {
                                let a = hv * xbar(r, j);
                                if a == 0.0 {
                                    continue;
                                }
                                let ri = self.index(c, j);
                                for j2 in 0..=p {
                                    out[(ri, self.index(c2, j2))] += a * xbar(s, j2);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Exact minimizer of `L(f_theta, lambda)` over `theta`.
    pub fn minimize(&mut self, lambda: &[f64]) -> Result<ParamModel> {
        let problem = self.problem();
        let mut coefs = vec![1.0];
        coefs.extend_from_slice(lambda);
        let mut model = self.warm.clone();
        let mut cur = self.ctx.lagrangian_and_grad(&model, lambda)?;
        for _ in 0..100 {
            let gnorm = cur.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm <= 1e-14 {
                break;
            }
            let h = self.param_hessian(&cur.outputs, &coefs)?;
            let rhs = DVector::from_column_slice(&cur.grad);
            // Constraint losses need not be convex in theta; flipping negative
            // curvature keeps the Newton direction a descent direction.
            let eig = h.symmetric_eigen();
            let floor = 1e-13 * eig.eigenvalues.amax().max(1e-300);
            let proj = eig.eigenvectors.transpose() * &rhs;
            let scaled = DVector::from_iterator(
                proj.len(),
                proj.iter().zip(eig.eigenvalues.iter()).map(|(p, e)| if e.abs() > floor { p / e.abs() } else { 0.0 }),
            );
            let step = &eig.eigenvectors * scaled;
            let slope = -step.dot(&rhs);
            // Stop once the Newton decrement is at rounding level.
            if !(slope < -1e-15 * (1.0 + cur.value.abs())) {
                break;
            }
            let mut alpha = 1.0;
            let mut next = None;
            for _ in 0..60 {
                let mut cand = model.clone();
                for (t, s) in cand.theta.iter_mut().zip(step.iter()) {
                    *t -= alpha * s;
                }
                let table = self.ctx.forward(&cand)?;
                if let Ok((v, _)) = problem.lagrangian(&table, lambda) {
                    if v <= cur.value + 1e-4 * alpha * slope {
                        next = Some(cand);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some(cand) = next else { break };
            model = cand;
            cur = self.ctx.lagrangian_and_grad(&model, lambda)?;
        }
        self.warm = model.clone();
        Ok(model)
    }

    /// `g_p(lambda)` for the linear family.
    pub fn dual(&mut self, lambda: &[f64]) -> Result<LinearDualPoint> {
        let model = self.minimize(lambda)?;
        let r = self.ctx.lagrangian_and_grad(&model, lambda)?;
        Ok(LinearDualPoint {
            value: r.value,
            objective: r.objective,
            slacks: r.slacks,
            model,
        })
    }

    /// `L(f_theta, lambda) - g_p(lambda) >= 0` for an arbitrary linear model.
    pub fn exact_gap(&mut self, model: &ParamModel, lambda: &[f64]) -> Result<f64> {
        let achieved = self.ctx.lagrangian_and_grad(model, lambda)?.value;
        let best = self.dual(lambda)?.value;
        Ok((achieved - best).max(0.0))
    }

    fn eval(&mut self, lambda: &[f64], need_hess: bool) -> Result<DualEval> {
        let dp = self.dual(lambda)?;
        let hess = if need_hess {
            let problem = self.problem();
            let table = self.ctx.forward(&dp.model)?;
            let mut coefs = vec![1.0];
            coefs.extend_from_slice(lambda);
            let h = self.param_hessian(&table, &coefs)?;
            let jac: Vec<Vec<f64>> = (1..=problem.m())
                .map(|i| Ok(self.param_grad(&dp.model, &problem.loss_gradient(i, &table)?)))
                .collect::<Result<_>>()?;
            let np = h.nrows();
            let jt = DMatrix::from_fn(np, problem.m(), |r, c| jac[c][r]);
            let pinv = h.pseudo_inverse(1e-13).map_err(|e| Error::Structural(e.to_string()))?;
            Some(-(jt.transpose() * pinv * &jt))
        } else {
            None
        };
        Ok(DualEval {
            value: dp.value,
            grad: dp.slacks,
            hess,
        })
    }

    /// Maximizes `g_p` over `lambda >= 0`, giving `D*_p` for the linear family.
    pub fn solve(&mut self, cfg: &UnparamConfig) -> Result<LinearSolution> {
        let start = vec![0.0; self.problem().m()];
        let best = maximize(
            |l, h| self.eval(l, h),
            &start,
            MaximizeConfig {
                tol: cfg.internal_tol,
                max_iter: cfg.max_iter,
                cap: cfg.lambda_cap,
            },
        )?;
        let lambda = DualVector::projected(best.lambda);
        let dp = self.dual(lambda.as_slice())?;
        Ok(LinearSolution {
            optimality_residual: projected_residual(lambda.as_slice(), &dp.slacks),
            lambda_star: lambda,
            dual_value: dp.value,
            primal_value: dp.objective,
            slacks: dp.slacks,
            model: dp.model,
        })
    }
}
