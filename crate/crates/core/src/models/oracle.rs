//! Approximate Lagrangian minimization over model parameters.
//!
//! Every step is guarded by halving backtracking, so the accepted Lagrangian
//! values never increase, whichever direction rule proposes the step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelContext, ModelLagrangian, ParamModel};
use crate::problem::{DualVector, FunctionTable, ProblemSpec};

const MAX_HALVINGS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    WarmStartPrevious,
    FreshSeeded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub max_steps: usize,
    pub step_size: f64,
    /// Stop once the gap surrogate falls below this (0 disables).
    #[serde(default)]
    pub rho_target: f64,
    pub init_policy: InitPolicy,
    #[serde(default)]
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Stop once the parameter gradient norm falls below this.
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    /// Keep optimizer moments and the adapted step between successive oracle
    /// calls of one ascent run, like an ordinary training loop.
    #[serde(default)]
    pub carry_state: bool,
}

fn default_grad_tol() -> f64 {
    1e-8
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_steps: 50,
            step_size: 1.0,
            rho_target: 0.0,
            init_policy: InitPolicy::WarmStartPrevious,
            seed: 0,
            optimizer: Optimizer::GradientDescent,
            grad_tol: 1e-8,
            carry_state: false,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Config("oracle max_steps must be positive".into()));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config("oracle step_size must be positive".into()));
        }
        if !(self.rho_target >= 0.0) {
            return Err(Error::Config("oracle rho_target must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OracleOutcome {
    pub model: ParamModel,
    /// `||grad||^2 / (2 mu_hat)` with `mu_hat` the smallest positive secant
    /// curvature seen along accepted steps.
    pub gap_estimate: f64,
    pub grad_norm: f64,
    /// Lagrangian at the initial point followed by every accepted step.
    pub lagrangian_log: Vec<f64>,
    pub value: f64,
    pub objective: f64,
    pub slacks: Vec<f64>,
    pub outputs: FunctionTable,
}

impl OracleOutcome {
    /// Decrease from the initial point to the returned point.
    pub fn decrease(&self) -> f64 {
        self.lagrangian_log[0] - self.value
    }
}

/// Runs the configured descent on `L(f_theta, lambda)` from `init`.
pub fn primal_oracle(problem: &ProblemSpec, lambda: &DualVector, cfg: &OracleConfig, init: &ParamModel) -> Result<OracleOutcome> {
    let ctx = ModelContext::new(problem, init)?;
    minimize(&ctx, lambda.as_slice(), cfg, init)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Optimizer memory that can outlive a single descent.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    velocity: Vec<f64>,
    m1: Vec<f64>,
    m2: Vec<f64>,
    adam_t: i32,
    step: Option<f64>,
}

impl OptimizerState {
    fn reset(&mut self, n: usize) {
        self.velocity = vec![0.0; n];
        self.m1 = vec![0.0; n];
        self.m2 = vec![0.0; n];
        self.adam_t = 0;
    }
}

/// Descent core shared by the oracle and the regression fit. `eval` returns
/// the value and parameter gradient at a model.
pub(crate) fn descend<F>(eval: F, cfg: &OracleConfig, init: &ParamModel) -> Result<Descent>
where
    F: FnMut(&ParamModel) -> Result<(f64, Vec<f64>)>,
{
    descend_with(eval, cfg, init, &mut OptimizerState::default())
}

pub(crate) fn descend_with<F>(mut eval: F, cfg: &OracleConfig, init: &ParamModel, state: &mut OptimizerState) -> Result<Descent>
where
    F: FnMut(&ParamModel) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let mut model = init.clone();
    let (mut value, mut grad) = eval(&model)?;
    let initial = value;
    let mut log = vec![value];
    let mut mu_hat = f64::INFINITY;
    let n = model.theta.len();
    if state.m1.len() != n {
        state.reset(n);
    }
    let mut step = state.step.unwrap_or(cfg.step_size);
    let OptimizerState {
        velocity, m1, m2, adam_t, ..
    } = state;
    let mut gnorm = norm(&grad);

    for _ in 0..cfg.max_steps {
        if gnorm < cfg.grad_tol {
            break;
        }
        if cfg.rho_target > 0.0 && mu_hat.is_finite() && gnorm * gnorm / (2.0 * mu_hat) <= cfg.rho_target {
            break;
        }
        let mut direction: Vec<f64> = match cfg.optimizer {
            Optimizer::GradientDescent => grad.iter().map(|g| -g).collect(),
            Optimizer::Momentum { beta } => {
                for (v, g) in velocity.iter_mut().zip(&grad) {
                    *v = beta * *v - g;
                }
                velocity.clone()
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                *adam_t += 1;
                let c1 = 1.0 - beta1.powi(*adam_t);
                let c2 = 1.0 - beta2.powi(*adam_t);
                m1.iter_mut()
                    .zip(m2.iter_mut())
                    .zip(&grad)
                    .map(|((a, b), g)| {
                        *a = beta1 * *a + (1.0 - beta1) * g;
                        *b = beta2 * *b + (1.0 - beta2) * g * g;
                        -(*a / c1) / ((*b / c2).sqrt() + epsilon)
                    })
                    .collect()
            }
        };
        let mut search = line_search(&mut eval, &model, value, &direction, (2.0 * step).min(cfg.step_size))?;
        if search.accepted.is_none() && !matches!(cfg.optimizer, Optimizer::GradientDescent) && search.last_trial.is_finite() {
            // stateful rules restart from a plain gradient step
            velocity.iter_mut().for_each(|v| *v = 0.0);
            m1.iter_mut().for_each(|v| *v = 0.0);
            m2.iter_mut().for_each(|v| *v = 0.0);
            *adam_t = 0;
            direction = grad.iter().map(|g| -g).collect();
            search = line_search(&mut eval, &model, value, &direction, cfg.step_size)?;
        }
        let trial_step = search.step;
        let Some((cand, v, g)) = search.accepted else {
            if !search.last_trial.is_finite() {
                return Err(Error::Divergence {
                    initial,
                    observed: search.last_trial,
                    suggested_step: trial_step,
                });
            }
            // no decrease at any trial step: stationary to working precision
            break;
        };
        let dtheta: Vec<f64> = direction.iter().map(|d| trial_step * d).collect();
        update_curvature(&mut mu_hat, &dtheta, &grad, &g);
        step = trial_step;
        model = cand;
        value = v;
        grad = g;
        gnorm = norm(&grad);
        log.push(value);
    }
    state.step = Some(step);
    let curvature = if mu_hat.is_finite() { mu_hat } else { 1.0 / cfg.step_size };
    Ok(Descent {
        model,
        gap_estimate: gnorm * gnorm / (2.0 * curvature),
        grad_norm: gnorm,
        log,
    })
}

struct LineSearch {
    accepted: Option<(ParamModel, f64, Vec<f64>)>,
    step: f64,
    last_trial: f64,
}

/// Halving search along `direction` for a point no worse than `value`.
fn line_search<F>(eval: &mut F, model: &ParamModel, value: f64, direction: &[f64], start: f64) -> Result<LineSearch>
where
    F: FnMut(&ParamModel) -> Result<(f64, Vec<f64>)>,
{
    let mut step = start;
    let mut last_trial = f64::NAN;
    for _ in 0..=MAX_HALVINGS {
        let mut cand = model.clone();
        for (t, d) in cand.theta.iter_mut().zip(direction) {
            *t += step * d;
        }
        match eval(&cand) {
            Ok((v, g)) if v.is_finite() && v <= value => {
                return Ok(LineSearch {
                    accepted: Some((cand, v, g)),
                    step,
                    last_trial: v,
                })
            }
            Ok((v, _)) => last_trial = v,
            Err(Error::NonFinite { .. }) => last_trial = f64::NAN,
            Err(e) => return Err(e),
        }
        step *= 0.5;
    }
    Ok(LineSearch {
        accepted: None,
        step,
        last_trial,
    })
}

fn update_curvature(mu_hat: &mut f64, dtheta: &[f64], g_old: &[f64], g_new: &[f64]) {
    let dd: f64 = dtheta.iter().map(|x| x * x).sum();
    if dd == 0.0 {
        return;
    }
    let c: f64 = dtheta.iter().zip(g_new.iter().zip(g_old)).map(|(d, (a, b))| d * (a - b)).sum::<f64>() / dd;
    if c > 0.0 && c < *mu_hat {
        *mu_hat = c;
    }
}

pub(crate) struct Descent {
    pub model: ParamModel,
    pub gap_estimate: f64,
    pub grad_norm: f64,
    pub log: Vec<f64>,
}

/// Oracle against a prepared context (avoids rebuilding the design matrix).
pub(crate) fn minimize(ctx: &ModelContext<'_>, lambda: &[f64], cfg: &OracleConfig, init: &ParamModel) -> Result<OracleOutcome> {
    minimize_on(ctx, ctx, lambda, cfg, init, &mut OptimizerState::default())
}

/// Descends on `descent` (e.g. a mini-batch) and reports the result on `eval`.
/// The gap surrogate uses the full gradient with the curvature seen during descent.
pub(crate) fn minimize_on(
    descent: &ModelContext<'_>,
    eval: &ModelContext<'_>,
    lambda: &[f64],
    cfg: &OracleConfig,
    init: &ParamModel,
    state: &mut OptimizerState,
) -> Result<OracleOutcome> {
    let start = match cfg.init_policy {
        InitPolicy::WarmStartPrevious => init.clone(),
        InitPolicy::FreshSeeded => ParamModel::init(init.arch, init.input_dim, init.output_dim, init.projection.clone(), cfg.seed)?,
    };
    let d = descend_with(
        |m| {
            let r = descent.lagrangian_and_grad(m, lambda)?;
            Ok((r.value, r.grad))
        },
        cfg,
        &start,
        state,
    )?;
    let ModelLagrangian {
        value,
        objective,
        slacks,
        outputs,
        grad,
    } = eval.lagrangian_and_grad(&d.model, lambda)?;
    let (gap_estimate, grad_norm) = if std::ptr::eq(descent, eval) {
        (d.gap_estimate, d.grad_norm)
    } else {
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        let ratio = if d.grad_norm > 0.0 { d.gap_estimate / (d.grad_norm * d.grad_norm) } else { 0.5 * cfg.step_size };
        (g2 * ratio, g2.sqrt())
    };
    Ok(OracleOutcome {
        model: d.model,
        gap_estimate,
        grad_norm,
        lagrangian_log: d.log,
        value,
        objective,
        slacks,
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tests::toy_fairness;
    use crate::models::Arch;
    use crate::problem::{ConstraintSpec, OutputGeometry, PointwiseLoss, RawData, Sample};

    #[test]
    fn least_squares_1d_matches_normal_equations() {
        let xs = [-1.0, -0.3, 0.2, 0.9, 1.5];
        let ys = [-2.1, -0.4, 0.7, 1.6, 3.2];
        let n = xs.len() as f64;
        let samples = xs.iter().zip(&ys).map(|(&x, &y)| Sample::new(vec![x], vec![], y, 1.0 / n)).collect();
        let raw = RawData { samples, schema: vec![] };
        let loose = ConstraintSpec::new(PointwiseLoss::mean_output(vec![]), 100.0);
        let p = ProblemSpec::new(raw, PointwiseLoss::squared(), vec![loose], 1, OutputGeometry::UnconstrainedReals).unwrap();
        let init = ParamModel::init(Arch::Linear, 1, 1, None, 0).unwrap();
        let cfg = OracleConfig {
            max_steps: 5000,
            step_size: 1.0,
            grad_tol: 1e-12,
            ..Default::default()
        };
        let out = primal_oracle(&p, &DualVector::zeros(1), &cfg, &init).unwrap();
        // normal equations
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        let icept = my - slope * mx;
        assert!((out.model.theta[0] - slope).abs() < 1e-6, "{} vs {slope}", out.model.theta[0]);
        assert!((out.model.theta[1] - icept).abs() < 1e-6);
    }

    #[test]
    fn stationary_init_is_returned_unchanged() {
        let p = toy_fairness(10, 1);
        let init = ParamModel::init(Arch::Linear, p.dataset().input_dim(), 2, None, 0).unwrap();
        let cfg = OracleConfig {
            grad_tol: 1e9,
            ..Default::default()
        };
        let out = primal_oracle(&p, &DualVector::zeros(2), &cfg, &init).unwrap();
        assert_eq!(out.model, init);
        assert_eq!(out.lagrangian_log.len(), 1);
    }

    #[test]
    fn accepted_values_never_increase() {
        let p = toy_fairness(60, 2);
        let init = ParamModel::init(Arch::Mlp2 { hidden_width: 8 }, p.dataset().input_dim(), 2, None, 4).unwrap();
        let lambda = DualVector::new(vec![1.5, 0.7]).unwrap();
        for optimizer in [Optimizer::GradientDescent, Optimizer::Momentum { beta: 0.9 }, Optimizer::adam()] {
            let cfg = OracleConfig {
                max_steps: 80,
                step_size: 2.0,
                optimizer,
                ..Default::default()
            };
            let out = primal_oracle(&p, &lambda, &cfg, &init).unwrap();
            assert!(out.lagrangian_log.windows(2).all(|w| w[1] <= w[0]), "{optimizer:?}");
            assert!(out.value <= out.lagrangian_log[0]);
        }
    }
}
