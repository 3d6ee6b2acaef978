//! Near-optimality and near-feasibility bounds evaluated as checkable certificates.

pub mod constants;
pub mod curvature;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dual::DualTrace;
use crate::error::Result;
use crate::problem::{DualVector, ProblemSpec};
use crate::unparam::{UnparamSolution, UnparamSolver};

pub use constants::{estimate_constants, ConstantEstimates, ProbeConfig, Provenance, SIGMA_FLOOR};
pub use curvature::{curvature_audit, CurvatureAudit};

/// A bound above this multiple of the quantity's observed range is reported as vacuous.
pub const VACUITY_FACTOR: f64 = 10.0;

/// Duality-gap bound `M nu (1 + ||lambda_tilde||_1)`.
pub fn gamma1(c: &ConstantEstimates) -> f64 {
    c.lipschitz * c.nu * (1.0 + c.lambda_tilde_l1)
}

/// Constraint-deviation bound `M [1 + k1 k0 (1 + Delta)] sqrt(2 m M nu / mu0 (1 + ||lambda_p||_1))`.
pub fn gamma2(c: &ConstantEstimates) -> f64 {
    let root = (2.0 * c.m as f64 * c.lipschitz * c.nu / c.strong_convexity * (1.0 + c.lambda_p_l1)).sqrt();
    c.lipschitz * (1.0 + c.kappa1 * c.kappa0 * (1.0 + c.delta)) * root
}

/// Bound on `|P_p - l_0(f_theta(lambda_p))|`.
pub fn objective_gap_bound(c: &ConstantEstimates) -> f64 {
    (1.0 + c.lambda_p_l1) * c.lipschitz * c.nu + gamma1(c) + c.lambda_p_l1 * gamma2(c)
}

/// Bound on `||l(f_theta(lambda_p)) - l(phi*)||_2^2`.
pub fn constraint_deviation_bound(c: &ConstantEstimates) -> f64 {
    let r = 1.0 + (c.beta_g / c.mu_g).sqrt();
    2.0 * c.beta_g * c.lipschitz * c.nu * (1.0 + c.lambda_p_l1) * r * r
}

/// Bound on `||l(phi(lambda_p)) - l(phi*)||_2^2`.
pub fn unparam_sensitivity_bound(c: &ConstantEstimates) -> f64 {
    2.0 * c.beta_g * c.beta_g / c.mu_g * c.lipschitz * c.nu * (1.0 + c.lambda_p_l1)
}

/// Bound on `||l(phi(lambda_p)) - l(f_theta(lambda_p))||_2^2`.
pub fn parametrization_gap_bound(c: &ConstantEstimates) -> f64 {
    2.0 * c.beta_g * c.lipschitz * c.nu * (1.0 + c.lambda_p_l1)
}

/// Bound on `||lambda_p - lambda_u||_2^2`.
pub fn dual_distance_bound(c: &ConstantEstimates) -> f64 {
    2.0 * c.lipschitz * c.nu / c.mu_g * (1.0 + c.lambda_p_l1)
}

/// Bound on `||l(phi*) - l(f_theta(lambda_best))||_2^2` for an ascent run
/// with step `eta`, second-moment bound `s2` and oracle accuracy `rho`.
pub fn best_iterate_bound(c: &ConstantEstimates, lambda_best_l1: f64, eta: f64, s2: f64, rho: f64) -> f64 {
    let mu = c.mu_g_for(lambda_best_l1);
    let r = 1.0 + (c.beta_g / mu).sqrt();
    2.0 * c.beta_g * (c.lipschitz * c.nu * (1.0 + lambda_best_l1) + eta * s2 / 2.0 + rho) * r * r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    /// Holds, but the bound exceeds the observed range of the quantity by more than [`VACUITY_FACTOR`].
    HoldsVacuous,
    Violated,
    /// An assumption the bound relies on (constraint qualification) fails.
    NotApplicable,
    /// The observed side could not be computed.
    NotEvaluated,
}

impl Verdict {
    pub fn is_violation(self) -> bool {
        self == Verdict::Violated
    }

    pub fn holds(self) -> bool {
        matches!(self, Verdict::Holds | Verdict::HoldsVacuous)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub name: String,
    pub statement: String,
    pub observed: Option<f64>,
    pub bound: f64,
    /// Observed dynamic range the vacuity test compares against.
    pub scale: f64,
    /// `bound - observed`.
    pub margin: Option<f64>,
    pub verdict: Verdict,
}

/// Classifies `observed <= bound` with a relative tolerance.
pub fn judge(observed: Option<f64>, bound: f64, scale: f64, applicable: bool) -> Verdict {
    if !applicable {
        return Verdict::NotApplicable;
    }
    let Some(o) = observed else {
        return Verdict::NotEvaluated;
    };
    if !o.is_finite() {
        return Verdict::NotEvaluated;
    }
    let tol = 1e-9 * (1.0 + bound.abs().min(1e12));
    if o > bound + tol {
        Verdict::Violated
    } else if bound > VACUITY_FACTOR * scale {
        Verdict::HoldsVacuous
    } else {
        Verdict::Holds
    }
}

fn certificate(name: &str, statement: &str, observed: Option<f64>, bound: f64, scale: f64, applicable: bool) -> Certificate {
    Certificate {
        name: name.into(),
        statement: statement.into(),
        observed,
        bound,
        scale,
        margin: observed.map(|o| bound - o),
        verdict: judge(observed, bound, scale, applicable),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    /// Largest slack for an iterate to count as feasible when estimating `P_p`.
    pub feasibility_tol: f64,
    /// Exact parametrized values, when the family admits an exact reference.
    pub exact: Option<ExactReference>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactReference {
    pub primal_value: f64,
    pub dual_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub lambda_p: DualVector,
    pub lambda_u: DualVector,
    pub slacks_model: Vec<f64>,
    pub slacks_unparam_at_lambda_p: Vec<f64>,
    pub slacks_optimum: Vec<f64>,
    pub objective_model: f64,
    /// `P_p` estimate: exact, or the best objective among near-feasible iterates.
    pub primal_estimate: Option<f64>,
    pub dual_estimate: f64,
    pub duality_gap: Option<f64>,
    pub feasibility_gap: Vec<f64>,
    pub objective_gap: Option<f64>,
    pub eta: f64,
    pub s2: f64,
    pub rho: f64,
    pub rho_is_exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub schema_version: u32,
    pub constants: ConstantEstimates,
    pub gamma1: f64,
    pub gamma2: f64,
    pub observations: Observations,
    pub verdicts: Vec<Certificate>,
    pub curvature: Option<CurvatureAudit>,
    pub notes: Vec<String>,
}

impl CertificateReport {
    pub fn any_violated(&self) -> bool {
        self.verdicts.iter().any(|c| c.verdict.is_violation())
    }

    pub fn verdict(&self, name: &str) -> Option<Verdict> {
        self.verdicts.iter().find(|c| c.name == name).map(|c| c.verdict)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn render_text(&self) -> String {
        let c = &self.constants;
        let mut s = String::new();
        let _ = writeln!(s, "constants");
        for (k, v) in [
            ("M", c.lipschitz),
            ("beta", c.smoothness),
            ("mu0", c.strong_convexity),
            ("sigma", c.sigma),
            ("nu", c.nu),
            ("Delta", c.delta),
            ("mu_g", c.mu_g),
            ("beta_g", c.beta_g),
            ("kappa0", c.kappa0),
            ("kappa1", c.kappa1),
            ("|lambda_tilde|_1", c.lambda_tilde_l1),
        ] {
            let _ = writeln!(s, "  {k:<18} {v:.6e}");
        }
        let _ = writeln!(s, "  {:<18} {:.6e}\n  {:<18} {:.6e}", "Gamma1", self.gamma1, "Gamma2", self.gamma2);
        let _ = writeln!(s, "certificates");
        for v in &self.verdicts {
            let obs = v.observed.map_or("n/a".to_string(), |o| format!("{o:.4e}"));
            let _ = writeln!(s, "  {:<22} {:<14} observed {:<12} bound {:.4e}", v.name, format!("{:?}", v.verdict), obs, v.bound);
        }
        if let Some(a) = &self.curvature {
            let _ = writeln!(
                s,
                "curvature along the multiplier segment: strong concavity {:.4e} (envelope {:.4e}), smoothness {:.4e} (envelope {:.4e})",
                a.mu_empirical, a.mu_envelope, a.beta_empirical, a.beta_envelope
            );
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm2_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Largest per-constraint range of the exact slacks over the run (and the optimum).
fn slack_range(trace: &DualTrace, optimum: &[f64]) -> f64 {
    let m = optimum.len();
    (0..m)
        .map(|i| {
            let vals = trace.records.iter().map(|r| r.slacks[i]).chain(std::iter::once(optimum[i]));
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// Evaluates every bound at the multiplier `lambda_p` and its Lagrangian
/// minimizer in the family (the best iterate of `trace`).
pub fn verify_bounds(
    problem: &ProblemSpec,
    unparam: &UnparamSolution,
    trace: &DualTrace,
    constants: &ConstantEstimates,
    cfg: &VerifyConfig,
) -> Result<CertificateReport> {
    let best = trace.best();
    let lambda_p = best.lambda.clone();
    let mut solver = UnparamSolver::new(problem)?;
    let at_p = solver.dual(lambda_p.as_slice())?;
    let optimum = &unparam.slacks;
    let licq = constants.licq_holds();
    let mut notes = vec![
        "the best-iterate multiplier stands in for the parametrized dual optimum; bounds using it are heuristic for non-convex families".to_string(),
    ];
    if cfg.exact.is_some() {
        notes.push("P_p and D_p are exact (linear family)".into());
    }
    if !licq {
        notes.push(format!(
            "constraint Jacobian is rank deficient at the optimum (sigma = {:.3e}); dependent certificates are not applicable",
            constants.sigma
        ));
    }

    let primal_estimate = match &cfg.exact {
        Some(e) => Some(e.primal_value),
        None => {
            let feasible = trace
                .records
                .iter()
                .filter(|r| r.slacks.iter().all(|s| *s <= cfg.feasibility_tol))
                .map(|r| r.objective)
                .fold(f64::INFINITY, f64::min);
            if feasible.is_finite() {
                notes.push(format!(
                    "P_p is estimated by the best objective among iterates with slacks <= {:e}; the objective certificate is advisory",
                    cfg.feasibility_tol
                ));
                Some(feasible)
            } else {
                notes.push("no near-feasible iterate; the objective certificate is not evaluated".into());
                None
            }
        }
    };
    let dual_estimate = cfg.exact.as_ref().map_or(best.lagrangian, |e| e.dual_value);

    let feas = diff(&best.slacks, optimum);
    let feas_inf = feas.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let feas_sq = norm2_sq(&feas);
    let sens_sq = norm2_sq(&diff(&at_p.slacks, optimum));
    let param_sq = norm2_sq(&diff(&at_p.slacks, &best.slacks));
    let dual_sq = norm2_sq(&diff(lambda_p.as_slice(), unparam.lambda_star.as_slice()));
    let objective_gap = primal_estimate.map(|p| (p - best.objective).abs());
    let duality_gap = primal_estimate.map(|p| p - dual_estimate);

    let srange = slack_range(trace, optimum);
    let m = problem.m() as f64;
    let (olo, ohi) = trace
        .records
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.objective), hi.max(r.objective)));
    let orange = ohi - olo;
    let lrange = trace
        .records
        .iter()
        .map(|r| norm2_sq(&diff(r.lambda.as_slice(), unparam.lambda_star.as_slice())))
        .fold(0.0, f64::max);

    let (rho, rho_is_exact) = match trace.rho_exact() {
        Some(r) => (r, true),
        None => (trace.rho_surrogate(), false),
    };
    let g1 = gamma1(constants);
    let g2 = gamma2(constants);
    let mut verdicts = vec![
        certificate("duality_gap", "P_p - D_p <= Gamma1", duality_gap, g1, orange, true),
        certificate("feasibility_inf", "||l(f(lambda_p)) - l(phi*)||_inf <= Gamma2", Some(feas_inf), g2, srange, licq),
        certificate(
            "objective_gap",
            "|P_p - l0(f(lambda_p))| <= (1+|lambda_p|)M nu + Gamma1 + |lambda_p| Gamma2",
            objective_gap,
            objective_gap_bound(constants),
            orange,
            licq,
        ),
        certificate(
            "constraint_deviation",
            "||l(f(lambda_p)) - l(phi*)||^2 <= 2 beta_g M nu (1+|lambda_p|)(1+sqrt(beta_g/mu_g))^2",
            Some(feas_sq),
            constraint_deviation_bound(constants),
            m * srange * srange,
            licq,
        ),
        certificate(
            "unparam_sensitivity",
            "||l(phi(lambda_p)) - l(phi*)||^2 <= 2 beta_g^2/mu_g M nu (1+|lambda_p|)",
            Some(sens_sq),
            unparam_sensitivity_bound(constants),
            m * srange * srange,
            licq,
        ),
        certificate(
            "parametrization_gap",
            "||l(phi(lambda_p)) - l(f(lambda_p))||^2 <= 2 beta_g M nu (1+|lambda_p|)",
            Some(param_sq),
            parametrization_gap_bound(constants),
            m * srange * srange,
            true,
        ),
        certificate(
            "dual_distance",
            "||lambda_p - lambda_u||^2 <= 2 M nu / mu_g (1+|lambda_p|)",
            Some(dual_sq),
            dual_distance_bound(constants),
            lrange,
            licq,
        ),
    ];
    verdicts.push(best_iterate_certificate(constants, trace, optimum, rho, srange));
    if !rho_is_exact {
        notes.push("oracle accuracy rho is the gradient-based surrogate, not an exact gap".into());
    }

    Ok(CertificateReport {
        schema_version: 1,
        constants: constants.clone(),
        gamma1: g1,
        gamma2: g2,
        observations: Observations {
            lambda_u: unparam.lambda_star.clone(),
            lambda_p,
            slacks_model: best.slacks.clone(),
            slacks_unparam_at_lambda_p: at_p.slacks,
            slacks_optimum: optimum.clone(),
            objective_model: best.objective,
            primal_estimate,
            dual_estimate,
            duality_gap,
            feasibility_gap: feas,
            objective_gap,
            eta: trace.eta,
            s2: trace.s2_estimate,
            rho,
            rho_is_exact,
        },
        verdicts,
        curvature: None,
        notes,
    })
}

fn best_iterate_certificate(c: &ConstantEstimates, trace: &DualTrace, optimum: &[f64], rho: f64, srange: f64) -> Certificate {
    let best = trace.best();
    let observed = norm2_sq(&diff(optimum, &best.slacks));
    let bound = best_iterate_bound(c, best.lambda.l1(), trace.eta, trace.s2_estimate, rho);
    certificate(
        "best_iterate",
        "||l(phi*) - l(f(lambda_best))||^2 <= 2 beta_g (M nu (1+|lambda_best|) + eta S^2/2 + rho)(1+sqrt(beta_g/mu_g~))^2",
        Some(observed),
        bound,
        optimum.len() as f64 * srange * srange,
        c.licq_holds(),
    )
}

/// The best-iterate certificate on its own, with an explicit oracle accuracy `rho`.
pub fn verify_best_iterate_bound(unparam: &UnparamSolution, trace: &DualTrace, constants: &ConstantEstimates, rho: f64) -> Certificate {
    let srange = slack_range(trace, &unparam.slacks);
    best_iterate_certificate(constants, trace, &unparam.slacks, rho, srange)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prim(nu: f64) -> ConstantEstimates {
        let mut c = ConstantEstimates::from_primitives(1, 1.0, 2.0, 2.0, 1.0, nu, 1.0, 1.0, 1.0);
        c.kappa0 = 1.0;
        c.kappa1 = 1.0;
        c
    }

    #[test]
    fn gamma_examples() {
        let mut c = prim(0.1);
        assert!((gamma1(&c) - 0.2).abs() < 1e-15);
        c.nu = 0.0;
        assert_eq!(gamma1(&c), 0.0);
        assert_eq!(gamma2(&c), 0.0);
        c.nu = 0.02;
        assert!((gamma2(&c) - 0.6).abs() < 1e-12);
        let g = gamma2(&c);
        c.nu = 0.04;
        assert!((gamma2(&c) / g - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bounds_vanish_without_slack_terms() {
        let c = prim(0.0);
        assert_eq!(best_iterate_bound(&c, 1.0, 0.0, 5.0, 0.0), 0.0);
        assert!(best_iterate_bound(&c, 1.0, 0.2, 5.0, 0.0) > 0.0);
        // the eta term enters linearly inside the first factor
        let a = best_iterate_bound(&c, 1.0, 0.1, 1.0, 0.0);
        let b = best_iterate_bound(&c, 1.0, 0.2, 1.0, 0.0);
        assert!((b / a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn judging() {
        assert_eq!(judge(Some(0.5), 1.0, 1.0, true), Verdict::Holds);
        assert_eq!(judge(Some(0.5), 100.0, 1.0, true), Verdict::HoldsVacuous);
        assert_eq!(judge(Some(2.0), 1.0, 1.0, true), Verdict::Violated);
        assert_eq!(judge(Some(2.0), 1.0, 1.0, false), Verdict::NotApplicable);
        assert_eq!(judge(None, 1.0, 1.0, true), Verdict::NotEvaluated);
    }
}
