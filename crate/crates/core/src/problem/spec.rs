//! Constrained learning problem over a finite support.
//!
//! `ell_0` is the objective, `ell_1..ell_m` the constraints; each constraint is
//! encoded as `risk_i(phi) - level_i <= 0`, so the value returned as a slack is
//! already offset by its level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::data::{Dataset, RawData, Transform};
use crate::problem::loss::{LossKind, PointwiseLoss};
use crate::problem::table::FunctionTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputGeometry {
    UnconstrainedReals,
    ProbabilitySimplexViaLogits,
}

/// Restricts a constraint's expectation to one protected group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub attribute: usize,
    pub value: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSpec {
    pub loss: PointwiseLoss,
    pub transform: Option<Transform>,
    pub level: f64,
    pub group: Option<Group>,
}

impl ConstraintSpec {
    pub fn new(loss: PointwiseLoss, level: f64) -> Self {
        Self {
            loss,
            transform: None,
            level,
            group: None,
        }
    }

    pub fn counterfactual(transform: Transform, level: f64) -> Self {
        Self {
            loss: PointwiseLoss::kl_pair(),
            transform: Some(transform),
            level,
            group: None,
        }
    }

    pub fn in_group(mut self, attribute: usize, value: usize) -> Self {
        self.group = Some(Group { attribute, value });
        self
    }
}

/// One weighted summand of a risk: the loss at `row` (paired with `partner`
/// for counterfactual losses) scaled by `weight`. `source` indexes the
/// weighted source row the term belongs to.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Term {
    pub row: usize,
    pub partner: Option<usize>,
    pub weight: f64,
    pub source: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Compiled {
    pub terms: Vec<Term>,
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    dataset: Dataset,
    objective: PointwiseLoss,
    constraints: Vec<ConstraintSpec>,
    output_dim: usize,
    geometry: OutputGeometry,
    compiled: Vec<Compiled>,
}

impl ProblemSpec {
    /// Builds the closed support from `raw` using every transform referenced by
    /// a constraint, then validates and compiles the risks.
    pub fn new(
        raw: RawData,
        objective: PointwiseLoss,
        constraints: Vec<ConstraintSpec>,
        output_dim: usize,
        geometry: OutputGeometry,
    ) -> Result<Self> {
        let mut transforms: Vec<Transform> = Vec::new();
        for c in &constraints {
            if let Some(t) = c.transform {
                if !transforms.contains(&t) {
                    transforms.push(t);
                }
            }
        }
        let dataset = Dataset::new(raw, transforms)?;
        Self::with_dataset(dataset, objective, constraints, output_dim, geometry)
    }

    pub fn with_dataset(
        dataset: Dataset,
        objective: PointwiseLoss,
        constraints: Vec<ConstraintSpec>,
        output_dim: usize,
        geometry: OutputGeometry,
    ) -> Result<Self> {
        if constraints.is_empty() {
            return Err(Error::Config("a problem needs at least one constraint".into()));
        }
        if output_dim == 0 {
            return Err(Error::Config("output_dim must be positive".into()));
        }
        let check_loss = |l: &PointwiseLoss, what: &str| -> Result<()> {
            if !(l.regularizer >= 0.0) || !l.regularizer.is_finite() {
                return Err(Error::Config(format!("{what}: regularizer must be finite and >= 0")));
            }
            match l.kind {
                LossKind::CrossEntropy | LossKind::KlPair => {
                    if geometry != OutputGeometry::ProbabilitySimplexViaLogits || output_dim < 2 {
                        return Err(Error::Config(format!(
                            "{what}: {:?} needs probability_simplex_via_logits with output_dim >= 2",
                            l.kind
                        )));
                    }
                }
                LossKind::MeanOutput => {
                    if !l.coef.is_empty() && l.coef.len() != output_dim {
                        return Err(Error::Config(format!("{what}: coef has length {}, expected {output_dim}", l.coef.len())));
                    }
                }
                LossKind::SquaredError => {}
            }
            Ok(())
        };
        check_loss(&objective, "objective")?;
        if objective.is_pair() {
            return Err(Error::Config("objective cannot be a counterfactual pair loss".into()));
        }
        for (i, c) in constraints.iter().enumerate() {
            let what = format!("constraint {}", i + 1);
            check_loss(&c.loss, &what)?;
            if !c.level.is_finite() {
                return Err(Error::Config(format!("{what}: level must be finite")));
            }
            match (c.transform.is_some(), c.loss.is_pair()) {
                (true, false) => return Err(Error::Config(format!("{what}: a transform requires kind kl_pair"))),
                (false, true) => return Err(Error::Config(format!("{what}: kl_pair requires a transform"))),
                _ => {}
            }
        }

        let n = dataset.n_sources();
        let weights = dataset.weights();
        let compile = |c: Option<&ConstraintSpec>| -> Result<Compiled> {
            let mut scale = vec![1.0; n];
            if let Some(g) = c.and_then(|c| c.group) {
                if g.attribute >= dataset.schema().len() {
                    return Err(Error::Config(format!("group attribute {} out of range", g.attribute)));
                }
                let mass: f64 = (0..n)
                    .filter(|&j| dataset.sample(j).protected[g.attribute] == g.value)
                    .map(|j| weights[j])
                    .sum();
                if mass <= 0.0 {
                    return Err(Error::Config(format!("group {}={} has no mass", g.attribute, g.value)));
                }
                for (j, s) in scale.iter_mut().enumerate() {
                    *s = if dataset.sample(j).protected[g.attribute] == g.value { 1.0 / mass } else { 0.0 };
                }
            }
            let tidx = match c.and_then(|c| c.transform) {
                Some(t) => Some(
                    dataset
                        .transform_index(&t)
                        .ok_or_else(|| Error::Structural("constraint transform missing from dataset".into()))?,
                ),
                None => None,
            };
            let mut terms = Vec::new();
            for j in 0..n {
                let weight = weights[j] * scale[j];
                if weight == 0.0 {
                    continue;
                }
                let partner = match tidx {
                    Some(t) => {
                        let cf = dataset.counterfactual_apply(j, t)?;
                        if cf.fixed_point {
                            // KL(p || p) = 0
                            continue;
                        }
                        Some(cf.index)
                    }
                    None => None,
                };
                terms.push(Term {
                    row: j,
                    partner,
                    weight,
                    source: j,
                });
            }
            Ok(Compiled { terms })
        };
        let mut compiled = vec![compile(None)?];
        for c in &constraints {
            compiled.push(compile(Some(c))?);
        }
        Ok(Self {
            dataset,
            objective,
            constraints,
            output_dim,
            geometry,
            compiled,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn objective(&self) -> &PointwiseLoss {
        &self.objective
    }

    pub fn constraints(&self) -> &[ConstraintSpec] {
        &self.constraints
    }

    /// Number of constraints `m`.
    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn geometry(&self) -> OutputGeometry {
        self.geometry
    }

    /// Loss `i`, with `0` the objective.
    pub fn loss(&self, i: usize) -> &PointwiseLoss {
        if i == 0 {
            &self.objective
        } else {
            &self.constraints[i - 1].loss
        }
    }

    pub fn level(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.constraints[i - 1].level
        }
    }

    pub(crate) fn terms(&self, i: usize) -> &[Term] {
        &self.compiled[i].terms
    }

    /// Same problem with constraints tightened to `ell(phi) + eps <= 0`.
    pub fn perturbed(&self, eps: &[f64]) -> Result<Self> {
        if eps.len() != self.m() {
            return Err(Error::Shape {
                expected: format!("{} perturbations", self.m()),
                got: format!("{}", eps.len()),
            });
        }
        let mut out = self.clone();
        for (c, e) in out.constraints.iter_mut().zip(eps) {
            c.level -= e;
        }
        Ok(out)
    }

    /// Same problem on the sources at `idx` (weights renormalized), with the
    /// support re-closed under the same transforms.
    pub fn restricted(&self, idx: &[usize]) -> Result<Self> {
        let n = self.dataset.n_sources();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Shape {
                expected: format!("source index < {n}"),
                got: bad.to_string(),
            });
        }
        let raw = RawData {
            samples: self.dataset.samples()[..n].to_vec(),
            schema: self.dataset.schema().to_vec(),
        }
        .subset(idx);
        let dataset = Dataset::new(raw, self.dataset.transforms().to_vec())?;
        Self::with_dataset(dataset, self.objective.clone(), self.constraints.clone(), self.output_dim, self.geometry)
    }

    /// Same problem with every level shifted by `delta[i]`.
    pub fn with_levels(&self, levels: &[f64]) -> Result<Self> {
        let eps: Vec<f64> = self.constraints.iter().zip(levels).map(|(c, l)| c.level - l).collect();
        self.perturbed(&eps)
    }

    /// Whether the Lagrangian is strongly convex in the outputs for every `lambda >= 0`.
    pub fn check_strongly_convex(&self) -> Result<()> {
        let tau = self.objective.regularizer;
        if tau > 0.0 {
            return Ok(());
        }
        if self.objective.kind == LossKind::CrossEntropy {
            return Err(Error::Config(
                "cross_entropy objective is not strongly convex in logits; set objective.regularizer (tau) > 0".into(),
            ));
        }
        if self.dataset.support_size() > self.dataset.n_sources() {
            return Err(Error::Config(
                "counterfactual images carry no objective mass; set objective.regularizer (tau) > 0".into(),
            ));
        }
        if self.dataset.weights().iter().any(|&w| w == 0.0) {
            return Err(Error::Config("zero-weight samples need objective.regularizer (tau) > 0".into()));
        }
        Ok(())
    }

    fn check_table(&self, table: &FunctionTable) -> Result<()> {
        if table.rows() != self.dataset.support_size() || table.dim() != self.output_dim {
            return Err(Error::Shape {
                expected: format!("{}x{} table", self.dataset.support_size(), self.output_dim),
                got: format!("{}x{}", table.rows(), table.dim()),
            });
        }
        Ok(())
    }

    /// Value of loss `i` (risk plus regularizer minus level). When `grad` is
    /// given, adds `scale * d/dphi` into it (row-major, same layout as the table).
    pub(crate) fn loss_value(&self, i: usize, table: &FunctionTable, scale: f64, mut grad: Option<&mut [f64]>) -> Result<f64> {
        let loss = self.loss(i);
        let d = self.output_dim;
        let name = if i == 0 { "objective".to_string() } else { format!("constraint {i}") };
        let mut total = 0.0;
        for t in self.terms(i) {
            let a = table.row(t.row);
            let v = match (t.partner, grad.as_deref_mut()) {
                (Some(k), Some(g)) => {
                    let (ga, gb) = split_rows(g, t.row, k, d);
                    loss.pair(a, table.row(k), scale * t.weight, Some((ga, gb)))
                }
                (Some(k), None) => loss.pair(a, table.row(k), 1.0, None),
                (None, Some(g)) => loss.point(a, self.dataset.sample(t.row).label, scale * t.weight, Some(&mut g[t.row * d..(t.row + 1) * d])),
                (None, None) => loss.point(a, self.dataset.sample(t.row).label, 1.0, None),
            };
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: name,
                    sample: t.row,
                });
            }
            total += t.weight * v;
        }
        let tau = loss.regularizer;
        if tau > 0.0 {
            let mass = self.dataset.mass();
            let mut reg = 0.0;
            for k in 0..table.rows() {
                let row = table.row(k);
                reg += mass[k] * row.iter().map(|v| v * v).sum::<f64>();
                if let Some(g) = grad.as_deref_mut() {
                    for c in 0..d {
                        g[k * d + c] += scale * tau * mass[k] * row[c];
                    }
                }
            }
            total += 0.5 * tau * reg;
        }
        if !total.is_finite() {
            return Err(Error::NonFinite { context: name, sample: 0 });
        }
        Ok(total - self.level(i))
    }

    /// Per-source contributions to the risk of loss `i` (without regularizer or level).
    pub(crate) fn source_contributions(&self, i: usize, table: &FunctionTable) -> Vec<f64> {
        let loss = self.loss(i);
        let mut out = vec![0.0; self.dataset.n_sources()];
        for t in self.terms(i) {
            let a = table.row(t.row);
            let v = match t.partner {
                Some(k) => loss.pair(a, table.row(k), 1.0, None),
                None => loss.point(a, self.dataset.sample(t.row).label, 1.0, None),
            };
            out[t.source] += t.weight * v;
        }
        out
    }

    /// Regularizer part of loss `i`.
    pub(crate) fn regularizer_value(&self, i: usize, table: &FunctionTable) -> f64 {
        let tau = self.loss(i).regularizer;
        if tau == 0.0 {
            return 0.0;
        }
        0.5 * tau * table.norm_sq(self.dataset.mass())
    }

    /// `ell_0(phi)`.
    pub fn objective_value(&self, table: &FunctionTable) -> Result<f64> {
        self.check_table(table)?;
        self.loss_value(0, table, 1.0, None)
    }

    /// Constraint slacks `ell_i(phi)`, `i = 1..m`.
    pub fn slacks(&self, table: &FunctionTable) -> Result<Vec<f64>> {
        self.check_table(table)?;
        (1..=self.m()).map(|i| self.loss_value(i, table, 1.0, None)).collect()
    }

    /// `L(phi, lambda) = ell_0(phi) + lambda^T ell(phi)` and the constraint slacks.
    pub fn lagrangian(&self, table: &FunctionTable, lambda: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_lambda(lambda)?;
        let obj = self.objective_value(table)?;
        let s = self.slacks(table)?;
        let l = obj + lambda.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>();
        Ok((l, s))
    }

    /// Lagrangian value, its gradient with respect to the table, the objective and slacks.
    pub fn lagrangian_grad(&self, table: &FunctionTable, lambda: &[f64]) -> Result<LagrangianEval> {
        self.check_table(table)?;
        self.check_lambda(lambda)?;
        let mut grad = vec![0.0; table.as_slice().len()];
        let objective = self.loss_value(0, table, 1.0, Some(&mut grad))?;
        let mut slacks = Vec::with_capacity(self.m());
        for i in 1..=self.m() {
            slacks.push(self.loss_value(i, table, lambda[i - 1], Some(&mut grad))?);
        }
        let value = objective + lambda.iter().zip(&slacks).map(|(a, b)| a * b).sum::<f64>();
        Ok(LagrangianEval {
            value,
            objective,
            slacks,
            grad,
        })
    }

    /// Euclidean gradient of loss `i` with respect to the table.
    pub fn loss_gradient(&self, i: usize, table: &FunctionTable) -> Result<Vec<f64>> {
        self.check_table(table)?;
        let mut g = vec![0.0; table.as_slice().len()];
        self.loss_value(i, table, 1.0, Some(&mut g))?;
        Ok(g)
    }

    fn check_lambda(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.m() {
            return Err(Error::Shape {
                expected: format!("{} multipliers", self.m()),
                got: format!("{}", lambda.len()),
            });
        }
        if lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Structural("multipliers must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LagrangianEval {
    pub value: f64,
    pub objective: f64,
    pub slacks: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Disjoint mutable views of two table rows.
pub(crate) fn split_rows(g: &mut [f64], a: usize, b: usize, d: usize) -> (&mut [f64], &mut [f64]) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = g.split_at_mut(b * d);
        (&mut lo[a * d..(a + 1) * d], &mut hi[..d])
    } else {
        let (lo, hi) = g.split_at_mut(a * d);
        (&mut hi[..d], &mut lo[b * d..(b + 1) * d])
    }
}

/// Weighted risk of `loss` on `outputs`, minus the constraint level when
/// `constraint_index` (1-based) is given.
pub fn empirical_risk(problem: &ProblemSpec, outputs: &FunctionTable, constraint_index: Option<usize>) -> Result<f64> {
    problem.check_table(outputs)?;
    match constraint_index {
        None => problem.loss_value(0, outputs, 1.0, None),
        Some(i) if (1..=problem.m()).contains(&i) => problem.loss_value(i, outputs, 1.0, None),
        Some(i) => Err(Error::Structural(format!("constraint index {i} out of range 1..={}", problem.m()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::data::{AttributeSchema, Sample};

    fn one_sample() -> ProblemSpec {
        let raw = RawData {
            samples: vec![Sample::new(vec![0.0], vec![], 1.0, 1.0)],
            schema: vec![],
        };
        ProblemSpec::new(
            raw,
            PointwiseLoss::squared(),
            vec![ConstraintSpec::new(PointwiseLoss::mean_output(vec![]), 0.0)],
            1,
            OutputGeometry::UnconstrainedReals,
        )
        .unwrap()
    }

    fn two_class() -> ProblemSpec {
        let raw = RawData {
            samples: vec![
                Sample::new(vec![0.0], vec![0], 0.0, 0.5),
                Sample::new(vec![1.0], vec![1], 1.0, 0.5),
            ],
            schema: vec![AttributeSchema::new("g", 2)],
        };
        ProblemSpec::new(
            raw,
            PointwiseLoss::cross_entropy(0.0),
            vec![ConstraintSpec::counterfactual(Transform::swap(0, 0, 1), 0.001)],
            2,
            OutputGeometry::ProbabilitySimplexViaLogits,
        )
        .unwrap()
    }

    #[test]
    fn squared_single_sample() {
        let p = one_sample();
        let t = FunctionTable::constant(1, &[0.5]);
        assert_eq!(empirical_risk(&p, &t, None).unwrap(), 0.25);
    }

    #[test]
    fn kl_identical_is_minus_level() {
        let p = two_class();
        let t = FunctionTable::zeros(p.dataset().support_size(), 2);
        let v = empirical_risk(&p, &t, Some(1)).unwrap();
        assert!((v + 0.001).abs() < 1e-18);
    }

    #[test]
    fn cross_entropy_two_samples() {
        let p = two_class();
        let t = FunctionTable::zeros(p.dataset().support_size(), 2);
        let v = empirical_risk(&p, &t, None).unwrap();
        assert!((v - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn level_shift_moves_slack() {
        let p = one_sample();
        let t = FunctionTable::constant(1, &[0.3]);
        let s0 = p.slacks(&t).unwrap()[0];
        let s1 = p.with_levels(&[0.25]).unwrap().slacks(&t).unwrap()[0];
        assert!((s0 - s1 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lagrangian_linear_in_lambda() {
        let p = one_sample();
        let t = FunctionTable::constant(1, &[0.3]);
        let (l0, s) = p.lagrangian(&t, &[0.0]).unwrap();
        let (l1, _) = p.lagrangian(&t, &[1.0]).unwrap();
        assert!((l1 - l0 - s[0]).abs() < 1e-15);
        assert!(p.lagrangian(&t, &[-1.0]).is_err());
    }

    #[test]
    fn validation() {
        let raw = || RawData {
            samples: vec![Sample::new(vec![0.0], vec![0], 1.0, 1.0)],
            schema: vec![AttributeSchema::new("g", 2)],
        };
        // transform on a non-pair loss
        let mut c = ConstraintSpec::new(PointwiseLoss::squared(), 0.1);
        c.transform = Some(Transform::swap(0, 0, 1));
        assert!(ProblemSpec::new(raw(), PointwiseLoss::squared(), vec![c], 1, OutputGeometry::UnconstrainedReals).is_err());
        // no constraints
        assert!(ProblemSpec::new(raw(), PointwiseLoss::squared(), vec![], 1, OutputGeometry::UnconstrainedReals).is_err());
        // cross entropy on reals
        let c = ConstraintSpec::new(PointwiseLoss::mean_output(vec![]), 0.0);
        assert!(ProblemSpec::new(raw(), PointwiseLoss::cross_entropy(0.1), vec![c], 1, OutputGeometry::UnconstrainedReals).is_err());
        // infinite level
        let c = ConstraintSpec::new(PointwiseLoss::mean_output(vec![]), f64::INFINITY);
        assert!(ProblemSpec::new(raw(), PointwiseLoss::squared(), vec![c], 1, OutputGeometry::UnconstrainedReals).is_err());
    }

    #[test]
    fn non_finite_reports_sample() {
        let p = one_sample();
        let t = FunctionTable::constant(1, &[f64::NAN]);
        match p.objective_value(&t) {
            Err(Error::NonFinite { sample, .. }) => assert_eq!(sample, 0),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn grouped_mean_is_conditional() {
        let raw = RawData {
            samples: vec![
                Sample::new(vec![0.0], vec![0], 0.0, 0.25),
                Sample::new(vec![0.0], vec![1], 0.0, 0.25),
                Sample::new(vec![1.0], vec![1], 0.0, 0.5),
            ],
            schema: vec![AttributeSchema::new("g", 2)],
        };
        let c = ConstraintSpec::new(PointwiseLoss::mean_output(vec![]), 0.0).in_group(0, 1);
        let p = ProblemSpec::new(raw, PointwiseLoss::squared(), vec![c], 1, OutputGeometry::UnconstrainedReals).unwrap();
        let t = FunctionTable::from_vec(3, 1, vec![9.0, 3.0, 6.0]).unwrap();
        assert!((p.slacks(&t).unwrap()[0] - 5.0).abs() < 1e-12);
    }
}
