//! Parametrized hypothesis classes: a linear model and a two-layer sigmoid
//! network, optionally behind a frozen random projection of the inputs.

pub mod checkpoint;
pub mod fit;
pub mod linear_ref;
pub mod oracle;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Dataset, DualVector, FunctionTable, ProblemSpec};

pub use fit::{fit_to_targets, fit_to_targets_from, FitOutcome};
pub use oracle::{primal_oracle, InitPolicy, OracleConfig, OracleOutcome, Optimizer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    Linear,
    Mlp2 { hidden_width: usize },
}

/// Frozen linear map applied to model inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub matrix: Vec<f64>,
}

impl Projection {
    /// Gaussian map with entries `N(0, 1/cols)`. Rows are drawn in order from
    /// one seeded stream, so projections of different sizes with the same seed
    /// share their leading rows.
    pub fn random(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (cols as f64).sqrt();
        let matrix = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Self { rows, cols, matrix }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamModel {
    pub arch: Arch,
    pub theta: Vec<f64>,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub projection: Option<Projection>,
}

impl ParamModel {
    /// Output layer zeros; hidden layer i.i.d. uniform in `+-1/sqrt(fan_in)`.
    ///
    /// Hidden units are drawn one at a time (weights then bias), so a wider
    /// network with the same seed extends a narrower one.
    pub fn init(arch: Arch, input_dim: usize, output_dim: usize, projection: Option<Projection>, seed: u64) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if let Some(p) = &projection {
            if p.cols != input_dim || p.rows == 0 || p.matrix.len() != p.rows * p.cols {
                return Err(Error::Shape {
                    expected: format!("projection with {input_dim} columns"),
                    got: format!("{}x{}", p.rows, p.cols),
                });
            }
        }
        let fan_in = projection.as_ref().map_or(input_dim, |p| p.rows);
        let mut model = Self {
            arch,
            theta: Vec::new(),
            input_dim,
            output_dim,
            projection,
        };
        model.theta = vec![0.0; model.param_count()];
        if let Arch::Mlp2 { hidden_width } = arch {
            if hidden_width == 0 {
                return Err(Error::Config("hidden_width must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let boff = hidden_width * fan_in;
            for h in 0..hidden_width {
                for c in 0..fan_in {
                    model.theta[h * fan_in + c] = rng.random_range(-bound..bound);
                }
                model.theta[boff + h] = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    /// Width of the (projected) input seen by the first layer.
    pub fn fan_in(&self) -> usize {
        self.projection.as_ref().map_or(self.input_dim, |p| p.rows)
    }

    pub fn param_count(&self) -> usize {
        let p = self.fan_in();
        let d = self.output_dim;
        match self.arch {
            Arch::Linear => d * p + d,
            Arch::Mlp2 { hidden_width: h } => h * p + h + d * h + d,
        }
    }

    fn check(&self) -> Result<()> {
        if self.theta.len() != self.param_count() {
            return Err(Error::Shape {
                expected: format!("{} parameters", self.param_count()),
                got: format!("{}", self.theta.len()),
            });
        }
        Ok(())
    }

    /// Projected design matrix over the whole support (`support x fan_in`).
    pub fn inputs(&self, dataset: &Dataset) -> Result<DMatrix<f64>> {
        if dataset.input_dim() != self.input_dim {
            return Err(Error::Shape {
                expected: format!("input dimension {}", self.input_dim),
                got: format!("{}", dataset.input_dim()),
            });
        }
        let n = dataset.support_size();
        let mut raw = DMatrix::zeros(n, self.input_dim);
        let mut row = vec![0.0; self.input_dim];
        for i in 0..n {
            dataset.input_row(i, &mut row);
            for (c, v) in row.iter().enumerate() {
                raw[(i, c)] = *v;
            }
        }
        Ok(match &self.projection {
            None => raw,
            Some(p) => {
                let pm = DMatrix::from_row_slice(p.rows, p.cols, &p.matrix);
                raw * pm.transpose()
            }
        })
    }

    /// Outputs on the full support.
    pub fn forward(&self, dataset: &Dataset) -> Result<FunctionTable> {
        let x = self.inputs(dataset)?;
        self.forward_inputs(&x)
    }

    pub fn forward_inputs(&self, x: &DMatrix<f64>) -> Result<FunctionTable> {
        self.check()?;
        let (out, _) = self.forward_cached(x);
        Ok(to_table(&out))
    }

    /// Output for a single raw input vector.
    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim {
            return Err(Error::Shape {
                expected: format!("{} inputs", self.input_dim),
                got: format!("{}", input.len()),
            });
        }
        let x = DMatrix::from_row_slice(1, self.input_dim, input);
        let x = match &self.projection {
            None => x,
            Some(p) => x * DMatrix::from_row_slice(p.rows, p.cols, &p.matrix).transpose(),
        };
        self.check()?;
        let (out, _) = self.forward_cached(&x);
        Ok(out.row(0).iter().cloned().collect())
    }

    fn layers(&self) -> Layers {
        let p = self.fan_in();
        let d = self.output_dim;
        match self.arch {
            Arch::Linear => Layers {
                hidden: None,
                w_out: DMatrix::from_row_slice(d, p, &self.theta[..d * p]),
                b_out: self.theta[d * p..].to_vec(),
            },
            Arch::Mlp2 { hidden_width: h } => {
                let w1 = DMatrix::from_row_slice(h, p, &self.theta[..h * p]);
                let b1 = self.theta[h * p..h * p + h].to_vec();
                let off = h * p + h;
                Layers {
                    hidden: Some((w1, b1)),
                    w_out: DMatrix::from_row_slice(d, h, &self.theta[off..off + d * h]),
                    b_out: self.theta[off + d * h..].to_vec(),
                }
            }
        }
    }

    /// Output matrix and, for the network, the hidden activations.
    fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
        let layers = self.layers();
        match layers.hidden {
            None => {
                let mut out = x * layers.w_out.transpose();
                add_bias(&mut out, &layers.b_out);
                (out, None)
            }
            Some((w1, b1)) => {
                let mut z = x * w1.transpose();
                add_bias(&mut z, &b1);
                z.apply(|v| *v = sigmoid(*v));
                let mut out = &z * layers.w_out.transpose();
                add_bias(&mut out, &layers.b_out);
                (out, Some(z))
            }
        }
    }

    /// Pulls a row-major output gradient back to the parameters.
    fn backward(&self, x: &DMatrix<f64>, hidden: Option<&DMatrix<f64>>, grad_out: &[f64]) -> Vec<f64> {
        let n = x.nrows();
        let d = self.output_dim;
        let g = DMatrix::from_row_slice(n, d, grad_out);
        let mut out = Vec::with_capacity(self.param_count());
        match (self.arch, hidden) {
            (Arch::Linear, _) => {
                let dw = g.transpose() * x;
                push_row_major(&mut out, &dw);
                out.extend(col_sums(&g));
            }
            (Arch::Mlp2 { .. }, Some(hid)) => {
                let layers = self.layers();
                let dw2 = g.transpose() * hid;
                let mut dz = &g * &layers.w_out;
                dz.zip_apply(hid, |gz, a| *gz *= a * (1.0 - a));
                let dw1 = dz.transpose() * x;
                push_row_major(&mut out, &dw1);
                out.extend(col_sums(&dz));
                push_row_major(&mut out, &dw2);
                out.extend(col_sums(&g));
            }
            (Arch::Mlp2 { .. }, None) => unreachable!("network forward always caches activations"),
        }
        out
    }

    /// Hidden activations (`support x width`); the inputs themselves for the linear model.
    pub(crate) fn hidden(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self.forward_cached(x) {
            (_, Some(h)) => h,
            (_, None) => x.clone(),
        }
    }

    /// Copy of this network with `hidden_width` units: the existing units are
    /// kept, new units take their seeded initial values and enter with zero
    /// output weight, so outputs are unchanged.
    pub fn widen(&self, hidden_width: usize, seed: u64) -> Result<Self> {
        let Arch::Mlp2 { hidden_width: h } = self.arch else {
            return Err(Error::Config("only the network family can be widened".into()));
        };
        if hidden_width < h {
            return Err(Error::Config(format!("cannot narrow from {h} to {hidden_width} units")));
        }
        let mut wide = Self::init(Arch::Mlp2 { hidden_width }, self.input_dim, self.output_dim, self.projection.clone(), seed)?;
        let p = self.fan_in();
        let d = self.output_dim;
        let big = hidden_width;
        wide.theta[..h * p].copy_from_slice(&self.theta[..h * p]);
        wide.theta[big * p..big * p + h].copy_from_slice(&self.theta[h * p..h * p + h]);
        let (old_off, new_off) = (h * p + h, big * p + big);
        for c in 0..d {
            for k in 0..h {
                wide.theta[new_off + c * big + k] = self.theta[old_off + c * h + k];
            }
            wide.theta[new_off + d * big + c] = self.theta[old_off + d * h + c];
        }
        Ok(wide)
    }

    /// Copy of this model behind a larger projection whose leading rows match
    /// the current one; new input weights are zero, so outputs are unchanged.
    pub fn pad_projection(&self, projection: Projection) -> Result<Self> {
        let old = self.fan_in();
        if projection.rows < old || projection.cols != self.input_dim {
            return Err(Error::Shape {
                expected: format!("projection with >= {old} rows and {} columns", self.input_dim),
                got: format!("{}x{}", projection.rows, projection.cols),
            });
        }
        let new = projection.rows;
        let mut padded = Self {
            projection: Some(projection),
            theta: Vec::new(),
            ..self.clone()
        };
        let first_rows = match self.arch {
            Arch::Linear => self.output_dim,
            Arch::Mlp2 { hidden_width } => hidden_width,
        };
        for r in 0..first_rows {
            padded.theta.extend_from_slice(&self.theta[r * old..(r + 1) * old]);
            padded.theta.extend(std::iter::repeat_n(0.0, new - old));
        }
        padded.theta.extend_from_slice(&self.theta[first_rows * old..]);
        Ok(padded)
    }
}

struct Layers {
    hidden: Option<(DMatrix<f64>, Vec<f64>)>,
    w_out: DMatrix<f64>,
    b_out: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn add_bias(m: &mut DMatrix<f64>, b: &[f64]) {
    for (c, bc) in b.iter().enumerate() {
        m.column_mut(c).add_scalar_mut(*bc);
    }
}

fn col_sums(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.iter().sum()).collect()
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
}

pub(crate) fn to_table(out: &DMatrix<f64>) -> FunctionTable {
    let (n, d) = out.shape();
    let mut values = Vec::with_capacity(n * d);
    for i in 0..n {
        for c in 0..d {
            values.push(out[(i, c)]);
        }
    }
    FunctionTable::from_vec(n, d, values).expect("shape from matrix")
}

/// Problem-bound evaluator with the design matrix cached.
pub struct ModelContext<'a> {
    pub problem: &'a ProblemSpec,
    pub inputs: DMatrix<f64>,
}

impl<'a> ModelContext<'a> {
    pub fn new(problem: &'a ProblemSpec, model: &ParamModel) -> Result<Self> {
        if model.output_dim != problem.output_dim() {
            return Err(Error::Shape {
                expected: format!("model output_dim {}", problem.output_dim()),
                got: format!("{}", model.output_dim),
            });
        }
        Ok(Self {
            problem,
            inputs: model.inputs(problem.dataset())?,
        })
    }

    pub fn forward(&self, model: &ParamModel) -> Result<FunctionTable> {
        model.forward_inputs(&self.inputs)
    }

    /// `L(f_theta, lambda)` and its exact gradient in `theta`.
    pub fn lagrangian_and_grad(&self, model: &ParamModel, lambda: &[f64]) -> Result<ModelLagrangian> {
        model.check()?;
        let (out, hidden) = model.forward_cached(&self.inputs);
        let table = to_table(&out);
        let eval = self.problem.lagrangian_grad(&table, lambda)?;
        let grad = model.backward(&self.inputs, hidden.as_ref(), &eval.grad);
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("parameter gradient component {i}"),
                sample: 0,
            });
        }
        Ok(ModelLagrangian {
            value: eval.value,
            objective: eval.objective,
            slacks: eval.slacks,
            grad,
            outputs: table,
        })
    }

    /// Value and parameter gradient of `0.5 * ||f_theta - targets||^2` in the support measure.
    pub(crate) fn fit_loss_and_grad(&self, model: &ParamModel, targets: &FunctionTable) -> Result<(f64, Vec<f64>)> {
        model.check()?;
        let (out, hidden) = model.forward_cached(&self.inputs);
        let mass = self.problem.dataset().mass();
        let d = model.output_dim;
        let n = out.nrows();
        let mut g = vec![0.0; n * d];
        let mut v = 0.0;
        for i in 0..n {
            for c in 0..d {
                let r = out[(i, c)] - targets.row(i)[c];
                v += 0.5 * mass[i] * r * r;
                g[i * d + c] = mass[i] * r;
            }
        }
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "fit residual".into(),
                sample: 0,
            });
        }
        Ok((v, model.backward(&self.inputs, hidden.as_ref(), &g)))
    }
}

#[derive(Clone, Debug)]
pub struct ModelLagrangian {
    pub value: f64,
    pub objective: f64,
    pub slacks: Vec<f64>,
    pub grad: Vec<f64>,
    pub outputs: FunctionTable,
}

/// `L(f_theta, lambda)` and `dL/dtheta`.
pub fn lagrangian_and_grad(model: &ParamModel, problem: &ProblemSpec, lambda: &DualVector) -> Result<(f64, Vec<f64>)> {
    let ctx = ModelContext::new(problem, model)?;
    let r = ctx.lagrangian_and_grad(model, lambda.as_slice())?;
    Ok((r.value, r.grad))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::problem::{AttributeSchema, ConstraintSpec, OutputGeometry, PointwiseLoss, RawData, Sample, Transform};

    pub(crate) fn toy_fairness(n: usize, seed: u64) -> ProblemSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let z = vec![rng.random_range(0..2), rng.random_range(0..3)];
                let y = if x[0] + 0.5 * z[0] as f64 > 0.2 { 1.0 } else { 0.0 };
                Sample::new(x, z, y, 1.0 / n as f64)
            })
            .collect();
        let raw = RawData {
            samples,
            schema: vec![AttributeSchema::new("g", 2), AttributeSchema::new("r", 3)],
        };
        ProblemSpec::new(
            raw,
            PointwiseLoss::cross_entropy(1e-3),
            vec![
                ConstraintSpec::counterfactual(Transform::swap(0, 0, 1), 0.01),
                ConstraintSpec::counterfactual(Transform::swap(1, 0, 2), 0.01),
            ],
            2,
            OutputGeometry::ProbabilitySimplexViaLogits,
        )
        .unwrap()
    }

    #[test]
    fn zero_linear_is_zero_table() {
        let p = toy_fairness(10, 1);
        let m = ParamModel::init(Arch::Linear, p.dataset().input_dim(), 2, None, 0).unwrap();
        let t = m.forward(p.dataset()).unwrap();
        assert!(t.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_output_layer_gives_bias() {
        let p = toy_fairness(10, 1);
        let mut m = ParamModel::init(Arch::Mlp2 { hidden_width: 5 }, p.dataset().input_dim(), 2, None, 3).unwrap();
        let n = m.theta.len();
        m.theta[n - 2] = 0.7;
        m.theta[n - 1] = -0.2;
        let t = m.forward(p.dataset()).unwrap();
        for i in 0..t.rows() {
            assert_eq!(t.row(i), &[0.7, -0.2]);
        }
    }

    #[test]
    fn forward_matches_scalar_recomputation() {
        let p = toy_fairness(12, 2);
        let ds = p.dataset();
        let mut m = ParamModel::init(Arch::Mlp2 { hidden_width: 4 }, ds.input_dim(), 2, None, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in m.theta.iter_mut() {
            *t = rng.random_range(-1.0..1.0);
        }
        let table = m.forward(ds).unwrap();
        let (h, pdim) = (4, ds.input_dim());
        let mut x = vec![0.0; pdim];
        for i in 0..ds.support_size() {
            ds.input_row(i, &mut x);
            for c in 0..2 {
                let mut o = m.theta[h * pdim + h + 2 * h + c];
                for k in 0..h {
                    let mut z = m.theta[h * pdim + k];
                    for j in 0..pdim {
                        z += m.theta[k * pdim + j] * x[j];
                    }
                    o += m.theta[h * pdim + h + c * h + k] / (1.0 + (-z).exp());
                }
                assert!((table.row(i)[c] - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wider_network_extends_narrower() {
        let a = ParamModel::init(Arch::Mlp2 { hidden_width: 2 }, 3, 1, None, 11).unwrap();
        let b = ParamModel::init(Arch::Mlp2 { hidden_width: 5 }, 3, 1, None, 11).unwrap();
        assert_eq!(a.theta[..6], b.theta[..6]);
    }

    #[test]
    fn widening_preserves_outputs() {
        let p = toy_fairness(8, 6);
        let ds = p.dataset();
        let mut m = ParamModel::init(Arch::Mlp2 { hidden_width: 3 }, ds.input_dim(), 2, None, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        m.theta.iter_mut().for_each(|t| *t = rng.random_range(-1.0..1.0));
        let w = m.widen(7, 1).unwrap();
        for (x, y) in m.forward(ds).unwrap().as_slice().iter().zip(w.forward(ds).unwrap().as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn padded_projection_preserves_outputs() {
        let p = toy_fairness(8, 4);
        let ds = p.dataset();
        let small = Projection::random(2, ds.input_dim(), 7);
        let big = Projection::random(4, ds.input_dim(), 7);
        assert_eq!(small.matrix[..], big.matrix[..small.matrix.len()]);
        let mut m = ParamModel::init(Arch::Mlp2 { hidden_width: 3 }, ds.input_dim(), 2, Some(small), 1).unwrap();
        let n = m.theta.len();
        m.theta[n - 3] = 0.4;
        let padded = m.pad_projection(big).unwrap();
        let a = m.forward(ds).unwrap();
        let b = padded.forward(ds).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn lagrangian_at_zero_lambda_is_objective() {
        let p = toy_fairness(10, 3);
        let m = ParamModel::init(Arch::Mlp2 { hidden_width: 3 }, p.dataset().input_dim(), 2, None, 2).unwrap();
        let (v, _) = lagrangian_and_grad(&m, &p, &DualVector::zeros(2)).unwrap();
        let obj = crate::problem::empirical_risk(&p, &m.forward(p.dataset()).unwrap(), None).unwrap();
        assert_eq!(v, obj);
    }
}
