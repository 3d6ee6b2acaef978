#![allow(dead_code)]

use std::path::PathBuf;

use duallearn::harness::data::{fairness_problem, smoke_data, smoke_problem, synthetic_compas};
use duallearn::models::{Arch, ParamModel};
use duallearn::problem::{ConstraintSpec, OutputGeometry, PointwiseLoss, ProblemSpec, RawData, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Squared loss with group-mean constraints.
pub fn regression(n: usize, seed: u64) -> ProblemSpec {
    smoke_problem("unused.csv").build(smoke_data(n, seed)).unwrap()
}

/// Cross-entropy with the seven counterfactual KL constraints.
pub fn fairness(n: usize, seed: u64, tau: f64) -> ProblemSpec {
    fairness_problem("unused.csv", 0.001, tau).build(synthetic_compas(n, seed)).unwrap()
}

/// Cross-entropy with a linear constraint on the mean logit difference.
pub fn logit_mean(n: usize, seed: u64) -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let y = if x[0] + 0.3 * x[1] > 0.0 { 1.0 } else { 0.0 };
            Sample::new(x, vec![], y, 1.0 / n as f64)
        })
        .collect();
    ProblemSpec::new(
        RawData { samples, schema: vec![] },
        PointwiseLoss::cross_entropy(0.05),
        vec![ConstraintSpec::new(PointwiseLoss::mean_output(vec![1.0, -1.0]), 0.2)],
        2,
        OutputGeometry::ProbabilitySimplexViaLogits,
    )
    .unwrap()
}

/// The one-sample problem `min (phi - 1)^2  s.t.  phi <= level`.
pub fn one_sample(level: f64) -> ProblemSpec {
    ProblemSpec::new(
        RawData {
            samples: vec![Sample::new(vec![0.0], vec![], 1.0, 1.0)],
            schema: vec![],
        },
        PointwiseLoss::squared(),
        vec![ConstraintSpec::new(PointwiseLoss::mean_output(vec![]), level)],
        1,
        OutputGeometry::UnconstrainedReals,
    )
    .unwrap()
}

/// Model with parameters drawn uniformly in `+-scale`.
pub fn random_model(problem: &ProblemSpec, arch: Arch, seed: u64, scale: f64) -> ParamModel {
    let mut m = ParamModel::init(arch, problem.dataset().input_dim(), problem.output_dim(), None, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    m.theta.iter_mut().for_each(|t| *t = rng.random_range(-scale..scale));
    m
}

pub fn random_lambda(m: usize, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    (0..m).map(|_| rng.random_range(0.0..scale)).collect()
}

/// `max_i |a_i - b_i| / max(max_i |b_i|, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(floor, |m, y| m.max(y.abs()));
    diff / scale
}

/// Central differences of `f` at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let step = h * (1.0 + x[i].abs());
            p[i] = x[i] + step;
            let up = f(&p);
            p[i] = x[i] - step;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}
