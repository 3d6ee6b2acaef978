//! Bundled synthetic datasets, their problem files, and the seeded train/test split.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::problem::file::{ConstraintDef, GroupDef, ProblemFile, TransformDef, PROBLEM_SCHEMA_VERSION};
use crate::problem::{AttributeSchema, OutputGeometry, PointwiseLoss, RawData, Sample, TransformMode};

pub const GENDERS: [&str; 2] = ["Male", "Female"];
pub const RACES: [&str; 4] = ["African-American", "Caucasian", "Hispanic", "Other"];

/// Recidivism-shaped tabular data: 8 numeric features, gender x race, and a
/// binary label from a planted logistic model that leaks both protected attributes.
pub fn synthetic_compas(n: usize, seed: u64) -> RawData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let race_p = [0.5, 0.34, 0.09, 0.07];
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let gender = usize::from(rng.random::<f64>() >= 0.8);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let race = race_p
            .iter()
            .position(|p| {
                acc += p;
                u < acc
            })
            .unwrap_or(3);
        let ind = |b: bool| f64::from(u8::from(b));
        let mut x = [0.0f64; 8];
        for v in &mut x {
            *v = StandardNormal.sample(&mut rng);
        }
        // features correlated with the protected attributes
        x[1] += 0.6 * ind(race == 0);
        x[2] += 0.4 * ind(gender == 0);
        let logit = -0.2 + 0.9 * x[0] + 0.7 * x[1] - 0.5 * x[2] + 0.3 * x[3] - 0.2 * x[4]
            + 1.2 * ind(race == 0)
            + 0.5 * ind(race == 2)
            + 0.8 * ind(gender == 0);
        let y = if rng.random::<f64>() < 1.0 / (1.0 + (-logit).exp()) { 1.0 } else { 0.0 };
        let x = x.map(|v| (v * 1e6).round() / 1e6);
        samples.push(Sample::new(x.to_vec(), vec![gender, race], y, 1.0 / n as f64));
    }
    RawData {
        samples,
        schema: vec![AttributeSchema::with_labels("gender", &GENDERS), AttributeSchema::with_labels("race", &RACES)],
    }
}

/// Counterfactual fairness problem: cross-entropy objective and one KL
/// constraint per gender swap and per pair of races.
pub fn fairness_problem(dataset: &str, level: f64, tau: f64) -> ProblemFile {
    let swap = |attribute: &str, a: &str, b: &str| ConstraintDef {
        loss: PointwiseLoss::kl_pair(),
        transform: Some(TransformDef {
            attribute: attribute.into(),
            values: [a.into(), b.into()],
            mode: TransformMode::Swap,
        }),
        group: None,
        level,
    };
    let mut constraints = vec![swap("gender", GENDERS[0], GENDERS[1])];
    for i in 0..RACES.len() {
        for j in i + 1..RACES.len() {
            constraints.push(swap("race", RACES[i], RACES[j]));
        }
    }
    ProblemFile {
        schema_version: PROBLEM_SCHEMA_VERSION,
        dataset: dataset.into(),
        protected: vec![AttributeSchema::with_labels("gender", &GENDERS), AttributeSchema::with_labels("race", &RACES)],
        output_dim: 2,
        output_geometry: OutputGeometry::ProbabilitySimplexViaLogits,
        objective: PointwiseLoss::cross_entropy(tau),
        constraints,
    }
}

/// Small regression set: two features, a binary group and a group offset in the target.
pub fn smoke_data(n: usize, seed: u64) -> RawData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let x0: f64 = rng.random_range(-1.0..1.0);
            let x1: f64 = rng.random_range(-1.0..1.0);
            let g = i % 2;
            let noise: f64 = StandardNormal.sample(&mut rng);
            let y = 1.0 + x0 - 0.5 * x1 + 0.8 * g as f64 + 0.1 * noise;
            let r = |v: f64| (v * 1e6).round() / 1e6;
            Sample::new(vec![r(x0), r(x1)], vec![g], r(y), 1.0 / n as f64)
        })
        .collect();
    RawData {
        samples,
        schema: vec![AttributeSchema::with_labels("group", &["A", "B"])],
    }
}

/// Squared-error regression with group-mean constraints: mean prediction of
/// group B at most `1.2`, of group A at least `0.9`.
pub fn smoke_problem(dataset: &str) -> ProblemFile {
    let group = |v: &str| {
        Some(GroupDef {
            attribute: "group".into(),
            value: v.into(),
        })
    };
    ProblemFile {
        schema_version: PROBLEM_SCHEMA_VERSION,
        dataset: dataset.into(),
        protected: vec![AttributeSchema::with_labels("group", &["A", "B"])],
        output_dim: 1,
        output_geometry: OutputGeometry::UnconstrainedReals,
        objective: PointwiseLoss::squared(),
        constraints: vec![
            ConstraintDef {
                loss: PointwiseLoss::mean_output(vec![]),
                transform: None,
                group: group("B"),
                level: 1.2,
            },
            ConstraintDef {
                loss: PointwiseLoss::mean_output(vec![-1.0]),
                transform: None,
                group: group("A"),
                level: -0.9,
            },
        ],
    }
}

/// Seeded shuffle split; `train_fraction >= 1` uses all rows for both parts.
pub fn split(raw: &RawData, train_fraction: f64, seed: u64) -> (RawData, RawData) {
    let n = raw.samples.len();
    if train_fraction >= 1.0 {
        return (raw.clone(), raw.clone());
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let (mut tr, mut te) = (idx[..k].to_vec(), idx[k..].to_vec());
    tr.sort_unstable();
    te.sort_unstable();
    (raw.subset(&tr), raw.subset(&te))
}
