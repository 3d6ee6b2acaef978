//! Minibatch estimates of the constraint slacks.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::models::ParamModel;
use crate::problem::{FunctionTable, ProblemSpec};

/// Number of source samples per slack estimate. Counterfactual images always
/// travel with their source, so a batch never splits a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Sources(usize),
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchSize::Full => s.serialize_str("full"),
            BatchSize::Sources(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(0) => Err(serde::de::Error::custom("batch_size must be positive")),
            Raw::N(n) => Ok(BatchSize::Sources(n)),
            Raw::S(s) if s == "full" => Ok(BatchSize::Full),
            Raw::S(s) => Err(serde::de::Error::custom(format!("batch_size must be a count or \"full\", got {s:?}"))),
        }
    }
}

/// Per-source risk contributions of every constraint at a fixed table, from
/// which batches are drawn cheaply.
pub struct SlackSampler {
    /// `contributions[i][s]`: weighted risk of constraint `i + 1` carried by source `s`.
    contributions: Vec<Vec<f64>>,
    /// Regularizer minus level, the deterministic part of each slack.
    offsets: Vec<f64>,
}

impl SlackSampler {
    pub fn new(problem: &ProblemSpec, table: &FunctionTable) -> Result<Self> {
        if table.rows() != problem.dataset().support_size() || table.dim() != problem.output_dim() {
            return Err(Error::Shape {
                expected: format!("{}x{} table", problem.dataset().support_size(), problem.output_dim()),
                got: format!("{}x{}", table.rows(), table.dim()),
            });
        }
        let m = problem.m();
        Ok(Self {
            contributions: (1..=m).map(|i| problem.source_contributions(i, table)).collect(),
            offsets: (1..=m).map(|i| problem.regularizer_value(i, table) - problem.level(i)).collect(),
        })
    }

    pub fn exact(&self) -> Vec<f64> {
        self.contributions
            .iter()
            .zip(&self.offsets)
            .map(|(c, o)| c.iter().sum::<f64>() + o)
            .collect()
    }

    /// Unbiased estimate from a uniform draw of sources without replacement.
    pub fn draw<R: Rng + ?Sized>(&self, batch: BatchSize, rng: &mut R) -> Vec<f64> {
        let n = self.contributions.first().map_or(0, Vec::len);
        let b = match batch {
            BatchSize::Sources(b) if b < n => b,
            _ => return self.exact(),
        };
        let idx = sample(rng, n, b);
        let scale = n as f64 / b as f64;
        self.contributions
            .iter()
            .zip(&self.offsets)
            .map(|(c, o)| scale * idx.iter().map(|s| c[s]).sum::<f64>() + o)
            .collect()
    }
}

/// Slack estimate for `model` on a batch of sources.
pub fn stochastic_slack<R: Rng + ?Sized>(model: &ParamModel, problem: &ProblemSpec, batch: BatchSize, rng: &mut R) -> Result<Vec<f64>> {
    let table = model.forward(problem.dataset())?;
    Ok(SlackSampler::new(problem, &table)?.draw(batch, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tests::toy_fairness;
    use crate::models::Arch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_batch_is_exact() {
        let p = toy_fairness(30, 1);
        let model = ParamModel::init(Arch::Mlp2 { hidden_width: 4 }, p.dataset().input_dim(), 2, None, 1).unwrap();
        let mut model = model;
        model.theta.iter_mut().enumerate().for_each(|(i, t)| *t += 0.1 * (i as f64).sin());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = stochastic_slack(&model, &p, BatchSize::Full, &mut rng).unwrap();
        let exact = p.slacks(&model.forward(p.dataset()).unwrap()).unwrap();
        for (a, b) in s.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12);
        }
        // a batch at least as large as the source count is also exact
        let s = stochastic_slack(&model, &p, BatchSize::Sources(1000), &mut rng).unwrap();
        assert!((s[0] - exact[0]).abs() < 1e-12);
    }

    #[test]
    fn batch_size_serde() {
        assert_eq!(serde_json::from_str::<BatchSize>("\"full\"").unwrap(), BatchSize::Full);
        assert_eq!(serde_json::from_str::<BatchSize>("256").unwrap(), BatchSize::Sources(256));
        assert!(serde_json::from_str::<BatchSize>("0").is_err());
        assert_eq!(serde_json::to_string(&BatchSize::Full).unwrap(), "\"full\"");
    }
}
