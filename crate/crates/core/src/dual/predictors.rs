//! Last, best, randomized and unconstrained predictors of a run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dual::DualTrace;
use crate::error::{Error, Result};
use crate::models::ParamModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Last,
    Best,
    Randomized,
    Unconstrained,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 4] = [
        PredictorKind::Last,
        PredictorKind::Best,
        PredictorKind::Randomized,
        PredictorKind::Unconstrained,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::Last => "last",
            PredictorKind::Best => "best",
            PredictorKind::Randomized => "randomized",
            PredictorKind::Unconstrained => "unconstrained",
        }
    }
}

pub struct PredictorBundle {
    pub last: ParamModel,
    pub best: ParamModel,
    /// Iterates `t0..=T` with their indices.
    pub randomized: Vec<(usize, ParamModel)>,
    pub seed: u64,
    pub unconstrained: ParamModel,
    rng: ChaCha8Rng,
}

impl PredictorBundle {
    pub fn new(trace: &DualTrace, unconstrained: ParamModel, seed: u64) -> Result<Self> {
        let t_end = trace.len();
        let randomized = (trace.t0.min(t_end)..=t_end)
            .map(|t| Ok((t, trace.model_at(t)?.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            last: trace.last_model()?.clone(),
            best: trace.best_model()?.clone(),
            randomized,
            seed,
            unconstrained,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Draws the iterate index the next randomized prediction will use.
    pub fn draw(&mut self) -> Result<usize> {
        if self.randomized.is_empty() {
            return Err(Error::MissingCheckpoint(0));
        }
        Ok(self.rng.random_range(0..self.randomized.len()))
    }

    /// Model for a deterministic predictor, or a fresh uniform draw for the randomized one.
    pub fn model(&mut self, which: PredictorKind) -> Result<&ParamModel> {
        Ok(match which {
            PredictorKind::Last => &self.last,
            PredictorKind::Best => &self.best,
            PredictorKind::Unconstrained => &self.unconstrained,
            PredictorKind::Randomized => {
                let k = self.draw()?;
                &self.randomized[k].1
            }
        })
    }

    /// Output (logits under simplex geometry) for one model input row.
    pub fn predict(&mut self, which: PredictorKind, input: &[f64]) -> Result<Vec<f64>> {
        self.model(which)?.predict_one(input)
    }

    /// Outputs for many input rows; the randomized predictor draws per row.
    pub fn predict_rows(&mut self, which: PredictorKind, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        inputs.iter().map(|x| self.predict(which, x)).collect()
    }
}
