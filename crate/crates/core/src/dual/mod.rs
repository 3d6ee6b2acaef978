//! Dual supergradient ascent over a parametrized family, with per-iteration
//! logging and predictor extraction.

pub mod predictors;
pub mod sampling;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::linear_ref::LinearReference;
use crate::models::oracle::{minimize_on, OptimizerState, OracleConfig};
use crate::models::{checkpoint, Arch, ModelContext, ParamModel};
use crate::problem::{DualVector, ProblemSpec};

pub use predictors::{PredictorBundle, PredictorKind};
pub use sampling::{stochastic_slack, BatchSize, SlackSampler};

/// `max(0, lambda + eta * slacks)` componentwise.
pub fn dual_update(lambda: &DualVector, slacks: &[f64], eta: f64) -> DualVector {
    DualVector::projected(lambda.as_slice().iter().zip(slacks).map(|(l, s)| (l + eta * s).max(0.0)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AscentConfig {
    pub iterations: usize,
    pub eta: f64,
    pub batch_size: BatchSize,
    pub oracle: OracleConfig,
    pub seed: u64,
    /// First iteration (1-based) of the window used by the best and randomized predictors.
    pub t0: usize,
    #[serde(default = "default_stride")]
    pub checkpoint_stride: usize,
    /// Added to every slack estimate before the update; ascent on
    /// `g(lambda) + tilt * ||lambda||_1`.
    #[serde(default)]
    pub tilt: f64,
    /// Log the exact dual function and oracle gap (linear family only).
    #[serde(default)]
    pub exact_reference: bool,
    /// Sources per primal mini-batch; the oracle descends on a fresh batch
    /// each round while traces record full-data values.
    #[serde(default = "full_batch")]
    pub oracle_batch: BatchSize,
}

fn full_batch() -> BatchSize {
    BatchSize::Full
}

fn default_stride() -> usize {
    10
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            eta: 0.1,
            batch_size: BatchSize::Full,
            oracle: OracleConfig::default(),
            seed: 0,
            t0: 50,
            checkpoint_stride: 10,
            tilt: 0.0,
            exact_reference: false,
            oracle_batch: BatchSize::Full,
        }
    }
}

impl AscentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Config("eta must be positive".into()));
        }
        if self.t0 == 0 || self.t0 > self.iterations {
            return Err(Error::Config(format!("t0 must lie in [1, {}]", self.iterations)));
        }
        if self.checkpoint_stride == 0 {
            return Err(Error::Config("checkpoint_stride must be positive".into()));
        }
        if !(self.tilt >= 0.0) || !self.tilt.is_finite() {
            return Err(Error::Config("tilt must be finite and >= 0".into()));
        }
        self.oracle.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: usize,
    pub lambda: DualVector,
    /// Exact full-data slacks of the oracle output.
    pub slacks: Vec<f64>,
    /// Slack estimates used in the update (including any tilt).
    pub slack_estimates: Vec<f64>,
    pub objective: f64,
    /// `L(f_theta(t), lambda(t))`, an upper estimate of `g_p(lambda(t))`.
    pub lagrangian: f64,
    pub gap_surrogate: f64,
    /// Exact `g_p(lambda(t))` when an exact reference is available.
    pub exact_dual: Option<f64>,
    /// Key into the trace's checkpoint store.
    pub checkpoint: Option<usize>,
}

impl TraceRecord {
    pub fn exact_gap(&self) -> Option<f64> {
        self.exact_dual.map(|g| (self.lagrangian - g).max(0.0))
    }
}

#[derive(Clone, Debug)]
pub struct DualTrace {
    pub records: Vec<TraceRecord>,
    /// 1-based index of the best iterate over `[t0, T]`.
    pub best_index: usize,
    pub s2_estimate: f64,
    pub eta: f64,
    pub t0: usize,
    pub tilt: f64,
    /// `lambda(T + 1)`.
    pub final_lambda: DualVector,
    pub checkpoints: BTreeMap<usize, ParamModel>,
    /// Set when the run stopped early; the records cover the completed iterations.
    pub abort: Option<String>,
}

impl DualTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record of iteration `t` (1-based).
    pub fn record(&self, t: usize) -> &TraceRecord {
        &self.records[t - 1]
    }

    pub fn model_at(&self, t: usize) -> Result<&ParamModel> {
        self.checkpoints.get(&t).ok_or(Error::MissingCheckpoint(t))
    }

    pub fn last_model(&self) -> Result<&ParamModel> {
        self.model_at(self.records.len())
    }

    pub fn best_model(&self) -> Result<&ParamModel> {
        self.model_at(self.best_index)
    }

    pub fn best(&self) -> &TraceRecord {
        self.record(self.best_index)
    }

    /// Largest oracle gap surrogate over the run.
    pub fn rho_surrogate(&self) -> f64 {
        self.records.iter().map(|r| r.gap_surrogate).fold(0.0, f64::max)
    }

    /// Largest exact oracle gap, when an exact reference was logged.
    pub fn rho_exact(&self) -> Option<f64> {
        self.records.iter().map(TraceRecord::exact_gap).try_fold(0.0f64, |acc, g| g.map(|g| acc.max(g)))
    }

    /// Recomputes every `lambda(t + 1)` from the log; true when all match bit for bit.
    pub fn replays(&self) -> bool {
        let next = self.records.iter().skip(1).map(|r| &r.lambda).chain(std::iter::once(&self.final_lambda));
        self.records
            .iter()
            .zip(next)
            .all(|(r, n)| dual_update(&r.lambda, &r.slack_estimates, self.eta) == *n)
    }

    /// Writes `t, lambda_*, slack_*, slack_hat_*, objective, lagrangian, gap_surrogate`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let m = self.final_lambda.len();
        let mut header = vec!["t".to_string()];
        for prefix in ["lambda", "slack", "slack_hat"] {
            header.extend((1..=m).map(|i| format!("{prefix}_{i}")));
        }
        header.extend(["objective", "lagrangian", "gap_surrogate"].map(String::from));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.t.to_string()];
            for v in r.lambda.as_slice().iter().chain(&r.slacks).chain(&r.slack_estimates) {
                row.push(format!("{v:e}"));
            }
            for v in [r.objective, r.lagrangian, r.gap_surrogate] {
                row.push(format!("{v:e}"));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes every stored model as `ckpt_{t:05}.bin` under `dir`.
    pub fn write_checkpoints(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        self.checkpoints
            .iter()
            .map(|(t, m)| {
                let p = dir.join(format!("ckpt_{t:05}.bin"));
                checkpoint::write(m, &p)?;
                Ok(p)
            })
            .collect()
    }
}

/// Index over `[t0, T]` with the largest recorded Lagrangian (ties to the
/// earliest) and that value.
pub fn best_iterate(trace: &DualTrace, t0: usize) -> (usize, f64) {
    let t0 = t0.clamp(1, trace.len().max(1));
    let mut best = (t0, f64::NEG_INFINITY);
    for r in &trace.records[t0 - 1..] {
        if r.lagrangian > best.1 {
            best = (r.t, r.lagrangian);
        }
    }
    best
}

pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

const BATCH_STREAM: u64 = 1;
const ORACLE_BATCH_STREAM: u64 = 6;

/// Runs `cfg.iterations` rounds of oracle, slack estimate and projected dual step.
pub fn run_dual_ascent(problem: &ProblemSpec, init: &ParamModel, cfg: &AscentConfig) -> Result<DualTrace> {
    cfg.validate()?;
    ascend(problem, init, cfg, cfg.eta)
}

/// Trains with the multipliers held at zero for as many oracle rounds as an
/// ascent run would use.
pub fn train_unconstrained(problem: &ProblemSpec, init: &ParamModel, cfg: &AscentConfig) -> Result<ParamModel> {
    cfg.validate()?;
    let trace = ascend(problem, init, cfg, 0.0)?;
    if let Some(e) = trace.abort {
        return Err(Error::Structural(format!("unconstrained training stopped: {e}")));
    }
    trace.last_model().cloned()
}

fn ascend(problem: &ProblemSpec, init: &ParamModel, cfg: &AscentConfig, eta: f64) -> Result<DualTrace> {
    let ctx = ModelContext::new(problem, init)?;
    let mut reference = if cfg.exact_reference {
        if init.arch != Arch::Linear {
            return Err(Error::Config("exact_reference needs the linear family".into()));
        }
        Some(LinearReference::new(problem, init)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, BATCH_STREAM));
    let mut oracle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, ORACLE_BATCH_STREAM));
    let n_sources = problem.dataset().n_sources();
    let mut lambda = DualVector::zeros(problem.m());
    let mut model = init.clone();
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut checkpoints = BTreeMap::new();
    let mut s2: f64 = 0.0;
    let mut abort = None;
    let mut carried = OptimizerState::default();
    for t in 1..=cfg.iterations {
        let mut fresh = OptimizerState::default();
        let state = if cfg.oracle.carry_state { &mut carried } else { &mut fresh };
        let step = match cfg.oracle_batch {
            BatchSize::Sources(b) if b < n_sources => {
                let mut idx = sample(&mut oracle_rng, n_sources, b).into_vec();
                idx.sort_unstable();
                problem
                    .restricted(&idx)
                    .and_then(|sub| {
                        let sub_ctx = ModelContext::new(&sub, &model)?;
                        minimize_on(&sub_ctx, &ctx, lambda.as_slice(), &cfg.oracle, &model, state)
                    })
            }
            _ => minimize_on(&ctx, &ctx, lambda.as_slice(), &cfg.oracle, &model, state),
        };
        let out = match step {
            Ok(o) => o,
            Err(e) => {
                abort = Some(format!("iteration {t}: {e}"));
                break;
            }
        };
        let mut estimate = SlackSampler::new(problem, &out.outputs)?.draw(cfg.batch_size, &mut rng);
        s2 = s2.max(estimate.iter().map(|s| s * s).sum());
        estimate.iter_mut().for_each(|s| *s += cfg.tilt);
        let exact_dual = match reference.as_mut() {
            Some(r) => Some(r.dual(lambda.as_slice())?.value),
            None => None,
        };
        let keep = t == 1 || t % cfg.checkpoint_stride == 0 || t >= cfg.t0 || t == cfg.iterations;
        if keep {
            checkpoints.insert(t, out.model.clone());
        }
        let next = dual_update(&lambda, &estimate, eta);
        records.push(TraceRecord {
            t,
            lambda,
            slacks: out.slacks,
            slack_estimates: estimate,
            objective: out.objective,
            lagrangian: out.value,
            gap_surrogate: out.gap_estimate,
            exact_dual,
            checkpoint: keep.then_some(t),
        });
        lambda = next;
        model = out.model;
    }
    if records.is_empty() {
        return Err(Error::Structural(abort.unwrap_or_else(|| "no iterations ran".into())));
    }
    let mut trace = DualTrace {
        records,
        best_index: 1,
        s2_estimate: 1.1 * s2,
        eta,
        t0: cfg.t0,
        tilt: cfg.tilt,
        final_lambda: lambda,
        checkpoints,
        abort,
    };
    // an aborted run keeps its last completed model
    let last = trace.len();
    if !trace.checkpoints.contains_key(&last) {
        trace.checkpoints.insert(last, model);
    }
    trace.best_index = best_iterate(&trace, cfg.t0).0;
    if !trace.checkpoints.contains_key(&trace.best_index) {
        return Err(Error::MissingCheckpoint(trace.best_index));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tests::toy_fairness;

    #[test]
    fn update_examples() {
        let l = DualVector::new(vec![0.5]).unwrap();
        assert!((dual_update(&l, &[0.2], 0.1).as_slice()[0] - 0.52).abs() < 1e-15);
        let l = DualVector::new(vec![0.1]).unwrap();
        assert_eq!(dual_update(&l, &[-2.0], 0.1).as_slice(), &[0.0]);
        assert_eq!(dual_update(&DualVector::zeros(2), &[0.0, 0.0], 7.0).as_slice(), &[0.0, 0.0]);
    }

    fn small_cfg() -> AscentConfig {
        AscentConfig {
            iterations: 12,
            eta: 1.0,
            batch_size: BatchSize::Sources(8),
            oracle: OracleConfig {
                max_steps: 5,
                ..Default::default()
            },
            seed: 3,
            t0: 6,
            ..Default::default()
        }
    }

    #[test]
    fn trace_replays_and_starts_at_zero() {
        let p = toy_fairness(20, 2);
        let init = ParamModel::init(Arch::Mlp2 { hidden_width: 4 }, p.dataset().input_dim(), 2, None, 1).unwrap();
        let tr = run_dual_ascent(&p, &init, &small_cfg()).unwrap();
        assert!(tr.abort.is_none());
        assert_eq!(tr.len(), 12);
        assert!(tr.record(1).lambda.as_slice().iter().all(|&l| l == 0.0));
        assert!(tr.replays());
        assert!(tr.best_index >= 6);
        for t in 6..=12 {
            tr.model_at(t).unwrap();
        }
        assert!(tr.model_at(3).is_err());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let p = toy_fairness(20, 2);
        let init = ParamModel::init(Arch::Linear, p.dataset().input_dim(), 2, None, 1).unwrap();
        let a = run_dual_ascent(&p, &init, &small_cfg()).unwrap();
        let b = run_dual_ascent(&p, &init, &small_cfg()).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn best_iterate_ties_go_early() {
        let p = toy_fairness(10, 2);
        let init = ParamModel::init(Arch::Linear, p.dataset().input_dim(), 2, None, 1).unwrap();
        let mut tr = run_dual_ascent(&p, &init, &small_cfg()).unwrap();
        for r in &mut tr.records {
            r.lagrangian = 1.0;
        }
        assert_eq!(best_iterate(&tr, 4).0, 4);
        for r in &mut tr.records {
            r.lagrangian = r.t as f64;
        }
        assert_eq!(best_iterate(&tr, 4).0, 12);
    }
}
