//! Configuration-driven experiment runner: scenario files, per-seed runs,
//! predictor comparison, oscillation statistics, capacity sweeps and artifact
//! manifests.

pub mod data;
pub mod stats;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certificates::{
    curvature_audit, estimate_constants, verify_bounds, CertificateReport, ConstantEstimates, ExactReference, ProbeConfig, Provenance, VerifyConfig,
};
use crate::dual::{derive_seed, run_dual_ascent, train_unconstrained, AscentConfig, DualTrace, PredictorKind};
use crate::error::{Error, Result};
use crate::models::linear_ref::LinearReference;
use crate::models::{Arch, ParamModel, Projection};
use crate::problem::{FunctionTable, OutputGeometry, ProblemFile, ProblemSpec, RawData};
use crate::unparam::{UnparamConfig, UnparamSolution, UnparamSolver};

pub use stats::{oscillation_stats, settling_index, spearman, OscillationStats};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    /// Rows of a fixed random projection applied to the inputs; `None` feeds them directly.
    #[serde(default)]
    pub projection_dim: Option<usize>,
    #[serde(default)]
    pub projection_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateSpec {
    pub enabled: bool,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default = "default_feasibility_tol")]
    pub feasibility_tol: f64,
    #[serde(default = "default_curvature_points")]
    pub curvature_points: usize,
    /// Iterations of the tilted ascent for non-linear families (defaults to the main run's).
    #[serde(default)]
    pub tilted_iterations: Option<usize>,
}

fn default_feasibility_tol() -> f64 {
    1e-3
}

fn default_curvature_points() -> usize {
    9
}

impl Default for CertificateSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            probe: ProbeConfig::default(),
            feasibility_tol: default_feasibility_tol(),
            curvature_points: default_curvature_points(),
            tilted_iterations: None,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    /// Problem file, relative to the scenario file.
    pub problem: PathBuf,
    pub model: ModelSpec,
    pub ascent: AscentConfig,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub certificates: CertificateSpec,
    #[serde(default = "yes")]
    pub unconstrained_baseline: bool,
    #[serde(default)]
    pub unparam: UnparamConfig,
}

impl ScenarioConfig {
    /// Reads a scenario; returns it with the directory relative paths resolve against.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let cfg: ScenarioConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok((cfg, path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "scenario schema_version {} unsupported (expected {SCENARIO_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("scenario needs at least one seed".into()));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction <= 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1]".into()));
        }
        self.ascent.validate()
    }
}

/// Seeds of every random consumer of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub seed: u64,
    pub model_init: u64,
    pub batches: u64,
    pub oracle: u64,
    pub predictor: u64,
    pub probes: u64,
}

impl RunSeeds {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            model_init: derive_seed(seed, 2),
            batches: seed,
            oracle: derive_seed(seed, 3),
            predictor: derive_seed(seed, 4),
            probes: derive_seed(seed, 5),
        }
    }
}

/// Problem, splits and exact solution shared by every seed of a scenario.
pub struct Prepared {
    pub file: ProblemFile,
    pub train: ProblemSpec,
    pub test: ProblemSpec,
    pub unparam: Option<UnparamSolution>,
}

impl Prepared {
    pub fn new(cfg: &ScenarioConfig, base_dir: &Path, solve_unparam: bool) -> Result<Self> {
        let (file, data) = ProblemFile::load(&base_dir.join(&cfg.problem))?;
        let raw = file.read_data(&data)?;
        Self::from_raw(cfg, file, raw, solve_unparam)
    }

    pub fn from_raw(cfg: &ScenarioConfig, file: ProblemFile, raw: RawData, solve_unparam: bool) -> Result<Self> {
        let (tr, te) = data::split(&raw, cfg.split.train_fraction, cfg.split.seed);
        let train = file.build(tr)?;
        let test = file.build(te)?;
        let unparam = if solve_unparam {
            Some(UnparamSolver::new(&train)?.solve(&cfg.unparam)?)
        } else {
            None
        };
        Ok(Self { file, train, test, unparam })
    }

    pub fn init_model(&self, spec: &ModelSpec, seed: u64) -> Result<ParamModel> {
        let input_dim = self.train.dataset().input_dim();
        let projection = spec.projection_dim.map(|r| Projection::random(r, input_dim, spec.projection_seed));
        ParamModel::init(spec.arch, input_dim, self.train.output_dim(), projection, seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorRow {
    pub seed: u64,
    pub predictor: PredictorKind,
    /// Test accuracy (classification problems only).
    pub accuracy: Option<f64>,
    pub test_objective: f64,
    /// Training-set slacks.
    pub slacks: Vec<f64>,
    pub max_violation: f64,
}

struct Evaluation {
    accuracy: Option<f64>,
    test_objective: f64,
    slacks: Vec<f64>,
}

fn accuracy(problem: &ProblemSpec, table: &FunctionTable) -> Option<f64> {
    if problem.geometry() != OutputGeometry::ProbabilitySimplexViaLogits {
        return None;
    }
    let ds = problem.dataset();
    let mut acc = 0.0;
    for k in 0..ds.n_sources() {
        let row = table.row(k);
        let arg = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
        if arg == ds.sample(k).class() {
            acc += ds.sample(k).weight;
        }
    }
    Some(acc)
}

fn evaluate(prep: &Prepared, model: &ParamModel) -> Result<Evaluation> {
    let test_table = model.forward(prep.test.dataset())?;
    let train_table = model.forward(prep.train.dataset())?;
    Ok(Evaluation {
        accuracy: accuracy(&prep.test, &test_table),
        test_objective: prep.test.objective_value(&test_table)?,
        slacks: prep.train.slacks(&train_table)?,
    })
}

fn row(seed: u64, predictor: PredictorKind, e: Evaluation) -> PredictorRow {
    PredictorRow {
        seed,
        predictor,
        accuracy: e.accuracy,
        test_objective: e.test_objective,
        max_violation: e.slacks.iter().fold(0.0f64, |a, s| a.max(*s)),
        slacks: e.slacks,
    }
}

/// Compares the last, best, randomized and (optionally) unconstrained
/// predictors. The randomized predictor is evaluated in expectation: its
/// risks and accuracy are averages over the iterates it samples from.
pub fn compare_predictors(prep: &Prepared, trace: &DualTrace, unconstrained: Option<&ParamModel>, seed: u64) -> Result<Vec<PredictorRow>> {
    let mut rows = vec![
        row(seed, PredictorKind::Last, evaluate(prep, trace.last_model()?)?),
        row(seed, PredictorKind::Best, evaluate(prep, trace.best_model()?)?),
    ];
    let window: Vec<usize> = (trace.t0.min(trace.len())..=trace.len()).collect();
    let mut acc = 0.0;
    let mut has_acc = true;
    let mut obj = 0.0;
    let mut slacks = vec![0.0; prep.train.m()];
    for &t in &window {
        let e = evaluate(prep, trace.model_at(t)?)?;
        match e.accuracy {
            Some(a) => acc += a,
            None => has_acc = false,
        }
        obj += e.test_objective;
        slacks.iter_mut().zip(&e.slacks).for_each(|(s, v)| *s += v);
    }
    let k = window.len() as f64;
    slacks.iter_mut().for_each(|s| *s /= k);
    rows.push(row(
        seed,
        PredictorKind::Randomized,
        Evaluation {
            accuracy: has_acc.then_some(acc / k),
            test_objective: obj / k,
            slacks,
        },
    ));
    if let Some(u) = unconstrained {
        rows.push(row(seed, PredictorKind::Unconstrained, evaluate(prep, u)?));
    }
    Ok(rows)
}

pub fn write_predictors_csv(rows: &[PredictorRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let m = rows.first().map_or(0, |r| r.slacks.len());
    let mut header: Vec<String> = ["seed", "predictor", "accuracy", "test_objective", "max_violation"].map(String::from).to_vec();
    header.extend((1..=m).map(|i| format!("slack_{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.seed.to_string(),
            r.predictor.name().to_string(),
            r.accuracy.map_or(String::new(), |a| format!("{a:e}")),
            format!("{:e}", r.test_objective),
            format!("{:e}", r.max_violation),
        ];
        rec.extend(r.slacks.iter().map(|s| format!("{s:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub struct SeedRun {
    pub seeds: RunSeeds,
    pub trace: DualTrace,
    pub unconstrained: Option<ParamModel>,
    pub predictors: Vec<PredictorRow>,
    pub oscillation: OscillationStats,
    pub report: Option<CertificateReport>,
}

fn ascent_for(cfg: &ScenarioConfig, seeds: &RunSeeds) -> AscentConfig {
    let mut a = cfg.ascent.clone();
    a.seed = seeds.batches;
    a.oracle.seed = seeds.oracle;
    a
}

/// Dual ascent, predictors and oscillation statistics for one seed.
pub fn run_seed(prep: &Prepared, cfg: &ScenarioConfig, seed: u64) -> Result<SeedRun> {
    let seeds = RunSeeds::new(seed);
    let init = prep.init_model(&cfg.model, seeds.model_init)?;
    let ascent = ascent_for(cfg, &seeds);
    let trace = run_dual_ascent(&prep.train, &init, &ascent)?;
    if let Some(e) = &trace.abort {
        return Err(Error::Structural(format!("dual ascent stopped early: {e}")));
    }
    let unconstrained = if cfg.unconstrained_baseline {
        Some(train_unconstrained(&prep.train, &init, &ascent)?)
    } else {
        None
    };
    let predictors = compare_predictors(prep, &trace, unconstrained.as_ref(), seed)?;
    let oscillation = oscillation_stats(&trace, stats::SETTLE_FRACTION);
    Ok(SeedRun {
        seeds,
        trace,
        unconstrained,
        predictors,
        oscillation,
        report: None,
    })
}

/// Multiplier norm maximizing the tilted dual `g(lambda) + tilt * ||lambda||_1`
/// (exact for the linear family, from a tilted ascent run otherwise).
pub fn tilted_multiplier_norm(prep: &Prepared, cfg: &ScenarioConfig, seeds: &RunSeeds, tilt: f64) -> Result<(f64, Provenance)> {
    let init = prep.init_model(&cfg.model, seeds.model_init)?;
    if init.arch == Arch::Linear {
        let eps = vec![tilt; prep.train.m()];
        let tilted = prep.train.perturbed(&eps)?;
        return match LinearReference::new(&tilted, &init)?.solve(&cfg.unparam) {
            Ok(s) => Ok((s.lambda_star.l1(), Provenance::Analytic)),
            Err(Error::DualUnbounded { .. }) => Ok((f64::INFINITY, Provenance::Analytic)),
            Err(e) => Err(e),
        };
    }
    let mut a = ascent_for(cfg, seeds);
    a.tilt = tilt;
    a.exact_reference = false;
    if let Some(t) = cfg.certificates.tilted_iterations {
        a.iterations = t;
        a.t0 = a.t0.min(t);
    }
    let trace = run_dual_ascent(&prep.train, &init, &a)?;
    let best = trace.records[a.t0 - 1..]
        .iter()
        .map(|r| (r.lagrangian + tilt * r.lambda.l1(), r.lambda.l1()))
        .fold((f64::NEG_INFINITY, 0.0), |b, x| if x.0 > b.0 { x } else { b });
    Ok((best.1, Provenance::Surrogate))
}

/// Estimates constants and evaluates every certificate for a completed run.
pub fn certify(prep: &Prepared, cfg: &ScenarioConfig, run: &SeedRun) -> Result<CertificateReport> {
    let unparam = prep.unparam.as_ref().ok_or_else(|| Error::Config("certificates need the unparametrized solution".into()))?;
    let trace = &run.trace;
    let mut probe = cfg.certificates.probe.clone();
    probe.seed = run.seeds.probes;
    let lambda_p = trace.best().lambda.clone();
    let constants = estimate_constants(&prep.train, unparam, trace, &lambda_p, &probe)?;
    let tilt = constants.lipschitz * constants.nu;
    let (tilde, prov) = tilted_multiplier_norm(prep, cfg, &run.seeds, tilt)?;
    let constants: ConstantEstimates = constants.with_lambda_tilde(tilde, prov);
    let init = prep.init_model(&cfg.model, run.seeds.model_init)?;
    let exact = if init.arch == Arch::Linear {
        let s = LinearReference::new(&prep.train, &init)?.solve(&cfg.unparam)?;
        Some(ExactReference {
            primal_value: s.primal_value,
            dual_value: s.dual_value,
        })
    } else {
        None
    };
    let verify = VerifyConfig {
        feasibility_tol: cfg.certificates.feasibility_tol,
        exact,
    };
    let mut report = verify_bounds(&prep.train, unparam, trace, &constants, &verify)?;
    report.curvature = Some(curvature_audit(
        &prep.train,
        unparam.lambda_star.as_slice(),
        lambda_p.as_slice(),
        cfg.certificates.curvature_points,
        &constants,
    )?);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub files: Vec<ManifestEntry>,
}

/// Hashes `files` (paths under `out`) and writes `out/manifest.json`.
pub fn write_manifest(out: &Path, files: &[PathBuf]) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(files.len());
    let mut sorted = files.to_vec();
    sorted.sort();
    sorted.dedup();
    for f in &sorted {
        let bytes = std::fs::read(f)?;
        let rel = f.strip_prefix(out).unwrap_or(f);
        entries.push(ManifestEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let path = out.join("manifest.json");
    let m = Manifest {
        schema_version: 1,
        files: entries,
    };
    std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(path)
}

/// Maps `f` over `items` on up to `threads` scoped workers; results keep input order.
pub fn pool_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = threads.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot").expect("every item is processed")).collect()
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<PathBuf> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(path.to_path_buf())
}

#[derive(Serialize)]
struct RunMeta<'a> {
    schema_version: u32,
    scenario: &'a str,
    seeds: RunSeeds,
    ascent: &'a AscentConfig,
    model: &'a ModelSpec,
    iterations_completed: usize,
    best_index: usize,
    s2_estimate: f64,
    rho_surrogate: f64,
    rho_exact: Option<f64>,
    oscillation: &'a OscillationStats,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    stage: &'a str,
    seed: Option<u64>,
    error: String,
}

pub struct ScenarioOutcome {
    pub prepared: Prepared,
    pub runs: Vec<SeedRun>,
    pub artifacts: Vec<PathBuf>,
}

/// Solves the exact problem, then for every seed runs dual ascent, compares
/// predictors and (optionally) evaluates certificates; writes all artifacts
/// under `out` with a hashed manifest. On failure an `error.json` record is
/// written next to the partial artifacts. Seeds run on up to `threads` workers.
pub fn run_scenario(cfg: &ScenarioConfig, base_dir: &Path, out: &Path, threads: usize) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let mut artifacts = Vec::new();
    let fail = |stage: &str, seed: Option<u64>, e: Error, artifacts: &mut Vec<PathBuf>| -> Error {
        let rec = ErrorRecord {
            stage,
            seed,
            error: e.to_string(),
        };
        if let Ok(p) = write_json(&rec, &out.join("error.json")) {
            artifacts.push(p);
            let _ = write_manifest(out, artifacts);
        }
        e
    };
    let prepared = match Prepared::new(cfg, base_dir, true) {
        Ok(p) => p,
        Err(e) => return Err(fail("unparam", None, e, &mut artifacts)),
    };
    if let Some(u) = &prepared.unparam {
        let json = out.join("unparam.json");
        let csv = out.join("phi_star.csv");
        u.write(&json, &csv)?;
        artifacts.extend([json, csv]);
    }
    let computed = pool_map(&cfg.seeds, threads, |&seed| -> (u64, &'static str, Result<SeedRun>) {
        let mut run = match run_seed(&prepared, cfg, seed) {
            Ok(r) => r,
            Err(e) => return (seed, "dual_ascent", Err(e)),
        };
        if cfg.certificates.enabled {
            match certify(&prepared, cfg, &run) {
                Ok(r) => run.report = Some(r),
                Err(e) => return (seed, "certificates", Err(e)),
            }
        }
        (seed, "", Ok(run))
    });
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for (seed, stage, run) in computed {
        let run = match run {
            Ok(r) => r,
            Err(e) => return Err(fail(stage, Some(seed), e, &mut artifacts)),
        };
        let dir = out.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&dir)?;
        let trace_path = dir.join("trace.csv");
        run.trace.write_csv(&trace_path)?;
        artifacts.push(trace_path);
        artifacts.extend(run.trace.write_checkpoints(&dir.join("checkpoints"))?);
        if let Some(report) = &run.report {
            let json = dir.join("certificates.json");
            report.write_json(&json)?;
            let txt = dir.join("certificates.txt");
            std::fs::write(&txt, report.render_text())?;
            artifacts.extend([json, txt]);
        }
        let meta = RunMeta {
            schema_version: 1,
            scenario: &cfg.name,
            seeds: run.seeds,
            ascent: &cfg.ascent,
            model: &cfg.model,
            iterations_completed: run.trace.len(),
            best_index: run.trace.best_index,
            s2_estimate: run.trace.s2_estimate,
            rho_surrogate: run.trace.rho_surrogate(),
            rho_exact: run.trace.rho_exact(),
            oscillation: &run.oscillation,
        };
        artifacts.push(write_json(&meta, &dir.join("meta.json"))?);
        rows.extend(run.predictors.iter().cloned());
        runs.push(run);
    }
    let pred = out.join("predictors.csv");
    write_predictors_csv(&rows, &pred)?;
    artifacts.push(pred);
    let osc = out.join("oscillation.csv");
    stats::write_oscillation_csv(&runs.iter().map(|r| (r.seeds.seed, r.oscillation.clone())).collect::<Vec<_>>(), &osc)?;
    artifacts.push(osc);
    artifacts.push(write_json(cfg, &out.join("scenario.json"))?);
    let manifest = write_manifest(out, &artifacts)?;
    artifacts.push(manifest);
    Ok(ScenarioOutcome {
        prepared,
        runs,
        artifacts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum SweepAxis {
    /// Projection rows; `None` is the unprojected input.
    ProjectionDim(Vec<Option<usize>>),
    HiddenWidth(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub capacity: f64,
    /// Max post-settling violation per seed.
    pub violations: Vec<f64>,
    pub median_violation: f64,
    pub mean_accuracy: Option<f64>,
    pub nu: Option<f64>,
    pub gamma2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
    /// Spearman correlation between capacity and median violation; `None` when the axis is flat.
    pub spearman: Option<f64>,
}

impl SweepResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = ["axis", "label", "capacity", "median_max_violation", "mean_accuracy", "nu", "gamma2"].map(String::from).to_vec();
        header.extend(self.seeds.iter().map(|s| format!("violation_seed_{s}")));
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
        for r in &self.rows {
            let mut rec = vec![
                self.axis.clone(),
                r.label.clone(),
                format!("{}", r.capacity),
                format!("{:e}", r.median_violation),
                opt(r.mean_accuracy),
                opt(r.nu),
                opt(r.gamma2),
            ];
            rec.extend(r.violations.iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Runs the scenario at every capacity on `axis` with shared seeds and
/// relates capacity to the median post-settling violation. Fit residuals to
/// `phi*` are reported per capacity (and `Gamma2` when certificates are enabled); along a width axis the fits are chained
/// through widened warm starts so that the residuals are non-increasing.
pub fn capacity_sweep(base: &ScenarioConfig, base_dir: &Path, axis: &SweepAxis, out: Option<&Path>, threads: usize) -> Result<SweepResult> {
    base.validate()?;
    let len = match axis {
        SweepAxis::ProjectionDim(v) => v.len(),
        SweepAxis::HiddenWidth(v) => v.len(),
    };
    if len < 3 {
        return Err(Error::Config(format!("a capacity sweep needs at least 3 axis values, got {len}")));
    }
    let need_unparam = base.certificates.enabled;
    let prep = Prepared::new(base, base_dir, true)?;
    let configs: Vec<(String, f64, ScenarioConfig)> = match axis {
        SweepAxis::ProjectionDim(dims) => dims
            .iter()
            .map(|d| {
                let mut c = base.clone();
                c.model.projection_dim = *d;
                let cap = d.unwrap_or(prep.train.dataset().input_dim()) as f64;
                (d.map_or("full".to_string(), |d| d.to_string()), cap, c)
            })
            .collect(),
        SweepAxis::HiddenWidth(ws) => {
            let mut ws = ws.clone();
            ws.sort_unstable();
            ws
        }
        .iter()
            .map(|&w| {
                let mut c = base.clone();
                c.model.arch = Arch::Mlp2 { hidden_width: w };
                (w.to_string(), w as f64, c)
            })
            .collect(),
    };
    let mut rows = Vec::new();
    let mut chained: Option<ParamModel> = None;
    for (label, capacity, cfg) in &configs {
        let per_seed = pool_map(&base.seeds, threads, |&seed| -> Result<(f64, Option<f64>, Option<f64>)> {
            let run = run_seed(&prep, cfg, seed)?;
            let violation = stats::max_post_settling_violation(&run.trace, stats::SETTLE_FRACTION);
            let acc = run.predictors.iter().find(|r| r.predictor == PredictorKind::Last).and_then(|r| r.accuracy);
            let gamma2 = if need_unparam { Some(certify(&prep, cfg, &run)?.gamma2) } else { None };
            Ok((violation, acc, gamma2))
        });
        let mut violations = Vec::new();
        let mut accs = Vec::new();
        let mut gammas = Vec::new();
        for r in per_seed {
            let (v, a, g) = r?;
            violations.push(v);
            accs.extend(a);
            gammas.extend(g);
        }
        let nu = match &prep.unparam {
            Some(u) => {
                let start = match (axis, chained.take()) {
                    (SweepAxis::HiddenWidth(_), Some(prev)) => match cfg.model.arch {
                        Arch::Mlp2 { hidden_width } => prev.widen(hidden_width, base.model.projection_seed)?,
                        Arch::Linear => prev,
                    },
                    _ => prep.init_model(&cfg.model, RunSeeds::new(base.seeds[0]).model_init)?,
                };
                let fit = crate::models::fit::fit_to_targets_from(&u.phi_star, &start, &base.certificates.probe.fit, &prep.train)?;
                chained = Some(fit.model);
                Some(fit.residual)
            }
            None => None,
        };
        rows.push(SweepRow {
            label: label.clone(),
            capacity: *capacity,
            median_violation: median(&violations),
            violations,
            mean_accuracy: (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64),
            nu,
            gamma2: (!gammas.is_empty()).then(|| median(&gammas)),
        });
    }
    rows.sort_by(|a, b| a.capacity.total_cmp(&b.capacity));
    let caps: Vec<f64> = rows.iter().map(|r| r.capacity).collect();
    let meds: Vec<f64> = rows.iter().map(|r| r.median_violation).collect();
    let result = SweepResult {
        axis: match axis {
            SweepAxis::ProjectionDim(_) => "projection_dim".into(),
            SweepAxis::HiddenWidth(_) => "hidden_width".into(),
        },
        seeds: base.seeds.clone(),
        rows,
        spearman: spearman(&caps, &meds),
    };
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        let csv = out.join("sweep.csv");
        result.write_csv(&csv)?;
        let json = write_json(&result, &out.join("sweep.json"))?;
        write_manifest(out, &[csv, json])?;
    }
    Ok(result)
}
