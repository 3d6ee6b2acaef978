use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use duallearn::certificates::CertificateReport;
use duallearn::harness::data::{fairness_problem, smoke_data, smoke_problem, synthetic_compas};
use duallearn::harness::{capacity_sweep, run_scenario, write_manifest, Prepared, ScenarioConfig, SweepAxis};
use duallearn::{Error, Result};

#[derive(Parser)]
#[command(name = "duallearn", version, about = "Dual ascent for constrained learning with duality certificates")]
struct Cli {
    /// Scenario file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run only this seed instead of the scenario's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for seeds and sweep entries.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Compas,
    Smoke,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the unparametrized problem exactly and write unparam.json / phi_star.csv.
    SolveUnparam,
    /// Run dual ascent for every seed and compare predictors.
    Train,
    /// Train, then estimate constants and evaluate every certificate.
    /// Exits with status 1 if an applicable certificate is violated.
    Verify,
    /// Capacity sweep, e.g. `projection:2,4,8,full` or `width:4,16,64`.
    Sweep {
        #[arg(long)]
        axis: String,
    },
    /// Print certificate reports found under --out.
    Report,
    /// Write a bundled synthetic dataset and its problem file.
    GenData {
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long)]
        rows: Option<usize>,
        /// Constraint level of the fairness problem.
        #[arg(long, default_value_t = 0.001)]
        level: f64,
        /// Output regularization of the fairness objective.
        #[arg(long, default_value_t = 1e-3)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
    },
}

fn parse_axis(s: &str) -> Result<SweepAxis> {
    let (kind, values) = s.split_once(':').ok_or_else(|| Error::Config(format!("axis `{s}` is not `kind:v1,v2,...`")))?;
    let bad = |v: &str| Error::Config(format!("bad axis value `{v}`"));
    match kind {
        "projection" => values
            .split(',')
            .map(|v| if v == "full" { Ok(None) } else { v.parse().map(Some).map_err(|_| bad(v)) })
            .collect::<Result<_>>()
            .map(SweepAxis::ProjectionDim),
        "width" => values.split(',').map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>().map(SweepAxis::HiddenWidth),
        _ => Err(Error::Config(format!("unknown axis kind `{kind}` (projection or width)"))),
    }
}

fn scenario(cli: &Cli) -> Result<(ScenarioConfig, PathBuf)> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config <scenario.json> is required".into()))?;
    let (mut cfg, base) = ScenarioConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    Ok((cfg, base))
}

fn find_reports(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_reports(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == "certificates.json") {
            found.push(p);
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let started = Instant::now();
    let code = match &cli.command {
        Command::GenData {
            kind,
            rows,
            level,
            tau,
            data_seed,
        } => {
            std::fs::create_dir_all(&cli.out)?;
            let (name, raw, file) = match kind {
                DataKind::Compas => {
                    let name = "compas_synthetic";
                    (name, synthetic_compas(rows.unwrap_or(2000), *data_seed), fairness_problem(&format!("{name}.csv"), *level, *tau))
                }
                DataKind::Smoke => {
                    let name = "smoke";
                    (name, smoke_data(rows.unwrap_or(20), *data_seed), smoke_problem(&format!("{name}.csv")))
                }
            };
            let data = cli.out.join(format!("{name}.csv"));
            raw.write_csv(&data)?;
            let problem = cli.out.join(format!("{name}.problem.json"));
            std::fs::write(&problem, serde_json::to_string_pretty(&file)? + "\n")?;
            println!("wrote {} and {}", data.display(), problem.display());
            ExitCode::SUCCESS
        }
        Command::SolveUnparam => {
            let (cfg, base) = scenario(cli)?;
            let prep = Prepared::new(&cfg, &base, true)?;
            let u = prep.unparam.as_ref().expect("solved");
            std::fs::create_dir_all(&cli.out)?;
            let (json, csv) = (cli.out.join("unparam.json"), cli.out.join("phi_star.csv"));
            u.write(&json, &csv)?;
            write_manifest(&cli.out, &[json, csv])?;
            println!(
                "P*_u = {:.10e}  D*_u = {:.10e}  gap = {:.3e}  lambda* = {:?}",
                u.primal_value,
                u.dual_value,
                u.duality_gap(),
                u.lambda_star.as_slice()
            );
            ExitCode::SUCCESS
        }
        Command::Train | Command::Verify => {
            let (mut cfg, base) = scenario(cli)?;
            let verify = matches!(cli.command, Command::Verify);
            cfg.certificates.enabled = verify;
            let outcome = run_scenario(&cfg, &base, &cli.out, cli.threads)?;
            let mut violated = false;
            for run in &outcome.runs {
                let o = &run.oscillation;
                println!(
                    "seed {}: best t = {}, S^2 = {:.3e}, any-violated frequency after settling = {:.3}",
                    run.seeds.seed, run.trace.best_index, run.trace.s2_estimate, o.any_violation_frequency
                );
                for p in &run.predictors {
                    println!(
                        "  {:<13} accuracy {:>8}  max violation {:.3e}",
                        p.predictor.name(),
                        p.accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                        p.max_violation
                    );
                }
                if let Some(r) = &run.report {
                    print!("{}", r.render_text());
                    violated |= r.any_violated();
                }
            }
            if violated {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::Sweep { axis } => {
            let (cfg, base) = scenario(cli)?;
            let axis = parse_axis(axis)?;
            let result = capacity_sweep(&cfg, &base, &axis, Some(&cli.out), cli.threads)?;
            for r in &result.rows {
                println!("{:>6}  median max violation {:.3e}  nu {:?}", r.label, r.median_violation, r.nu);
            }
            match result.spearman {
                Some(rho) => println!("spearman(capacity, violation) = {rho:.3}"),
                None => println!("flat axis: trend test skipped"),
            }
            ExitCode::SUCCESS
        }
        Command::Report => {
            let mut found = Vec::new();
            find_reports(&cli.out, &mut found)?;
            if found.is_empty() {
                return Err(Error::Config(format!("no certificates.json under {}", cli.out.display())));
            }
            let mut violated = false;
            for p in found {
                let r = CertificateReport::read_json(&p)?;
                println!("== {}", p.display());
                print!("{}", r.render_text());
                violated |= r.any_violated();
            }
            if violated {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
    };
    eprintln!("done in {:.1}s", started.elapsed().as_secs_f64());
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
