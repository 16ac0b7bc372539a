use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tacs_core::analysis::{bounded_instance, influence_limit_check, verify_bound};
use tacs_core::calibration::{calibrate, CalibrationGrid, TrainerConfig};
use tacs_core::selectors::{
    all_update_steps, base_grad_score, less_score, random_score, select_top_n, tacs_score,
    tov_scores,
};
use tacs_core::{
    Error, LabeledDataset, LrSchedule, ParamVector, RegularizedObjective, ScoreTable,
    SelectionResult, SelectorKind, Trajectory,
};
use tacs_harness::config::ExperimentConfig;
use tacs_harness::pipeline::{
    pool_warmup, prepare_seed, retrain_and_eval, run_pipeline, test_error, val_warmup,
};
use tacs_harness::report::{emit_reports, load_report};

#[derive(Parser)]
#[command(
    name = "tacs",
    version,
    about = "Targeted data selection on logistic mixtures"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment seed; defaults to the first seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Balanced,
    Rare,
}

#[derive(Subcommand)]
enum Command {
    /// Generate pool, validation, test and negative-reference datasets.
    Gen(Common),
    /// Calibrate, train the validation warmup and save it.
    Warmup(Common),
    /// Run warmup calibration only and write its report.
    Calibrate(Common),
    /// Score the pool with one or more selectors.
    Score {
        #[command(flatten)]
        common: Common,
        /// Comma-separated selector names.
        #[arg(long, value_delimiter = ',')]
        selector: Vec<SelectorKind>,
        /// Reuse a saved validation warmup instead of training one.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Take the top-N rows of a score table.
    Select {
        /// Score table CSV.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain on a selection and report the target test error.
    Retrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        selection: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        rate: f64,
        #[arg(long, default_value_t = 80)]
        steps: usize,
    },
    /// Transfer-bound and influence-limit checks.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Number of bound instances.
        #[arg(long, default_value_t = 50)]
        instances: u64,
    },
    /// Full experiment preset; `--config` overrides the preset entirely.
    Repro {
        preset: Preset,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restrict to these selectors.
        #[arg(long, value_delimiter = ',')]
        selector: Vec<SelectorKind>,
        /// Run a single seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-emit report files from a saved report.json.
    Report {
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> tacs_core::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::balanced()),
    }
}

fn seed_of(cfg: &ExperimentConfig, seed: Option<u64>) -> u64 {
    seed.unwrap_or(cfg.seeds[0])
}

fn mkdir(dir: &Path) -> tacs_core::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> tacs_core::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> tacs_core::Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn save_datasets(dir: &Path, sets: &[(&str, &LabeledDataset)]) -> tacs_core::Result<()> {
    for (name, ds) in sets {
        ds.save(&dir.join(format!("{name}.txt")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(c) => {
            let cfg = load_config(c.config.as_deref())?;
            let seed = seed_of(&cfg, c.seed);
            let inputs = prepare_seed(&cfg, seed)?;
            mkdir(&c.out)?;
            let d = &inputs.data;
            save_datasets(
                &c.out,
                &[
                    ("pool", &d.pool),
                    ("val", &d.val),
                    ("test", &d.test),
                    ("neg_reference", &inputs.neg_reference),
                ],
            )?;
            println!("wrote datasets for seed {seed} to {}", c.out.display());
        }
        Command::Calibrate(c) => {
            let cfg = load_config(c.config.as_deref())?;
            let seed = seed_of(&cfg, c.seed);
            let inputs = prepare_seed(&cfg, seed)?;
            let grid = CalibrationGrid {
                rates: cfg.grids.warmup_rates(),
                depths: cfg.grids.steps.clone(),
                folds: cfg.calibration.folds,
                neg_sample: inputs.neg_reference.clone(),
                seed: cfg.stage_seed("calibration", seed),
            };
            let report = calibrate(&inputs.data.val, &grid, &TrainerConfig::default())?;
            mkdir(&c.out)?;
            write(&c.out.join("calibration.json"), &report.to_json())?;
            println!(
                "chosen rate {} depth {} (mean AUROC {:.4})",
                report.chosen_rate, report.chosen_depth, report.chosen_mean_auroc
            );
        }
        Command::Warmup(c) => {
            let cfg = load_config(c.config.as_deref())?;
            let seed = seed_of(&cfg, c.seed);
            let inputs = prepare_seed(&cfg, seed)?;
            let counters = tacs_core::Counters::new();
            let warm = val_warmup(&cfg, seed, &inputs, &counters)?;
            mkdir(&c.out)?;
            warm.traj.save(&c.out.join("val_warmup.traj"))?;
            write(&c.out.join("calibration.json"), &warm.calibration.to_json())?;
            println!(
                "validation warmup {} ({} GD steps including calibration)",
                warm.traj.schedule(),
                counters.gd_steps()
            );
        }
        Command::Score {
            common: c,
            selector,
            trajectory,
        } => {
            let cfg = load_config(c.config.as_deref())?;
            let seed = seed_of(&cfg, c.seed);
            let inputs = prepare_seed(&cfg, seed)?;
            let selectors = if selector.is_empty() {
                cfg.selectors.clone()
            } else {
                selector
            };
            let (pool, val) = (&inputs.data.pool, &inputs.data.val);
            let mut val_traj: Option<Trajectory> = match &trajectory {
                Some(p) => Some(Trajectory::load(p)?),
                None => None,
            };
            let mut pool_traj: Option<Trajectory> = None;
            mkdir(&c.out)?;
            for kind in selectors {
                let tables: Vec<(String, ScoreTable)> = match kind {
                    SelectorKind::Tacs => {
                        if val_traj.is_none() {
                            let counters = tacs_core::Counters::new();
                            val_traj = Some(val_warmup(&cfg, seed, &inputs, &counters)?.traj);
                        }
                        let t = val_traj.as_ref().expect("trained above");
                        vec![("tacs".into(), tacs_score(t, pool, &cfg.tacs)?)]
                    }
                    SelectorKind::Less | SelectorKind::Tov => {
                        if pool_traj.is_none() {
                            pool_traj = Some(pool_warmup(&cfg, seed, &inputs)?.0);
                        }
                        let p = pool_traj.as_ref().expect("trained above");
                        let ks = all_update_steps(p);
                        if kind == SelectorKind::Less {
                            vec![("less".into(), less_score(p, val, pool, &ks)?)]
                        } else {
                            let tables = tov_scores(p, val, pool, &cfg.grids.tov_alphas, &ks)?;
                            cfg.grids
                                .tov_alphas
                                .iter()
                                .map(|a| format!("tov_alpha{a}"))
                                .zip(tables)
                                .collect()
                        }
                    }
                    SelectorKind::BaseGrad => vec![(
                        "base_grad".into(),
                        base_grad_score(&ParamVector::zeros(cfg.mixture.d), val, pool)?,
                    )],
                    SelectorKind::Random => vec![(
                        "random".into(),
                        random_score(pool.len(), cfg.stage_seed("random_score", seed))?,
                    )],
                };
                for (name, table) in tables {
                    let path = c.out.join(format!("scores_{name}.csv"));
                    write(&path, &table.to_csv())?;
                    println!("wrote {}", path.display());
                }
            }
        }
        Command::Select {
            scores,
            budget,
            out,
        } => {
            let table = ScoreTable::from_csv(&read(&scores)?)?;
            let sel = select_top_n(&table, budget)?;
            mkdir(&out)?;
            let path = out.join(format!("selection_{}_{budget}.csv", table.selector));
            write(&path, &sel.to_csv())?;
            println!("wrote {}", path.display());
        }
        Command::Retrain {
            common: c,
            selection,
            rate,
            steps,
        } => {
            let cfg = load_config(c.config.as_deref())?;
            let seed = seed_of(&cfg, c.seed);
            let inputs = prepare_seed(&cfg, seed)?;
            let sel = SelectionResult::from_csv(&read(&selection)?)?;
            let schedule = LrSchedule::linear(rate, steps)?;
            let theta0 = ParamVector::zeros(cfg.mixture.d);
            let err = retrain_and_eval(
                &sel,
                &inputs.data.pool,
                &inputs.data.test,
                &theta0,
                &schedule,
            )?;
            mkdir(&c.out)?;
            let json = serde_json::json!({
                "selector": sel.selector,
                "budget": sel.budget,
                "seed": seed,
                "schedule": schedule.to_string(),
                "test_error": err,
            });
            write(
                &c.out.join("retrain.json"),
                &serde_json::to_string_pretty(&json)?,
            )?;
            println!("test error {err}");
        }
        Command::Diagnose {
            common: c,
            instances,
        } => {
            let cfg = load_config(c.config.as_deref())?;
            let seed = seed_of(&cfg, c.seed);
            let mut reports = Vec::new();
            let mut holds = 0;
            for i in 0..instances {
                let s = cfg.stage_seed(&format!("bound/{i}"), seed);
                let (p, q) = bounded_instance(5, 64, 1.0, s)?;
                let r = verify_bound(&p, &q, &ParamVector::zeros(5), 0.1)?;
                holds += usize::from(r.holds);
                reports.push(r);
            }
            let (p, _) = bounded_instance(5, 64, 0.0, cfg.stage_seed("influence", seed))?;
            let obj = RegularizedObjective::new(&p)?.with_l2(0.1)?;
            let influence: Vec<(usize, f64)> = [100, 200, 400, 800]
                .into_iter()
                .map(|t| Ok((t, influence_limit_check(&obj, 0, t, 0.1)?)))
                .collect::<tacs_core::Result<_>>()?;
            let inputs = prepare_seed(&cfg, seed)?;
            let counters = tacs_core::Counters::new();
            let warm = val_warmup(&cfg, seed, &inputs, &counters)?;
            let val_err = test_error(warm.traj.last(), &inputs.data.test);
            mkdir(&c.out)?;
            let json = serde_json::json!({
                "bound_instances": reports,
                "bound_holds": holds,
                "influence_residuals": influence,
                "val_warmup_schedule": warm.traj.schedule(),
                "val_warmup_test_error": val_err,
            });
            write(
                &c.out.join("diagnose.json"),
                &serde_json::to_string_pretty(&json)?,
            )?;
            println!("bound holds on {holds}/{instances} instances");
        }
        Command::Repro {
            preset,
            config,
            out,
            selector,
            seed,
        } => {
            let mut cfg = match (config, preset) {
                (Some(p), _) => ExperimentConfig::load(&p)?,
                (None, Preset::Balanced) => ExperimentConfig::balanced(),
                (None, Preset::Rare) => ExperimentConfig::rare_target(),
            };
            if !selector.is_empty() {
                cfg.selectors = selector;
            }
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let started = Instant::now();
            let report = run_pipeline(&cfg)?;
            let paths = emit_reports(&report, &out)?;
            println!(
                "{} cells in {:.1}s; {} files in {}",
                report.cells.len(),
                started.elapsed().as_secs_f64(),
                paths.len(),
                out.display()
            );
        }
        Command::Report { report, out } => {
            let r = load_report(&report)?;
            let paths = emit_reports(&r, &out)?;
            println!("{} files in {}", paths.len(), out.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_io() => 4,
        Some(e) if e.is_numeric() => 3,
        Some(_) => 2,
        None if err.downcast_ref::<std::io::Error>().is_some() => 4,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli).context("tacs") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
