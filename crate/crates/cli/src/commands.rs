use std::path::{Path, PathBuf};

use rb_e2e::experiments::{
    cohort_dispersion, dispersion_stats, risk_parity_benchmark, run_cohort, write_search_csv, CohortRun, PathSource,
};
use rb_e2e::market_data::{
    compute_log_returns, read_price_csv, sample_covariance_before, trailing_features_before, write_price_csv,
};
use rb_e2e::synthetic::{factor_prices, SyntheticSpec};
use rb_e2e::trainer::{e2e_forward, evaluate, train, training_layout};
use rb_e2e::{Arm, DateRange, DispersionReport, Error, LossKind, ReturnsPanel, SearchSpace, Stage, TrainConfig};
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{render, RunDir, SolverStats};
use crate::config::{period_split, resolve_seed, train_config, Effective, FileConfig, TrainFlags};
use crate::{
    Args, BenchmarkArgs, CliError, DispersionArgs, Range, ReportArgs, ReproduceArgs, SynthArgs, TrainArgs, TuneArgs,
};

/// Data, config and resolved settings shared by the training commands.
struct Inputs {
    file: FileConfig,
    config_bytes: Option<Vec<u8>>,
    data_path: PathBuf,
    data_bytes: Vec<u8>,
    returns: ReturnsPanel,
}

impl Inputs {
    fn load(config: Option<&Path>, data: &Path) -> Result<Self, CliError> {
        let (file, config_bytes) = FileConfig::load(config)?;
        let data_bytes = std::fs::read(data).map_err(|source| {
            Error::Io {
                path: data.to_path_buf(),
                source,
            }
            .at(Stage::Data, "price file")
        })?;
        let tickers = file.tickers.clone().unwrap_or_default();
        let prices =
            read_price_csv(&data_bytes[..], &tickers).map_err(|e| e.at(Stage::Data, data.display().to_string()))?;
        let returns = compute_log_returns(&prices).map_err(|e| e.at(Stage::Data, "log returns"))?;
        Ok(Self {
            file,
            config_bytes,
            data_path: data.to_path_buf(),
            data_bytes,
            returns,
        })
    }

    fn effective(&self, train: TrainConfig) -> Result<Effective, CliError> {
        train.validate(self.returns.n_assets())?;
        Ok(Effective {
            tickers: self.returns.tickers.clone(),
            split: period_split(&self.file, &self.returns)?,
            train,
        })
    }

    fn run_dir(&self, out: &Path, command: &'static str, timing: bool) -> Result<RunDir, CliError> {
        let mut dir = RunDir::create(out, command, timing)?;
        dir.set_inputs(self.config_bytes.clone(), Some((&self.data_path, &self.data_bytes)));
        Ok(dir)
    }
}

fn jobs(flag: Option<usize>, file: Option<usize>) -> Result<Option<usize>, CliError> {
    match flag.or(file) {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        j => Ok(j),
    }
}

pub fn synth(args: &Args, a: &SynthArgs) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        n_assets: a.assets,
        days: a.days,
        factors: a.factors,
        seed: resolve_seed(a.seed, None, SyntheticSpec::default().seed)?,
        ..SyntheticSpec::default()
    };
    if spec.n_assets == 0 || spec.days < 2 {
        return Err(CliError::Usage("synth needs --assets >= 1 and --days >= 2".into()));
    }
    let panel = factor_prices(&spec);
    let mut bytes = Vec::new();
    write_price_csv(&panel, &mut bytes)?;
    let mut dir = RunDir::create(&a.out, "synth", args.record_timing)?;
    dir.write("prices.csv", &bytes)?;
    dir.finish(&json!({
        "assets": spec.n_assets,
        "days": spec.days,
        "factors": spec.factors,
        "seed": spec.seed,
        "start": spec.start,
    }))?;
    println!(
        "wrote {} days x {} assets to {}",
        spec.days,
        spec.n_assets,
        a.out.join("prices.csv").display()
    );
    Ok(())
}

pub fn train_cmd(args: &Args, a: &TrainArgs) -> Result<(), CliError> {
    let inp = Inputs::load(a.config.as_deref(), &a.data)?;
    let seed = resolve_seed(a.seed, inp.file.seed, 0)?;
    let base = train_config(&inp.file, &a.train, seed);
    let cfg = a.arm.map_or(base.clone(), |arm| arm.apply(&base));
    let eff = inp.effective(cfg.clone())?;
    let r = &inp.returns;

    let res = train(r, &eff.split.train, &cfg)?;
    let mut dir = inp.run_dir(&a.out, "train", args.record_timing)?;
    let mut stats = SolverStats::default();
    res.diagnostics.iter().for_each(|d| stats.record(d.solver_iterations));
    dir.solver = Some(stats);
    dir.write_json("train_result.json", &res.to_record(&cfg))?;
    dir.write("train/cumret.csv", &render(|b| res.cumret_path.write_csv(b)))?;
    let eval = evaluate(&res.params, r, &cfg, &eff.split.evaluation)?;
    dir.write("evaluation/cumret.csv", &render(|b| eval.write_csv(b)))?;

    if a.solver_trace {
        // Re-run the final forward pass with residual tracing.
        let snap = training_layout(r, &eff.split.train, &cfg)?.start;
        let x = trailing_features_before(r, snap, cfg.feature_lookback)?;
        let sigma = sample_covariance_before(r, snap, cfg.cov_window)?;
        let opts = rb_e2e::SolverOptions {
            trace: true,
            ..cfg.solver()
        };
        let (_, tape) = e2e_forward(&res.params, &x, &sigma, cfg.floor(r.n_assets()), &opts)?;
        dir.write("solver_residuals.csv", &render(|b| tape.solution.write_residual_csv(b)))?;
    }
    dir.finish(&eff)?;

    let last = res.diagnostics.last().map(|d| d.loss).unwrap_or(f64::NAN);
    println!(
        "seed {seed}: loss {:.6} -> {last:.6} over {} steps; training wealth {:.4}, evaluation wealth {:.4}",
        res.loss_trace[0],
        cfg.steps,
        res.cumret_path.last(),
        eval.last()
    );
    Ok(())
}

#[derive(Serialize)]
struct SourceSummary {
    range: DateRange,
    max_v: f64,
    avg_v: f64,
    last_day_v: f64,
    formatted: [String; 3],
    cohort_size: usize,
    failures: Vec<rb_e2e::experiments::SeedFailure>,
}

impl SourceSummary {
    fn new(range: DateRange, rep: DispersionReport) -> Self {
        let row = dispersion_stats(&rep);
        Self {
            range,
            max_v: rep.summary.max_v,
            avg_v: rep.summary.avg_v,
            last_day_v: rep.summary.last_day_v,
            formatted: [row.max_v, row.avg_v, row.last_day_v],
            cohort_size: rep.cohort_size,
            failures: rep.failures,
        }
    }
}

#[derive(Serialize)]
struct ArmSummary {
    arm: Arm,
    lower_bound_u: f64,
    train: SourceSummary,
    evaluation: SourceSummary,
}

#[derive(Serialize)]
pub struct DispersionFile {
    loss: rb_e2e::LossKind,
    seeds: Vec<u64>,
    arms: Vec<ArmSummary>,
}

pub fn dispersion(args: &Args, a: &DispersionArgs) -> Result<(), CliError> {
    let inp = Inputs::load(a.config.as_deref(), &a.data)?;
    let n_seeds = a.seeds.or(inp.file.seeds).unwrap_or(15);
    if n_seeds < 2 {
        return Err(CliError::Usage(format!("dispersion needs --seeds >= 2, got {n_seeds}")));
    }
    let start = resolve_seed(a.seed_start, inp.file.seed_start, 0)?;
    let seeds: Vec<u64> = (start..start + n_seeds as u64).collect();
    let arms = if !a.arm.is_empty() {
        a.arm.clone()
    } else {
        inp.file.arms.clone().unwrap_or(vec![Arm::Bounded, Arm::Unbounded])
    };
    let jobs = jobs(a.jobs, inp.file.jobs)?;
    let base = train_config(&inp.file, &a.train, start);
    let eff = inp.effective(base.clone())?;
    let r = &inp.returns;
    let n = r.n_assets();

    let mut dir = inp.run_dir(&a.out, "dispersion", args.record_timing)?;
    let mut stats = SolverStats::default();
    let mut summaries = Vec::new();
    for &arm in &arms {
        let cfg = arm.apply(&base);
        let runs: Vec<CohortRun> = run_cohort(&cfg, &seeds, r, &eff.split.train, jobs)?;
        for run in &runs {
            match &run.result {
                Ok(res) => res.diagnostics.iter().for_each(|d| stats.record(d.solver_iterations)),
                Err(e) => eprintln!("warning: {} arm, seed {}: run failed: {e}", arm.name(), run.seed),
            }
        }
        let train = cohort_dispersion(&runs, &cfg, r, PathSource::Training, jobs)?;
        let eval = cohort_dispersion(&runs, &cfg, r, PathSource::Evaluation(eff.split.evaluation), jobs)?;
        for f in eval
            .failures
            .iter()
            .filter(|f| runs.iter().any(|x| x.seed == f.seed && x.result.is_ok()))
        {
            eprintln!(
                "warning: {} arm, seed {}: evaluation failed: {}",
                arm.name(),
                f.seed,
                f.error
            );
        }
        dir.write(
            &format!("{}/train/dispersion.csv", arm.name()),
            &render(|b| train.write_csv(b)),
        )?;
        dir.write(
            &format!("{}/evaluation/dispersion.csv", arm.name()),
            &render(|b| eval.write_csv(b)),
        )?;
        let s = ArmSummary {
            arm,
            lower_bound_u: cfg.floor(n),
            train: SourceSummary::new(eff.split.train, train),
            evaluation: SourceSummary::new(eff.split.evaluation, eval),
        };
        println!(
            "{:<9} train: max {} avg {} last {} | evaluation: max {} avg {} last {}",
            arm.name(),
            s.train.formatted[0],
            s.train.formatted[1],
            s.train.formatted[2],
            s.evaluation.formatted[0],
            s.evaluation.formatted[1],
            s.evaluation.formatted[2]
        );
        summaries.push(s);
    }
    dir.solver = Some(stats);
    dir.write_json(
        "summary.json",
        &DispersionFile {
            loss: base.loss_kind,
            seeds: seeds.clone(),
            arms: summaries,
        },
    )?;
    dir.finish(&json!({ "run": eff, "seeds": seeds, "arms": arms }))
}

/// Returns the best configuration found.
pub fn tune(args: &Args, a: &TuneArgs) -> Result<TrainConfig, CliError> {
    let inp = Inputs::load(a.config.as_deref(), &a.data)?;
    let iterations = a.iterations.or(inp.file.iterations).unwrap_or(100);
    let rng_seed = resolve_seed(a.rng_seed, inp.file.rng_seed, 0)?;
    let seed = resolve_seed(a.seed, inp.file.seed, 0)?;
    let jobs = jobs(a.jobs, inp.file.jobs)?;
    let base = train_config(&inp.file, &a.train, seed);
    let eff = inp.effective(base.clone())?;
    let space = SearchSpace::default();

    let records = rb_e2e::experiments::random_search(
        &space,
        iterations,
        rng_seed,
        &inp.returns,
        &eff.split,
        base.loss_kind,
        &base,
        jobs,
    )?;
    if records.len() < iterations {
        eprintln!(
            "warning: {} of {iterations} search iterations failed",
            iterations - records.len()
        );
    }
    let mut dir = inp.run_dir(&a.out, "tune", args.record_timing)?;
    dir.write("search_results.csv", &render(|b| write_search_csv(&records, b)))?;
    let best = &records[0];
    dir.write_json(
        "best_config.json",
        &json!({ "config": best.config, "validation_metric": best.validation_metric }),
    )?;
    dir.finish(&json!({ "run": eff, "iterations": iterations, "rng_seed": rng_seed, "space": space }))?;
    println!(
        "best of {}: neurons {} lr {} steps {} ({} {:.6})",
        records.len(),
        best.config.hidden_neurons,
        best.config.learning_rate,
        best.config.steps,
        base.loss_kind,
        best.validation_metric
    );
    Ok(best.config.clone())
}

pub fn benchmark(args: &Args, a: &BenchmarkArgs) -> Result<(), CliError> {
    let inp = Inputs::load(a.config.as_deref(), &a.data)?;
    let flags = TrainFlags {
        rebalance: a.rebalance,
        cov_window: a.cov_window,
        ..TrainFlags::default()
    };
    let cfg = train_config(&inp.file, &flags, 0);
    let eff = inp.effective(cfg.clone())?;
    let range = match a.range {
        Range::Train => eff.split.train,
        Range::Validation => eff.split.validation,
        Range::Evaluation => eff.split.evaluation,
    };
    let path = risk_parity_benchmark(&inp.returns, &range, cfg.rebalance_days, cfg.cov_window, &cfg.solver())?;
    let mut dir = inp.run_dir(&a.out, "benchmark", args.record_timing)?;
    dir.write("benchmark.csv", &render(|b| path.write_csv(b)))?;
    dir.finish(&json!({
        "tickers": eff.tickers,
        "range": range,
        "rebalance_days": cfg.rebalance_days,
        "cov_window": cfg.cov_window,
        "solver_tol": cfg.solver_tol,
        "solver_max_iter": cfg.solver_max_iter,
    }))?;
    println!("risk-parity benchmark over {range}: final wealth {:.4}", path.last());
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    let md = crate::report::render_dir(&a.input)?;
    let out = a.out.clone().unwrap_or_else(|| a.input.join("report.md"));
    std::fs::write(&out, md).map_err(|e| CliError::io(&out, e))?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Search, then cohort dispersion at the best configuration, for both losses.
pub fn reproduce(args: &Args, a: &ReproduceArgs) -> Result<(), CliError> {
    for loss in [LossKind::Sharpe, LossKind::CumulativeReturn] {
        let root = a.out.join(loss.to_string());
        let base = TrainFlags {
            loss: Some(loss),
            ..TrainFlags::default()
        };
        let best = tune(
            args,
            &TuneArgs {
                config: a.config.clone(),
                data: a.data.clone(),
                iterations: a.iterations,
                rng_seed: a.rng_seed,
                seed: None,
                jobs: a.jobs,
                train: base.clone(),
                out: root.join("tune"),
            },
        )?;
        dispersion(
            args,
            &DispersionArgs {
                config: a.config.clone(),
                data: a.data.clone(),
                seeds: a.seeds,
                seed_start: None,
                arm: vec![Arm::Bounded, Arm::Unbounded],
                jobs: a.jobs,
                train: TrainFlags {
                    learning_rate: Some(best.learning_rate),
                    steps: Some(best.steps),
                    neurons: Some(best.hidden_neurons),
                    ..base
                },
                out: root.join("dispersion"),
            },
        )?;
    }
    report(&ReportArgs {
        input: a.out.clone(),
        out: None,
    })
}
