use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use expconc::experiments::{
    fit_rate, run_trials_with, summarize, ExperimentConfig, ExperimentDoc, ExperimentRun, RateStatistic, Summary,
};
use expconc::problem::Regularizer;
use expconc::rng::derive_seed;
use serde::Serialize;
use serde_json::json;

use crate::io::{emit, env_seed, read_json, set, to_pretty, CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Experiment document; the desk instance (d = 5, L1(0.05)) when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated, strictly increasing sample sizes.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    dist_seed: Option<u64>,
    #[arg(long)]
    trial_seed: Option<u64>,
    /// Worker threads; 1 runs serially.
    #[arg(long)]
    threads: Option<usize>,
    /// Receives trials.csv, summary.json, config.json and metadata.json.
    #[arg(long, default_value = "expconc-out")]
    out_dir: PathBuf,
    /// Exit with code 3 unless the run meets the rate, dominance and sign checks.
    #[arg(long)]
    check: bool,
    /// Record per-trial wall-clock time (makes trials.csv nondeterministic).
    #[arg(long)]
    timing: bool,
}

const RATE_BAND: (f64, f64) = (-1.25, -0.75);
const MIN_R2: f64 = 0.95;
const SIGN_TOL: f64 = -1e-7;

#[derive(Debug, Serialize)]
struct CheckItem {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn resolve(a: &Args) -> CliResult<ExperimentDoc> {
    let mut doc = match &a.config {
        Some(p) => read_json::<ExperimentDoc>(p)?,
        None => {
            let mut doc = ExperimentConfig::<f64>::desk(5, Regularizer::L1(0.05))?.to_doc()?;
            if let Some(s) = env_seed()? {
                doc.dist_seed = s;
                doc.trial_seed = derive_seed(s, &[1]);
            }
            doc
        }
    };
    set(&mut doc.trials, a.trials);
    set(&mut doc.n_grid, a.n_grid.clone());
    set(&mut doc.delta, a.delta);
    set(&mut doc.dist_seed, a.dist_seed);
    set(&mut doc.trial_seed, a.trial_seed);
    doc.record_timing |= a.timing;
    Ok(doc)
}

fn checks(run: &ExperimentRun<f64>, summary: &Summary) -> Vec<CheckItem> {
    let mut items = Vec::new();
    let min_excess = run
        .records
        .iter()
        .filter(|r| r.valid)
        .map(|r| r.excess_risk)
        .fold(f64::INFINITY, f64::min);
    items.push(CheckItem {
        name: "excess_nonnegative",
        pass: min_excess >= SIGN_TOL,
        detail: format!("min excess {min_excess:e}"),
    });
    items.push(CheckItem {
        name: "bound_dominance",
        pass: summary.violations == 0,
        detail: format!("{} violations", summary.violations),
    });
    items.push(CheckItem {
        name: "curvature_spot_check",
        pass: run.lemma1.pass,
        detail: format!("min residual {:e}", run.lemma1.min_residual),
    });
    let rate = match fit_rate(&run.records, RateStatistic::MedianExcess) {
        Ok(f) => CheckItem {
            name: "median_rate",
            pass: (RATE_BAND.0..=RATE_BAND.1).contains(&f.slope) && f.r2 >= MIN_R2,
            detail: format!("slope {:.4}, r2 {:.4}", f.slope, f.r2),
        },
        Err(e) => CheckItem {
            name: "median_rate",
            pass: false,
            detail: e.to_string(),
        },
    };
    items.push(rate);
    items
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

pub fn run(a: Args) -> CliResult<()> {
    let doc = resolve(&a)?;
    let cfg = ExperimentConfig::<f64>::from_doc(&doc)?;
    fs::create_dir_all(&a.out_dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", a.out_dir.display())))?;
    write(&a.out_dir.join("config.json"), &to_pretty(&doc)?)?;

    let trials_path = a.out_dir.join("trials.csv");
    let file = fs::File::create(&trials_path)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", trials_path.display())))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let threads = a.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let start = Instant::now();
    let run = pool.install(|| {
        run_trials_with(&cfg, |r| {
            w.serialize(r)?;
            Ok(())
        })
    })?;
    w.flush()?;
    let elapsed = start.elapsed();

    let summary = summarize(
        &run.records,
        cfg.delta,
        &cfg.spec.constants,
        cfg.penalty_range(),
    );
    let report = json!({
        "config": doc,
        "optimum": { "wstar": run.optimum.wstar, "pstar": run.optimum.pstar },
        "invalid": run.invalid,
        "curvature_spot_check": run.lemma1,
        "summary": summary,
    });
    write(&a.out_dir.join("summary.json"), &to_pretty(&report)?)?;
    let metadata = json!({
        "elapsed_ms": elapsed.as_secs_f64() * 1e3,
        "threads": pool.current_num_threads(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    write(&a.out_dir.join("metadata.json"), &to_pretty(&metadata)?)?;

    let check = a.check.then(|| checks(&run, &summary));
    emit(&json!({
        "config": doc,
        "out_dir": a.out_dir,
        "summary": summary,
        "check": check,
        "metadata": metadata,
    }))?;
    std::io::stdout().flush()?;
    if let Some(items) = check {
        let failed: Vec<&str> = items.iter().filter(|c| !c.pass).map(|c| c.name).collect();
        if !failed.is_empty() {
            return Err(CliError::Check(
                format!("failed checks: {}", failed.join(", ")),
                json!({ "checks": items }),
            ));
        }
    }
    Ok(())
}
