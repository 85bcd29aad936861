use std::path::PathBuf;

use expconc::experiments::{fit_points, fit_rate, read_trials_csv, RateStatistic};
use serde::{Deserialize, Serialize};

use crate::io::{emit, read_json, set, CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Two-column `n,value` CSV, or a trials file from `experiment`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Statistic for trials files: median | quantile.
    #[arg(long)]
    statistic: Option<String>,
    /// Quantile level for `--statistic quantile`.
    #[arg(long)]
    level: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Config {
    input: Option<PathBuf>,
    statistic: String,
    level: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            input: None,
            statistic: "median".into(),
            level: 0.9,
        }
    }
}

fn read_points(path: &PathBuf) -> CliResult<Vec<(usize, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut pts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(CliError::Usage(format!("row {}: expected 2 columns, got {}", i + 1, rec.len())));
        }
        match (rec[0].parse::<usize>(), rec[1].parse::<f64>()) {
            (Ok(n), Ok(v)) => pts.push((n, v)),
            _ if i == 0 => continue,
            _ => return Err(CliError::Usage(format!("row {}: cannot parse '{},{}'", i + 1, &rec[0], &rec[1]))),
        }
    }
    Ok(pts)
}

pub fn run(a: Args) -> CliResult<()> {
    let mut cfg: Config = match &a.config {
        Some(p) => read_json(p)?,
        None => Config::default(),
    };
    set(&mut cfg.input, a.input.map(Some));
    set(&mut cfg.statistic, a.statistic);
    set(&mut cfg.level, a.level);
    let input = cfg.input.clone().ok_or_else(|| CliError::Usage("--input is required".into()))?;
    let text = std::fs::read_to_string(&input)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", input.display())))?;
    let header = text.lines().next().unwrap_or("");
    let trials = header.split(',').any(|c| c.trim() == "excess_risk");
    let statistic = match cfg.statistic.as_str() {
        "median" => RateStatistic::MedianExcess,
        "quantile" if cfg.level > 0.0 && cfg.level <= 1.0 => RateStatistic::QuantileExcess(cfg.level),
        "quantile" => return Err(CliError::Usage(format!("--level must lie in (0,1], got {}", cfg.level))),
        other => return Err(CliError::Usage(format!("unknown statistic '{other}'"))),
    };
    if trials {
        let records = read_trials_csv(text.as_bytes())?;
        let fit = fit_rate(&records, statistic)?;
        emit(&serde_json::json!({ "config": cfg, "fit": fit }))
    } else {
        let fit = fit_points(&read_points(&input)?, statistic)?;
        emit(&serde_json::json!({
            "config": cfg,
            "fit": { "slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2, "points": fit.points },
        }))
    }
}
