use std::path::PathBuf;

use expconc::problem::{ProblemDoc, ProblemSpec, Sample};
use expconc::solver::{solve_erm, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::io::{emit, read_json, set, CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Resolved config of a previous run (spec, data, solver).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem specification document.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// CSV with d feature columns followed by the label; no header.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Keep the objective value of every iteration.
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    spec: Option<ProblemDoc>,
    data: Option<PathBuf>,
    #[serde(default)]
    solver: SolverConfig<f64>,
}

/// Rows of `x₁,…,x_d,y`; a header row is skipped when its cells are not numbers.
pub fn read_dataset(path: &PathBuf, d: usize) -> CliResult<Vec<Sample<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let vals = match vals {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(CliError::Usage(format!("row {}: {e}", i + 1))),
        };
        if vals.len() != d + 1 {
            return Err(CliError::Usage(format!("row {}: expected {} columns, got {}", i + 1, d + 1, vals.len())));
        }
        let y = vals[d];
        out.push(Sample::new(vals[..d].to_vec(), y));
    }
    Ok(out)
}

pub fn run(a: Args) -> CliResult<()> {
    let mut cfg: Config = match &a.config {
        Some(p) => read_json(p)?,
        None => Config {
            spec: None,
            data: None,
            solver: SolverConfig::default(),
        },
    };
    if let Some(p) = &a.spec {
        cfg.spec = Some(read_json(p)?);
    }
    set(&mut cfg.data, a.data.map(Some));
    set(&mut cfg.solver.tol, a.tol);
    set(&mut cfg.solver.max_iters, a.max_iters);
    cfg.solver.record_trace |= a.trace;

    let doc = cfg.spec.as_ref().ok_or_else(|| CliError::Usage("--spec is required".into()))?;
    let path = cfg.data.as_ref().ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let spec = ProblemSpec::<f64>::from_doc(doc)?;
    cfg.solver.validate()?;
    let data = read_dataset(path, spec.domain.dim())?;
    let result = solve_erm(&spec, &data, &cfg.solver)?;
    emit(&serde_json::json!({
        "config": cfg,
        "n": data.len(),
        "constants": spec.constants,
        "result": result,
    }))
}
