use std::path::PathBuf;

use expconc::calculus::{expconcavity_check, max_beta_estimate, SamplingPlan};
use expconc::problem::{Domain, Loss};
use serde::{Deserialize, Serialize};

use crate::io::{emit, read_json, resolve_seed, set, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSON file with any subset of the resolved config fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// square | logistic | squared_hinge
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    /// Bound on |y|; features satisfy ‖x‖₂ ≤ 1.
    #[arg(long)]
    ymax: Option<f64>,
    /// β to check; estimated by bisection when absent.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    w_points: Option<usize>,
    #[arg(long)]
    z_points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    loss: String,
    radius: f64,
    dim: usize,
    ymax: f64,
    beta: Option<f64>,
    w_points: usize,
    z_points: usize,
    seed: Option<u64>,
}

impl Default for Config {
    fn default() -> Self {
        let plan = SamplingPlan::<f64>::default();
        Self {
            loss: "square".into(),
            radius: 1.0,
            dim: 2,
            ymax: 1.0,
            beta: None,
            w_points: plan.w_points,
            z_points: plan.z_points,
            seed: None,
        }
    }
}

pub fn run(a: Args) -> CliResult<()> {
    let mut cfg: Config = match &a.config {
        Some(p) => read_json(p)?,
        None => Config::default(),
    };
    let file_seed = cfg.seed;
    set(&mut cfg.loss, a.loss);
    set(&mut cfg.radius, a.radius);
    set(&mut cfg.dim, a.dim);
    set(&mut cfg.ymax, a.ymax);
    cfg.beta = a.beta.or(cfg.beta);
    set(&mut cfg.w_points, a.w_points);
    set(&mut cfg.z_points, a.z_points);
    cfg.seed = Some(resolve_seed(a.seed, file_seed, SamplingPlan::<f64>::default().seed)?);

    let loss = Loss::<f64>::from_name(&cfg.loss)?;
    let domain = Domain::new(cfg.radius, cfg.dim)?;
    let mut plan = SamplingPlan::default()
        .with_y_max(cfg.ymax)
        .with_counts(cfg.w_points, cfg.z_points);
    plan.seed = cfg.seed.unwrap_or_default();

    let estimate = match cfg.beta {
        Some(_) => None,
        None => Some(max_beta_estimate(&loss, &domain, &plan)?),
    };
    let beta = cfg.beta.or(estimate).unwrap_or_default();
    let certificate = if beta > 0.0 {
        Some(expconcavity_check(&loss, beta, &domain, &plan)?)
    } else {
        None
    };
    emit(&serde_json::json!({
        "config": cfg,
        "beta_estimate": estimate,
        "certificate": certificate,
    }))
}
