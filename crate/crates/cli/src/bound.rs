use std::path::PathBuf;

use expconc::bounds::{bound_report, BoundQuery, BoundReport};
use expconc::problem::{curvature_sigma, Constants};
use serde::{Deserialize, Serialize};

use crate::io::{emit, read_json, set, to_pretty, CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Smoothness constant.
    #[arg(long = "L")]
    l: Option<f64>,
    /// Gradient norm bound.
    #[arg(long = "G")]
    g: Option<f64>,
    /// Domain radius.
    #[arg(long = "R")]
    r: Option<f64>,
    #[arg(long = "d")]
    d: Option<usize>,
    /// Curvature constant; derived as ½·min(1/(8GR), β) from --beta when absent.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, conflicts_with = "n_list")]
    n: Option<usize>,
    /// Comma-separated n values; emits CSV.
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    /// Net resolution; defaults to 1/n.
    #[arg(long)]
    eps: Option<f64>,
    /// Defaults to log(2/δ)/n.
    #[arg(long)]
    alpha: Option<f64>,
    /// Range of the penalty over the domain; adds the penalized bound.
    #[arg(long = "B")]
    b: Option<f64>,
    /// Evaluate at δ/2 so the combined statement holds with probability 1−δ.
    #[arg(long)]
    honest: bool,
    /// CSV destination in list mode; the resolved config then goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    #[serde(rename = "L")]
    l: Option<f64>,
    #[serde(rename = "G")]
    g: Option<f64>,
    #[serde(rename = "R")]
    r: Option<f64>,
    d: Option<usize>,
    sigma: Option<f64>,
    beta: Option<f64>,
    delta: Option<f64>,
    n: Option<usize>,
    n_list: Option<Vec<usize>>,
    eps: Option<f64>,
    alpha: Option<f64>,
    #[serde(rename = "B")]
    b: Option<f64>,
    honest: bool,
}

fn required<T: Copy>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Usage(format!("missing required value {flag}")))
}

impl Config {
    fn constants(&self) -> CliResult<Constants<f64>> {
        let (l, g, r, d) = (
            required(self.l, "--L")?,
            required(self.g, "--G")?,
            required(self.r, "--R")?,
            required(self.d, "--d")?,
        );
        let (sigma, beta) = match (self.sigma, self.beta) {
            (Some(s), b) => (s, b.unwrap_or(f64::NAN)),
            (None, Some(b)) => (curvature_sigma(g, r, b), b),
            (None, None) => return Err(CliError::Usage("one of --sigma or --beta is required".into())),
        };
        Ok(Constants {
            g,
            l,
            beta,
            sigma,
            radius: r,
            d,
        })
    }

    fn report(&self, c: &Constants<f64>, n: usize) -> CliResult<BoundReport<f64>> {
        let q = BoundQuery {
            eps: self.eps,
            alpha: self.alpha,
            b: self.b,
            honest: self.honest,
            ..BoundQuery::new(*c, n, required(self.delta, "--delta")?)
        };
        Ok(bound_report(&q)?)
    }
}

#[derive(Serialize)]
struct Row {
    n: usize,
    d: usize,
    delta: f64,
    lemma4: f64,
    lemma5_at_eps: f64,
    thm1: f64,
    thm2: Option<f64>,
}

pub fn run(a: Args) -> CliResult<()> {
    let mut cfg: Config = match &a.config {
        Some(p) => read_json(p)?,
        None => Config::default(),
    };
    cfg.l = a.l.or(cfg.l);
    cfg.g = a.g.or(cfg.g);
    cfg.r = a.r.or(cfg.r);
    cfg.d = a.d.or(cfg.d);
    if a.sigma.is_some() || a.beta.is_some() {
        cfg.sigma = a.sigma;
        cfg.beta = a.beta;
    }
    cfg.delta = a.delta.or(cfg.delta);
    if a.n.is_some() || a.n_list.is_some() {
        cfg.n = a.n;
        cfg.n_list = a.n_list;
    }
    set(&mut cfg.eps, a.eps.map(Some));
    set(&mut cfg.alpha, a.alpha.map(Some));
    set(&mut cfg.b, a.b.map(Some));
    cfg.honest |= a.honest;

    let consts = cfg.constants()?;
    match (cfg.n, cfg.n_list.clone()) {
        (Some(n), None) => {
            let report = cfg.report(&consts, n)?;
            emit(&serde_json::json!({ "config": cfg, "report": report }))
        }
        (None, Some(list)) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for n in list {
                let r = cfg.report(&consts, n)?;
                w.serialize(Row {
                    n,
                    d: r.d,
                    delta: r.delta,
                    lemma4: r.lemma4,
                    lemma5_at_eps: r.lemma5,
                    thm1: r.thm1,
                    thm2: r.thm2,
                })?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
            match &a.out {
                Some(path) => {
                    std::fs::write(path, bytes)?;
                    emit(&serde_json::json!({ "config": cfg, "csv": path }))
                }
                None => {
                    eprint!("{}", to_pretty(&serde_json::json!({ "config": cfg }))?);
                    print!("{}", String::from_utf8_lossy(&bytes));
                    Ok(())
                }
            }
        }
        _ => Err(CliError::Usage("exactly one of --n or --n-list is required".into())),
    }
}
