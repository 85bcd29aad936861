//! Finite-support distributions, excess-risk Monte Carlo and rate fitting.
//!
//! A finite support makes `F(w) = Σⱼ pⱼ f(w, zⱼ)` and its minimizer exactly
//! computable, so measured excess risks carry no oracle error.

use std::collections::BTreeMap;
use std::io;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{theorem1_bound, ConfidenceNote, HNorm, SecondMomentMatrix};
use crate::calculus::{check_lemma1, check_optimality_inequality, ResidualReport};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, to_f64};
use crate::problem::{Loss, ProblemDoc, ProblemSpec, RegDoc, Regularizer, Sample};
use crate::rng::{derive_seed, gaussian, stream, uniform_in_ball};
use crate::scalar::Scalar;
use crate::solver::{minimize_composite, solve_erm, solve_penalized_erm, SmoothObjective, SolverConfig, SolverResult};

const TAG_FEATURES: u64 = 1;
const TAG_NOISE: u64 = 2;
const TAG_PROBES: u64 = 3;
const TAG_LEMMA1: u64 = 4;

/// Probability law on finitely many atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution<T> {
    atoms: Vec<Sample<T>>,
    weights: Vec<T>,
}

impl<T: Scalar> FiniteDistribution<T> {
    pub fn new(atoms: Vec<Sample<T>>, weights: Vec<T>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Parameter("distribution needs at least one atom".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::Parameter(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let d = atoms[0].x.len();
        if atoms.iter().any(|a| a.x.len() != d) {
            return Err(Error::Parameter("atoms of differing dimension".into()));
        }
        if weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(Error::Parameter("weights must be nonnegative".into()));
        }
        let total: T = weights.iter().copied().sum();
        let slack = T::lit(1e-15).max(T::epsilon() * T::from_usize_lossy(weights.len()));
        if (total - T::one()).abs() > slack {
            return Err(Error::Parameter(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { atoms, weights })
    }

    pub fn uniform(atoms: Vec<Sample<T>>) -> Result<Self> {
        let w = T::one() / T::from_usize_lossy(atoms.len().max(1));
        let weights = vec![w; atoms.len()];
        Self::new(atoms, weights)
    }

    pub fn atoms(&self) -> &[Sample<T>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].x.len()
    }

    /// Draws `n` i.i.d. samples.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Sample<T>> {
        let w: Vec<f64> = self.weights.iter().map(|w| w.as_f64()).collect();
        let index = WeightedIndex::new(&w).expect("weights validated at construction");
        (0..n).map(|_| self.atoms[index.sample(rng)].clone()).collect()
    }
}

/// Labels `yⱼ = clip(xⱼᵀw̄ + noise·ξⱼ, ±y_max)` for the given features,
/// uniform weights.
pub fn distribution_from_features<T: Scalar>(
    features: Vec<Vec<T>>,
    y_max: T,
    wbar: &[T],
    noise: T,
    seed: u64,
) -> Result<FiniteDistribution<T>> {
    if !(y_max > T::zero()) {
        return Err(Error::Parameter(format!("y_max must be positive, got {y_max}")));
    }
    if norm(wbar) > y_max {
        return Err(Error::Parameter(format!(
            "y_max = {y_max} is infeasible: |xᵀw̄| can reach ‖w̄‖ = {}",
            norm(wbar)
        )));
    }
    if !(noise >= T::zero()) {
        return Err(Error::Parameter(format!("noise must be nonnegative, got {noise}")));
    }
    if let Some(x) = features.iter().find(|x| x.len() != wbar.len() || norm(x) > T::one() + T::lit(1e-12)) {
        return Err(Error::Parameter(format!(
            "feature of dimension {} and norm {} is not in the unit ball of dimension {}",
            x.len(),
            norm(x),
            wbar.len()
        )));
    }
    let mut rng = stream(seed, &[TAG_NOISE]);
    let atoms = features
        .into_iter()
        .map(|x| {
            let xi: T = gaussian(&mut rng);
            let y = (dot(&x, wbar) + noise * xi).max(-y_max).min(y_max);
            Sample::new(x, y)
        })
        .collect();
    FiniteDistribution::uniform(atoms)
}

/// `m` atoms whose features are drawn uniformly from `[−1,1]ᵈ` and then
/// divided by the largest feature norm, so the farthest atom lies on the
/// unit sphere.
pub fn make_distribution<T: Scalar>(
    d: usize,
    m: usize,
    y_max: T,
    wbar: &[T],
    noise: T,
    seed: u64,
) -> Result<FiniteDistribution<T>> {
    if d == 0 || m == 0 {
        return Err(Error::Parameter("d and m must be positive".into()));
    }
    if wbar.len() != d {
        return Err(Error::Parameter(format!("w̄ has dimension {}, expected {d}", wbar.len())));
    }
    let mut rng = stream(seed, &[TAG_FEATURES]);
    let raw: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let scale = raw.iter().map(|x| norm(x)).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let features = raw
        .into_iter()
        .map(|x| x.into_iter().map(|v| T::lit(v / scale)).collect())
        .collect();
    distribution_from_features(features, y_max, wbar, noise, seed)
}

/// Exact population objective `F(w) = Σⱼ pⱼ f(w, zⱼ)`.
pub struct PopulationObjective<'a, T> {
    pub dist: &'a FiniteDistribution<T>,
    pub loss: &'a Loss<T>,
}

impl<T: Scalar> PopulationObjective<'_, T> {
    /// `P(w) = F(w) + reg(w)`.
    pub fn composite(&self, reg: &Regularizer<T>, w: &[T]) -> T {
        self.eval(w) + reg.eval(w)
    }

    /// Per-atom gradients with their weights.
    pub fn weighted_grads(&self, w: &[T]) -> Vec<(T, Vec<T>)> {
        self.dist
            .atoms
            .iter()
            .zip(&self.dist.weights)
            .map(|(z, &p)| (p, self.loss.grad(w, z)))
            .collect()
    }

    /// `H = I + (σ/α)·E[∇f(w,z)∇f(w,z)ᵀ]` with the exact expectation.
    pub fn h_norm(&self, w: &[T], sigma: T, alpha: T) -> Result<HNorm<T>> {
        let grads = self.weighted_grads(w);
        let m = SecondMomentMatrix::from_weighted(grads.iter().map(|(p, g)| (*p, g.as_slice())))?;
        HNorm::new(m, sigma, alpha)
    }
}

impl<T: Scalar> SmoothObjective<T> for PopulationObjective<'_, T> {
    fn eval_grad(&self, w: &[T]) -> (T, Vec<T>) {
        let mut value = T::zero();
        let mut grad = vec![T::zero(); w.len()];
        for (z, &p) in self.dist.atoms.iter().zip(&self.dist.weights) {
            let (v, g) = self.loss.eval_grad(w, z);
            value = value + p * v;
            axpy(p, &g, &mut grad);
        }
        (value, grad)
    }
}

pub fn population_objective<'a, T: Scalar>(
    dist: &'a FiniteDistribution<T>,
    spec: &'a ProblemSpec<T>,
) -> PopulationObjective<'a, T> {
    PopulationObjective { dist, loss: &spec.loss }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationOptimum<T> {
    pub wstar: Vec<T>,
    pub pstar: T,
    pub grad_at_wstar: Vec<T>,
    pub solver: SolverResult<T>,
    pub optimality: ResidualReport<T>,
}

/// Minimizes `P = F + R` exactly (gradient-mapping tolerance at most
/// `1e−10`) and validates the result against 100 optimality probes.
pub fn population_minimizer<T: Scalar>(
    dist: &FiniteDistribution<T>,
    spec: &ProblemSpec<T>,
    cfg: &SolverConfig<T>,
) -> Result<PopulationOptimum<T>> {
    if dist.dim() != spec.domain.dim() {
        return Err(Error::Usage(format!(
            "distribution dimension {} differs from problem dimension {}",
            dist.dim(),
            spec.domain.dim()
        )));
    }
    let mut cfg = cfg.clone();
    cfg.tol = cfg.tol.min(T::lit(1e-10));
    let obj = population_objective(dist, spec);
    let w0 = vec![T::zero(); spec.domain.dim()];
    let solver = minimize_composite(&obj, spec.constants.l, &spec.reg, &spec.domain, &cfg, &w0)?;
    if !solver.converged {
        return Err(Error::Numeric {
            message: format!(
                "population solve did not converge in {} iterations (residual {})",
                solver.iters, solver.residual
            ),
            iterate: to_f64(&solver.w_hat),
        });
    }
    let wstar = solver.w_hat.clone();
    let (_, grad_at_wstar) = obj.eval_grad(&wstar);
    let mut rng = stream(0, &[TAG_PROBES]);
    let probes: Vec<Vec<T>> = (0..100)
        .map(|_| uniform_in_ball(&mut rng, spec.domain.dim(), spec.domain.radius()))
        .collect();
    let optimality = check_optimality_inequality(&grad_at_wstar, &spec.reg, &wstar, &probes);
    if !optimality.pass {
        return Err(Error::Numeric {
            message: format!("population optimum fails optimality probes (min residual {})", optimality.min_residual),
            iterate: to_f64(&wstar),
        });
    }
    Ok(PopulationOptimum {
        pstar: obj.composite(&spec.reg, &wstar),
        wstar,
        grad_at_wstar,
        solver,
        optimality,
    })
}

#[derive(Debug, Clone)]
pub enum Mode<T> {
    Erm,
    /// Minimize `Fₙ + g/n`; requires the problem regularizer to be `Zero`.
    PenalizedErm(Regularizer<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionParams<T> {
    pub m: usize,
    pub y_max: T,
    pub wbar: Vec<T>,
    pub noise: T,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig<T> {
    pub spec: ProblemSpec<T>,
    pub dist: DistributionParams<T>,
    pub dist_seed: u64,
    pub trial_seed: u64,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub delta: T,
    pub mode: Mode<T>,
    pub solver: SolverConfig<T>,
    /// When false, `wall_ms` is written as 0 so trial files are reproducible.
    pub record_timing: bool,
    pub max_invalid_fraction: T,
}

pub const DEFAULT_N_GRID: [usize; 7] = [128, 256, 512, 1024, 2048, 4096, 8192];

/// Decaying alternating direction scaled to norm `r`.
pub fn desk_wbar<T: Scalar>(d: usize, r: T) -> Vec<T> {
    let raw: Vec<f64> = (0..d)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            s / (1.0 + i as f64).sqrt()
        })
        .collect();
    let n = norm(&raw);
    raw.iter().map(|v| T::lit(v / n) * r).collect()
}

impl<T: Scalar> ExperimentConfig<T> {
    /// Square loss on the unit ball with `m = 50` atoms, `y_max = 1`.
    pub fn desk(d: usize, reg: Regularizer<T>) -> Result<Self> {
        Ok(Self {
            spec: ProblemSpec::square(reg, T::one(), d)?,
            dist: DistributionParams {
                m: 50,
                y_max: T::one(),
                wbar: desk_wbar(d, T::lit(0.7)),
                noise: T::lit(0.3),
            },
            dist_seed: 1,
            trial_seed: 2,
            n_grid: DEFAULT_N_GRID.to_vec(),
            trials: 200,
            delta: T::lit(0.1),
            mode: Mode::Erm,
            solver: SolverConfig::default(),
            record_timing: false,
            max_invalid_fraction: T::lit(0.05),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return Err(Error::Parameter("n_grid must be nonempty with positive entries".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("n_grid must be strictly increasing".into()));
        }
        if self.trials < 2 {
            return Err(Error::Parameter(format!("trials must be at least 2, got {}", self.trials)));
        }
        if !(self.delta > T::zero() && self.delta <= T::one()) {
            return Err(Error::Parameter(format!("delta must lie in (0,1], got {}", self.delta)));
        }
        if self.dist.wbar.len() != self.spec.domain.dim() {
            return Err(Error::Parameter("w̄ dimension differs from the problem dimension".into()));
        }
        if !self.spec.domain.contains(&self.dist.wbar) {
            return Err(Error::Parameter("w̄ must lie in the domain".into()));
        }
        if matches!(self.mode, Mode::PenalizedErm(_)) && !matches!(self.spec.reg, Regularizer::Zero) {
            return Err(Error::Parameter(
                "penalized mode measures excess of F alone; set the problem regularizer to zero".into(),
            ));
        }
        self.solver.validate()
    }

    pub fn distribution(&self) -> Result<FiniteDistribution<T>> {
        make_distribution(
            self.spec.domain.dim(),
            self.dist.m,
            self.dist.y_max,
            &self.dist.wbar,
            self.dist.noise,
            self.dist_seed,
        )
    }

    /// Sup minus inf of the penalty over the ball, when known in closed form.
    pub fn penalty_range(&self) -> Option<T> {
        match &self.mode {
            Mode::Erm => None,
            Mode::PenalizedErm(g) => g.range_over_ball(self.spec.domain.radius(), self.spec.domain.dim()),
        }
    }

    pub fn from_doc(doc: &ExperimentDoc) -> Result<Self> {
        let spec = ProblemSpec::from_doc(&doc.problem)?;
        let mode = match &doc.mode {
            ModeDoc::Erm => Mode::Erm,
            ModeDoc::PenalizedErm { g } => Mode::PenalizedErm(Regularizer::from_parts(&g.kind, T::lit(g.lambda))?),
        };
        let solver = SolverConfig {
            tol: T::lit(doc.solver.tol),
            max_iters: doc.solver.max_iters,
            ..SolverConfig::default()
        };
        let cfg = Self {
            spec,
            dist: DistributionParams {
                m: doc.distribution.m,
                y_max: T::lit(doc.distribution.y_max),
                wbar: doc.distribution.wbar.iter().map(|&v| T::lit(v)).collect(),
                noise: T::lit(doc.distribution.noise),
            },
            dist_seed: doc.dist_seed,
            trial_seed: doc.trial_seed,
            n_grid: doc.n_grid.clone(),
            trials: doc.trials,
            delta: T::lit(doc.delta),
            mode,
            solver,
            record_timing: doc.record_timing,
            max_invalid_fraction: T::lit(doc.max_invalid_fraction),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_doc(&self) -> Result<ExperimentDoc> {
        let mode = match &self.mode {
            Mode::Erm => ModeDoc::Erm,
            Mode::PenalizedErm(g) => ModeDoc::PenalizedErm {
                g: RegDoc {
                    kind: g.name().to_string(),
                    lambda: g
                        .lambda()
                        .ok_or_else(|| Error::Capability("custom penalty cannot be serialized".into()))?
                        .as_f64(),
                },
            },
        };
        Ok(ExperimentDoc {
            problem: self.spec.to_doc()?,
            distribution: DistributionParams {
                m: self.dist.m,
                y_max: self.dist.y_max.as_f64(),
                wbar: to_f64(&self.dist.wbar),
                noise: self.dist.noise.as_f64(),
            },
            dist_seed: self.dist_seed,
            trial_seed: self.trial_seed,
            n_grid: self.n_grid.clone(),
            trials: self.trials,
            delta: self.delta.as_f64(),
            mode,
            solver: SolverDoc {
                tol: self.solver.tol.as_f64(),
                max_iters: self.solver.max_iters,
            },
            record_timing: self.record_timing,
            max_invalid_fraction: self.max_invalid_fraction.as_f64(),
        })
    }
}

/// Serialized experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentDoc {
    pub problem: ProblemDoc,
    pub distribution: DistributionParams<f64>,
    pub dist_seed: u64,
    pub trial_seed: u64,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub mode: ModeDoc,
    #[serde(default)]
    pub solver: SolverDoc,
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default = "default_invalid")]
    pub max_invalid_fraction: f64,
}

fn default_n_grid() -> Vec<usize> {
    DEFAULT_N_GRID.to_vec()
}
fn default_trials() -> usize {
    200
}
fn default_delta() -> f64 {
    0.1
}
fn default_invalid() -> f64 {
    0.05
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeDoc {
    #[default]
    Erm,
    PenalizedErm { g: RegDoc },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverDoc {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverDoc {
    fn default() -> Self {
        let s = SolverConfig::<f64>::default();
        Self {
            tol: s.tol,
            max_iters: s.max_iters,
        }
    }
}

/// One row of the trials file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub d: usize,
    pub trial: usize,
    pub seed: u64,
    pub excess_risk: f64,
    pub solver_residual: f64,
    pub wall_ms: f64,
    pub valid: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun<T> {
    pub optimum: PopulationOptimum<T>,
    pub records: Vec<TrialRecord>,
    pub invalid: usize,
    /// Curvature inequality spot-check on 100 random triples.
    pub lemma1: ResidualReport<T>,
}

fn run_one<T: Scalar>(
    cfg: &ExperimentConfig<T>,
    dist: &FiniteDistribution<T>,
    pstar: T,
    n: usize,
    trial: usize,
) -> TrialRecord {
    let seed = derive_seed(cfg.trial_seed, &[n as u64, trial as u64]);
    let start = cfg.record_timing.then(Instant::now);
    let mut rng = stream(seed, &[]);
    let data = dist.sample(&mut rng, n);
    let solved = match &cfg.mode {
        Mode::Erm => solve_erm(&cfg.spec, &data, &cfg.solver),
        Mode::PenalizedErm(g) => solve_penalized_erm(&cfg.spec, &data, g, &cfg.solver),
    };
    let wall_ms = start.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3);
    let obj = population_objective(dist, &cfg.spec);
    let (excess_risk, solver_residual, valid) = match solved {
        Ok(r) if r.converged => {
            let excess = obj.composite(&cfg.spec.reg, &r.w_hat) - pstar;
            (excess.as_f64(), r.residual.as_f64(), excess.is_finite())
        }
        Ok(r) => (f64::NAN, r.residual.as_f64(), false),
        Err(_) => (f64::NAN, f64::NAN, false),
    };
    TrialRecord {
        n,
        d: cfg.spec.domain.dim(),
        trial,
        seed,
        excess_risk,
        solver_residual,
        wall_ms,
        valid,
    }
}

/// Runs every `(n, trial)` pair. Trials of one `n` run in parallel; `sink`
/// receives records in `(n, trial)` order as each `n` completes.
pub fn run_trials_with<T: Scalar>(
    cfg: &ExperimentConfig<T>,
    mut sink: impl FnMut(&TrialRecord) -> Result<()>,
) -> Result<ExperimentRun<T>> {
    cfg.validate()?;
    let dist = cfg.distribution()?;
    let optimum = population_minimizer(&dist, &cfg.spec, &cfg.solver)?;

    let d = cfg.spec.domain.dim();
    let mut rng = stream(cfg.dist_seed, &[TAG_LEMMA1]);
    let triples: Vec<(Vec<T>, Vec<T>, Sample<T>)> = (0..100)
        .map(|_| {
            let w = uniform_in_ball(&mut rng, d, cfg.spec.domain.radius());
            let w2 = uniform_in_ball(&mut rng, d, cfg.spec.domain.radius());
            let z = dist.atoms()[rng.random_range(0..dist.atoms().len())].clone();
            (w, w2, z)
        })
        .collect();
    let lemma1 = check_lemma1(&cfg.spec.loss, &cfg.spec.constants, &triples)?;

    let mut records = Vec::with_capacity(cfg.n_grid.len() * cfg.trials);
    for &n in &cfg.n_grid {
        let batch: Vec<TrialRecord> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_one(cfg, &dist, optimum.pstar, n, t))
            .collect();
        for r in &batch {
            sink(r)?;
        }
        records.extend(batch);
    }
    let invalid = records.iter().filter(|r| !r.valid).count();
    if T::from_usize_lossy(invalid) > cfg.max_invalid_fraction * T::from_usize_lossy(records.len()) {
        return Err(Error::Numeric {
            message: format!("{invalid} of {} trials invalid", records.len()),
            iterate: Vec::new(),
        });
    }
    Ok(ExperimentRun {
        optimum,
        records,
        invalid,
        lemma1,
    })
}

pub fn run_trials<T: Scalar>(cfg: &ExperimentConfig<T>) -> Result<ExperimentRun<T>> {
    run_trials_with(cfg, |_| Ok(()))
}

pub fn write_trials_csv<W: io::Write>(records: &[TrialRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials_csv<R: io::Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RateStatistic {
    MedianExcess,
    /// Empirical quantile at level `1 − δ`.
    QuantileExcess(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub statistic: RateStatistic,
    pub points: Vec<(usize, f64)>,
}

/// Ordinary least squares of `log value` on `log n`.
pub fn fit_points(points: &[(usize, f64)], statistic: RateStatistic) -> Result<RateFit> {
    let mut distinct: Vec<usize> = points.iter().map(|p| p.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Data(format!("rate fit needs at least 3 distinct n, got {}", distinct.len())));
    }
    if let Some((n, v)) = points.iter().find(|(n, v)| !(*v > 0.0) || *n == 0) {
        return Err(Error::Data(format!("nonpositive statistic {v} at n = {n}")));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        statistic,
        points: points.to_vec(),
    })
}

/// Valid excess risks grouped by `n`, each group sorted ascending.
pub fn group_by_n(records: &[TrialRecord]) -> BTreeMap<usize, Vec<f64>> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.valid) {
        groups.entry(r.n).or_default().push(r.excess_risk);
    }
    for v in groups.values_mut() {
        v.sort_by(f64::total_cmp);
    }
    groups
}

pub fn median(sorted: &[f64]) -> f64 {
    let k = sorted.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

/// Order statistic `x₍⌈qN⌉₎` (1-based), clamped to the sample range.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil() as isize - 1;
    sorted[rank.clamp(0, sorted.len() as isize - 1) as usize]
}

/// Distribution-free standard error of the median from the order
/// statistics bracketing a 95% binomial interval.
pub fn median_standard_error(sorted: &[f64]) -> f64 {
    let k = sorted.len();
    if k < 2 {
        return f64::NAN;
    }
    let half = 1.96 * (k as f64).sqrt() / 2.0;
    let mid = k as f64 / 2.0;
    let lo = ((mid - half).floor().max(1.0) as usize).min(k) - 1;
    let hi = ((mid + half).ceil().max(1.0) as usize).min(k) - 1;
    (sorted[hi] - sorted[lo]) / 3.92
}

pub fn fit_rate(records: &[TrialRecord], statistic: RateStatistic) -> Result<RateFit> {
    let points: Vec<(usize, f64)> = group_by_n(records)
        .into_iter()
        .map(|(n, v)| {
            let s = match statistic {
                RateStatistic::MedianExcess => median(&v),
                RateStatistic::QuantileExcess(q) => quantile(&v, q),
            };
            (n, s)
        })
        .collect();
    fit_points(&points, statistic)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    pub valid: usize,
    pub mean: f64,
    pub median: f64,
    pub median_se: f64,
    pub quantile_level: f64,
    pub quantile: f64,
    pub max: f64,
    /// Excess-risk bound evaluated at `δ/2`.
    pub thm1: f64,
    pub thm2: Option<f64>,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub delta: f64,
    pub bound_delta: f64,
    pub confidence_note: ConfidenceNote,
    pub per_n: Vec<NSummary>,
    pub violations: usize,
    pub rate_median: Option<RateFit>,
    pub rate_quantile: Option<RateFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_note: Option<String>,
}

/// Per-`n` statistics and bound comparison. The quantile is taken at level
/// `1 − δ` and compared with the excess-risk bound at `δ/2`, whose
/// two-event form then also holds with probability `1 − δ`. `b` adds the
/// penalized bound `thm1 + B/n`.
pub fn summarize<T: Scalar>(
    records: &[TrialRecord],
    delta: f64,
    consts: &crate::problem::Constants<T>,
    b: Option<f64>,
) -> Summary {
    let bound_delta = 0.5 * delta;
    let level = 1.0 - delta;
    let per_n: Vec<NSummary> = group_by_n(records)
        .into_iter()
        .map(|(n, v)| {
            let (thm1, _) = theorem1_bound(
                consts.l.as_f64(),
                consts.g.as_f64(),
                consts.radius.as_f64(),
                consts.d,
                consts.sigma.as_f64(),
                n,
                bound_delta,
            );
            let thm2 = b.map(|b| thm1 + b / n as f64);
            let q = quantile(&v, level);
            NSummary {
                n,
                valid: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                median: median(&v),
                median_se: median_standard_error(&v),
                quantile_level: level,
                quantile: q,
                max: v.last().copied().unwrap_or(f64::NAN),
                thm1,
                thm2,
                violation: q > thm2.unwrap_or(thm1),
            }
        })
        .collect();
    let violations = per_n.iter().filter(|s| s.violation).count();
    let (rate_median, rate_quantile, rate_note) = match (
        fit_rate(records, RateStatistic::MedianExcess),
        fit_rate(records, RateStatistic::QuantileExcess(level)),
    ) {
        (Ok(a), Ok(b)) => (Some(a), Some(b), None),
        (a, b) => {
            let note = a.as_ref().err().or(b.as_ref().err()).map(|e| format!("rate fit skipped: {e}"));
            (a.ok(), b.ok(), note)
        }
    };
    Summary {
        delta,
        bound_delta,
        confidence_note: ConfidenceNote::OneMinusTwoDelta,
        per_n,
        violations,
        rate_median,
        rate_quantile,
        rate_note,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::unit;

    fn two_atom() -> FiniteDistribution<f64> {
        distribution_from_features(vec![unit(2, 0), vec![-1.0, 0.0]], 1.0, &[0.5, 0.0], 0.0, 7).unwrap()
    }

    #[test]
    fn two_atom_population() {
        let dist = two_atom();
        assert_eq!(dist.atoms()[0].y, 0.5);
        assert_eq!(dist.atoms()[1].y, -0.5);
        let spec = ProblemSpec::square(Regularizer::Zero, 1.0, 2).unwrap();
        let obj = population_objective(&dist, &spec);
        for w in [[0.1, 0.3], [-0.7, 0.2], [0.5, 0.0]] {
            let (v, g) = obj.eval_grad(&w);
            assert!((v - (w[0] - 0.5).powi(2)).abs() < 1e-15);
            assert!((g[0] - 2.0 * (w[0] - 0.5)).abs() < 1e-15 && g[1] == 0.0);
        }
    }

    #[test]
    fn two_atom_minimizers() {
        let dist = two_atom();
        let cfg = SolverConfig::default();
        let spec = ProblemSpec::square(Regularizer::L1(0.1), 1.0, 2).unwrap();
        let opt = population_minimizer(&dist, &spec, &cfg).unwrap();
        assert!((opt.wstar[0] - 0.45).abs() < 1e-9 && opt.wstar[1].abs() < 1e-12);
        assert!((opt.pstar - 0.0475).abs() < 1e-12);

        let spec = ProblemSpec::square(Regularizer::L2Squared(0.5), 1.0, 2).unwrap();
        let opt = population_minimizer(&dist, &spec, &cfg).unwrap();
        // (w−0.5)² + (λ/2)w² is minimized at 0.5/(1+λ/2)
        assert!((opt.wstar[0] - 0.5 / 1.25).abs() < 1e-9);
    }

    #[test]
    fn realizable_optimum_is_zero() {
        let wbar = [0.3, -0.2, 0.1];
        let dist = make_distribution(3, 50, 1.0, &wbar, 0.0, 11).unwrap();
        let spec = ProblemSpec::<f64>::square(Regularizer::Zero, 1.0, 3).unwrap();
        let opt = population_minimizer(&dist, &spec, &SolverConfig::default()).unwrap();
        assert!(opt.pstar.abs() < 1e-15);
    }

    #[test]
    fn distribution_contract() {
        let wbar = desk_wbar::<f64>(5, 0.7);
        let a = make_distribution(5, 50, 1.0, &wbar, 0.3, 3).unwrap();
        let b = make_distribution(5, 50, 1.0, &wbar, 0.3, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.weights().iter().all(|&w| w == 0.02));
        assert!(a.atoms().iter().all(|z| norm(&z.x) <= 1.0 + 1e-15 && z.y.abs() <= 1.0));
        assert!(matches!(
            make_distribution(2, 5, 0.1, &[0.5, 0.0], 0.0, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn quantile_and_median() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.9), 5.0);
        assert_eq!(quantile(&v, 0.6), 3.0);
        assert_eq!(median(&v), 3.0);
        assert_eq!(median(&[1.0, 2.0]), 1.5);
    }

    #[test]
    fn rate_fit_exact_line() {
        let fit = fit_points(&[(100, 1e-2), (1000, 1e-3), (10000, 1e-4)], RateStatistic::MedianExcess).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(matches!(
            fit_points(&[(100, 1e-2), (1000, 0.0), (10000, 1e-4)], RateStatistic::MedianExcess),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            fit_points(&[(100, 1e-2), (1000, 1e-3)], RateStatistic::MedianExcess),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn small_run_contract() {
        let mut cfg = ExperimentConfig::<f64>::desk(3, Regularizer::L1(0.05)).unwrap();
        cfg.trials = 2;
        cfg.n_grid = vec![128];
        let run = run_trials(&cfg).unwrap();
        assert_eq!(run.records.len(), 2);
        assert!(run.records.iter().all(|r| r.valid && r.excess_risk >= -1e-7));
        assert!(run.lemma1.pass);
        let s = summarize(&run.records, 0.1, &cfg.spec.constants, None);
        assert_eq!(s.per_n.len(), 1);
        assert!(s.rate_median.is_none() && s.rate_note.is_some());
    }

    #[test]
    fn config_doc_round_trip() {
        let mut cfg = ExperimentConfig::<f64>::desk(4, Regularizer::Zero).unwrap();
        cfg.mode = Mode::PenalizedErm(Regularizer::L2Squared(1.0));
        let doc = cfg.to_doc().unwrap();
        let text = serde_json::to_string(&doc).unwrap();
        let back: ExperimentDoc = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
        let cfg2 = ExperimentConfig::<f64>::from_doc(&back).unwrap();
        assert_eq!(cfg2.to_doc().unwrap(), doc);
        assert_eq!(cfg2.penalty_range(), Some(0.5));

        let mut bad = cfg.clone();
        bad.spec = ProblemSpec::square(Regularizer::L1(0.1), 1.0, 4).unwrap();
        assert!(matches!(bad.validate(), Err(Error::Parameter(_))));
    }
}
