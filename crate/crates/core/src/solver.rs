//! Proximal gradient minimization of `F(w) + R(w)` over the ball `‖w‖₂ ≤ R`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, norm_sq, sub, to_f64, SymMatrix};
use crate::problem::{Domain, Loss, ProblemSpec, Regularizer, Sample};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig<T> {
    /// Threshold on the gradient-mapping norm `‖w − w⁺‖/η`.
    pub tol: T,
    pub max_iters: usize,
    /// Initial step; `None` means `1/L_hint`.
    pub step_init: Option<T>,
    pub backtrack_factor: T,
    pub dykstra_tol: T,
    pub dykstra_max: usize,
    /// The step doubles after this many consecutive accepted steps.
    pub growth_after: usize,
    /// Keep the per-iteration objective sequence in the result.
    pub record_trace: bool,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            max_iters: 100_000,
            step_init: None,
            backtrack_factor: T::lit(0.5),
            dykstra_tol: T::lit(1e-10),
            dykstra_max: 10_000,
            growth_after: 10,
            record_trace: false,
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > T::zero()) {
            return Err(Error::Parameter(format!("solver tol must be positive, got {}", self.tol)));
        }
        if !(self.backtrack_factor > T::zero() && self.backtrack_factor < T::one()) {
            return Err(Error::Parameter(format!(
                "backtrack factor must lie in (0,1), got {}",
                self.backtrack_factor
            )));
        }
        if let Some(s) = self.step_init {
            if !(s > T::zero()) {
                return Err(Error::Parameter(format!("initial step must be positive, got {s}")));
            }
        }
        if !(self.dykstra_tol > T::zero()) {
            return Err(Error::Parameter("dykstra_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult<T> {
    pub w_hat: Vec<T>,
    pub objective: T,
    /// Gradient-mapping norm of the last accepted step.
    pub residual: T,
    pub iters: usize,
    pub converged: bool,
    /// Step size in force at termination.
    pub step: T,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<T>,
}

/// Euclidean projection onto `{‖u‖₂ ≤ r}`.
pub fn project_ball<T: Scalar>(v: &[T], r: T) -> Vec<T> {
    let n = norm(v);
    if n <= r {
        v.to_vec()
    } else {
        let s = r / n;
        v.iter().map(|&x| x * s).collect()
    }
}

#[inline]
fn soft_threshold<T: Scalar>(x: T, t: T) -> T {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        T::zero()
    }
}

/// `argmin_u (1/(2η))‖u − v‖² + reg(u)`.
pub fn prox<T: Scalar>(reg: &Regularizer<T>, v: &[T], eta: T) -> Result<Vec<T>> {
    if !(eta > T::zero()) {
        return Err(Error::Parameter(format!("prox step must be positive, got {eta}")));
    }
    match reg {
        Regularizer::Zero => Ok(v.to_vec()),
        Regularizer::L1(l) => {
            let t = eta * *l;
            Ok(v.iter().map(|&x| soft_threshold(x, t)).collect())
        }
        Regularizer::L2Squared(l) => {
            let s = T::one() / (T::one() + eta * *l);
            Ok(v.iter().map(|&x| x * s).collect())
        }
        Regularizer::Custom(c) => match c.prox_fn() {
            Some(p) => Ok(p(v, eta)),
            None => Err(Error::Capability(format!(
                "regularizer '{}' has no proximal operator",
                c.name
            ))),
        },
    }
}

/// `argmin_{‖u‖≤R} (1/(2η))‖u − v‖² + reg(u)`.
///
/// Closed forms for `Zero` and `L2Squared` (radial symmetry); Dykstra's
/// proximal splitting between `prox(reg)` and the ball projection otherwise.
pub fn combined_prox<T: Scalar>(
    reg: &Regularizer<T>,
    domain: &Domain<T>,
    v: &[T],
    eta: T,
    cfg: &SolverConfig<T>,
) -> Result<Vec<T>> {
    match reg {
        Regularizer::Zero => Ok(project_ball(v, domain.radius())),
        Regularizer::L2Squared(_) => Ok(project_ball(&prox(reg, v, eta)?, domain.radius())),
        _ => dykstra_prox(reg, domain, v, eta, cfg),
    }
}

/// Dykstra-like splitting for the prox of `reg + ι_ball`; stops when
/// successive iterates move by at most `cfg.dykstra_tol`.
pub fn dykstra_prox<T: Scalar>(
    reg: &Regularizer<T>,
    domain: &Domain<T>,
    v: &[T],
    eta: T,
    cfg: &SolverConfig<T>,
) -> Result<Vec<T>> {
    let d = v.len();
    let r = domain.radius();
    let mut x = v.to_vec();
    let mut p = vec![T::zero(); d];
    let mut q = vec![T::zero(); d];
    let mut last_move = T::infinity();
    for _ in 0..cfg.dykstra_max {
        let xp: Vec<T> = x.iter().zip(&p).map(|(&a, &b)| a + b).collect();
        let y = prox(reg, &xp, eta)?;
        p = sub(&xp, &y);
        let yq: Vec<T> = y.iter().zip(&q).map(|(&a, &b)| a + b).collect();
        let x_next = project_ball(&yq, r);
        q = sub(&yq, &x_next);
        last_move = norm(&sub(&x_next, &x));
        x = x_next;
        if last_move <= cfg.dykstra_tol {
            return Ok(x);
        }
    }
    Err(Error::DykstraNonConvergence {
        iters: cfg.dykstra_max,
        last_move: last_move.as_f64(),
        last: to_f64(&x),
    })
}

/// Smooth part of a composite objective.
pub trait SmoothObjective<T: Scalar> {
    fn eval_grad(&self, w: &[T]) -> (T, Vec<T>);

    fn eval(&self, w: &[T]) -> T {
        self.eval_grad(w).0
    }
}

impl<T: Scalar, F: Fn(&[T]) -> (T, Vec<T>)> SmoothObjective<T> for F {
    fn eval_grad(&self, w: &[T]) -> (T, Vec<T>) {
        self(w)
    }
}

fn check_finite<T: Scalar>(value: T, grad: &[T], w: &[T]) -> Result<()> {
    if value.is_finite() && grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            message: format!("non-finite objective or gradient (value {value})"),
            iterate: to_f64(w),
        })
    }
}

/// Proximal gradient with backtracking:
/// `w⁺ = combined_prox(reg, domain, w − η∇F(w), η)`, accepting `η` once
/// `F(w⁺) ≤ F(w) + ⟨∇F(w), w⁺ − w⟩ + ‖w⁺ − w‖²/(2η)`. Every accepted step
/// decreases `F + reg` by at least `‖w⁺ − w‖²/(2η)`.
/// Terminates when `‖w − w⁺‖/η ≤ tol` or after `max_iters`.
pub fn minimize_composite<T: Scalar, S: SmoothObjective<T> + ?Sized>(
    smooth: &S,
    l_hint: T,
    reg: &Regularizer<T>,
    domain: &Domain<T>,
    cfg: &SolverConfig<T>,
    w0: &[T],
) -> Result<SolverResult<T>> {
    cfg.validate()?;
    if w0.len() != domain.dim() {
        return Err(Error::Usage(format!(
            "initial point has dimension {}, domain has {}",
            w0.len(),
            domain.dim()
        )));
    }
    if !domain.contains_within(w0, T::lit(1e-12)) {
        return Err(Error::Usage("initial point lies outside the domain".into()));
    }
    let mut eta = match cfg.step_init {
        Some(s) => s,
        None if l_hint > T::zero() && l_hint.is_finite() => T::one() / l_hint,
        None => return Err(Error::Parameter(format!("L hint must be positive, got {l_hint}"))),
    };
    let min_step = eta * T::lit(1e-30);
    let half = T::lit(0.5);

    let mut w = w0.to_vec();
    let (mut f, mut g) = smooth.eval_grad(&w);
    check_finite(f, &g, &w)?;
    let mut objective = f + reg.eval(&w);
    let mut trace = Vec::new();
    if cfg.record_trace {
        trace.push(objective);
    }

    let mut residual = T::infinity();
    let mut streak = 0;
    let mut iters = 0;
    let mut converged = false;
    while iters < cfg.max_iters {
        iters += 1;
        let (w_next, f_next, g_next, step_len) = loop {
            let trial: Vec<T> = w.iter().zip(&g).map(|(&wi, &gi)| wi - eta * gi).collect();
            let cand = combined_prox(reg, domain, &trial, eta, cfg)?;
            let d = sub(&cand, &w);
            let (fc, gc) = smooth.eval_grad(&cand);
            check_finite(fc, &gc, &cand)?;
            let slack = T::lit(10.0) * T::epsilon() * (T::one() + f.abs());
            let model = f + dot(&g, &d) + half * norm_sq(&d) / eta;
            if fc <= model + slack {
                break (cand, fc, gc, norm(&d));
            }
            eta = eta * cfg.backtrack_factor;
            streak = 0;
            if eta < min_step {
                return Err(Error::Numeric {
                    message: "step size underflow during backtracking".into(),
                    iterate: to_f64(&w),
                });
            }
        };
        residual = step_len / eta;
        let obj_next = f_next + reg.eval(&w_next);
        w = w_next;
        f = f_next;
        g = g_next;
        objective = obj_next;
        if cfg.record_trace {
            trace.push(objective);
        }
        if residual <= cfg.tol {
            converged = true;
            break;
        }
        streak += 1;
        if streak >= cfg.growth_after {
            eta = eta + eta;
            streak = 0;
        }
    }
    Ok(SolverResult {
        w_hat: w,
        objective,
        residual,
        iters,
        converged,
        step: eta,
        trace,
    })
}

/// Sample-average risk `Fₙ(w) = (1/n)Σ f(w, zᵢ)` as a smooth objective.
/// The square loss is evaluated through its sufficient statistics
/// `(XᵀX/n, Xᵀy/n, yᵀy/n)`.
pub enum EmpiricalObjective<'a, T> {
    Quadratic {
        gram: SymMatrix<T>,
        xty: Vec<T>,
        yty: T,
    },
    General {
        loss: &'a Loss<T>,
        data: &'a [Sample<T>],
    },
}

impl<'a, T: Scalar> EmpiricalObjective<'a, T> {
    pub fn new(loss: &'a Loss<T>, data: &'a [Sample<T>]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Usage("dataset is empty".into()));
        }
        match loss {
            Loss::Square => {
                let d = data[0].x.len();
                let inv_n = T::one() / T::from_usize_lossy(data.len());
                let mut gram = SymMatrix::zeros(d);
                let mut xty = vec![T::zero(); d];
                let mut yty = T::zero();
                for z in data {
                    gram.add_outer(inv_n, &z.x);
                    crate::linalg::axpy(z.y * inv_n, &z.x, &mut xty);
                    yty = yty + z.y * z.y * inv_n;
                }
                Ok(Self::Quadratic { gram, xty, yty })
            }
            _ => Ok(Self::General { loss, data }),
        }
    }
}

impl<T: Scalar> SmoothObjective<T> for EmpiricalObjective<'_, T> {
    fn eval_grad(&self, w: &[T]) -> (T, Vec<T>) {
        match self {
            Self::Quadratic { gram, xty, yty } => {
                let aw = gram.mul_vec(w);
                let two = T::lit(2.0);
                let value = dot(w, &aw) - two * dot(xty, w) + *yty;
                let grad = aw.iter().zip(xty).map(|(&a, &b)| two * (a - b)).collect();
                (value, grad)
            }
            Self::General { loss, data } => {
                let d = w.len();
                let mut value = T::zero();
                let mut grad = vec![T::zero(); d];
                for z in data.iter() {
                    let (v, g) = loss.eval_grad(w, z);
                    value = value + v;
                    for (a, b) in grad.iter_mut().zip(g) {
                        *a = *a + b;
                    }
                }
                let inv_n = T::one() / T::from_usize_lossy(data.len());
                (value * inv_n, grad.into_iter().map(|x| x * inv_n).collect())
            }
        }
    }
}

fn check_dataset<T: Scalar>(spec: &ProblemSpec<T>, dataset: &[Sample<T>]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Usage("dataset is empty".into()));
    }
    let d = spec.domain.dim();
    if let Some((i, _)) = dataset.iter().enumerate().find(|(_, z)| z.x.len() != d) {
        return Err(Error::Usage(format!("sample {i} has dimension {} (expected {d})", dataset[i].x.len())));
    }
    Ok(())
}

/// Minimizes `Pₙ(w) = (1/n)Σ f(w, zᵢ) + R(w)` over the ball from `w0 = 0`.
pub fn solve_erm<T: Scalar>(
    spec: &ProblemSpec<T>,
    dataset: &[Sample<T>],
    cfg: &SolverConfig<T>,
) -> Result<SolverResult<T>> {
    check_dataset(spec, dataset)?;
    let objective = EmpiricalObjective::new(&spec.loss, dataset)?;
    let w0 = vec![T::zero(); spec.domain.dim()];
    minimize_composite(&objective, spec.constants.l, &spec.reg, &spec.domain, cfg, &w0)
}

/// Minimizes `Fₙ(w) + g(w)/n` over the ball from `w0 = 0`.
///
/// The penalized estimator targets the unregularized risk, so `spec.reg`
/// must be `Zero`.
pub fn solve_penalized_erm<T: Scalar>(
    spec: &ProblemSpec<T>,
    dataset: &[Sample<T>],
    g: &Regularizer<T>,
    cfg: &SolverConfig<T>,
) -> Result<SolverResult<T>> {
    if !matches!(spec.reg, Regularizer::Zero) {
        return Err(Error::Usage(format!(
            "penalized ERM needs a problem without regularizer, got '{}'",
            spec.reg.name()
        )));
    }
    check_dataset(spec, dataset)?;
    let objective = EmpiricalObjective::new(&spec.loss, dataset)?;
    let penalty = g.scaled(T::one() / T::from_usize_lossy(dataset.len()));
    let w0 = vec![T::zero(); spec.domain.dim()];
    minimize_composite(&objective, spec.constants.l, &penalty, &spec.domain, cfg, &w0)
}
