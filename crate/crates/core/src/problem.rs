//! Losses, regularizers, the ball domain and the constants (G, L, β, σ)
//! that parameterize the composite problem `min_{‖w‖≤R} E f(w,z) + R(w)`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, SymMatrix};
use crate::scalar::Scalar;

/// Euclidean ball `{w : ‖w‖₂ ≤ radius}` in `dim` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain<T> {
    radius: T,
    dim: usize,
}

impl<T: Scalar> Domain<T> {
    pub fn new(radius: T, dim: usize) -> Result<Self> {
        if !(radius > T::zero()) || !radius.is_finite() {
            return Err(Error::Parameter(format!("domain radius must be positive, got {radius}")));
        }
        if dim == 0 {
            return Err(Error::Parameter("domain dimension must be at least 1".into()));
        }
        Ok(Self { radius, dim })
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, w: &[T]) -> bool {
        w.len() == self.dim && norm(w) <= self.radius
    }

    /// Membership with an absolute slack on the norm.
    pub fn contains_within(&self, w: &[T], slack: T) -> bool {
        w.len() == self.dim && norm(w) <= self.radius + slack
    }
}

/// One observation `z = (x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<T> {
    pub x: Vec<T>,
    pub y: T,
}

impl<T: Scalar> Sample<T> {
    pub fn new(x: Vec<T>, y: T) -> Self {
        Self { x, y }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

pub type EvalFn<T> = Arc<dyn Fn(&[T], &Sample<T>) -> T + Send + Sync>;
pub type GradFn<T> = Arc<dyn Fn(&[T], &Sample<T>) -> Vec<T> + Send + Sync>;
pub type HessFn<T> = Arc<dyn Fn(&[T], &Sample<T>) -> SymMatrix<T> + Send + Sync>;

/// User-supplied loss given by callables.
#[derive(Clone)]
pub struct CustomLoss<T> {
    pub name: String,
    eval: EvalFn<T>,
    grad: GradFn<T>,
    hess: Option<HessFn<T>>,
}

impl<T: Scalar> CustomLoss<T> {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(&[T], &Sample<T>) -> T + Send + Sync + 'static,
        grad: impl Fn(&[T], &Sample<T>) -> Vec<T> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
            grad: Arc::new(grad),
            hess: None,
        }
    }

    pub fn with_hessian(
        mut self,
        hess: impl Fn(&[T], &Sample<T>) -> SymMatrix<T> + Send + Sync + 'static,
    ) -> Self {
        self.hess = Some(Arc::new(hess));
        self
    }
}

impl<T> fmt::Debug for CustomLoss<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLoss")
            .field("name", &self.name)
            .field("has_hessian", &self.hess.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Square,
    Logistic,
    SquaredHinge,
    Custom,
}

/// Per-sample loss `f(w, z)`.
///
/// The built-ins are margin losses `φ(wᵀx, y)`:
/// square `(wᵀx − y)²`, logistic `log(1 + exp(−y wᵀx))`,
/// squared hinge `max(0, 1 − y wᵀx)²`.
#[derive(Debug, Clone)]
pub enum Loss<T> {
    Square,
    Logistic,
    SquaredHinge,
    Custom(CustomLoss<T>),
}

impl<T: Scalar> Loss<T> {
    pub fn kind(&self) -> LossKind {
        match self {
            Loss::Square => LossKind::Square,
            Loss::Logistic => LossKind::Logistic,
            Loss::SquaredHinge => LossKind::SquaredHinge,
            Loss::Custom(_) => LossKind::Custom,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Loss::Square => "square",
            Loss::Logistic => "logistic",
            Loss::SquaredHinge => "squared_hinge",
            Loss::Custom(c) => &c.name,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "square" => Ok(Loss::Square),
            "logistic" => Ok(Loss::Logistic),
            "squared_hinge" | "squared-hinge" => Ok(Loss::SquaredHinge),
            other => Err(Error::Usage(format!("unknown loss kind '{other}'"))),
        }
    }

    pub fn has_hessian(&self) -> bool {
        match self {
            Loss::Custom(c) => c.hess.is_some(),
            _ => true,
        }
    }

    /// `(φ, φ', φ'')` for a margin loss at prediction `t`.
    fn link(&self, t: T, y: T) -> (T, T, T) {
        let zero = T::zero();
        let one = T::one();
        let two = T::lit(2.0);
        match self {
            Loss::Square => {
                let r = t - y;
                (r * r, two * r, two)
            }
            Loss::Logistic => {
                let m = y * t;
                // log(1 + e^{-m}) without overflow
                let value = if m > zero {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                };
                let p_wrong = sigmoid(-m);
                let p_right = sigmoid(m);
                (value, -y * p_wrong, y * y * p_wrong * p_right)
            }
            Loss::SquaredHinge => {
                let slack = one - y * t;
                if slack > zero {
                    (slack * slack, -two * y * slack, two * y * y)
                } else {
                    (zero, zero, zero)
                }
            }
            Loss::Custom(_) => unreachable!("custom losses are not margin losses"),
        }
    }

    pub fn eval(&self, w: &[T], z: &Sample<T>) -> T {
        match self {
            Loss::Custom(c) => (c.eval)(w, z),
            _ => self.link(dot(w, &z.x), z.y).0,
        }
    }

    pub fn grad(&self, w: &[T], z: &Sample<T>) -> Vec<T> {
        match self {
            Loss::Custom(c) => (c.grad)(w, z),
            _ => {
                let d1 = self.link(dot(w, &z.x), z.y).1;
                z.x.iter().map(|&xi| d1 * xi).collect()
            }
        }
    }

    /// Value and gradient in one pass.
    pub fn eval_grad(&self, w: &[T], z: &Sample<T>) -> (T, Vec<T>) {
        match self {
            Loss::Custom(c) => ((c.eval)(w, z), (c.grad)(w, z)),
            _ => {
                let (v, d1, _) = self.link(dot(w, &z.x), z.y);
                (v, z.x.iter().map(|&xi| d1 * xi).collect())
            }
        }
    }

    pub fn hess(&self, w: &[T], z: &Sample<T>) -> Result<SymMatrix<T>> {
        match self {
            Loss::Custom(c) => match &c.hess {
                Some(h) => Ok(h(w, z)),
                None => Err(Error::Capability(format!(
                    "loss '{}' does not provide a Hessian",
                    c.name
                ))),
            },
            _ => {
                let d2 = self.link(dot(w, &z.x), z.y).2;
                let mut h = SymMatrix::zeros(z.x.len());
                h.add_outer(d2, &z.x);
                Ok(h)
            }
        }
    }

    /// Smoothness constant of a built-in loss for `‖x‖₂ ≤ 1`, `|y| ≤ y_max`.
    pub fn default_smoothness(&self, y_max: T) -> Option<T> {
        match self {
            Loss::Square => Some(T::lit(2.0)),
            Loss::Logistic => Some(y_max * y_max / T::lit(4.0)),
            Loss::SquaredHinge => Some(T::lit(2.0) * y_max * y_max),
            Loss::Custom(_) => None,
        }
    }
}

fn sigmoid<T: Scalar>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

pub type RegEvalFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
pub type RegSubgradFn<T> = Arc<dyn Fn(&[T]) -> Vec<T> + Send + Sync>;
pub type ProxFn<T> = Arc<dyn Fn(&[T], T) -> Vec<T> + Send + Sync>;

/// User-supplied convex regularizer. `prox(v, eta)` is optional.
#[derive(Clone)]
pub struct CustomRegularizer<T> {
    pub name: String,
    eval: RegEvalFn<T>,
    subgrad: RegSubgradFn<T>,
    prox: Option<ProxFn<T>>,
}

impl<T: Scalar> CustomRegularizer<T> {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(&[T]) -> T + Send + Sync + 'static,
        subgrad: impl Fn(&[T]) -> Vec<T> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
            subgrad: Arc::new(subgrad),
            prox: None,
        }
    }

    pub fn with_prox(mut self, prox: impl Fn(&[T], T) -> Vec<T> + Send + Sync + 'static) -> Self {
        self.prox = Some(Arc::new(prox));
        self
    }

    pub(crate) fn prox_fn(&self) -> Option<&ProxFn<T>> {
        self.prox.as_ref()
    }
}

impl<T> fmt::Debug for CustomRegularizer<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomRegularizer")
            .field("name", &self.name)
            .field("has_prox", &self.prox.is_some())
            .finish()
    }
}

/// Convex regularizer `R(w)`. `L2Squared(λ)` is `(λ/2)‖w‖₂²`.
#[derive(Debug, Clone)]
pub enum Regularizer<T> {
    Zero,
    L1(T),
    L2Squared(T),
    Custom(CustomRegularizer<T>),
}

impl<T: Scalar> Regularizer<T> {
    pub fn name(&self) -> &str {
        match self {
            Regularizer::Zero => "zero",
            Regularizer::L1(_) => "l1",
            Regularizer::L2Squared(_) => "l2_squared",
            Regularizer::Custom(c) => &c.name,
        }
    }

    pub fn lambda(&self) -> Option<T> {
        match self {
            Regularizer::Zero => Some(T::zero()),
            Regularizer::L1(l) | Regularizer::L2Squared(l) => Some(*l),
            Regularizer::Custom(_) => None,
        }
    }

    pub fn from_parts(kind: &str, lambda: T) -> Result<Self> {
        if lambda < T::zero() || !lambda.is_finite() {
            return Err(Error::Parameter(format!("regularization weight must be >= 0, got {lambda}")));
        }
        match kind {
            "zero" | "none" => Ok(Regularizer::Zero),
            "l1" => Ok(Regularizer::L1(lambda)),
            "l2_squared" | "l2sq" | "l2-squared" => Ok(Regularizer::L2Squared(lambda)),
            other => Err(Error::Usage(format!("unknown regularizer kind '{other}'"))),
        }
    }

    pub fn eval(&self, w: &[T]) -> T {
        match self {
            Regularizer::Zero => T::zero(),
            Regularizer::L1(l) => *l * w.iter().map(|x| x.abs()).sum::<T>(),
            Regularizer::L2Squared(l) => *l * T::lit(0.5) * dot(w, w),
            Regularizer::Custom(c) => (c.eval)(w),
        }
    }

    /// An element of the subdifferential (0 is used for |·| at 0).
    pub fn subgrad(&self, w: &[T]) -> Vec<T> {
        match self {
            Regularizer::Zero => vec![T::zero(); w.len()],
            Regularizer::L1(l) => w
                .iter()
                .map(|&x| {
                    if x > T::zero() {
                        *l
                    } else if x < T::zero() {
                        -*l
                    } else {
                        T::zero()
                    }
                })
                .collect(),
            Regularizer::L2Squared(l) => w.iter().map(|&x| *l * x).collect(),
            Regularizer::Custom(c) => (c.subgrad)(w),
        }
    }

    /// `c · R(w)` for `c ≥ 0`.
    pub fn scaled(&self, c: T) -> Self {
        match self {
            Regularizer::Zero => Regularizer::Zero,
            Regularizer::L1(l) => Regularizer::L1(*l * c),
            Regularizer::L2Squared(l) => Regularizer::L2Squared(*l * c),
            Regularizer::Custom(inner) => {
                let (e, s) = (inner.eval.clone(), inner.subgrad.clone());
                let mut out = CustomRegularizer::new(
                    format!("{}*{}", c, inner.name),
                    move |w: &[T]| c * e(w),
                    move |w: &[T]| s(w).into_iter().map(|g| c * g).collect(),
                );
                if let Some(p) = inner.prox.clone() {
                    out = out.with_prox(move |v: &[T], eta: T| p(v, eta * c));
                }
                Regularizer::Custom(out)
            }
        }
    }

    /// `sup − inf` of the regularizer over the ball of radius `r` in `d` dimensions.
    pub fn range_over_ball(&self, r: T, d: usize) -> Option<T> {
        match self {
            Regularizer::Zero => Some(T::zero()),
            Regularizer::L1(l) => Some(*l * r * T::from_usize_lossy(d).sqrt()),
            Regularizer::L2Squared(l) => Some(*l * r * r * T::lit(0.5)),
            Regularizer::Custom(_) => None,
        }
    }
}

/// Problem constants. `sigma` is the curvature constant `½·min(1/(8GR), β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants<T> {
    #[serde(rename = "G")]
    pub g: T,
    #[serde(rename = "L")]
    pub l: T,
    pub beta: T,
    pub sigma: T,
    #[serde(rename = "R")]
    pub radius: T,
    pub d: usize,
}

/// `½·min(1/(8GR), β)`
pub fn curvature_sigma<T: Scalar>(g: T, radius: T, beta: T) -> T {
    T::lit(0.5) * (T::one() / (T::lit(8.0) * g * radius)).min(beta)
}

/// Derives `(G, σ)` from `(β, L)`. When `g_opt` is absent, `G = √(L/β)`,
/// which requires a twice differentiable loss.
pub fn derive_constants<T: Scalar>(
    loss: &Loss<T>,
    domain: &Domain<T>,
    beta: T,
    l: T,
    g_opt: Option<T>,
) -> Result<Constants<T>> {
    if !(beta > T::zero()) || !beta.is_finite() {
        return Err(Error::Parameter(format!("beta must be positive, got {beta}")));
    }
    if !(l > T::zero()) || !l.is_finite() {
        return Err(Error::Parameter(format!("L must be positive, got {l}")));
    }
    let g = match g_opt {
        Some(g) if g > T::zero() && g.is_finite() => g,
        Some(g) => return Err(Error::Parameter(format!("G must be positive, got {g}"))),
        None => {
            if !loss.has_hessian() {
                return Err(Error::Capability(format!(
                    "G = sqrt(L/beta) needs a twice differentiable loss; '{}' has no Hessian",
                    loss.name()
                )));
            }
            (l / beta).sqrt()
        }
    };
    Ok(Constants {
        g,
        l,
        beta,
        sigma: curvature_sigma(g, domain.radius(), beta),
        radius: domain.radius(),
        d: domain.dim(),
    })
}

/// Mean of per-sample losses plus the regularizer.
pub fn composite_eval<T: Scalar>(
    loss: &Loss<T>,
    reg: &Regularizer<T>,
    dataset: &[Sample<T>],
    w: &[T],
) -> Result<T> {
    Ok(empirical_risk(loss, dataset, w)? + reg.eval(w))
}

/// `(1/n) Σ f(w, zᵢ)`
pub fn empirical_risk<T: Scalar>(loss: &Loss<T>, dataset: &[Sample<T>], w: &[T]) -> Result<T> {
    if dataset.is_empty() {
        return Err(Error::Usage("dataset is empty".into()));
    }
    let total: T = dataset.iter().map(|z| loss.eval(w, z)).sum();
    Ok(total / T::from_usize_lossy(dataset.len()))
}

/// Loss, regularizer, domain and constants of one composite problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec<T> {
    pub loss: Loss<T>,
    pub reg: Regularizer<T>,
    pub domain: Domain<T>,
    pub constants: Constants<T>,
}

impl<T: Scalar> ProblemSpec<T> {
    /// Derives constants from `(β, L, G?)`.
    pub fn new(
        loss: Loss<T>,
        reg: Regularizer<T>,
        domain: Domain<T>,
        beta: T,
        l: T,
        g_opt: Option<T>,
    ) -> Result<Self> {
        let constants = derive_constants(&loss, &domain, beta, l, g_opt)?;
        Ok(Self {
            loss,
            reg,
            domain,
            constants,
        })
    }

    /// Square loss with `β = 1/(8R²)` and `L = 2`; valid for `‖x‖₂ ≤ 1`
    /// and `|y| ≤ R`, where `|wᵀx − y| ≤ 2R` on the ball.
    pub fn square(reg: Regularizer<T>, radius: T, dim: usize) -> Result<Self> {
        let domain = Domain::new(radius, dim)?;
        let beta = T::one() / (T::lit(8.0) * radius * radius);
        Self::new(Loss::Square, reg, domain, beta, T::lit(2.0), None)
    }

    pub fn from_doc(doc: &ProblemDoc) -> Result<Self> {
        let loss = Loss::from_name(&doc.loss.kind)?;
        let reg = Regularizer::from_parts(&doc.reg.kind, T::lit(doc.reg.lambda))?;
        let domain = Domain::new(T::lit(doc.domain.radius), doc.domain.dim)?;
        Self::new(
            loss,
            reg,
            domain,
            T::lit(doc.constants.beta),
            T::lit(doc.constants.l),
            doc.constants.g.map(T::lit),
        )
    }

    pub fn to_doc(&self) -> Result<ProblemDoc> {
        if let Loss::Custom(c) = &self.loss {
            return Err(Error::Capability(format!("custom loss '{}' cannot be serialized", c.name)));
        }
        let lambda = self
            .reg
            .lambda()
            .ok_or_else(|| Error::Capability("custom regularizer cannot be serialized".into()))?;
        Ok(ProblemDoc {
            loss: LossDoc {
                kind: self.loss.name().to_string(),
                params: BTreeMap::new(),
            },
            reg: RegDoc {
                kind: self.reg.name().to_string(),
                lambda: lambda.as_f64(),
            },
            domain: DomainDoc {
                radius: self.domain.radius().as_f64(),
                dim: self.domain.dim(),
            },
            constants: ConstantsDoc {
                g: Some(self.constants.g.as_f64()),
                l: self.constants.l.as_f64(),
                beta: self.constants.beta.as_f64(),
            },
        })
    }
}

/// Serialized problem specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDoc {
    pub loss: LossDoc,
    pub reg: RegDoc,
    pub domain: DomainDoc,
    pub constants: ConstantsDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossDoc {
    pub kind: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegDoc {
    pub kind: String,
    #[serde(default)]
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainDoc {
    pub radius: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsDoc {
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(rename = "L")]
    pub l: f64,
    pub beta: f64,
}
