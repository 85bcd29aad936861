//! Closed-form risk bounds and the `H`-norm built from gradient second moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, dot, SymMatrix};
use crate::problem::Constants;
use crate::scalar::Scalar;

fn log_two_over<T: Scalar>(delta: T) -> T {
    (T::lit(2.0) / delta).ln()
}

/// `d·log(6R/ε)`, clamped at zero.
pub fn covering_number_bound<T: Scalar>(r: T, eps: T, d: usize) -> T {
    let v = T::from_usize_lossy(d) * (T::lit(6.0) * r / eps).ln();
    v.max(T::zero())
}

/// `C(ε) = 4(log(2/δ) + d·log(6R/ε))`.
pub fn c_epsilon<T: Scalar>(delta: T, d: usize, r: T, eps: T) -> T {
    T::lit(4.0) * (log_two_over(delta) + covering_number_bound(r, eps, d))
}

/// `2M·log(2/δ)/m + √(2·variance·log(2/δ)/m)`.
pub fn vector_bernstein<T: Scalar>(m_bound: T, variance: T, m: usize, delta: T) -> T {
    let lg = log_two_over(delta);
    let m = T::from_usize_lossy(m);
    T::lit(2.0) * m_bound * lg / m + (T::lit(2.0) * variance * lg / m).sqrt()
}

/// `2G·log(2/δ)/n + √(2αd·log(2/δ)/(nσ))`.
pub fn grad_concentration_bound<T: Scalar>(g: T, alpha: T, d: usize, sigma: T, n: usize, delta: T) -> T {
    let lg = log_two_over(delta);
    let nn = T::from_usize_lossy(n);
    let dd = T::from_usize_lossy(d);
    T::lit(2.0) * g * lg / nn + (T::lit(2.0) * alpha * dd * lg / (nn * sigma)).sqrt()
}

/// `L·C·dist/n + L·C·ε/n + √(L·C·excess/n) + √(L·G·C·ε/n) + 2Lε`
/// with `C = c_epsilon(δ, d, R, ε)`.
#[allow(clippy::too_many_arguments)]
pub fn net_deviation_bound<T: Scalar>(
    l: T,
    g: T,
    delta: T,
    d: usize,
    r: T,
    eps: T,
    n: usize,
    dist: T,
    excess: T,
) -> T {
    net_deviation_with_c(l, g, c_epsilon(delta, d, r, eps), eps, n, dist, excess)
}

/// The same five-term sum for an explicitly supplied `C`.
pub fn net_deviation_with_c<T: Scalar>(l: T, g: T, c: T, eps: T, n: usize, dist: T, excess: T) -> T {
    let nn = T::from_usize_lossy(n);
    let lc = l * c;
    lc * dist / nn + lc * eps / nn + (lc * excess / nn).sqrt() + (lc * g * eps / nn).sqrt() + T::lit(2.0) * l * eps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfidenceNote {
    OneMinusDelta,
    OneMinusTwoDelta,
}

impl ConfidenceNote {
    pub fn label(self) -> &'static str {
        match self {
            Self::OneMinusDelta => "1-delta",
            Self::OneMinusTwoDelta => "1-2delta",
        }
    }
}

/// The seven individual terms of the explicit excess-risk bound, in order:
/// `64LR²·K/n`, `8LR·K/n²`, `12d·log(2/δ)/(nσ)`, `24G²·log(2/δ)/n`,
/// `G/(2n)`, `8LR/n`, `4R²·log(2/δ)/(3n)` with `K = log(2/δ) + d·log(6Rn)`.
pub fn theorem1_terms<T: Scalar>(l: T, g: T, r: T, d: usize, sigma: T, n: usize, delta: T) -> [T; 7] {
    let lg = log_two_over(delta);
    let nn = T::from_usize_lossy(n);
    let dd = T::from_usize_lossy(d);
    let k = lg + dd * (T::lit(6.0) * r * nn).ln();
    [
        T::lit(64.0) * l * r * r * k / nn,
        T::lit(8.0) * l * r * k / (nn * nn),
        T::lit(12.0) * dd * lg / (nn * sigma),
        T::lit(24.0) * g * g * lg / nn,
        g / (T::lit(2.0) * nn),
        T::lit(8.0) * l * r / nn,
        T::lit(4.0) * r * r * lg / (T::lit(3.0) * nn),
    ]
}

/// Explicit excess-risk bound for the empirical minimizer. The derivation
/// combines two events of probability `1−δ` each, hence the note.
pub fn theorem1_bound<T: Scalar>(l: T, g: T, r: T, d: usize, sigma: T, n: usize, delta: T) -> (T, ConfidenceNote) {
    let terms = theorem1_terms(l, g, r, d, sigma, n, delta);
    (terms.iter().copied().sum(), ConfidenceNote::OneMinusTwoDelta)
}

/// `theorem1_bound + B/n` for a penalty with range `B` over the ball.
#[allow(clippy::too_many_arguments)]
pub fn theorem2_bound<T: Scalar>(l: T, g: T, r: T, d: usize, sigma: T, n: usize, delta: T, b: T) -> T {
    theorem1_bound(l, g, r, d, sigma, n, delta).0 + b / T::from_usize_lossy(n)
}

/// Inputs of [`bound_report`]. Unset `eps`/`alpha` default to `1/n` and
/// `log(2/δ)/n`; the net-deviation term is evaluated at `dist`
/// (default `2R`) and `excess` (default 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery<T> {
    pub constants: Constants<T>,
    pub n: usize,
    pub delta: T,
    pub eps: Option<T>,
    pub alpha: Option<T>,
    pub dist: Option<T>,
    pub excess: Option<T>,
    #[serde(rename = "B")]
    pub b: Option<T>,
    /// Evaluate at `δ/2` so that the combined statement holds with `1−δ`.
    pub honest: bool,
}

impl<T: Scalar> BoundQuery<T> {
    pub fn new(constants: Constants<T>, n: usize, delta: T) -> Self {
        Self {
            constants,
            n,
            delta,
            eps: None,
            alpha: None,
            dist: None,
            excess: None,
            b: None,
            honest: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport<T> {
    pub n: usize,
    pub d: usize,
    pub delta: T,
    /// The δ actually plugged into the formulas.
    pub delta_used: T,
    pub sigma: T,
    pub eps: T,
    pub alpha: T,
    pub covering_log: T,
    pub c_eps: T,
    pub lemma4: T,
    pub lemma5: T,
    pub thm1: T,
    pub thm2: Option<T>,
    pub confidence_note: ConfidenceNote,
}

fn check_positive<T: Scalar>(name: &str, v: T) -> Result<()> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")))
    }
}

pub fn bound_report<T: Scalar>(q: &BoundQuery<T>) -> Result<BoundReport<T>> {
    let c = &q.constants;
    if q.n == 0 {
        return Err(Error::Parameter("n must be at least 1".into()));
    }
    if c.d == 0 {
        return Err(Error::Parameter("d must be at least 1".into()));
    }
    if !(q.delta > T::zero() && q.delta < T::one()) {
        return Err(Error::Parameter(format!("delta must lie in (0,1), got {}", q.delta)));
    }
    for (name, v) in [("G", c.g), ("L", c.l), ("R", c.radius), ("sigma", c.sigma)] {
        check_positive(name, v)?;
    }
    let delta = if q.honest { q.delta * T::lit(0.5) } else { q.delta };
    let nn = T::from_usize_lossy(q.n);
    let eps = q.eps.unwrap_or(T::one() / nn);
    let alpha = q.alpha.unwrap_or(log_two_over(delta) / nn);
    let dist = q.dist.unwrap_or(T::lit(2.0) * c.radius);
    let excess = q.excess.unwrap_or(T::zero());
    check_positive("eps", eps)?;
    check_positive("alpha", alpha)?;
    if dist < T::zero() || excess < T::zero() {
        return Err(Error::Parameter("dist and excess must be nonnegative".into()));
    }
    if let Some(b) = q.b {
        if b < T::zero() {
            return Err(Error::Parameter(format!("B must be nonnegative, got {b}")));
        }
    }
    let (thm1, _) = theorem1_bound(c.l, c.g, c.radius, c.d, c.sigma, q.n, delta);
    Ok(BoundReport {
        n: q.n,
        d: c.d,
        delta: q.delta,
        delta_used: delta,
        sigma: c.sigma,
        eps,
        alpha,
        covering_log: covering_number_bound(c.radius, eps, c.d),
        c_eps: c_epsilon(delta, c.d, c.radius, eps),
        lemma4: grad_concentration_bound(c.g, alpha, c.d, c.sigma, q.n, delta),
        lemma5: net_deviation_bound(c.l, c.g, delta, c.d, c.radius, eps, q.n, dist, excess),
        thm1,
        thm2: q.b.map(|b| thm1 + b / nn),
        confidence_note: if q.honest {
            ConfidenceNote::OneMinusDelta
        } else {
            ConfidenceNote::OneMinusTwoDelta
        },
    })
}

/// Mean of gradient outer products, `M ≈ E[∇f∇fᵀ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentMatrix<T> {
    pub m: SymMatrix<T>,
    pub n_samples: usize,
}

impl<T: Scalar> SecondMomentMatrix<T> {
    pub fn from_grads(grads: &[Vec<T>]) -> Result<Self> {
        Self::from_weighted(grads.iter().map(|g| (T::one(), g.as_slice())))
    }

    /// `Σ wᵢ gᵢgᵢᵀ / Σ wᵢ`, for exact expectations over finite supports.
    pub fn from_weighted<'a>(items: impl IntoIterator<Item = (T, &'a [T])>) -> Result<Self>
    where
        T: 'a,
    {
        let mut m: Option<SymMatrix<T>> = None;
        let mut total = T::zero();
        let mut count = 0;
        for (w, g) in items {
            let acc = m.get_or_insert_with(|| SymMatrix::zeros(g.len()));
            if acc.dim() != g.len() {
                return Err(Error::Usage("gradients of differing dimension".into()));
            }
            acc.add_outer(w, g);
            total = total + w;
            count += 1;
        }
        let sum = m.ok_or_else(|| Error::Usage("no gradients supplied".into()))?;
        if !(total > T::zero()) {
            return Err(Error::Usage("gradient weights sum to zero".into()));
        }
        let mut m = SymMatrix::zeros(sum.dim());
        m.add_scaled(T::one() / total, &sum);
        Ok(Self { m, n_samples: count })
    }
}

/// `H = I + (σ/α)M` with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct HNorm<T> {
    pub second_moment: SecondMomentMatrix<T>,
    pub h: SymMatrix<T>,
    chol: Vec<Vec<T>>,
}

impl<T: Scalar> HNorm<T> {
    pub fn new(second_moment: SecondMomentMatrix<T>, sigma: T, alpha: T) -> Result<Self> {
        check_positive("alpha", alpha)?;
        check_positive("sigma", sigma)?;
        let mut h = SymMatrix::identity(second_moment.m.dim());
        h.add_scaled(sigma / alpha, &second_moment.m);
        let chol = h.cholesky()?;
        Ok(Self { second_moment, h, chol })
    }

    /// `√(vᵀHv)`
    pub fn h_norm(&self, v: &[T]) -> T {
        self.h.quad_form(v).max(T::zero()).sqrt()
    }

    /// `√(uᵀH⁻¹u)`
    pub fn dual_norm(&self, u: &[T]) -> T {
        let x = cholesky_solve(&self.chol, u);
        dot(u, &x).max(T::zero()).sqrt()
    }
}

/// Builds `H = I + (σ/α)·mean(gᵢgᵢᵀ)`.
pub fn empirical_h<T: Scalar>(grads_at_wstar: &[Vec<T>], sigma: T, alpha: T) -> Result<HNorm<T>> {
    HNorm::new(SecondMomentMatrix::from_grads(grads_at_wstar)?, sigma, alpha)
}
