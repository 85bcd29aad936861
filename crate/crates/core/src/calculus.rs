//! Numerical checks of the pointwise conditions behind the fast-rate
//! analysis: the exp-concavity PSD condition `∇²f ⪰ β∇f∇fᵀ`, the curvature
//! lower bound with constant σ, and the first-order optimality inequality
//! of the composite problem.
//!
//! The exp-concavity condition quantifies over every `(w, z)`, so a
//! [`Certificate`] is a sampling heuristic: it reports what was checked,
//! not a proof.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, sub, SymMatrix};
use crate::problem::{Constants, Domain, Loss, Regularizer, Sample};
use crate::scalar::Scalar;

/// Region the `w` points are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleRegion<T> {
    /// The domain ball.
    Ball,
    /// An axis-aligned box inside the domain ball.
    Box { lo: Vec<T>, hi: Vec<T> },
}

/// Which `(w, z)` points a certificate inspects.
///
/// `w` points: the `±R·eᵢ` axis points, a quarter of the budget on the
/// boundary sphere and the rest interior, all from a shifted Halton
/// sequence. `z` points: `x = ±eᵢ` paired with `y = ±y_max`, boundary and
/// interior features with labels spread over `[−y_max, y_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan<T> {
    pub w_points: usize,
    pub z_points: usize,
    pub y_max: T,
    pub seed: u64,
    pub tolerance: T,
    pub region: SampleRegion<T>,
}

impl<T: Scalar> Default for SamplingPlan<T> {
    fn default() -> Self {
        Self {
            w_points: 512,
            z_points: 64,
            y_max: T::one(),
            seed: 0,
            tolerance: T::lit(1e-8),
            region: SampleRegion::Ball,
        }
    }
}

impl<T: Scalar> SamplingPlan<T> {
    pub fn with_y_max(mut self, y_max: T) -> Self {
        self.y_max = y_max;
        self
    }

    pub fn with_box(mut self, lo: Vec<T>, hi: Vec<T>) -> Self {
        self.region = SampleRegion::Box { lo, hi };
        self
    }

    pub fn with_counts(mut self, w_points: usize, z_points: usize) -> Self {
        self.w_points = w_points;
        self.z_points = z_points;
        self
    }

    /// The `w` points for `domain`, in a fixed order.
    pub fn w_points(&self, domain: &Domain<T>) -> Result<Vec<Vec<T>>> {
        let d = domain.dim();
        let r = domain.radius();
        match &self.region {
            SampleRegion::Ball => Ok(ball_points(d, r, self.w_points, self.seed)),
            SampleRegion::Box { lo, hi } => {
                if lo.len() != d || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| a > b) {
                    return Err(Error::Parameter("sampling box does not match the domain".into()));
                }
                let far: Vec<T> = lo.iter().zip(hi).map(|(a, b)| a.abs().max(b.abs())).collect();
                if norm(&far) > r * (T::one() + T::lit(1e-12)) {
                    return Err(Error::Parameter("sampling box is not contained in the domain ball".into()));
                }
                Ok(box_points(lo, hi, self.w_points, self.seed))
            }
        }
    }

    /// The `z` points for features in the unit ball, in a fixed order.
    pub fn z_points(&self, d: usize) -> Vec<Sample<T>> {
        let mut out = Vec::with_capacity(self.z_points.max(4 * d));
        let ym = self.y_max;
        for i in 0..d {
            for s in [T::one(), -T::one()] {
                let mut x = vec![T::zero(); d];
                x[i] = s;
                out.push(Sample::new(x.clone(), ym));
                out.push(Sample::new(x, -ym));
            }
        }
        let remaining = self.z_points.saturating_sub(out.len());
        let seq = halton_unit(d + 1, remaining, self.seed ^ 0x5bd1_e995);
        let n_boundary = remaining / 4;
        for (k, u) in seq.into_iter().enumerate() {
            let mut x = cube_to_ball(&u[..d]);
            let y = if k < n_boundary {
                let nx = norm(&x);
                if nx > T::zero() {
                    x.iter_mut().for_each(|v| *v = *v / nx);
                }
                if k % 2 == 0 { ym } else { -ym }
            } else {
                ym * (T::lit(2.0) * u[d] - T::one())
            };
            out.push(Sample::new(x, y));
        }
        out
    }
}

/// Shifted Halton sequence in `[0,1)^dim`.
fn halton_unit<T: Scalar>(dim: usize, count: usize, seed: u64) -> Vec<Vec<T>> {
    let primes = first_primes(dim);
    let shift: Vec<f64> = (0..dim)
        .map(|j| (crate::rng::derive_seed(seed, &[j as u64]) >> 11) as f64 / (1u64 << 53) as f64)
        .collect();
    (1..=count)
        .map(|k| {
            (0..dim)
                .map(|j| {
                    let v = radical_inverse(k as u64, primes[j]) + shift[j];
                    T::lit(v - v.floor())
                })
                .collect()
        })
        .collect()
}

fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while k > 0 {
        out += (k % base) as f64 * inv;
        k /= base;
        inv /= base as f64;
    }
    out
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| !c.is_multiple_of(p)) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

/// Radial map from `[0,1)^d` onto the unit ball: `p = 2u − 1` is scaled by
/// `‖p‖∞ / ‖p‖₂`, sending the cube surface onto the sphere.
fn cube_to_ball<T: Scalar>(u: &[T]) -> Vec<T> {
    let p: Vec<T> = u.iter().map(|&v| T::lit(2.0) * v - T::one()).collect();
    let n2 = norm(&p);
    if n2 == T::zero() {
        return p;
    }
    let ninf = p.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    p.iter().map(|&v| v * ninf / n2).collect()
}

fn ball_points<T: Scalar>(d: usize, r: T, budget: usize, seed: u64) -> Vec<Vec<T>> {
    let mut out = Vec::with_capacity(budget.max(2 * d + 1));
    out.push(vec![T::zero(); d]);
    for i in 0..d {
        for s in [r, -r] {
            let mut w = vec![T::zero(); d];
            w[i] = s;
            out.push(w);
        }
    }
    let remaining = budget.saturating_sub(out.len());
    let n_boundary = remaining / 4;
    for (k, u) in halton_unit::<T>(d, remaining, seed).into_iter().enumerate() {
        let p = cube_to_ball(&u);
        let w = if k < n_boundary {
            let n = norm(&p);
            if n > T::zero() {
                p.iter().map(|&v| v / n * r).collect()
            } else {
                p
            }
        } else {
            p.iter().map(|&v| v * r).collect()
        };
        out.push(w);
    }
    out
}

fn box_points<T: Scalar>(lo: &[T], hi: &[T], budget: usize, seed: u64) -> Vec<Vec<T>> {
    let d = lo.len();
    let mut out = Vec::new();
    if d <= 10 {
        for mask in 0..(1usize << d) {
            out.push((0..d).map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }).collect());
        }
    }
    let remaining = budget.saturating_sub(out.len());
    for u in halton_unit::<T>(d, remaining, seed) {
        out.push((0..d).map(|i| lo[i] + (hi[i] - lo[i]) * u[i]).collect());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertStatus {
    Certified,
    Refuted,
}

/// Point and direction where `∇²f − β∇f∇fᵀ` is most negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness<T> {
    pub w: Vec<T>,
    pub z: Sample<T>,
    pub direction: Vec<T>,
    pub quad_form: T,
}

impl<T: Scalar> Witness<T> {
    /// `vᵀ(∇²f − β∇f∇fᵀ)v` at the witness point for an arbitrary unit `v`.
    pub fn quad_form_along(&self, loss: &Loss<T>, beta: T, v: &[T]) -> Result<T> {
        let mut m = loss.hess(&self.w, &self.z)?;
        m.add_outer(-beta, &loss.grad(&self.w, &self.z));
        Ok(m.quad_form(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate<T> {
    pub beta: T,
    pub status: CertStatus,
    pub witness: Option<Witness<T>>,
    pub points_checked: usize,
    pub min_eig_seen: T,
    pub tolerance: T,
    pub w_points: usize,
    pub z_points: usize,
    /// Always `"sampled"`: the check covers finitely many points only.
    pub method: String,
}

/// Hessian and gradient at every plan point, reusable across β values.
struct PointCache<T> {
    ws: Vec<Vec<T>>,
    zs: Vec<Sample<T>>,
    /// `[w_index][z_index] -> (hess, grad)`
    entries: Vec<Vec<(SymMatrix<T>, Vec<T>)>>,
}

impl<T: Scalar> PointCache<T> {
    fn build(loss: &Loss<T>, domain: &Domain<T>, plan: &SamplingPlan<T>) -> Result<Self> {
        if !loss.has_hessian() {
            return Err(Error::Capability(format!(
                "loss '{}' does not provide a Hessian",
                loss.name()
            )));
        }
        let ws = plan.w_points(domain)?;
        let zs = plan.z_points(domain.dim());
        let entries = ws
            .par_iter()
            .map(|w| {
                zs.iter()
                    .map(|z| Ok((loss.hess(w, z)?, loss.grad(w, z))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ws, zs, entries })
    }

    fn certify(&self, beta: T, tolerance: T) -> Certificate<T> {
        struct PointResult<T> {
            lam: T,
            zi: usize,
            dir: Vec<T>,
            violated: bool,
        }
        // per-w reduction in parallel, then a sequential first-wins argmin
        let per_w: Vec<(PointResult<T>, Option<PointResult<T>>)> = self
            .entries
            .par_iter()
            .map(|row| {
                let mut seen: Option<PointResult<T>> = None;
                let mut worst_violation: Option<PointResult<T>> = None;
                for (zi, (h, g)) in row.iter().enumerate() {
                    let mut m = h.clone();
                    m.add_outer(-beta, g);
                    let (lam, dir) = m.min_eigen();
                    let violated = !(lam >= -point_threshold(h, g, beta, tolerance));
                    let better = |cur: &Option<PointResult<T>>| cur.as_ref().is_none_or(|c| lam < c.lam);
                    if violated && better(&worst_violation) {
                        worst_violation = Some(PointResult { lam, zi, dir: dir.clone(), violated });
                    }
                    if better(&seen) {
                        seen = Some(PointResult { lam, zi, dir, violated });
                    }
                }
                (seen.expect("at least one z point"), worst_violation)
            })
            .collect();

        let mut min_eig = T::infinity();
        let mut witness_at: Option<(usize, PointResult<T>)> = None;
        for (wi, (seen, violation)) in per_w.into_iter().enumerate() {
            min_eig = min_eig.min(seen.lam);
            if let Some(v) = violation {
                if witness_at.as_ref().is_none_or(|(_, c)| v.lam < c.lam) {
                    witness_at = Some((wi, v));
                }
            }
        }
        let status = if witness_at.is_some() {
            CertStatus::Refuted
        } else {
            CertStatus::Certified
        };
        let witness = witness_at.map(|(wi, p)| {
            debug_assert!(p.violated);
            let direction = canonical_sign(p.dir);
            let (h, g) = &self.entries[wi][p.zi];
            let mut m = h.clone();
            m.add_outer(-beta, g);
            Witness {
                w: self.ws[wi].clone(),
                z: self.zs[p.zi].clone(),
                quad_form: m.quad_form(&direction),
                direction,
            }
        });
        Certificate {
            beta,
            status,
            witness,
            points_checked: self.ws.len() * self.zs.len(),
            min_eig_seen: min_eig,
            tolerance,
            w_points: self.ws.len(),
            z_points: self.zs.len(),
            method: "sampled".into(),
        }
    }
}

/// Refutation threshold at one point: `tolerance` caps it, below β = 1 it
/// shrinks to `tolerance·β` plus a floating-point guard proportional to
/// the magnitude of the entries of `∇²f` and `β∇f∇fᵀ`.
fn point_threshold<T: Scalar>(h: &SymMatrix<T>, g: &[T], beta: T, tolerance: T) -> T {
    let d = T::from_usize_lossy(h.dim());
    let h_scale = (0..h.dim())
        .flat_map(|i| (0..h.dim()).map(move |j| (i, j)))
        .fold(T::zero(), |m, (i, j)| m.max(h.get(i, j).abs()));
    let guard = T::lit(16.0) * d * T::epsilon() * (h_scale + beta * dot(g, g));
    tolerance.min(tolerance * beta + guard)
}

/// Flips a direction so its largest-magnitude entry is positive.
fn canonical_sign<T: Scalar>(mut v: Vec<T>) -> Vec<T> {
    let mut pivot = T::zero();
    for &x in &v {
        if x.abs() > pivot.abs() {
            pivot = x;
        }
    }
    if pivot < T::zero() {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Checks `∇²f(w,z) − β∇f(w,z)∇f(w,z)ᵀ ⪰ 0` on every plan point.
///
/// Refuted iff some point's smallest eigenvalue falls below
/// `−min(tol, tol·β + rounding guard)`; the witness is the most negative
/// such point. A certified result therefore has `min_eig_seen ≥ −tol`.
pub fn expconcavity_check<T: Scalar>(
    loss: &Loss<T>,
    beta: T,
    domain: &Domain<T>,
    plan: &SamplingPlan<T>,
) -> Result<Certificate<T>> {
    if !(beta > T::zero()) {
        return Err(Error::Parameter(format!("beta must be positive, got {beta}")));
    }
    Ok(PointCache::build(loss, domain, plan)?.certify(beta, plan.tolerance))
}

pub const BETA_SEARCH_LO: f64 = 1e-9;
pub const BETA_SEARCH_HI: f64 = 1e3;
pub const BETA_SEARCH_ITERS: usize = 40;

/// Largest β in `[1e−9, 1e3]` the plan certifies, by 40 bisection steps on
/// `log β`. Returns 0 if `1e−9` is already refuted.
pub fn max_beta_estimate<T: Scalar>(
    loss: &Loss<T>,
    domain: &Domain<T>,
    plan: &SamplingPlan<T>,
) -> Result<T> {
    let cache = PointCache::build(loss, domain, plan)?;
    let ok = |b: T| cache.certify(b, plan.tolerance).status == CertStatus::Certified;
    let mut lo = T::lit(BETA_SEARCH_LO);
    let mut hi = T::lit(BETA_SEARCH_HI);
    if !ok(lo) {
        return Ok(T::zero());
    }
    if ok(hi) {
        return Ok(hi);
    }
    for _ in 0..BETA_SEARCH_ITERS {
        let mid = (lo * hi).sqrt();
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Outcome of an inequality suite: the smallest residual and where it occurred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport<T> {
    pub min_residual: T,
    pub argmin: usize,
    pub checked: usize,
    /// Count of residuals below `−tolerance`.
    pub violations: usize,
    pub tolerance: T,
    pub pass: bool,
}

impl<T: Scalar> ResidualReport<T> {
    fn from_residuals(residuals: impl Iterator<Item = T>, tolerance: T) -> Self {
        let mut min_residual = T::infinity();
        let mut argmin = 0;
        let mut checked = 0;
        let mut violations = 0;
        for (i, r) in residuals.enumerate() {
            checked += 1;
            // NaN counts as a violation
            if !(r >= -tolerance) {
                violations += 1;
            }
            if r < min_residual || r.is_nan() {
                min_residual = r;
                argmin = i;
            }
        }
        Self {
            min_residual,
            argmin,
            checked,
            violations,
            tolerance,
            pass: violations == 0,
        }
    }
}

pub const LEMMA1_TOLERANCE: f64 = 1e-9;
pub const OPTIMALITY_TOLERANCE: f64 = 1e-7;

/// Residuals of the curvature lower bound
/// `f(w,z) ≥ f(w',z) + ⟨w−w', ∇f(w',z)⟩ + (σ/2)⟨w−w', ∇f(w',z)⟩²`
/// over `(w, w', z)` triples. Passes iff every residual is `≥ −1e−9`.
pub fn check_lemma1<T: Scalar>(
    loss: &Loss<T>,
    consts: &Constants<T>,
    triples: &[(Vec<T>, Vec<T>, Sample<T>)],
) -> Result<ResidualReport<T>> {
    let slack = T::lit(1e-12) * (T::one() + consts.radius);
    for (i, (w, wp, _)) in triples.iter().enumerate() {
        if norm(w) > consts.radius + slack || norm(wp) > consts.radius + slack {
            return Err(Error::Usage(format!("triple {i} has a point outside the domain ball")));
        }
    }
    let half_sigma = T::lit(0.5) * consts.sigma;
    let residuals = triples.iter().map(|(w, wp, z)| {
        let (fp, gp) = loss.eval_grad(wp, z);
        let lin = dot(&sub(w, wp), &gp);
        loss.eval(w, z) - (fp + lin + half_sigma * lin * lin)
    });
    Ok(ResidualReport::from_residuals(residuals, T::lit(LEMMA1_TOLERANCE)))
}

/// Residuals of `⟨w − w*, ∇F(w*)⟩ ≥ R(w*) − R(w)` over probe points.
/// Passes iff every residual is `≥ −1e−7`.
pub fn check_optimality_inequality<T: Scalar>(
    pop_grad_at_wstar: &[T],
    reg: &Regularizer<T>,
    wstar: &[T],
    probes: &[Vec<T>],
) -> ResidualReport<T> {
    let r_star = reg.eval(wstar);
    let residuals = probes
        .iter()
        .map(|w| dot(&sub(w, wstar), pop_grad_at_wstar) - (r_star - reg.eval(w)));
    ResidualReport::from_residuals(residuals, T::lit(OPTIMALITY_TOLERANCE))
}
