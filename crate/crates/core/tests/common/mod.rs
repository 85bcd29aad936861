//! Independent oracles shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::{FRAC_PI_2, PI};

use expconc::linalg::SymMatrix;
use expconc::problem::{CustomLoss, Loss, Sample};

/// Minimizer of `phi` over the disk of radius `r` by a polar grid search
/// refined locally. The circle `ρ = r`, the origin and the coordinate axes
/// are always on the grid, so kinks of `‖·‖₁` and an active constraint do
/// not degrade the refinement.
pub fn grid_argmin_disk(phi: impl Fn(f64, f64) -> f64, r: f64) -> [f64; 2] {
    let eval = |rho: f64, th: f64| phi(rho * th.cos(), rho * th.sin());
    let mut rho_lo = 0.0;
    let mut rho_hi = r;
    let mut th_lo = -PI;
    let mut th_hi = PI;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for level in 0..40 {
        let n_rho = if level == 0 { 801 } else { 61 };
        let full_turn = th_hi - th_lo >= 2.0 * PI - 1e-12;
        let n_th = if full_turn { 801 } else { 61 };
        let mut rhos = linspace(rho_lo, rho_hi, n_rho);
        if rho_lo == 0.0 {
            rhos.push(0.0);
        }
        let mut ths = linspace(th_lo, th_hi, n_th);
        let k_lo = (th_lo / FRAC_PI_2).ceil() as i64;
        let k_hi = (th_hi / FRAC_PI_2).floor() as i64;
        ths.extend((k_lo..=k_hi).map(|k| k as f64 * FRAC_PI_2));
        for &rho in &rhos {
            for &th in &ths {
                let v = eval(rho, th);
                if v < best.0 {
                    best = (v, rho, th);
                }
            }
        }
        let (_, rb, tb) = best;
        let h_rho = (rho_hi - rho_lo) / (n_rho - 1) as f64;
        let h_th = (th_hi - th_lo) / (n_th - 1) as f64;
        let cell = h_rho.hypot(rho_hi * h_th);
        if cell < 1e-13 {
            break;
        }
        let w = 4.0 * cell;
        rho_lo = (rb - w).max(0.0);
        rho_hi = (rb + w).min(r);
        if rb > w {
            let half = (w / (rb - w)).asin().min(PI);
            th_lo = tb - half;
            th_hi = tb + half;
        } else {
            th_lo = -PI;
            th_hi = PI;
        }
    }
    let (_, rb, tb) = best;
    [rb * tb.cos(), rb * tb.sin()]
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n < 2 || a == b {
        return vec![a];
    }
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Minimizer of `(1/n)Σ(wᵀxᵢ − yᵢ)² + (λ/2)‖w‖²` over `‖w‖ ≤ r`: the
/// stationarity system `(2A + (λ+μ)I)w = 2b` with the multiplier `μ ≥ 0`
/// found by bisection on `‖w(μ)‖ = r`.
pub fn constrained_ridge(xs: &[Vec<f64>], ys: &[f64], lambda: f64, r: f64) -> Vec<f64> {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mut a = vec![vec![0.0; d]; d];
    let mut b = vec![0.0; d];
    for (x, &y) in xs.iter().zip(ys) {
        for i in 0..d {
            b[i] += 2.0 * y * x[i] / n;
            for j in 0..d {
                a[i][j] += 2.0 * x[i] * x[j] / n;
            }
        }
    }
    let solve = |mu: f64| {
        let mut m = a.clone();
        for (i, row) in m.iter_mut().enumerate() {
            row[i] += lambda + mu;
        }
        gauss_solve(m, b.clone())
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let w0 = solve(0.0);
    if norm(&w0) <= r {
        return w0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while norm(&solve(hi)) > r {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm(&solve(mid)) > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    solve(hi)
}

/// `P(w) = (w₁ − 1)² + w₂` as a sample-independent loss.
pub fn example2_combined() -> Loss<f64> {
    Loss::Custom(
        CustomLoss::new(
            "example2_combined",
            |w: &[f64], _: &Sample<f64>| (w[0] - 1.0).powi(2) + w[1],
            |w: &[f64], _: &Sample<f64>| vec![2.0 * (w[0] - 1.0), 1.0],
        )
        .with_hessian(|_: &[f64], _: &Sample<f64>| SymMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]])),
    )
}

/// `f(w) = (w₁ − 1)²` alone.
pub fn example2_smooth() -> Loss<f64> {
    Loss::Custom(
        CustomLoss::new(
            "example2_smooth",
            |w: &[f64], _: &Sample<f64>| (w[0] - 1.0).powi(2),
            |w: &[f64], _: &Sample<f64>| vec![2.0 * (w[0] - 1.0), 0.0],
        )
        .with_hessian(|_: &[f64], _: &Sample<f64>| SymMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]])),
    )
}

/// Largest β with `∇²f ⪰ β∇f∇fᵀ` on `‖w‖ ≤ r`, `‖x‖ ≤ 1`, `|y| ≤ y_max`,
/// from the one-dimensional margin analysis of each built-in loss.
pub fn analytic_beta(loss: &Loss<f64>, r: f64, y_max: f64) -> f64 {
    match loss.name() {
        // 2xxᵀ ⪰ 4β(wᵀx − y)²xxᵀ with |wᵀx − y| ≤ r + y_max
        "square" => 1.0 / (2.0 * (r + y_max).powi(2)),
        // σ(m) ≥ βσ(−m) for the margin m ≥ −r·y_max
        "logistic" => (-r * y_max).exp(),
        // 2 ≥ 4β(1 − m)² for the margin m ≥ −r·y_max
        "squared_hinge" => 1.0 / (2.0 * (1.0 + r * y_max).powi(2)),
        other => panic!("no analytic β for {other}"),
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
