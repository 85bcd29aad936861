mod common;

use common::{analytic_beta, dist, grid_argmin_disk, norm};
use expconc::bounds::*;
use expconc::calculus::{check_lemma1, expconcavity_check, max_beta_estimate, CertStatus, SamplingPlan};
use expconc::experiments::*;
use expconc::linalg::{sub, SymMatrix};
use expconc::problem::*;
use expconc::rng::{stream, uniform_in_ball};
use expconc::solver::*;
use proptest::prelude::*;
use rand::Rng;

fn builtin_losses() -> Vec<Loss<f64>> {
    vec![Loss::Square, Loss::Logistic, Loss::SquaredHinge]
}

fn ball_point(seed: u64, tag: u64, d: usize, r: f64) -> Vec<f64> {
    uniform_in_ball(&mut stream(seed, &[tag]), d, r)
}

fn sample_z(seed: u64, d: usize) -> Sample<f64> {
    let mut rng = stream(seed, &[99]);
    let x = uniform_in_ball(&mut rng, d, 1.0);
    let y: f64 = rng.random_range(-1.0..=1.0);
    Sample::new(x, y)
}

/// Constants from the analytic β of each built-in loss on the unit ball.
fn builtin_constants(loss: &Loss<f64>, d: usize) -> Constants<f64> {
    let dom = Domain::new(1.0, d).unwrap();
    let beta = analytic_beta(loss, 1.0, 1.0);
    let l = loss.default_smoothness(1.0).unwrap();
    derive_constants(loss, &dom, beta, l, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradients_match_central_differences(seed in any::<u64>(), d in 1usize..6) {
        let w = ball_point(seed, 1, d, 0.95);
        let z = sample_z(seed, d);
        for loss in builtin_losses() {
            let g = loss.grad(&w, &z);
            let h = 1e-6;
            let fd: Vec<f64> = (0..d)
                .map(|i| {
                    let mut a = w.clone();
                    let mut b = w.clone();
                    a[i] += h;
                    b[i] -= h;
                    (loss.eval(&a, &z) - loss.eval(&b, &z)) / (2.0 * h)
                })
                .collect();
            prop_assert!(dist(&g, &fd) / (1.0 + norm(&g)) <= 1e-5, "{}", loss.name());
        }
    }

    #[test]
    fn hessians_are_symmetric_psd(seed in any::<u64>(), d in 1usize..6) {
        let w = ball_point(seed, 2, d, 1.0);
        let z = sample_z(seed, d);
        for loss in builtin_losses() {
            let h = loss.hess(&w, &z).unwrap();
            prop_assert!(h.asymmetry() == 0.0);
            prop_assert!(h.min_eigen().0 >= -1e-12);
        }
    }

    #[test]
    fn smoothness_witness(seed in any::<u64>(), d in 1usize..6) {
        let w = ball_point(seed, 3, d, 1.0);
        let u = ball_point(seed, 4, d, 1.0);
        let z = sample_z(seed, d);
        for loss in builtin_losses() {
            let l = loss.default_smoothness(1.0).unwrap();
            let (fu, gu) = loss.eval_grad(&u, &z);
            let diff = sub(&w, &u);
            let upper = fu + expconc::linalg::dot(&gu, &diff) + 0.5 * l * norm(&diff).powi(2) + 1e-10;
            prop_assert!(loss.eval(&w, &z) <= upper, "{}", loss.name());
        }
    }

    #[test]
    fn regularizers_are_convex(seed in any::<u64>(), t in 0.0f64..=1.0, lambda in 0.0f64..3.0) {
        let u = ball_point(seed, 5, 4, 2.0);
        let v = ball_point(seed, 6, 4, 2.0);
        let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        for reg in [Regularizer::Zero, Regularizer::L1(lambda), Regularizer::L2Squared(lambda)] {
            prop_assert!(reg.eval(&mix) <= t * reg.eval(&u) + (1.0 - t) * reg.eval(&v) + 1e-12);
        }
    }

    #[test]
    fn derived_sigma_formula(g in 0.01f64..10.0, r in 0.1f64..5.0, beta in 1e-4f64..10.0) {
        let dom = Domain::new(r, 2).unwrap();
        let c = derive_constants(&Loss::Square, &dom, beta, 1.0, Some(g)).unwrap();
        prop_assert_eq!(c.sigma, 0.5 * (1.0 / (8.0 * g * r)).min(beta));
        prop_assert!(c.sigma > 0.0 && c.g > 0.0 && c.l > 0.0 && c.beta > 0.0);
    }

    #[test]
    fn composite_eval_is_duplication_invariant(seed in any::<u64>(), k in 1usize..5) {
        let data: Vec<Sample<f64>> = (0..7).map(|i| sample_z(seed ^ i, 3)).collect();
        let rep: Vec<Sample<f64>> = data.iter().cycle().take(7 * k).cloned().collect();
        let w = ball_point(seed, 7, 3, 1.0);
        let reg = Regularizer::L1(0.2);
        let a = composite_eval(&Loss::Logistic, &reg, &data, &w).unwrap();
        let b = composite_eval(&Loss::Logistic, &reg, &rep, &w).unwrap();
        prop_assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
    }
}

#[test]
fn lipschitz_witness_for_builtin_losses() {
    for loss in builtin_losses() {
        let c = builtin_constants(&loss, 3);
        let mut rng = stream(17, &[loss.kind() as u64]);
        for _ in 0..1000 {
            let w = uniform_in_ball(&mut rng, 3, 1.0);
            let x = uniform_in_ball(&mut rng, 3, 1.0);
            let y: f64 = rng.random_range(-1.0..=1.0);
            let g = loss.grad(&w, &Sample::new(x, y));
            assert!(norm(&g) <= c.g * (1.0 + 1e-6), "{} {}", loss.name(), norm(&g));
        }
    }
}

#[test]
fn analytic_beta_is_certified_and_tight() {
    let dom = Domain::new(1.0, 2).unwrap();
    let plan = SamplingPlan::default().with_counts(128, 32);
    for loss in builtin_losses() {
        let b = analytic_beta(&loss, 1.0, 1.0);
        let cert = expconcavity_check(&loss, b, &dom, &plan).unwrap();
        assert_eq!(cert.status, CertStatus::Certified, "{}", loss.name());
        let est = max_beta_estimate(&loss, &dom, &plan).unwrap();
        assert!(est >= b && est <= b * (1.0 + 1e-6), "{} {est} vs {b}", loss.name());
    }
}

#[test]
fn lemma1_holds_for_certified_builtins() {
    for loss in builtin_losses() {
        let c = builtin_constants(&loss, 3);
        let mut rng = stream(23, &[loss.kind() as u64]);
        let triples: Vec<_> = (0..1000)
            .map(|_| {
                let w = uniform_in_ball(&mut rng, 3, 1.0);
                let wp = uniform_in_ball(&mut rng, 3, 1.0);
                let x = uniform_in_ball(&mut rng, 3, 1.0);
                let y: f64 = rng.random_range(-1.0..=1.0);
                (w, wp, Sample::new(x, y))
            })
            .collect();
        let rep = check_lemma1(&loss, &c, &triples).unwrap();
        assert!(rep.pass, "{} min residual {}", loss.name(), rep.min_residual);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn certification_is_monotone_in_beta(b1 in 1e-4f64..0.5, frac in 0.0f64..1.0, seed in 0u64..1000) {
        let dom = Domain::new(1.0, 2).unwrap();
        let plan = SamplingPlan { seed, ..SamplingPlan::default().with_counts(64, 16) };
        let b0 = b1 * frac + 1e-6;
        let c1 = expconcavity_check(&Loss::Square, b1, &dom, &plan).unwrap();
        if c1.status == CertStatus::Certified {
            let c0 = expconcavity_check(&Loss::Square, b0, &dom, &plan).unwrap();
            prop_assert_eq!(c0.status, CertStatus::Certified);
        }
    }

    #[test]
    fn certificates_reproduce_bit_for_bit(seed in any::<u64>(), beta in 0.05f64..0.3) {
        let dom = Domain::new(1.0, 3).unwrap();
        let plan = SamplingPlan { seed, ..SamplingPlan::default().with_counts(48, 16) };
        let a = expconcavity_check(&Loss::Square, beta, &dom, &plan).unwrap();
        let b = expconcavity_check(&Loss::Square, beta, &dom, &plan).unwrap();
        prop_assert_eq!(a, b);
    }
}

fn random_dataset(seed: u64, n: usize, d: usize) -> Vec<Sample<f64>> {
    let mut rng = stream(seed, &[31]);
    (0..n)
        .map(|_| {
            let x = uniform_in_ball(&mut rng, d, 1.0);
            let y: f64 = rng.random_range(-1.0..=1.0);
            Sample::new(x, y)
        })
        .collect()
}

fn reg_strategy() -> impl Strategy<Value = Regularizer<f64>> {
    prop_oneof![
        Just(Regularizer::Zero),
        (0.0f64..0.3).prop_map(Regularizer::L1),
        (0.0f64..1.0).prop_map(Regularizer::L2Squared),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn solver_invariants(
        seed in any::<u64>(),
        d in 1usize..7,
        n in 1usize..40,
        r in 0.2f64..2.0,
        reg in reg_strategy(),
        loss_idx in 0usize..3,
    ) {
        let loss = builtin_losses().swap_remove(loss_idx);
        let dom = Domain::new(r, d).unwrap();
        let spec = ProblemSpec::new(loss.clone(), reg.clone(), dom, 0.1, 2.0, Some(1.0)).unwrap();
        let data = random_dataset(seed, n, d);
        let cfg = SolverConfig { record_trace: true, ..SolverConfig::default() };
        let res = solve_erm(&spec, &data, &cfg).unwrap();

        // feasibility
        prop_assert!(norm(&res.w_hat) <= r + 1e-12);
        // monotone descent
        for pair in res.trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12 * (1.0 + pair[0].abs()), "{:?}", pair);
        }
        prop_assert!(res.converged && res.residual <= cfg.tol);

        // fixed point
        let obj = EmpiricalObjective::new(&loss, &data).unwrap();
        let (_, g) = obj.eval_grad(&res.w_hat);
        let eta = res.step;
        let trial: Vec<f64> = res.w_hat.iter().zip(&g).map(|(w, gi)| w - eta * gi).collect();
        let fixed = combined_prox(&reg, &dom, &trial, eta, &cfg).unwrap();
        prop_assert!(dist(&fixed, &res.w_hat) / eta <= 10.0 * cfg.tol);

        // global optimality against feasible probes
        let mut rng = stream(seed, &[77]);
        for _ in 0..100 {
            let u = uniform_in_ball(&mut rng, d, r);
            let pu = composite_eval(&loss, &reg, &data, &u).unwrap();
            prop_assert!(pu >= res.objective - 1e-6);
        }
    }

    #[test]
    fn erm_reductions(seed in any::<u64>(), d in 1usize..5, n in 2usize..20, k in 2usize..4) {
        let spec = ProblemSpec::square(Regularizer::Zero, 1.0, d).unwrap();
        let data = random_dataset(seed, n, d);
        let cfg = SolverConfig::default();
        let base = solve_erm(&spec, &data, &cfg).unwrap();

        let rep: Vec<Sample<f64>> = data.iter().cycle().take(n * k).cloned().collect();
        let r = solve_erm(&spec, &rep, &cfg).unwrap();
        prop_assert!(dist(&r.w_hat, &base.w_hat) <= 1e-6);

        let l1 = ProblemSpec::square(Regularizer::L1(0.0), 1.0, d).unwrap();
        let r = solve_erm(&l1, &data, &cfg).unwrap();
        prop_assert!(dist(&r.w_hat, &base.w_hat) <= 1e-6);

        let r = solve_penalized_erm(&spec, &data, &Regularizer::Zero, &cfg).unwrap();
        prop_assert_eq!(r.w_hat, base.w_hat);
    }
}

fn prox_oracle(reg: &Regularizer<f64>, v: [f64; 2], eta: f64, r: f64) -> [f64; 2] {
    grid_argmin_disk(
        |a, b| ((a - v[0]).powi(2) + (b - v[1]).powi(2)) / (2.0 * eta) + reg.eval(&[a, b]),
        r,
    )
}

#[test]
fn combined_prox_matches_grid_oracle() {
    let cfg = SolverConfig::default();
    let mut rng = stream(41, &[]);
    for kind in 0..3 {
        for _ in 0..50 {
            let lambda: f64 = rng.random_range(0.0..2.0);
            let reg = match kind {
                0 => Regularizer::Zero,
                1 => Regularizer::L1(lambda),
                _ => Regularizer::L2Squared(lambda),
            };
            let r: f64 = rng.random_range(0.2..2.0);
            let eta: f64 = rng.random_range(0.1..2.0);
            let v = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let dom = Domain::new(r, 2).unwrap();
            let got = combined_prox(&reg, &dom, &v, eta, &cfg).unwrap();
            let want = prox_oracle(&reg, v, eta, r);
            assert!(dist(&got, &want) <= 1e-6, "{reg:?} v={v:?} eta={eta} r={r}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn penalized_solution_approaches_erm() {
    let spec = ProblemSpec::square(Regularizer::Zero, 1.0, 5).unwrap();
    let wbar = desk_wbar(5, 0.7);
    let dist_ = make_distribution(5, 50, 1.0, &wbar, 0.3, 1).unwrap();
    let data = dist_.sample(&mut stream(5, &[]), 10_000);
    let cfg = SolverConfig::default();
    let plain = solve_erm(&spec, &data, &cfg).unwrap();
    let pen = solve_penalized_erm(&spec, &data, &Regularizer::L2Squared(1.0), &cfg).unwrap();
    assert!(dist(&plain.w_hat, &pen.w_hat) <= 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lemma4_equals_bernstein(
        g in 0.01f64..10.0, alpha in 1e-4f64..10.0, d in 1usize..50,
        sigma in 1e-4f64..1.0, n in 1usize..100_000, delta in 1e-6f64..0.999,
    ) {
        let a = grad_concentration_bound(g, alpha, d, sigma, n, delta);
        let b = vector_bernstein(g, alpha * d as f64 / sigma, n, delta);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn theorem1_is_affine_in_d(
        l in 0.1f64..5.0, g in 0.1f64..5.0, r in 0.1f64..5.0, d in 1usize..30,
        sigma in 1e-3f64..1.0, n in 1usize..10_000, delta in 1e-4f64..0.9,
    ) {
        let (v1, _) = theorem1_bound(l, g, r, d, sigma, n, delta);
        let (v2, _) = theorem1_bound(l, g, r, 2 * d, sigma, n, delta);
        let nn = n as f64;
        let lg = (2.0 / delta).ln();
        let dd = d as f64;
        let want = (64.0 * l * r * r + 8.0 * l * r / nn) * dd * (6.0 * r * nn).ln() / nn
            + 12.0 * dd * lg / (nn * sigma);
        prop_assert!(((v2 - v1) - want).abs() <= 1e-9 * v2);
    }

    #[test]
    fn theorem2_monotone_in_b(b1 in 0.0f64..10.0, b2 in 0.0f64..10.0, n in 1usize..1000) {
        let lo = b1.min(b2);
        let hi = b1.max(b2);
        prop_assert!(theorem2_bound(1.0, 1.0, 1.0, 3, 0.1, n, 0.1, lo) <= theorem2_bound(1.0, 1.0, 1.0, 3, 0.1, n, 0.1, hi));
    }

    #[test]
    fn h_norm_holder(seed in any::<u64>(), d in 1usize..6, sigma in 0.01f64..1.0, alpha in 0.01f64..1.0) {
        let mut rng = stream(seed, &[]);
        let grads: Vec<Vec<f64>> = (0..8).map(|_| uniform_in_ball(&mut rng, d, 2.0)).collect();
        let h = empirical_h(&grads, sigma, alpha).unwrap();
        prop_assert!(h.second_moment.m.asymmetry() <= 1e-12);
        prop_assert!(h.second_moment.m.min_eigen().0 >= -1e-10);
        for _ in 0..100 {
            let v = uniform_in_ball(&mut rng, d, 3.0);
            let u = uniform_in_ball(&mut rng, d, 3.0);
            let inner: f64 = v.iter().zip(&u).map(|(a, b)| a * b).sum();
            prop_assert!(inner.abs() <= h.h_norm(&v) * h.dual_norm(&u) * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn rate_fit_is_affine_equivariant(c in 1e-3f64..1e3, slope in -2.0f64..0.0, seed in any::<u64>()) {
        let mut rng = stream(seed, &[]);
        let pts: Vec<(usize, f64)> = [100usize, 300, 1000, 3000]
            .iter()
            .map(|&n| (n, (n as f64).powf(slope) * rng.random_range(0.8..1.2)))
            .collect();
        let scaled: Vec<(usize, f64)> = pts.iter().map(|&(n, v)| (n, c * v)).collect();
        let a = fit_points(&pts, RateStatistic::MedianExcess).unwrap();
        let b = fit_points(&scaled, RateStatistic::MedianExcess).unwrap();
        prop_assert!((a.slope - b.slope).abs() <= 1e-9);
        prop_assert!((b.intercept - a.intercept - c.ln()).abs() <= 1e-9);
    }
}

#[test]
fn bounds_monotone_on_parameter_grid() {
    for &d in &[1usize, 3, 10] {
        for &delta in &[0.01, 0.1, 0.5] {
            for &n in &[2usize, 10, 100, 1000] {
                let (l, g, r, s) = (2.0, 4.0, 1.0, 0.0625);
                let t = |n: usize, d: usize, delta: f64| theorem1_bound(l, g, r, d, s, n, delta).0;
                let l4 = |n: usize, d: usize, delta: f64| grad_concentration_bound(g, 0.1, d, s, n, delta);
                let l5 = |n: usize, d: usize, delta: f64| net_deviation_bound(l, g, delta, d, r, 0.1, n, 2.0, 0.5);
                for f in [&t as &dyn Fn(usize, usize, f64) -> f64, &l4, &l5] {
                    let v = f(n, d, delta);
                    assert!(v.is_finite() && v >= 0.0);
                    assert!(f(2 * n, d, delta) < v);
                    assert!(f(n, d + 1, delta) >= v);
                    assert!(f(n, d, delta / 2.0) > v);
                }
            }
        }
    }
}

#[test]
fn net_deviation_monotone_in_dist_and_excess() {
    let base = net_deviation_bound(1.0, 1.0, 0.1, 3, 1.0, 0.01, 100, 0.5, 0.2);
    assert!(net_deviation_bound(1.0, 1.0, 0.1, 3, 1.0, 0.01, 100, 0.6, 0.2) > base);
    assert!(net_deviation_bound(1.0, 1.0, 0.1, 3, 1.0, 0.01, 100, 0.5, 0.3) > base);
}

#[test]
fn population_objective_invariances() {
    let wbar = desk_wbar(3, 0.5);
    let d1 = make_distribution(3, 20, 1.0, &wbar, 0.2, 9).unwrap();
    let spec = ProblemSpec::<f64>::square(Regularizer::Zero, 1.0, 3).unwrap();
    let mut atoms = d1.atoms().to_vec();
    atoms.reverse();
    let d2 = FiniteDistribution::uniform(atoms).unwrap();
    let point = FiniteDistribution::new(vec![d1.atoms()[3].clone()], vec![1.0]).unwrap();
    let mut rng = stream(3, &[]);
    for _ in 0..50 {
        let w = uniform_in_ball(&mut rng, 3, 1.0);
        let a = population_objective(&d1, &spec).eval(&w);
        let b = population_objective(&d2, &spec).eval(&w);
        assert!((a - b).abs() <= 1e-14);
        let p = population_objective(&point, &spec).eval(&w);
        assert_eq!(p, Loss::Square.eval(&w, &d1.atoms()[3]));
    }
}

#[test]
fn summary_edge_cases() {
    let recs: Vec<TrialRecord> = [0.3, 0.1, 0.2]
        .iter()
        .enumerate()
        .map(|(i, &e)| TrialRecord {
            n: 64,
            d: 2,
            trial: i,
            seed: i as u64,
            excess_risk: e,
            solver_residual: 0.0,
            wall_ms: 0.0,
            valid: true,
        })
        .collect();
    let c = builtin_constants(&Loss::Square, 2);
    let s = summarize(&recs, 1.0, &c, None);
    assert_eq!(s.per_n[0].quantile, 0.1);
    assert!(s.rate_median.is_none());
    assert_eq!(s.violations, 0);
}

#[test]
fn second_moment_rejects_mixed_dimensions() {
    assert!(SecondMomentMatrix::from_grads(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    let m = SecondMomentMatrix::from_grads(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert_eq!(m.m, SymMatrix::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]));
}
