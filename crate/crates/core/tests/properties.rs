use nalgebra::DVector;
use proptest::prelude::*;

use semidens::evaluation::{bias_variance, kl, mse_decomposition, normalize_log_density, skl};
use semidens::functionals::{log_normalizer, mu, v};
use semidens::inner::{NewtonConfig, PenalizedProblem, SampleInput};
use semidens::simulation::Truth;
use semidens::{
    choose_knots, fit_additive, fit_nonlinear, fit_transformation, make_rule, make_space, profile_objective,
    Domain, FitOptions, ModelSpec, NonlinearLink, OuterLambda, ParametricForm, RkhsSpace, SampleSet,
    SpaceFamily, SplineRep,
};

/// Composite Simpson rule with `2 k` panels on `[a, b]`.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, k: usize) -> f64 {
    let n = 2 * k;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `order`-th derivative by central differences with step `d`.
fn derivative(f: &impl Fn(f64) -> f64, x: f64, order: usize, d: f64) -> f64 {
    let start = x - 0.5 * order as f64 * d;
    let mut binom = 1.0;
    let mut total = 0.0;
    for j in 0..=order {
        let sign = if (order - j) % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * binom * f(start + j as f64 * d);
        binom = binom * (order - j) as f64 / (j + 1) as f64;
    }
    total / d.powi(order as i32)
}

/// Five-point Gauss–Legendre nodes and weights on [-1, 1].
const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// `int_0^1 (h^(m))^2`, with Gauss–Legendre panels inside each knot interval
/// so no difference stencil crosses a knot or leaves [0, 1].
fn numeric_penalty(h: &SplineRep, order: usize) -> f64 {
    let f = |x: f64| h.eval(x);
    let mut cuts = vec![0.0];
    cuts.extend(h.knots.iter().copied());
    cuts.push(1.0);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let panels = 4;
        let width = (w[1] - w[0]) / panels as f64;
        for p in 0..panels {
            let mid = w[0] + (p as f64 + 0.5) * width;
            for (t, wt) in GL5 {
                let x = mid + 0.5 * width * t;
                let d = 1e-3f64.min((x - w[0]).min(w[1] - x) / order as f64);
                total += 0.5 * width * wt * derivative(&f, x, order, d).powi(2);
            }
        }
    }
    total
}

fn near_normal(n: usize, seed: u64) -> Vec<f64> {
    Truth::NearNormal { a: 0.25, mu: 0.5, sigma: 0.2 }.sample(n, seed).unwrap()
}

fn unit_problem(space: RkhsSpace, data: &[f64], knots: &[f64]) -> PenalizedProblem {
    let rule = make_rule(&Domain::unit(), 200).unwrap();
    let input = SampleInput::evaluation(&space, knots, data, vec![0.0; data.len()], &rule, &vec![0.0; 200]);
    PenalizedProblem::new(&space, knots, vec![input]).unwrap()
}

const KNOTS: [f64; 6] = [0.07, 0.22, 0.41, 0.58, 0.77, 0.93];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn representer_matches_term_by_term(
        c in prop::collection::vec(-3.0f64..3.0, 6),
        d in -3.0f64..3.0,
        x in 0.0f64..1.0,
    ) {
        let space = make_space(SpaceFamily::Sobolev2Unit);
        let mut beta = vec![d];
        beta.extend(&c);
        let h = SplineRep::from_coefficients(space, KNOTS.to_vec(), &DVector::from_vec(beta));
        let direct = d * (x - 0.5) + KNOTS.iter().zip(&c).map(|(z, cj)| cj * space.rk(*z, x)).sum::<f64>();
        prop_assert!((h.eval_many(&[x])[0] - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        prop_assert!((h.eval(x) - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn penalty_matches_numeric_cubic_roughness(c in prop::collection::vec(-3.0f64..3.0, 6)) {
        let space = make_space(SpaceFamily::Sobolev2Unit);
        let mut beta = vec![0.7];
        beta.extend(&c);
        let h = SplineRep::from_coefficients(space, KNOTS.to_vec(), &DVector::from_vec(beta));
        let exact = h.roughness();
        let numeric = numeric_penalty(&h, 2);
        prop_assert!((exact - numeric).abs() <= 1e-4 * exact, "{} vs {}", exact, numeric);
    }

    #[test]
    fn penalty_matches_numeric_quintic_roughness(c in prop::collection::vec(-3.0f64..3.0, 6)) {
        let space = make_space(SpaceFamily::Sobolev3Unit);
        let h = SplineRep::from_coefficients(space, KNOTS.to_vec(), &DVector::from_vec(c));
        let exact = h.roughness();
        let numeric = numeric_penalty(&h, 3);
        prop_assert!((exact - numeric).abs() <= 1e-4 * exact, "{} vs {}", exact, numeric);
    }

    #[test]
    fn covariance_is_bilinear_and_bounded(
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        tilt in -3.0f64..3.0,
    ) {
        let rule = make_rule(&Domain::unit(), 64).unwrap();
        let eta: Vec<f64> = rule.nodes.iter().map(|x| tilt * x * x).collect();
        let w = vec![1.0; 64];
        let g1: Vec<f64> = rule.nodes.iter().map(|x| x.sin()).collect();
        let g2: Vec<f64> = rule.nodes.iter().map(|x| x * x * x).collect();
        let g3: Vec<f64> = rule.nodes.iter().map(|x| (2.0 * x).cos()).collect();
        let combo: Vec<f64> = g1.iter().zip(&g2).map(|(p, q)| a * p + b * q).collect();
        let lhs = v(&rule, &eta, &w, &combo, &g3).unwrap();
        let rhs = a * v(&rule, &eta, &w, &g1, &g3).unwrap() + b * v(&rule, &eta, &w, &g2, &g3).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10);
        let v12 = v(&rule, &eta, &w, &g1, &g2).unwrap();
        let v11 = v(&rule, &eta, &w, &g1, &g1).unwrap();
        let v22 = v(&rule, &eta, &w, &g2, &g2).unwrap();
        prop_assert!(v12 * v12 <= v11 * v22 + 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_skl_is_the_symmetric_sum(
        p in prop::collection::vec(-2.0f64..2.0, 4),
        q in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let rule = make_rule(&Domain::unit(), 80).unwrap();
        let poly = |c: &[f64], x: f64| c.iter().enumerate().map(|(k, ck)| ck * x.powi(k as i32 + 1)).sum::<f64>();
        let eta_p: Vec<f64> = rule.nodes.iter().map(|&x| poly(&p, x)).collect();
        let eta_q: Vec<f64> = rule.nodes.iter().map(|&x| poly(&q, x)).collect();
        let fp = normalize_log_density(&rule, &eta_p).unwrap();
        let fq = normalize_log_density(&rule, &eta_q).unwrap();
        let pq = kl(&fp, &fq, &rule).unwrap();
        let qp = kl(&fq, &fp, &rule).unwrap();
        prop_assert!(pq >= -1e-14 && qp >= -1e-14);
        prop_assert!(kl(&fp, &fp, &rule).unwrap().abs() <= 1e-14);
        prop_assert!((skl(&eta_p, &eta_q, &rule).unwrap() - pq - qp).abs() <= 1e-10);
    }

    #[test]
    fn kl_decomposition_identity(seed in 0u64..1000) {
        let rule = make_rule(&Domain::unit(), 80).unwrap();
        let truth: Vec<f64> = rule.nodes.iter().map(|x| -(x - 0.5) * (x - 0.5) / 0.08).collect();
        let f_true = normalize_log_density(&rule, &truth).unwrap();
        let reps: Vec<Vec<f64>> = (0..6)
            .map(|r| {
                let s = (seed * 7 + r) as f64;
                rule.nodes.iter().map(|x| -(x - 0.5 - 0.03 * s.sin()).powi(2) / (0.07 + 0.01 * s.cos()) + 0.3 * x * s.cos()).collect()
            })
            .collect();
        let bv = bias_variance(&reps, &f_true, &rule).unwrap();
        prop_assert!((bv.bias + bv.variance - bv.mean_kl).abs() <= 1e-6 * bv.mean_kl.max(1e-12));
    }

    #[test]
    fn mse_identity(est in prop::collection::vec(0.0f64..4.0, 2..20), truth in 0.0f64..4.0) {
        let m = mse_decomposition(&est, truth).unwrap();
        let direct = est.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / est.len() as f64;
        prop_assert!((m.mse - direct).abs() <= 1e-12 * (1.0 + direct));
        prop_assert!((m.bias2 + m.variance - m.mse).abs() <= 1e-12 * (1.0 + direct));
    }
}

#[test]
fn uniform_moments_and_log_normalizers() {
    let rule = make_rule(&Domain::unit(), 40).unwrap();
    let zero = vec![0.0; 40];
    let ones = vec![1.0; 40];
    let x = rule.nodes.clone();
    assert!((mu(&rule, &zero, &ones, &x).unwrap() - 0.5).abs() <= 1e-12);
    assert!((v(&rule, &zero, &ones, &x, &x).unwrap() - 1.0 / 12.0).abs() <= 1e-12);
    for theta in [-4.0f64, 0.5, 3.0] {
        let eta: Vec<f64> = x.iter().map(|v| theta * v).collect();
        let expected = ((theta.exp() - 1.0) / theta).ln();
        assert!((log_normalizer(&rule, &eta, &ones).unwrap() - expected).abs() <= 1e-12);
    }
    let wide = make_rule(&Domain::bounded(-2.0, 5.0).unwrap(), 40).unwrap();
    let w = vec![1.0; 40];
    assert!((log_normalizer(&wide, &vec![0.0; 40], &w).unwrap() - 7f64.ln()).abs() <= 1e-12);
}

#[test]
fn refining_the_rule_leaves_the_normalizer() {
    let eta = |x: f64| (3.0 * x).sin() + 0.5 * x * x;
    let at = |n: usize| {
        let rule = make_rule(&Domain::bounded(-1.0, 2.0).unwrap(), n).unwrap();
        let values: Vec<f64> = rule.nodes.iter().map(|&x| eta(x)).collect();
        log_normalizer(&rule, &values, &vec![1.0; n]).unwrap()
    };
    assert!((at(60) - at(120)).abs() <= 1e-8);
}

#[test]
fn null_space_has_zero_penalty() {
    let space = make_space(SpaceFamily::Sobolev2Unit);
    let psi = |x: f64| space.null_basis_eval(x)[0];
    for x in [0.1, 0.5, 0.9] {
        assert!(derivative(&psi, x, 2, 1e-3).abs() <= 1e-10);
    }
    let h = SplineRep::from_coefficients(space, KNOTS.to_vec(), &DVector::from_vec(vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
    assert_eq!(h.roughness(), 0.0);
}

#[test]
fn gradient_matches_central_differences() {
    let data = near_normal(80, 3);
    let space = make_space(SpaceFamily::Sobolev2Unit);
    let problem = unit_problem(space, &data, &KNOTS);
    let lambda = 1e-3;
    let beta = DVector::from_vec(vec![0.4, 1.0, -2.0, 0.5, 1.5, -0.7, 0.2]);
    let grad = problem.assemble(&beta, lambda).unwrap().gradient;
    let step = 1e-5;
    for j in 0..beta.len() {
        let mut up = beta.clone();
        let mut down = beta.clone();
        up[j] += step;
        down[j] -= step;
        let fd = (problem.objective(&up, lambda).unwrap() - problem.objective(&down, lambda).unwrap()) / (2.0 * step);
        assert!((fd - grad[j]).abs() <= 1e-5 * grad.norm(), "coordinate {j}: {fd} vs {}", grad[j]);
    }
    let (fitted, diag) = problem.fit(lambda, &DVector::zeros(7), &NewtonConfig::default()).unwrap();
    assert!(diag.converged);
    assert!(diag.final_objective <= problem.objective(&DVector::zeros(7), lambda).unwrap());
    let g = problem.assemble(&fitted, lambda).unwrap().gradient;
    for j in 0..7 {
        let mut up = fitted.clone();
        let mut down = fitted.clone();
        up[j] += step;
        down[j] -= step;
        let fd = (problem.objective(&up, lambda).unwrap() - problem.objective(&down, lambda).unwrap()) / (2.0 * step);
        assert!((fd - g[j]).abs() <= 1e-5 * (1.0 + grad.norm()), "{fd} vs {}", g[j]);
    }
}

#[test]
fn roughness_falls_as_lambda_grows() {
    let data = near_normal(150, 5);
    let space = make_space(SpaceFamily::Sobolev2Unit);
    let knots = choose_knots(&data, 30, 1).unwrap();
    let problem = unit_problem(space, &data, &knots);
    let mut start = DVector::zeros(problem.dim());
    let mut last = f64::INFINITY;
    for k in 0..=16 {
        let lambda = 10f64.powf(-6.0 + 0.5 * k as f64) / 150.0;
        let (beta, _) = problem.fit(lambda, &start, &NewtonConfig::default()).unwrap();
        let j = problem.roughness(&beta);
        assert!(j <= last * (1.0 + 1e-8) + 1e-14, "lambda {lambda}: {j} > {last}");
        last = j;
        start = beta;
    }
}

#[test]
fn huge_lambda_gives_the_null_space_fit() {
    // With the kernel part suppressed the fit is the exponential family
    // `exp(d (x - 1/2))`, whose MLE matches the sample mean.
    let data = near_normal(200, 8);
    let space = make_space(SpaceFamily::Sobolev2Unit);
    let problem = unit_problem(space, &data, &KNOTS);
    let (beta, _) = problem.fit(1e8, &DVector::zeros(7), &NewtonConfig::default()).unwrap();
    assert!(problem.roughness(&beta) <= 1e-12);
    let d = beta[0];
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    let model_mean = 1.0 / (1.0 - (-d).exp()) - 1.0 / d;
    assert!((model_mean - mean).abs() <= 1e-6, "{model_mean} vs {mean}");
}

fn near_normal_model(space: SpaceFamily, theta0: Vec<f64>) -> ModelSpec {
    ModelSpec::additive(ParametricForm::TruncnormLogit, make_space(space), vec![Domain::unit()], theta0)
}

#[test]
fn profile_search_descends_from_its_start() {
    let samples = SampleSet::single(near_normal(100, 21));
    let model = near_normal_model(SpaceFamily::Sobolev2Unit, vec![0.45, 0.25]);
    let opts = FitOptions { outer_lambda: OuterLambda::PerTheta, ..FitOptions::default() };
    let fit = fit_additive(&model, &samples, &opts).unwrap();
    let start = profile_objective(&model.theta0_init, &model, &samples, &opts).unwrap();
    assert!(fit.profile_value <= start + 1e-12, "{} > {start}", fit.profile_value);
}

#[test]
fn permuting_observations_leaves_the_estimate() {
    let data = near_normal(100, 22);
    let mut shuffled = data.clone();
    shuffled.reverse();
    shuffled.rotate_left(37);
    let model = near_normal_model(SpaceFamily::Sobolev3Unit, vec![0.5, 0.2]);
    let opts = FitOptions::default();
    let a = fit_additive(&model, &SampleSet::single(data), &opts).unwrap();
    let b = fit_additive(&model, &SampleSet::single(shuffled), &opts).unwrap();
    for (x, y) in a.theta_hat.iter().zip(&b.theta_hat) {
        assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
    }
}

#[test]
fn quintic_component_is_orthogonal_to_quadratics() {
    let samples = SampleSet::single(near_normal(200, 23));
    let model = near_normal_model(SpaceFamily::Sobolev3Unit, vec![0.5, 0.2]);
    let fit = fit_additive(&model, &samples, &FitOptions::default()).unwrap();
    let h = |x: f64| fit.h_hat.eval(x);
    let h_norm = simpson(|x| h(x).powi(2), 0.0, 1.0, 2000).sqrt();
    assert!(h_norm > 0.0);
    for k in 0..3 {
        let q_norm = (1.0 / (2 * k + 1) as f64).sqrt();
        let inner = simpson(|x| h(x) * x.powi(k), 0.0, 1.0, 2000);
        assert!((inner / (h_norm * q_norm)).abs() <= 1e-4, "power {k}: {inner}");
    }
}

#[test]
fn gauss_newton_equals_profile_for_an_additive_model() {
    let samples = SampleSet::single(near_normal(100, 24));
    let opts = FitOptions::default();
    let additive = near_normal_model(SpaceFamily::Sobolev3Unit, vec![0.5, 0.2]);
    let nonlinear = ModelSpec::nonlinear(
        NonlinearLink::Additive,
        ParametricForm::TruncnormLogit,
        make_space(SpaceFamily::Sobolev3Unit),
        vec![Domain::unit()],
        vec![0.5, 0.2],
    );
    let a = fit_additive(&additive, &samples, &opts).unwrap();
    let b = fit_nonlinear(&nonlinear, &samples, &opts).unwrap();
    for (x, y) in a.theta_hat.iter().zip(&b.theta_hat) {
        assert!((x - y).abs() <= 1e-4, "{x} vs {y}");
    }
    let grid = Domain::unit().grid(101);
    let fa = a.log_density(0, &grid).unwrap();
    let fb = b.log_density(0, &grid).unwrap();
    for (p, q) in fa.iter().zip(&fb) {
        assert!((p.exp() - q.exp()).abs() <= 1e-4 * p.exp().max(1.0), "{} vs {}", p.exp(), q.exp());
    }
}

#[test]
fn transformed_density_integrates_to_one() {
    let data = Truth::Weibull { gamma: 2.0, scale: 1.0 }.sample(150, 25).unwrap();
    let model = ModelSpec::transformation(
        ParametricForm::PowerTransform,
        make_space(SpaceFamily::Sobolev2Unit),
        vec![Domain::unit()],
        vec![1.5],
    );
    let fit = fit_transformation(&model, &SampleSet::single(data), &FitOptions::default()).unwrap();
    let grid = Domain::unit().grid(40001);
    let dens: Vec<f64> = fit.log_density(0, &grid).unwrap().iter().map(|v| v.exp()).collect();
    let h = 1.0 / 40000.0;
    let mut total = dens[0] + dens[40000];
    for (i, d) in dens.iter().enumerate().take(40000).skip(1) {
        total += d * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    total *= h / 3.0;
    assert!((total - 1.0).abs() <= 1e-6, "{total}");
}
