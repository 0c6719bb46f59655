//! Backfitting for transformation models `eta_l = h(alpha_l(x; theta))`:
//! alternate a weighted nonparametric fit of `h` on the transformed data with
//! a likelihood update of `theta` given `h`.

use log::{debug, warn};
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fitted::{eta_values, l2_distance, FitOptions, FitResult, SENTINEL};
use crate::forms::ParametricForm;
use crate::functionals::{EtaField, QuadratureRule};
use crate::inner::{PenalizedProblem, SampleInput, SplineRep};
use crate::model::{Composition, ModelSpec, SampleSet, TransformConvention};
use crate::optim::{nelder_mead, NelderMeadConfig};
use crate::profile::{knots_for, prepare, select_and_fit, InnerFit};
use crate::space::{Domain, DomainKind};

const MONOTONE_CHECK_POINTS: usize = 64;

/// Transformed data `Y_li = alpha_l(X_li; theta)`, the quadrature rule of the
/// transformed domain and per-sample log weights at its nodes.
#[derive(Debug, Clone)]
pub struct TransformedSamples {
    pub groups: Vec<Vec<f64>>,
    pub rule: QuadratureRule,
    pub log_weights: Vec<Vec<f64>>,
}

/// `1 / |alpha_l'(alpha_l^{-1}(y; theta))|`.
pub fn jacobian_weight(form: &ParametricForm, theta: &[f64], sample: usize, y: f64) -> Result<f64> {
    let x = form.inverse(y, theta, sample)?;
    Ok(1.0 / form.derivative(x, theta, sample)?.abs())
}

fn check_monotone(model: &ModelSpec, theta: &[f64]) -> Result<()> {
    for (l, d) in model.domains.iter().enumerate() {
        let grid = d.grid(MONOTONE_CHECK_POINTS);
        let ys: Vec<f64> = grid.iter().map(|&x| model.form.eval(x, theta, l)).collect();
        let increasing = ys.windows(2).all(|w| w[1] > w[0]);
        let decreasing = ys.windows(2).all(|w| w[1] < w[0]);
        if !(increasing || decreasing) || ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::Domain(format!(
                "transform of sample {l} is not strictly monotone at theta = {theta:?}"
            )));
        }
    }
    Ok(())
}

pub fn transform_and_weights(
    model: &ModelSpec,
    theta: &[f64],
    samples: &SampleSet,
    opts: &FitOptions,
) -> Result<TransformedSamples> {
    check_monotone(model, theta)?;
    let form = &model.form;
    let groups: Vec<Vec<f64>> = samples
        .groups
        .iter()
        .enumerate()
        .map(|(l, g)| g.iter().map(|&x| form.eval(x, theta, l)).collect())
        .collect();
    let domain = if model.domains.iter().any(|d| d.kind == DomainKind::RealLine) {
        let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
        Domain::truncated_real_line(&pooled)?
    } else {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (l, d) in model.domains.iter().enumerate() {
            for y in [form.eval(d.lower, theta, l), form.eval(d.upper, theta, l)] {
                lo = lo.min(y);
                hi = hi.max(y);
            }
        }
        Domain::bounded(lo, hi)?
    };
    let rule = opts.rule(&domain)?;
    let log_weights = (0..model.m)
        .map(|l| match model.convention {
            TransformConvention::ChangeOfVariables => Ok(vec![0.0; rule.n_nodes()]),
            TransformConvention::ComposedLogit => rule
                .nodes
                .iter()
                .map(|&y| Ok(jacobian_weight(form, theta, l, y)?.ln()))
                .collect(),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransformedSamples {
        groups,
        rule,
        log_weights,
    })
}

/// `-sum_l { sum_i eta_l(X_li) - n_l log int exp(eta_l) }` over the X domains.
fn neg_log_likelihood(
    model: &ModelSpec,
    samples: &SampleSet,
    rules: &[QuadratureRule],
    theta: &[f64],
    h: &SplineRep,
) -> Result<f64> {
    let mut total = 0.0;
    for (l, rule) in rules.iter().enumerate() {
        let data = &samples.groups[l];
        let eta = eta_values(model, l, data, theta, h)?;
        let nodes = eta_values(model, l, &rule.nodes, theta, h)?;
        let (_, log_z) = EtaField::unweighted(nodes).probabilities(rule)?;
        total += data.len() as f64 * log_z - eta.iter().sum::<f64>();
    }
    Ok(total)
}

/// Penalized likelihood in the original scale at `(theta, h, lambda)`.
pub fn penalized_objective(
    model: &ModelSpec,
    samples: &SampleSet,
    rules: &[QuadratureRule],
    theta: &[f64],
    h: &SplineRep,
    lambda: f64,
) -> Result<f64> {
    let mut total = 0.5 * lambda * h.roughness();
    for (l, rule) in rules.iter().enumerate() {
        let data = &samples.groups[l];
        let eta = eta_values(model, l, data, theta, h)?;
        let nodes = eta_values(model, l, &rule.nodes, theta, h)?;
        let (_, log_z) = EtaField::unweighted(nodes).probabilities(rule)?;
        total += log_z - eta.iter().sum::<f64>() / eta.len() as f64;
    }
    Ok(total)
}

/// Maximum-likelihood update of `theta` with `h` held fixed, by Nelder–Mead
/// from `theta_start`. `model.domains` must already be resolved.
pub fn mle_theta(
    model: &ModelSpec,
    samples: &SampleSet,
    rules: &[QuadratureRule],
    h: &SplineRep,
    theta_start: &[f64],
) -> Result<Vec<f64>> {
    let cfg = NelderMeadConfig {
        f_tol: 1e-10,
        max_iter: 500,
        ..NelderMeadConfig::default()
    };
    let result = nelder_mead(
        |theta| {
            if !model.inside_theta_domain(theta) {
                return SENTINEL;
            }
            neg_log_likelihood(model, samples, rules, theta, h).unwrap_or(SENTINEL)
        },
        theta_start,
        &cfg,
    );
    if result.f >= SENTINEL {
        return Err(Error::Estimation(
            "likelihood update of theta found no feasible point".into(),
        ));
    }
    for ((lo, hi), t) in model.theta_domain().iter().zip(&result.x) {
        let span = (hi - lo).abs().max(1.0);
        if (t - lo).abs() <= 1e-6 * span || (hi - t).abs() <= 1e-6 * span {
            warn!("theta update reached the boundary of its domain: {:?}", result.x);
            break;
        }
    }
    Ok(result.x)
}

/// Starting values: method of moments on the log data for the power transform
/// (Weibull shape), mean and SD matching for location-scale.
pub fn initial_theta(form: &ParametricForm, samples: &SampleSet) -> Result<Vec<f64>> {
    fn mean_sd(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }
    match form {
        ParametricForm::PowerTransform => {
            let logs: Vec<f64> = samples
                .pooled()
                .into_iter()
                .filter(|x| *x > 0.0)
                .map(f64::ln)
                .collect();
            if logs.len() < 2 {
                return Err(Error::degenerate("too few positive observations"));
            }
            let (_, sd) = mean_sd(&logs);
            if !(sd > 0.0) {
                return Err(Error::degenerate("log data have zero spread"));
            }
            let gamma = std::f64::consts::PI / (6f64.sqrt() * sd);
            let (lo, hi) = form.theta_domain()[0];
            Ok(vec![gamma.clamp(lo, hi)])
        }
        ParametricForm::LocationScale => {
            if samples.m() < 2 {
                return Err(Error::config("location-scale needs two samples"));
            }
            let (m1, s1) = mean_sd(&samples.groups[0]);
            let (m2, s2) = mean_sd(&samples.groups[1]);
            if !(s1 > 0.0 && s2 > 0.0) {
                return Err(Error::degenerate("sample with zero spread"));
            }
            let sigma = s2 / s1;
            Ok(vec![m2 - sigma * m1, sigma])
        }
        other => Err(Error::Unsupported(format!(
            "no starting-value rule for {other:?}"
        ))),
    }
}

/// Diagnostics of the alternation, beyond the generic fit result.
#[derive(Debug, Clone, PartialEq)]
pub struct BackfitTrace {
    pub objectives: Vec<f64>,
    pub theta_path: Vec<Vec<f64>>,
    pub swings: usize,
    pub increases: usize,
}

/// Step 1: CV-selected fit of `h` on the transformed data.
fn fit_h(
    model: &ModelSpec,
    transformed: &TransformedSamples,
    opts: &FitOptions,
) -> Result<(SplineRep, InnerFit)> {
    let pooled: Vec<f64> = transformed.groups.iter().flatten().copied().collect();
    let knots = knots_for(&pooled, opts)?;
    let inputs = transformed
        .groups
        .iter()
        .zip(&transformed.log_weights)
        .map(|(ys, logw)| {
            SampleInput::evaluation(
                &model.space,
                &knots,
                ys,
                vec![0.0; ys.len()],
                &transformed.rule,
                logw,
            )
        })
        .collect();
    let problem = PenalizedProblem::new(&model.space, &knots, inputs)?;
    let fit = select_and_fit(&problem, opts, &DVector::zeros(problem.dim()))?;
    Ok((SplineRep::from_coefficients(model.space, knots, &fit.beta), fit))
}

pub fn fit_transformation(model: &ModelSpec, samples: &SampleSet, opts: &FitOptions) -> Result<FitResult> {
    fit_transformation_traced(model, samples, opts).map(|(fit, _)| fit)
}

pub fn fit_transformation_traced(
    model: &ModelSpec,
    samples: &SampleSet,
    opts: &FitOptions,
) -> Result<(FitResult, BackfitTrace)> {
    if model.composition != Composition::Transformation {
        return Err(Error::config("fit_transformation requires a transformation model"));
    }
    let model = prepare(model, samples)?;
    let rules = model
        .domains
        .iter()
        .map(|d| opts.rule(d))
        .collect::<Result<Vec<_>>>()?;
    let mut theta = model.theta0_init.clone();
    if !model.inside_theta_domain(&theta) {
        return Err(Error::config("theta0_init lies outside the parameter domain"));
    }
    let mut trace = BackfitTrace {
        objectives: vec![],
        theta_path: vec![theta.clone()],
        swings: 0,
        increases: 0,
    };
    let mut previous_h: Option<SplineRep> = None;
    let mut state: Option<(SplineRep, InnerFit)> = None;
    let mut converged = false;
    let mut alternations = 0;
    while alternations < opts.max_alternations {
        alternations += 1;
        let transformed = transform_and_weights(&model, &theta, samples, opts)?;
        let (h, fit) = fit_h(&model, &transformed, opts)?;
        let new_theta = mle_theta(&model, samples, &rules, &h, &theta)?;
        let objective = penalized_objective(&model, samples, &rules, &new_theta, &h, fit.lambda)?;

        let dtheta = new_theta
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let dh = previous_h.as_ref().map_or(f64::INFINITY, |prev| {
            let nodes = &transformed.rule.nodes;
            l2_distance(&transformed.rule, &prev.eval_many(nodes), &h.eval_many(nodes))
        });
        if let Some(&last) = trace.objectives.last() {
            if objective > last + 1e-8 {
                trace.increases += 1;
                debug!("alternation {alternations}: objective rose from {last} to {objective}");
            }
            let n = trace.objectives.len();
            if n >= 2 {
                let before = trace.objectives[n - 1] - trace.objectives[n - 2];
                let now = objective - last;
                if before * now < 0.0 && before.abs().min(now.abs()) > 1e-8 {
                    trace.swings += 1;
                }
            }
        }
        trace.objectives.push(objective);
        trace.theta_path.push(new_theta.clone());
        theta = new_theta;
        previous_h = Some(h.clone());
        state = Some((h, fit));
        if dtheta <= opts.alternation_tol && dh <= opts.alternation_tol {
            converged = true;
            break;
        }
        if trace.swings > opts.max_swings {
            warn!("backfitting objective oscillates; stopping after {alternations} alternations");
            break;
        }
    }
    let (h, fit) = state.ok_or_else(|| Error::config("max_alternations must be positive"))?;
    let profile_value = penalized_objective(&model, samples, &rules, &theta, &h, fit.lambda)?;
    if !converged {
        warn!("backfitting stopped without convergence after {alternations} alternations");
    }
    Ok((
        FitResult {
            theta_hat: theta,
            h_hat: h,
            lambda_hat: fit.lambda,
            profile_value,
            cv_score: fit.cv_score,
            outer_iterations: alternations,
            inner_diagnostics: fit.diagnostics,
            converged: converged && fit.converged,
            lambda_boundary: fit.boundary,
            model,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{make_space, SpaceFamily};

    fn power_model(theta: f64) -> ModelSpec {
        ModelSpec::transformation(
            ParametricForm::PowerTransform,
            make_space(SpaceFamily::Sobolev2Unit),
            vec![Domain::unit()],
            vec![theta],
        )
    }

    #[test]
    fn jacobian_weight_examples() {
        let w = jacobian_weight(&ParametricForm::PowerTransform, &[2.0], 0, 0.25).unwrap();
        assert!((w - 1.0).abs() < 1e-15);
        let ls = ParametricForm::LocationScale;
        assert_eq!(jacobian_weight(&ls, &[2.0, 1.0], 1, 0.3).unwrap(), 1.0);
        assert_eq!(jacobian_weight(&ls, &[2.0, 0.5], 1, 0.3).unwrap(), 0.5);
    }

    #[test]
    fn identity_power_leaves_data() {
        let data = SampleSet::single(vec![0.1, 0.4, 0.7]);
        for convention in [TransformConvention::ChangeOfVariables, TransformConvention::ComposedLogit] {
            let model = ModelSpec {
                convention,
                ..power_model(1.0)
            };
            let t = transform_and_weights(&model, &[1.0], &data, &FitOptions::default()).unwrap();
            assert_eq!(t.groups[0], data.groups[0]);
            assert!(t.log_weights[0].iter().all(|w| w.abs() < 1e-15));
        }
    }

    #[test]
    fn location_scale_shift() {
        let model = ModelSpec::transformation(
            ParametricForm::LocationScale,
            make_space(SpaceFamily::ThinplateReal),
            vec![Domain::real_line(), Domain::real_line()],
            vec![2.0, 1.0],
        );
        let data = SampleSet::new(vec![vec![-1.0, 0.0, 1.0], vec![1.5, 2.0, 3.0]]);
        let resolved = prepare(&model, &data).unwrap();
        let t = transform_and_weights(&resolved, &[2.0, 1.0], &data, &FitOptions::default()).unwrap();
        assert_eq!(t.groups[1], vec![-0.5, 0.0, 1.0]);
        assert!(t.log_weights.iter().flatten().all(|w| *w == 0.0));
    }

    #[test]
    fn non_monotone_transform_rejected() {
        let model = ModelSpec::transformation(
            ParametricForm::LocationScale,
            make_space(SpaceFamily::Sobolev2Unit),
            vec![Domain::unit(), Domain::unit()],
            vec![0.0, 1.0],
        );
        // A negative scale sits outside the box but the monotonicity check
        // itself must still catch a flat transform.
        let data = SampleSet::new(vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
        assert!(transform_and_weights(&model, &[0.0, f64::INFINITY], &data, &FitOptions::default()).is_err());
    }

    #[test]
    fn theta_independent_model_keeps_theta() {
        // m = 1 location-scale: sample 0 is the identity, eta does not involve theta.
        let model = ModelSpec::transformation(
            ParametricForm::LocationScale,
            make_space(SpaceFamily::Sobolev2Unit),
            vec![Domain::unit()],
            vec![0.3, 1.5],
        );
        let data = SampleSet::single(vec![0.2, 0.4, 0.5, 0.9]);
        let rules = vec![FitOptions::default().rule(&Domain::unit()).unwrap()];
        let mut h = SplineRep::zero(model.space, vec![0.4, 0.9]);
        h.d[0] = 0.3;
        let theta = mle_theta(&model, &data, &rules, &h, &[0.3, 1.5]).unwrap();
        assert_eq!(theta, vec![0.3, 1.5]);
    }

    #[test]
    fn power_initialization_recovers_weibull_shape() {
        // Exact Weibull(2) quantiles: log X has SD pi / (sqrt 6 * 2).
        let n = 2000;
        let xs: Vec<f64> = (0..n)
            .map(|i| (-(1.0 - (i as f64 + 0.5) / n as f64).ln()).powf(0.5))
            .collect();
        let theta = initial_theta(&ParametricForm::PowerTransform, &SampleSet::single(xs)).unwrap();
        assert!((theta[0] - 2.0).abs() < 0.05, "{theta:?}");
    }
}
