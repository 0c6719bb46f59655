//! Profiled penalized likelihood for additive models and the outer Nelder–Mead
//! search over `theta` shared by all fitters.

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitted::{FitOptions, FitResult, SENTINEL};
use crate::functionals::QuadratureRule;
use crate::inner::{
    choose_knots, default_knot_count, GridBoundary, NewtonDiagnostics, PenalizedProblem,
    SampleDesign, SampleInput, SplineRep,
};
use crate::model::{Composition, ModelSpec, SampleSet};
use crate::optim::{nelder_mead, NelderMeadResult};

/// Inner fit at a fixed `theta`.
#[derive(Debug, Clone)]
pub struct InnerFit {
    pub value: f64,
    pub beta: DVector<f64>,
    pub lambda: f64,
    pub diagnostics: NewtonDiagnostics,
    pub cv_score: f64,
    pub boundary: Option<GridBoundary>,
    pub converged: bool,
}

/// Validates the model against the data and resolves real-line domains.
pub(crate) fn prepare(model: &ModelSpec, samples: &SampleSet) -> Result<ModelSpec> {
    model.validate()?;
    if samples.m() != model.m {
        return Err(Error::config(format!(
            "model has m = {} but data has {} groups",
            model.m,
            samples.m()
        )));
    }
    samples.validate(&model.domains)?;
    let mut resolved = model.clone();
    resolved.domains = model.resolve_domains(samples)?;
    Ok(resolved)
}

pub(crate) fn knots_for(pooled: &[f64], opts: &FitOptions) -> Result<Vec<f64>> {
    let q = opts
        .n_knots
        .unwrap_or_else(|| default_knot_count(pooled.len()))
        .min(pooled.len());
    choose_knots(pooled, q, opts.knot_seed)
}

/// theta-independent pieces of an additive fit.
pub(crate) struct AdditiveSetup<'a> {
    pub model: ModelSpec,
    pub samples: &'a SampleSet,
    pub rules: Vec<QuadratureRule>,
    pub knots: Vec<f64>,
    base: PenalizedProblem,
}

impl<'a> AdditiveSetup<'a> {
    pub fn new(model: &ModelSpec, samples: &'a SampleSet, opts: &FitOptions) -> Result<Self> {
        let model = prepare(model, samples)?;
        let rules = model
            .domains
            .iter()
            .map(|d| opts.rule(d))
            .collect::<Result<Vec<_>>>()?;
        let knots = knots_for(&samples.pooled(), opts)?;
        let inputs = samples
            .groups
            .iter()
            .zip(&rules)
            .map(|(data, rule)| {
                SampleInput::evaluation(
                    &model.space,
                    &knots,
                    data,
                    vec![0.0; data.len()],
                    rule,
                    &vec![0.0; rule.n_nodes()],
                )
            })
            .collect();
        let base = PenalizedProblem::new(&model.space, &knots, inputs)?;
        Ok(AdditiveSetup {
            model,
            samples,
            rules,
            knots,
            base,
        })
    }

    /// Penalized problem with offsets `alpha_l(.; theta)`.
    pub fn problem_at(&self, theta: &[f64]) -> PenalizedProblem {
        let form = &self.model.form;
        let designs: Vec<SampleDesign> = self
            .base
            .samples
            .iter()
            .enumerate()
            .map(|(l, design)| {
                let data_offset: Vec<f64> = self.samples.groups[l]
                    .iter()
                    .map(|&x| form.eval(x, theta, l))
                    .collect();
                let rule = &self.rules[l];
                let node_log_weight = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&x, w)| w.ln() + form.eval(x, theta, l))
                    .collect();
                design.with_offsets(&data_offset, node_log_weight)
            })
            .collect();
        self.base.with_samples(designs)
    }

    /// Inner fit at `theta`, with `lambda` chosen by CV unless given.
    pub fn inner(&self, theta: &[f64], lambda: Option<f64>, opts: &FitOptions) -> Result<InnerFit> {
        let problem = self.problem_at(theta);
        fit_at(&problem, lambda, opts, &DVector::zeros(problem.dim()))
    }

    pub fn result(&self, theta: Vec<f64>, fit: InnerFit, outer_iterations: usize, outer_ok: bool) -> FitResult {
        FitResult {
            theta_hat: theta,
            h_hat: SplineRep::from_coefficients(self.model.space, self.knots.clone(), &fit.beta),
            lambda_hat: fit.lambda,
            profile_value: fit.value,
            cv_score: fit.cv_score,
            outer_iterations,
            inner_diagnostics: fit.diagnostics,
            converged: outer_ok && fit.converged,
            lambda_boundary: fit.boundary,
            model: self.model.clone(),
        }
    }
}

/// CV-selected inner fit of a penalized problem.
pub(crate) fn select_and_fit(
    problem: &PenalizedProblem,
    opts: &FitOptions,
    start: &DVector<f64>,
) -> Result<InnerFit> {
    let choice = problem.select_lambda(&opts.lambda_search, opts.alpha_cv, start, &opts.newton)?;
    Ok(InnerFit {
        value: choice.diagnostics.final_objective,
        converged: choice.diagnostics.converged,
        beta: choice.beta,
        lambda: choice.lambda,
        diagnostics: choice.diagnostics,
        cv_score: choice.score,
        boundary: choice.boundary,
    })
}

/// Inner fit at a fixed `lambda`, or CV-selected when `lambda` is `None`.
pub(crate) fn fit_at(
    problem: &PenalizedProblem,
    lambda: Option<f64>,
    opts: &FitOptions,
    start: &DVector<f64>,
) -> Result<InnerFit> {
    let Some(lambda) = lambda else {
        return select_and_fit(problem, opts, start);
    };
    let (beta, diagnostics) = problem.fit(lambda, start, &opts.newton)?;
    Ok(InnerFit {
        value: diagnostics.final_objective,
        converged: diagnostics.converged,
        beta,
        lambda,
        diagnostics,
        // Not computed when lambda is held fixed.
        cv_score: f64::NAN,
        boundary: None,
    })
}

/// How the smoothing parameter enters the outer search over `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterLambda {
    /// Re-select `lambda_theta` by CV at every evaluated `theta`.
    PerTheta,
    /// Hold `lambda` fixed during each simplex search, re-select it by CV at
    /// the minimizer, and repeat until `lambda` settles.
    Alternating,
}

/// Outer estimate of `theta` with the inner fit at the returned point, whose
/// `lambda` is always the CV choice at that point.
pub(crate) struct OuterEstimate {
    pub theta: Vec<f64>,
    pub fit: InnerFit,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest change in `log10 lambda` between rounds treated as settled.
const LAMBDA_SETTLE: f64 = 0.01;

/// Estimates `theta` from `model.theta0_init` under the configured
/// [`OuterLambda`] policy. `inner(theta, lambda)` fits at fixed `lambda` when
/// given and selects it by CV otherwise.
pub(crate) fn estimate_theta(
    model: &ModelSpec,
    opts: &FitOptions,
    inner: impl Fn(&[f64], Option<f64>) -> Result<InnerFit>,
) -> Result<OuterEstimate> {
    match opts.outer_lambda {
        OuterLambda::PerTheta => {
            let (theta, fit, nm) = outer_search(model, &model.theta0_init, opts, |t| inner(t, None))?;
            Ok(OuterEstimate {
                theta,
                fit,
                iterations: nm.iterations,
                converged: nm.converged,
            })
        }
        OuterLambda::Alternating => {
            let mut theta = model.theta0_init.clone();
            let mut fit = inner(&theta, None)?;
            let mut iterations = 0;
            for _ in 0..opts.max_alternations {
                let lambda = fit.lambda;
                let (next_theta, _, nm) = outer_search(model, &theta, opts, |t| inner(t, Some(lambda)))?;
                iterations += nm.iterations;
                let next = inner(&next_theta, None)?;
                let settled = (next.lambda.log10() - lambda.log10()).abs() <= LAMBDA_SETTLE;
                theta = next_theta;
                fit = next;
                if settled {
                    return Ok(OuterEstimate {
                        theta,
                        fit,
                        iterations,
                        converged: nm.converged,
                    });
                }
            }
            warn!("smoothing parameter did not settle within {} rounds", opts.max_alternations);
            Ok(OuterEstimate {
                theta,
                fit,
                iterations,
                converged: false,
            })
        }
    }
}

/// Minimizes an inner-fit value over `theta` by Nelder–Mead from `start`.
/// Infeasible or failed evaluations score [`SENTINEL`]. Returns the best
/// evaluated point together with its inner fit.
pub(crate) fn outer_search(
    model: &ModelSpec,
    start: &[f64],
    opts: &FitOptions,
    mut eval: impl FnMut(&[f64]) -> Result<InnerFit>,
) -> Result<(Vec<f64>, InnerFit, NelderMeadResult)> {
    let mut best: Option<(Vec<f64>, InnerFit)> = None;
    let nm = nelder_mead(
        |theta| {
            if !model.inside_theta_domain(theta) {
                return SENTINEL;
            }
            match eval(theta) {
                Ok(fit) if fit.value.is_finite() => {
                    let v = fit.value;
                    if best.as_ref().map_or(true, |b| v < b.1.value) {
                        best = Some((theta.to_vec(), fit));
                    }
                    v
                }
                Ok(_) => {
                    warn!("non-finite profile value at theta = {theta:?}");
                    SENTINEL
                }
                Err(e) => {
                    warn!("inner fit failed at theta = {theta:?}: {e}");
                    SENTINEL
                }
            }
        },
        start,
        &opts.nelder_mead,
    );
    match best {
        Some((theta, fit)) => Ok((theta, fit, nm)),
        None => Err(Error::Estimation(
            "every evaluated theta was infeasible or failed".into(),
        )),
    }
}

/// Profiled penalized likelihood at `theta`: the inner fit with CV-selected
/// `lambda`, evaluated as the penalized objective. Infeasible `theta` or a
/// failed inner fit give [`SENTINEL`].
pub fn profile_objective(
    theta: &[f64],
    model: &ModelSpec,
    samples: &SampleSet,
    opts: &FitOptions,
) -> Result<f64> {
    if model.composition != Composition::Additive {
        return Err(Error::config("profile_objective requires an additive model"));
    }
    let setup = AdditiveSetup::new(model, samples, opts)?;
    if !setup.model.inside_theta_domain(theta) {
        return Ok(SENTINEL);
    }
    Ok(match setup.inner(theta, None, opts) {
        Ok(fit) if fit.value.is_finite() => fit.value,
        Ok(_) => SENTINEL,
        Err(e) => {
            warn!("inner fit failed at theta = {theta:?}: {e}");
            SENTINEL
        }
    })
}

pub fn fit_additive(model: &ModelSpec, samples: &SampleSet, opts: &FitOptions) -> Result<FitResult> {
    if model.composition != Composition::Additive {
        return Err(Error::config("fit_additive requires an additive model"));
    }
    let setup = AdditiveSetup::new(model, samples, opts)?;
    if setup.model.theta_dim() == 0 {
        let fit = setup.inner(&[], None, opts)?;
        return Ok(setup.result(vec![], fit, 0, true));
    }
    let est = estimate_theta(&setup.model, opts, |t, lambda| setup.inner(t, lambda, opts))?;
    Ok(setup.result(est.theta, est.fit, est.iterations, est.converged))
}
