//! Gauss–Newton fitting of models whose `eta_l` is nonlinear in `h`.
//!
//! Around a current `h~`, the derivative of `eta_l` in `h` is taken in the
//! pointwise form `g -> omega_l(x) g(s_l(x))`, so the linearized likelihood
//! is an additive fit with basis images `omega_l(x) phi(s_l(x))` and offsets
//! `r_l(x) = eta_l(x; theta, h~) - omega_l(x) h~(s_l(x))`.

use log::warn;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fitted::{
    eta_values, l2_distance, mixture_eta, mixture_parametric_log_density, FitOptions, FitResult,
};
use crate::functionals::{EtaField, QuadratureRule};
use crate::inner::{PenalizedProblem, SampleInput, SplineRep};
use crate::model::{Composition, ModelSpec, NonlinearLink, SampleSet};
use crate::profile::{estimate_theta, fit_at, knots_for, prepare, InnerFit};
use crate::space::{Domain, DomainKind};

/// `L g = omega * g(carrier)` and offset `r`, evaluated at a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseDerivative {
    pub omega: Vec<f64>,
    pub carrier: Vec<f64>,
    pub offset: Vec<f64>,
}

impl PointwiseDerivative {
    /// `omega(x) g(s(x))` for a spline `g`.
    pub fn apply(&self, g: &SplineRep) -> Vec<f64> {
        g.eval_many(&self.carrier)
            .iter()
            .zip(&self.omega)
            .map(|(v, w)| v * w)
            .collect()
    }
}

/// Linearization of `eta_l` in `h` at `h_tilde`, evaluated at `xs`. `rule`
/// normalizes the parametric component of the mixture link.
pub fn linearize(
    model: &ModelSpec,
    sample: usize,
    rule: &QuadratureRule,
    theta: &[f64],
    h_tilde: &SplineRep,
    xs: &[f64],
) -> Result<PointwiseDerivative> {
    let form = &model.form;
    match (model.composition, model.link) {
        (Composition::Additive, _) | (Composition::GeneralNonlinear, NonlinearLink::Additive) => {
            Ok(PointwiseDerivative {
                omega: vec![1.0; xs.len()],
                carrier: xs.to_vec(),
                offset: xs.iter().map(|&x| form.eval(x, theta, sample)).collect(),
            })
        }
        (Composition::GeneralNonlinear, NonlinearLink::Mixture) => {
            let log_f1 = mixture_parametric_log_density(model, sample, rule, theta, xs)?;
            let h = h_tilde.eval_many(xs);
            let t0 = theta[0];
            let mut omega = Vec::with_capacity(xs.len());
            let mut offset = Vec::with_capacity(xs.len());
            for (lf, hv) in log_f1.iter().zip(&h) {
                let eta = mixture_eta(t0, *lf, *hv);
                let w = if t0 < 1.0 {
                    ((1.0 - t0).ln() + hv - eta).exp()
                } else {
                    0.0
                };
                omega.push(w);
                offset.push(eta - w * hv);
            }
            Ok(PointwiseDerivative {
                omega,
                carrier: xs.to_vec(),
                offset,
            })
        }
        (Composition::GeneralNonlinear, NonlinearLink::Transform)
        | (Composition::Transformation, _) => {
            let mut offset = Vec::with_capacity(xs.len());
            for &x in xs {
                offset.push(form.derivative(x, theta, sample)?.abs().ln());
            }
            if model.composition == Composition::Transformation
                && model.convention == crate::model::TransformConvention::ComposedLogit
            {
                offset.iter_mut().for_each(|o| *o = 0.0);
            }
            Ok(PointwiseDerivative {
                omega: vec![1.0; xs.len()],
                carrier: xs.iter().map(|&x| form.eval(x, theta, sample)).collect(),
                offset,
            })
        }
    }
}

/// theta-independent pieces of a Gauss–Newton fit.
pub struct NonlinearSetup<'a> {
    pub model: ModelSpec,
    pub samples: &'a SampleSet,
    pub rules: Vec<QuadratureRule>,
    pub knots: Vec<f64>,
}

impl<'a> NonlinearSetup<'a> {
    pub fn new(model: &ModelSpec, samples: &'a SampleSet, opts: &FitOptions) -> Result<Self> {
        let model = prepare(model, samples)?;
        let rules = model
            .domains
            .iter()
            .map(|d| opts.rule(d))
            .collect::<Result<Vec<_>>>()?;
        let pooled: Vec<f64> = match model.link {
            NonlinearLink::Transform => samples
                .groups
                .iter()
                .enumerate()
                .flat_map(|(l, g)| {
                    let model = &model;
                    g.iter().map(move |&x| model.form.eval(x, &model.theta0_init, l))
                })
                .collect(),
            _ => samples.pooled(),
        };
        let knots = knots_for(&pooled, opts)?;
        Ok(NonlinearSetup {
            model,
            samples,
            rules,
            knots,
        })
    }

    pub fn spline(&self, beta: &DVector<f64>) -> SplineRep {
        SplineRep::from_coefficients(self.model.space, self.knots.clone(), beta)
    }

    /// Additive problem obtained by linearizing at `h_tilde`.
    pub fn linearized_problem(&self, theta: &[f64], h_tilde: &SplineRep) -> Result<PenalizedProblem> {
        let space = &self.model.space;
        let mut inputs = Vec::with_capacity(self.model.m);
        for (l, rule) in self.rules.iter().enumerate() {
            let data = &self.samples.groups[l];
            let at_data = linearize(&self.model, l, rule, theta, h_tilde, data)?;
            let at_nodes = linearize(&self.model, l, rule, theta, h_tilde, &rule.nodes)?;
            let mut data_basis = space.basis_matrix(&self.knots, &at_data.carrier);
            scale_rows(&mut data_basis, &at_data.omega);
            let mut node_basis = space.basis_matrix(&self.knots, &at_nodes.carrier);
            scale_rows(&mut node_basis, &at_nodes.omega);
            let node_log_weight = rule
                .weights
                .iter()
                .zip(&at_nodes.offset)
                .map(|(w, r)| w.ln() + r)
                .collect();
            inputs.push(SampleInput {
                data_basis,
                data_offset: at_data.offset,
                node_basis,
                node_log_weight,
            });
        }
        PenalizedProblem::new(space, &self.knots, inputs)
    }

    /// Penalized likelihood of the nonlinear model at `(theta, h, lambda)`.
    pub fn objective(&self, theta: &[f64], h: &SplineRep, lambda: f64) -> Result<f64> {
        let mut total = 0.5 * lambda * h.roughness();
        for (l, rule) in self.rules.iter().enumerate() {
            let data = &self.samples.groups[l];
            let eta = eta_values(&self.model, l, data, theta, h)?;
            let mean = eta.iter().sum::<f64>() / eta.len() as f64;
            let nodes = eta_values(&self.model, l, &rule.nodes, theta, h)?;
            let (_, log_z) = EtaField::unweighted(nodes).probabilities(rule)?;
            total += log_z - mean;
        }
        if total.is_finite() {
            Ok(total)
        } else {
            Err(Error::Numerical {
                message: "non-finite nonlinear objective".into(),
                condition: f64::NAN,
            })
        }
    }

    /// Quadrature rule over the range where `h` is evaluated.
    pub fn h_rule(&self, theta: &[f64], opts: &FitOptions) -> Result<QuadratureRule> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (l, d) in self.model.domains.iter().enumerate() {
            let (a, b) = match self.model.link {
                NonlinearLink::Transform => (
                    self.model.form.eval(d.lower, theta, l),
                    self.model.form.eval(d.upper, theta, l),
                ),
                _ => (d.lower, d.upper),
            };
            lo = lo.min(a.min(b));
            hi = hi.max(a.max(b));
        }
        opts.rule(&Domain {
            kind: DomainKind::BoundedInterval,
            lower: lo,
            upper: hi,
        })
    }

    /// Gauss–Newton sweeps at fixed `theta` from `start`. Each sweep selects
    /// `lambda` by CV unless `lambda` is given.
    pub fn inner(
        &self,
        theta: &[f64],
        lambda: Option<f64>,
        start: &DVector<f64>,
        opts: &FitOptions,
    ) -> Result<InnerFit> {
        let h_rule = self.h_rule(theta, opts)?;
        let mut beta = start.clone();
        let mut last: Option<InnerFit> = None;
        let mut converged = false;
        for sweep in 0..opts.max_sweeps {
            let current = self.spline(&beta);
            let problem = self.linearized_problem(theta, &current)?;
            let fit = fit_at(&problem, lambda, opts, &beta)?;
            let lambda = fit.lambda;
            let before = self.objective(theta, &current, lambda)?;
            let mut candidate = fit.beta.clone();
            let mut after = self.objective(theta, &self.spline(&candidate), lambda);
            let mut damping = 0;
            while after.as_ref().map_or(true, |a| *a > before) && damping < opts.max_damping {
                candidate = &beta + (&candidate - &beta) * 0.5;
                after = self.objective(theta, &self.spline(&candidate), lambda);
                damping += 1;
            }
            let after = match after {
                Ok(v) if v <= before => v,
                _ => {
                    log::debug!("sweep {sweep}: damping failed to decrease the objective");
                    candidate = beta.clone();
                    before
                }
            };
            let change = l2_distance(
                &h_rule,
                &current.eval_many(&h_rule.nodes),
                &self.spline(&candidate).eval_many(&h_rule.nodes),
            );
            beta = candidate;
            last = Some(InnerFit {
                value: after,
                beta: beta.clone(),
                ..fit
            });
            if change <= opts.sweep_tol {
                converged = true;
                break;
            }
        }
        let mut fit = last.ok_or_else(|| Error::config("max_sweeps must be positive"))?;
        if !converged {
            warn!(
                "Gauss–Newton did not settle within {} sweeps at theta = {theta:?}",
                opts.max_sweeps
            );
        }
        fit.converged = fit.converged && converged;
        Ok(fit)
    }

    fn result(&self, theta: Vec<f64>, fit: InnerFit, outer_iterations: usize, outer_ok: bool) -> FitResult {
        FitResult {
            theta_hat: theta,
            h_hat: self.spline(&fit.beta),
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

fn scale_rows(m: &mut nalgebra::DMatrix<f64>, weights: &[f64]) {
    for mut col in m.column_iter_mut() {
        for (v, w) in col.iter_mut().zip(weights) {
            *v *= w;
        }
    }
}

pub fn fit_nonlinear(model: &ModelSpec, samples: &SampleSet, opts: &FitOptions) -> Result<FitResult> {
    if model.composition != Composition::GeneralNonlinear {
        return Err(Error::config("fit_nonlinear requires a general nonlinear model"));
    }
    let setup = NonlinearSetup::new(model, samples, opts)?;
    let zero = DVector::zeros(setup.model.space.null_dim() + setup.knots.len());
    if setup.model.theta_dim() == 0 {
        let fit = setup.inner(&[], None, &zero, opts)?;
        return Ok(setup.result(vec![], fit, 0, true));
    }
    let est = estimate_theta(&setup.model, opts, |t, lambda| setup.inner(t, lambda, &zero, opts))?;
    Ok(setup.result(est.theta, est.fit, est.iterations, est.converged))
}
