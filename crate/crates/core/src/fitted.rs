//! Fit options, fit results and evaluation of the fitted `eta_l` and densities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{default_nodes, make_rule, EtaField, QuadratureRule};
use crate::inner::{GridBoundary, LambdaSearch, NewtonConfig, NewtonDiagnostics, SplineRep};
use crate::model::{Composition, ModelSpec, NonlinearLink, TransformConvention};
use crate::optim::NelderMeadConfig;
use crate::profile::OuterLambda;
use crate::space::Domain;

/// Value returned by the profile objective when `theta` is infeasible or the
/// inner fit fails.
pub const SENTINEL: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub alpha_cv: f64,
    pub lambda_search: LambdaSearch,
    pub newton: NewtonConfig,
    pub nelder_mead: NelderMeadConfig,
    /// Smoothing-parameter policy during the outer search over `theta`.
    pub outer_lambda: OuterLambda,
    pub knot_seed: u64,
    /// Overrides the default knot-count rule.
    pub n_knots: Option<usize>,
    /// Overrides the default number of quadrature nodes per domain.
    pub quadrature_nodes: Option<usize>,
    /// Gauss–Newton sweeps per theta.
    pub max_sweeps: usize,
    pub sweep_tol: f64,
    pub max_damping: usize,
    /// Backfitting alternations, and smoothing-parameter rounds under
    /// [`OuterLambda::Alternating`].
    pub max_alternations: usize,
    pub alternation_tol: f64,
    pub max_swings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            alpha_cv: crate::inner::DEFAULT_ALPHA_CV,
            lambda_search: LambdaSearch::default(),
            newton: NewtonConfig::default(),
            nelder_mead: NelderMeadConfig::default(),
            outer_lambda: OuterLambda::Alternating,
            knot_seed: 0,
            n_knots: None,
            quadrature_nodes: None,
            max_sweeps: 50,
            sweep_tol: 1e-5,
            max_damping: 8,
            max_alternations: 40,
            alternation_tol: 1e-4,
            max_swings: 5,
        }
    }
}

impl FitOptions {
    pub(crate) fn rule(&self, domain: &Domain) -> Result<QuadratureRule> {
        make_rule(domain, self.quadrature_nodes.unwrap_or_else(|| default_nodes(domain)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub h_hat: SplineRep,
    pub lambda_hat: f64,
    /// Penalized likelihood at `(theta_hat, h_hat, lambda_hat)`.
    pub profile_value: f64,
    pub cv_score: f64,
    pub outer_iterations: usize,
    pub inner_diagnostics: NewtonDiagnostics,
    pub converged: bool,
    pub lambda_boundary: Option<GridBoundary>,
    /// Model with the domains actually used for normalization.
    pub model: ModelSpec,
}

impl FitResult {
    /// `eta_l` at `xs`, unnormalized.
    pub fn eta(&self, sample: usize, xs: &[f64]) -> Result<Vec<f64>> {
        eta_values(&self.model, sample, xs, &self.theta_hat, &self.h_hat)
    }

    /// Log density of sample `l`, normalized over its domain.
    pub fn log_density(&self, sample: usize, xs: &[f64]) -> Result<Vec<f64>> {
        let domain = self.model.domains[sample];
        let rule = make_rule(&domain, default_nodes(&domain))?;
        let log_z = log_normalizer(&self.model, sample, &rule, &self.theta_hat, &self.h_hat)?;
        Ok(self.eta(sample, xs)?.into_iter().map(|e| e - log_z).collect())
    }

    /// Density of sample `l` at the nodes of `rule`, renormalized on that rule.
    pub fn density_on_rule(&self, sample: usize, rule: &QuadratureRule) -> Result<Vec<f64>> {
        let eta = self.eta(sample, &rule.nodes)?;
        let (probs, _) = EtaField::unweighted(eta).probabilities(rule)?;
        Ok(probs
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| p / w)
            .collect())
    }
}

/// `log int_D exp(eta_l)` over the nodes of `rule`.
pub fn log_normalizer(
    model: &ModelSpec,
    sample: usize,
    rule: &QuadratureRule,
    theta: &[f64],
    h: &SplineRep,
) -> Result<f64> {
    let eta = eta_values(model, sample, &rule.nodes, theta, h)?;
    Ok(EtaField::unweighted(eta).probabilities(rule)?.1)
}

/// `eta_l(x; theta, h)` for each composition.
pub fn eta_values(
    model: &ModelSpec,
    sample: usize,
    xs: &[f64],
    theta: &[f64],
    h: &SplineRep,
) -> Result<Vec<f64>> {
    let form = &model.form;
    match (model.composition, model.link) {
        (Composition::Additive, _) | (Composition::GeneralNonlinear, NonlinearLink::Additive) => {
            let hv = h.eval_many(xs);
            Ok(xs
                .iter()
                .zip(hv)
                .map(|(&x, h)| form.eval(x, theta, sample) + h)
                .collect())
        }
        (Composition::GeneralNonlinear, NonlinearLink::Mixture) => {
            let domain = model.domains[sample];
            let rule = make_rule(&domain, default_nodes(&domain))?;
            let parametric = mixture_parametric_log_density(model, sample, &rule, theta, xs)?;
            let hv = h.eval_many(xs);
            Ok(parametric
                .iter()
                .zip(hv)
                .map(|(p, h)| mixture_eta(theta[0], *p, h))
                .collect())
        }
        (Composition::GeneralNonlinear, NonlinearLink::Transform) => {
            transform_eta(model, sample, xs, theta, h, TransformConvention::ChangeOfVariables)
        }
        (Composition::Transformation, _) => {
            transform_eta(model, sample, xs, theta, h, model.convention)
        }
    }
}

fn transform_eta(
    model: &ModelSpec,
    sample: usize,
    xs: &[f64],
    theta: &[f64],
    h: &SplineRep,
    convention: TransformConvention,
) -> Result<Vec<f64>> {
    let form = &model.form;
    let ys: Vec<f64> = xs.iter().map(|&x| form.eval(x, theta, sample)).collect();
    let hv = h.eval_many(&ys);
    match convention {
        TransformConvention::ComposedLogit => Ok(hv),
        TransformConvention::ChangeOfVariables => xs
            .iter()
            .zip(hv)
            .map(|(&x, h)| Ok(h + form.derivative(x, theta, sample)?.abs().ln()))
            .collect(),
    }
}

/// `log f_1(x; theta_1)` with `f_1 = exp(alpha) / int_D exp(alpha)`.
pub(crate) fn mixture_parametric_log_density(
    model: &ModelSpec,
    sample: usize,
    rule: &QuadratureRule,
    theta: &[f64],
    xs: &[f64],
) -> Result<Vec<f64>> {
    let inner = &theta[1..];
    let alpha_nodes: Vec<f64> = rule
        .nodes
        .iter()
        .map(|&x| model.form.eval(x, inner, sample))
        .collect();
    let (_, log_z) = EtaField::unweighted(alpha_nodes).probabilities(rule)?;
    if !log_z.is_finite() {
        return Err(Error::degenerate("parametric component cannot be normalized"));
    }
    Ok(xs
        .iter()
        .map(|&x| model.form.eval(x, inner, sample) - log_z)
        .collect())
}

/// `log{t0 exp(log_f1) + (1 - t0) exp(h)}`.
pub(crate) fn mixture_eta(t0: f64, log_f1: f64, h: f64) -> f64 {
    let a = if t0 > 0.0 { t0.ln() + log_f1 } else { f64::NEG_INFINITY };
    let b = if t0 < 1.0 { (1.0 - t0).ln() + h } else { f64::NEG_INFINITY };
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Quadrature L2 distance between two functions given at the nodes of `rule`.
pub(crate) fn l2_distance(rule: &QuadratureRule, a: &[f64], b: &[f64]) -> f64 {
    rule.weights
        .iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| w * (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}
