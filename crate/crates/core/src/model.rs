//! Model specification shared by all fitters, and observed samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::ParametricForm;
use crate::space::{Domain, DomainKind, RkhsSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    /// `eta_l = alpha_l(x; theta) + h(x)`.
    Additive,
    /// `eta_l` nonlinear in `h`, fitted through pointwise linearization.
    GeneralNonlinear,
    /// `eta_l` built from `h` evaluated at `alpha_l(x; theta)`.
    Transformation,
}

/// How `eta_l` depends on `h` under `GeneralNonlinear`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearLink {
    /// `log{t0 f1(x; t1) + (1 - t0) exp(h(x))}` with `f1 = exp(alpha)/int exp(alpha)`;
    /// theta = (t0, t1...).
    #[default]
    Mixture,
    /// `alpha_l(x; theta) + h(x)`; the linearization is exact.
    Additive,
    /// `h(alpha_l(x; theta)) + log|alpha_l'(x; theta)|`.
    Transform,
}

/// Meaning of `h` in a transformation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformConvention {
    /// `h` is the log density of `Y = alpha(X)`: `f_X(x) ∝ exp{h(alpha(x))} |alpha'(x)|`.
    /// The Jacobian cancels and the weights on the transformed scale are constant.
    #[default]
    ChangeOfVariables,
    /// `f_X(x) ∝ exp{h(alpha(x))}`: the transformed data carry weights
    /// `1 / |alpha'(alpha^{-1}(y))|`.
    ComposedLogit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub m: usize,
    pub composition: Composition,
    pub form: ParametricForm,
    pub space: RkhsSpace,
    pub domains: Vec<Domain>,
    pub theta0_init: Vec<f64>,
    #[serde(default)]
    pub link: NonlinearLink,
    #[serde(default)]
    pub convention: TransformConvention,
    /// Overrides the form's default box constraints.
    #[serde(default)]
    pub theta_bounds: Option<Vec<(f64, f64)>>,
}

impl ModelSpec {
    pub fn additive(
        form: ParametricForm,
        space: RkhsSpace,
        domains: Vec<Domain>,
        theta0_init: Vec<f64>,
    ) -> Self {
        ModelSpec {
            m: domains.len(),
            composition: Composition::Additive,
            form,
            space,
            domains,
            theta0_init,
            link: NonlinearLink::default(),
            convention: TransformConvention::default(),
            theta_bounds: None,
        }
    }

    /// Purely nonparametric model: additive with an empty linear basis.
    pub fn nonparametric(space: RkhsSpace, domains: Vec<Domain>) -> Self {
        ModelSpec::additive(
            ParametricForm::LinearBasis { powers: vec![] },
            space,
            domains,
            vec![],
        )
    }

    pub fn transformation(
        form: ParametricForm,
        space: RkhsSpace,
        domains: Vec<Domain>,
        theta0_init: Vec<f64>,
    ) -> Self {
        ModelSpec {
            composition: Composition::Transformation,
            ..ModelSpec::additive(form, space, domains, theta0_init)
        }
    }

    pub fn nonlinear(
        link: NonlinearLink,
        form: ParametricForm,
        space: RkhsSpace,
        domains: Vec<Domain>,
        theta0_init: Vec<f64>,
    ) -> Self {
        ModelSpec {
            composition: Composition::GeneralNonlinear,
            link,
            ..ModelSpec::additive(form, space, domains, theta0_init)
        }
    }

    /// Dimension of theta, including the mixing weight of the mixture link.
    pub fn theta_dim(&self) -> usize {
        match (self.composition, self.link) {
            (Composition::GeneralNonlinear, NonlinearLink::Mixture) => 1 + self.form.dim(),
            _ => self.form.dim(),
        }
    }

    pub fn theta_domain(&self) -> Vec<(f64, f64)> {
        if let Some(b) = &self.theta_bounds {
            return b.clone();
        }
        match (self.composition, self.link) {
            (Composition::GeneralNonlinear, NonlinearLink::Mixture) => {
                let mut d = vec![(0.0, 1.0)];
                d.extend(self.form.theta_domain());
                d
            }
            _ => self.form.theta_domain(),
        }
    }

    pub fn inside_theta_domain(&self, theta: &[f64]) -> bool {
        theta.len() == self.theta_dim()
            && self
                .theta_domain()
                .iter()
                .zip(theta)
                .all(|((lo, hi), t)| t.is_finite() && *t >= *lo && *t <= *hi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::config("model needs at least one sample"));
        }
        if self.domains.len() != self.m {
            return Err(Error::config(format!(
                "model has m = {} but {} domains",
                self.m,
                self.domains.len()
            )));
        }
        if self.theta0_init.len() != self.theta_dim() {
            return Err(Error::config(format!(
                "theta0_init has length {}, expected {}",
                self.theta0_init.len(),
                self.theta_dim()
            )));
        }
        if let Some(b) = &self.theta_bounds {
            if b.len() != self.theta_dim() || b.iter().any(|(lo, hi)| !(lo <= hi)) {
                return Err(Error::config("theta_bounds malformed"));
            }
        }
        if self.composition == Composition::Transformation && !self.form.is_invertible_transform()
        {
            return Err(Error::config(
                "transformation composition requires an invertible transform",
            ));
        }
        self.form.validate(self.m)
    }

    /// Domains with real-line truncation bounds derived from each group's data.
    pub fn resolve_domains(&self, samples: &SampleSet) -> Result<Vec<Domain>> {
        self.domains
            .iter()
            .zip(&samples.groups)
            .map(|(d, data)| match d.kind {
                DomainKind::BoundedInterval => Ok(*d),
                DomainKind::RealLine => Domain::truncated_real_line(data),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub groups: Vec<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SampleSet {
    pub fn new(groups: Vec<Vec<f64>>) -> Self {
        SampleSet { groups, seed: None }
    }

    pub fn single(data: Vec<f64>) -> Self {
        SampleSet::new(vec![data])
    }

    pub fn m(&self) -> usize {
        self.groups.len()
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn pooled(&self) -> Vec<f64> {
        self.groups.iter().flatten().copied().collect()
    }

    pub fn validate(&self, domains: &[Domain]) -> Result<()> {
        if domains.len() != self.groups.len() {
            return Err(Error::config(format!(
                "{} groups but {} domains",
                self.groups.len(),
                domains.len()
            )));
        }
        for (l, (group, dom)) in self.groups.iter().zip(domains).enumerate() {
            if group.len() < 2 {
                return Err(Error::config(format!(
                    "group {l} has {} observations, need at least 2",
                    group.len()
                )));
            }
            if let Some(x) = group.iter().find(|x| !x.is_finite()) {
                return Err(Error::config(format!("group {l} has non-finite value {x}")));
            }
            if dom.kind == DomainKind::BoundedInterval {
                if let Some(x) = group.iter().find(|x| !dom.contains(**x)) {
                    return Err(Error::Domain(format!(
                        "observation {x} of group {l} lies outside [{}, {}]",
                        dom.lower, dom.upper
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{make_space, SpaceFamily};

    #[test]
    fn transformation_requires_invertible_form() {
        let spec = ModelSpec::transformation(
            ParametricForm::GumbelLogit,
            make_space(SpaceFamily::Sobolev2Unit),
            vec![Domain::unit()],
            vec![0.5, 0.2],
        );
        assert!(spec.validate().is_err());
        let ok = ModelSpec::transformation(
            ParametricForm::PowerTransform,
            make_space(SpaceFamily::Sobolev2Unit),
            vec![Domain::unit()],
            vec![1.0],
        );
        ok.validate().unwrap();
    }

    #[test]
    fn mixture_link_adds_weight_parameter() {
        let spec = ModelSpec::nonlinear(
            NonlinearLink::Mixture,
            ParametricForm::TruncnormLogit,
            make_space(SpaceFamily::Sobolev2Unit),
            vec![Domain::unit()],
            vec![0.5, 0.5, 0.2],
        );
        spec.validate().unwrap();
        assert_eq!(spec.theta_dim(), 3);
        assert_eq!(spec.theta_domain()[0], (0.0, 1.0));
    }

    #[test]
    fn sample_validation() {
        let doms = [Domain::unit()];
        assert!(SampleSet::single(vec![0.2]).validate(&doms).is_err());
        assert!(SampleSet::single(vec![0.2, 1.5]).validate(&doms).is_err());
        SampleSet::single(vec![0.2, 0.5]).validate(&doms).unwrap();
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = ModelSpec::additive(
            ParametricForm::GumbelLogit,
            make_space(SpaceFamily::Sobolev2Unit),
            vec![Domain::unit()],
            vec![0.5, 0.2],
        );
        let json = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
