//! Scenario definitions and the replicate driver.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{bias_variance, kernel_baseline, kl, mse_decomposition, normalize_log_density, skl};
use crate::fitted::{FitOptions, FitResult};
use crate::forms::ParametricForm;
use crate::functionals::{make_rule, QuadratureRule};
use crate::model::{ModelSpec, SampleSet};
use crate::profile::fit_additive;
use crate::simulation::truth::{derive_seed, Truth};
use crate::space::{make_space, Domain, SpaceFamily};
use crate::transform::{fit_transformation, initial_theta};

pub const EVAL_NODES: usize = 400;
/// Largest tolerated fraction of failed replicates per estimator and setting.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;
pub const DEFAULT_REPLICATES: usize = 25;
pub const FULL_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    NearNormal,
    NearGumbel,
    WeibullPower,
    TwoSampleGumbel,
    TwoSampleLogistic,
}

impl ScenarioId {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioId::NearNormal => "near_normal",
            ScenarioId::NearGumbel => "near_gumbel",
            ScenarioId::WeibullPower => "weibull_power",
            ScenarioId::TwoSampleGumbel => "two_sample_gumbel",
            ScenarioId::TwoSampleLogistic => "two_sample_logistic",
        }
    }

    pub fn is_two_sample(&self) -> bool {
        matches!(self, ScenarioId::TwoSampleGumbel | ScenarioId::TwoSampleLogistic)
    }

    fn setting_name(&self) -> &'static str {
        match self {
            ScenarioId::NearNormal | ScenarioId::NearGumbel => "a",
            ScenarioId::WeibullPower => "gamma",
            _ => "mu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// The semiparametric estimator of the scenario.
    Semi,
    /// Nonparametric cubic smoothing spline (second-order Sobolev penalty).
    Cubic,
    /// Gaussian kernel with the normal-reference bandwidth.
    Kernel,
    /// Separate thin-plate fits of each sample.
    Tp,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Semi => "semi",
            Estimator::Cubic => "cubic",
            Estimator::Kernel => "kernel",
            Estimator::Tp => "tp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: ScenarioId,
    /// Departure `a` (near-Normal, near-Gumbel) or shape `gamma` (Weibull).
    /// Two-sample scenarios use the location of the second sample.
    pub settings: Vec<f64>,
    /// `(n1, n2)`; `n2` only for two-sample scenarios.
    pub sample_sizes: Vec<(usize, Option<usize>)>,
    pub n_replicates: usize,
    pub base_seed: u64,
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub options: FitOptions,
}

impl Scenario {
    pub fn preset(id: ScenarioId, full: bool) -> Self {
        let n_replicates = if full { FULL_REPLICATES } else { DEFAULT_REPLICATES };
        let single = |ns: &[usize]| ns.iter().map(|&n| (n, None)).collect::<Vec<_>>();
        let (settings, sample_sizes, estimators) = match id {
            ScenarioId::NearNormal | ScenarioId::NearGumbel => (
                vec![0.25, 1.0, 4.0],
                single(&[100, 200, 500]),
                vec![Estimator::Semi, Estimator::Cubic, Estimator::Kernel],
            ),
            ScenarioId::WeibullPower => (
                vec![1.0, 2.0, 3.0],
                single(&[100, 200]),
                vec![Estimator::Semi, Estimator::Cubic],
            ),
            ScenarioId::TwoSampleGumbel | ScenarioId::TwoSampleLogistic => (
                vec![2.0],
                vec![(100, Some(100)), (100, Some(200)), (200, Some(100)), (200, Some(200))],
                vec![Estimator::Semi, Estimator::Tp],
            ),
        };
        Scenario {
            id,
            settings,
            sample_sizes,
            n_replicates,
            base_seed: 20_240_601,
            estimators,
            options: FitOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_replicates == 0 {
            return Err(Error::config("n_replicates must be at least 1"));
        }
        if self.settings.is_empty() || self.sample_sizes.is_empty() || self.estimators.is_empty() {
            return Err(Error::config("scenario needs settings, sample sizes and estimators"));
        }
        for &(n1, n2) in &self.sample_sizes {
            if n1 < 2 {
                return Err(Error::config("sample sizes must be at least 2"));
            }
            if self.id.is_two_sample() != n2.is_some() || n2.is_some_and(|n| n < 2) {
                return Err(Error::config(format!(
                    "{} needs {} sample sizes",
                    self.id.name(),
                    if self.id.is_two_sample() { "paired" } else { "single" }
                )));
            }
        }
        for &s in &self.settings {
            let ok = match self.id {
                ScenarioId::NearNormal | ScenarioId::NearGumbel => s.is_finite(),
                ScenarioId::WeibullPower => s > 0.0 && s <= 20.0,
                _ => s.is_finite(),
            };
            if !ok {
                return Err(Error::config(format!("setting {s} out of range for {}", self.id.name())));
            }
        }
        if self.id.is_two_sample() && self.estimators.contains(&Estimator::Cubic) {
            return Err(Error::config("cubic baseline needs a bounded domain"));
        }
        if !self.id.is_two_sample() && self.estimators.contains(&Estimator::Tp) {
            return Err(Error::config("thin-plate baseline is for two-sample scenarios"));
        }
        Ok(())
    }

    /// True densities of each sample for a setting.
    pub fn truths(&self, setting: f64) -> Vec<Truth> {
        match self.id {
            ScenarioId::NearNormal => vec![Truth::NearNormal { a: setting, mu: 0.5, sigma: 0.2 }],
            ScenarioId::NearGumbel => vec![Truth::NearGumbel { a: setting, mu: 0.5, sigma: 0.2 }],
            ScenarioId::WeibullPower => vec![Truth::Weibull { gamma: setting, scale: 1.0 }],
            ScenarioId::TwoSampleGumbel => vec![
                Truth::Gumbel { mu: 0.0, sigma: 1.0 },
                Truth::Gumbel { mu: setting, sigma: 1.0 },
            ],
            ScenarioId::TwoSampleLogistic => vec![
                Truth::Logistic { mu: 0.0, sigma: 1.0 },
                Truth::Logistic { mu: setting, sigma: 1.0 },
            ],
        }
    }

    /// Parameters whose MSE is reported, with their true values.
    fn reported_parameters(&self, setting: f64) -> Vec<(&'static str, f64)> {
        match self.id {
            ScenarioId::WeibullPower => vec![("gamma", setting)],
            ScenarioId::TwoSampleGumbel | ScenarioId::TwoSampleLogistic => {
                vec![("mu", setting), ("sigma", 1.0)]
            }
            _ => vec![],
        }
    }
}

/// One line of the output table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scenario: String,
    pub estimator: String,
    pub setting: String,
    pub n1: usize,
    pub n2: Option<usize>,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub metric: String,
    pub mean: f64,
    pub bias: Option<f64>,
    pub variance: Option<f64>,
}

/// Per-replicate output of one estimator.
#[derive(Debug, Clone)]
pub struct ReplicateOutput {
    /// Log density of each sample on its evaluation rule.
    pub log_density: Vec<Vec<f64>>,
    /// Log of `exp(h) / int exp(h)` on the first evaluation rule.
    pub log_h_density: Option<Vec<f64>>,
    pub theta: Option<Vec<f64>>,
}

fn semi_model(id: ScenarioId, data: &SampleSet) -> Result<ModelSpec> {
    Ok(match id {
        ScenarioId::NearNormal => {
            let x = &data.groups[0];
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            ModelSpec::additive(
                ParametricForm::TruncnormLogit,
                make_space(SpaceFamily::Sobolev3Unit),
                vec![Domain::unit()],
                vec![mean, sd.max(0.02)],
            )
        }
        ScenarioId::NearGumbel => ModelSpec::additive(
            ParametricForm::GumbelLogit,
            make_space(SpaceFamily::Sobolev2Unit),
            vec![Domain::unit()],
            vec![0.5, 0.2],
        ),
        ScenarioId::WeibullPower => {
            let form = ParametricForm::PowerTransform;
            let theta0 = initial_theta(&form, data)?;
            ModelSpec::transformation(form, make_space(SpaceFamily::Sobolev2Unit), vec![Domain::unit()], theta0)
        }
        ScenarioId::TwoSampleGumbel | ScenarioId::TwoSampleLogistic => {
            let form = ParametricForm::LocationScale;
            let theta0 = initial_theta(&form, data)?;
            ModelSpec::transformation(
                form,
                make_space(SpaceFamily::ThinplateReal),
                vec![Domain::real_line(), Domain::real_line()],
                theta0,
            )
        }
    })
}

fn log_on_rule(fit: &FitResult, sample: usize, rule: &QuadratureRule) -> Result<Vec<f64>> {
    Ok(fit.density_on_rule(sample, rule)?.iter().map(|v| v.ln()).collect())
}

fn run_estimator(
    scenario: &Scenario,
    estimator: Estimator,
    data: &SampleSet,
    rules: &[QuadratureRule],
    opts: &FitOptions,
) -> Result<ReplicateOutput> {
    match estimator {
        Estimator::Semi => {
            let model = semi_model(scenario.id, data)?;
            let fit = match model.composition {
                crate::model::Composition::Additive => fit_additive(&model, data, opts)?,
                _ => fit_transformation(&model, data, opts)?,
            };
            let log_density = (0..rules.len())
                .map(|l| log_on_rule(&fit, l, &rules[l]))
                .collect::<Result<Vec<_>>>()?;
            let log_h_density = if scenario.id.is_two_sample() {
                let h = fit.h_hat.eval_many(&rules[0].nodes);
                let f = normalize_log_density(&rules[0], &h)?;
                Some(f.iter().map(|v| v.ln()).collect())
            } else {
                None
            };
            Ok(ReplicateOutput {
                log_density,
                log_h_density,
                theta: Some(fit.theta_hat),
            })
        }
        Estimator::Cubic => {
            let model = ModelSpec::nonparametric(make_space(SpaceFamily::Sobolev2Unit), vec![Domain::unit()]);
            let fit = fit_additive(&model, data, opts)?;
            Ok(ReplicateOutput {
                log_density: vec![log_on_rule(&fit, 0, &rules[0])?],
                log_h_density: None,
                theta: None,
            })
        }
        Estimator::Kernel => {
            let log_density = data
                .groups
                .iter()
                .zip(rules)
                .map(|(g, rule)| Ok(kernel_baseline(g, rule)?.iter().map(|v| v.ln()).collect()))
                .collect::<Result<Vec<_>>>()?;
            Ok(ReplicateOutput {
                log_density,
                log_h_density: None,
                theta: None,
            })
        }
        Estimator::Tp => {
            let model = ModelSpec::nonparametric(make_space(SpaceFamily::ThinplateReal), vec![Domain::real_line()]);
            let log_density = data
                .groups
                .iter()
                .zip(rules)
                .map(|(g, rule)| {
                    let fit = fit_additive(&model, &SampleSet::single(g.clone()), opts)?;
                    log_on_rule(&fit, 0, rule)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ReplicateOutput {
                log_density,
                log_h_density: None,
                theta: None,
            })
        }
    }
}

/// Draws the data of one replicate and runs every estimator on it.
pub fn run_replicate(
    scenario: &Scenario,
    setting_index: usize,
    size_index: usize,
    replicate: usize,
) -> Result<Vec<Result<ReplicateOutput>>> {
    let setting = scenario.settings[setting_index];
    let (n1, n2) = scenario.sample_sizes[size_index];
    let stream = (setting_index as u64) << 32 | size_index as u64;
    let seed = derive_seed(scenario.base_seed, stream, replicate as u64);
    let truths = scenario.truths(setting);
    let sizes = [Some(n1), n2];
    let groups = truths
        .iter()
        .zip(sizes)
        .enumerate()
        .map(|(l, (t, n))| t.sample(n.unwrap_or(n1), derive_seed(seed, 1 + l as u64, 0)))
        .collect::<Result<Vec<_>>>()?;
    let data = SampleSet {
        groups,
        seed: Some(seed),
    };
    let rules = eval_rules(&truths)?;
    let opts = FitOptions {
        knot_seed: derive_seed(seed, 0, 1),
        ..scenario.options.clone()
    };
    Ok(scenario
        .estimators
        .iter()
        .map(|&e| run_estimator(scenario, e, &data, &rules, &opts))
        .collect())
}

fn eval_rules(truths: &[Truth]) -> Result<Vec<QuadratureRule>> {
    truths.iter().map(|t| make_rule(&t.eval_domain(), EVAL_NODES)).collect()
}

struct Aggregate {
    mean: f64,
    bias: Option<f64>,
    variance: Option<f64>,
}

/// Sum over samples of the KL decomposition.
fn aggregate_kl(outputs: &[Vec<Vec<f64>>], true_densities: &[Vec<f64>], rules: &[QuadratureRule]) -> Result<Aggregate> {
    let r = outputs.len();
    let mut mean = 0.0;
    let mut bias = 0.0;
    let mut variance = 0.0;
    for (l, rule) in rules.iter().enumerate() {
        let reps: Vec<Vec<f64>> = outputs.iter().map(|o| o[l].clone()).collect();
        if r >= 2 {
            let bv = bias_variance(&reps, &true_densities[l], rule)?;
            mean += bv.mean_kl;
            bias += bv.bias;
            variance += bv.variance;
        } else {
            let f = normalize_log_density(rule, &reps[0])?;
            mean += kl(&true_densities[l], &f, rule)?;
        }
    }
    Ok(if r >= 2 {
        Aggregate {
            mean,
            bias: Some(bias),
            variance: Some(variance),
        }
    } else {
        Aggregate {
            mean,
            bias: None,
            variance: None,
        }
    })
}

/// Errors when any row's cell lost more than [`MAX_FAILURE_FRACTION`] of its
/// replicates. Rows are still complete for the cells that succeeded.
pub fn check_failure_rate(rows: &[TableRow]) -> Result<()> {
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| r.metric == "kl")
        .filter(|r| r.n_failed as f64 > MAX_FAILURE_FRACTION * r.n_replicates as f64)
        .map(|r| {
            format!(
                "{} {} {} n=({}, {:?}): {} of {} replicates failed",
                r.scenario, r.estimator, r.setting, r.n1, r.n2, r.n_failed, r.n_replicates
            )
        })
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Estimation(bad.join("; ")))
    }
}

/// Runs every (setting, size) cell and returns one row per estimator and
/// metric. Failed replicates are excluded and counted in `n_failed`; see
/// [`check_failure_rate`]. A cell where every replicate failed has no rows.
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<TableRow>> {
    scenario.validate()?;
    let mut rows = Vec::new();
    for (si, &setting) in scenario.settings.iter().enumerate() {
        let truths = scenario.truths(setting);
        let rules = eval_rules(&truths)?;
        let true_log: Vec<Vec<f64>> = truths
            .iter()
            .zip(&rules)
            .map(|(t, rule)| rule.nodes.iter().map(|&x| t.log_density(x)).collect())
            .collect();
        let true_densities = true_log
            .iter()
            .zip(&rules)
            .map(|(lg, rule)| normalize_log_density(rule, lg))
            .collect::<Result<Vec<_>>>()?;
        for (ni, &(n1, n2)) in scenario.sample_sizes.iter().enumerate() {
            info!(
                "{} {}={} n=({n1}, {n2:?}): {} replicates",
                scenario.id.name(),
                scenario.id.setting_name(),
                setting,
                scenario.n_replicates
            );
            let per_replicate: Vec<Result<Vec<Result<ReplicateOutput>>>> = (0..scenario.n_replicates)
                .into_par_iter()
                .map(|r| run_replicate(scenario, si, ni, r))
                .collect();
            let mut by_estimator: Vec<Vec<ReplicateOutput>> = vec![Vec::new(); scenario.estimators.len()];
            let mut failures = vec![0usize; scenario.estimators.len()];
            for (r, rep) in per_replicate.into_iter().enumerate() {
                let rep = rep?;
                for (e, out) in rep.into_iter().enumerate() {
                    match out {
                        Ok(o) if o.log_density.iter().flatten().all(|v| v.is_finite()) => {
                            by_estimator[e].push(o)
                        }
                        Ok(_) => {
                            warn!("replicate {r}, {}: non-finite density", scenario.estimators[e].name());
                            failures[e] += 1;
                        }
                        Err(err) => {
                            warn!("replicate {r}, {}: {err}", scenario.estimators[e].name());
                            failures[e] += 1;
                        }
                    }
                }
            }
            for (e, estimator) in scenario.estimators.iter().enumerate() {
                let failed = failures[e];
                if by_estimator[e].is_empty() {
                    warn!(
                        "{} {}: every replicate failed at n=({n1}, {n2:?})",
                        scenario.id.name(),
                        estimator.name()
                    );
                    continue;
                }
                let outputs = &by_estimator[e];
                let row = |metric: &str, agg: &Aggregate| TableRow {
                    scenario: scenario.id.name().to_string(),
                    estimator: estimator.name().to_string(),
                    setting: format!("{}={}", scenario.id.setting_name(), setting),
                    n1,
                    n2,
                    n_replicates: scenario.n_replicates,
                    n_failed: failed,
                    metric: metric.to_string(),
                    mean: agg.mean,
                    bias: agg.bias,
                    variance: agg.variance,
                };
                let densities: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| o.log_density.clone()).collect();
                rows.push(row("kl", &aggregate_kl(&densities, &true_densities, &rules)?));

                let mut skl_sum = 0.0;
                for o in outputs {
                    for (l, rule) in rules.iter().enumerate() {
                        skl_sum += skl(&true_log[l], &o.log_density[l], rule)?;
                    }
                }
                rows.push(row(
                    "skl",
                    &Aggregate {
                        mean: skl_sum / outputs.len() as f64,
                        bias: None,
                        variance: None,
                    },
                ));

                let h_densities: Option<Vec<Vec<Vec<f64>>>> = outputs
                    .iter()
                    .map(|o| o.log_h_density.clone().map(|h| vec![h]))
                    .collect();
                if let Some(h) = h_densities {
                    rows.push(row(
                        "kl_s",
                        &aggregate_kl(&h, &true_densities[..1], &rules[..1])?,
                    ));
                }

                if outputs.iter().all(|o| o.theta.is_some()) {
                    for (k, (name, truth)) in scenario.reported_parameters(setting).into_iter().enumerate() {
                        let estimates: Vec<f64> =
                            outputs.iter().map(|o| o.theta.as_ref().unwrap()[k]).collect();
                        let m = mse_decomposition(&estimates, truth)?;
                        let multi = outputs.len() >= 2;
                        rows.push(row(
                            &format!("mse:{name}"),
                            &Aggregate {
                                mean: m.mse,
                                bias: multi.then_some(m.bias2),
                                variance: multi.then_some(m.variance),
                            },
                        ));
                    }
                }
            }
        }
    }
    Ok(rows)
}
