//! The `fit`, `simulate` and `evaluate` commands.

use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use semidens::evaluation::{kl, normalize_log_density, skl};
use semidens::simulation::{check_failure_rate, run_scenario, TableRow, Truth};
use semidens::transform::initial_theta;
use semidens::{
    fit_additive, fit_nonlinear, fit_transformation, make_rule, make_space, Composition, Domain,
    DomainKind, FitOptions, FitResult, ModelSpec, ParametricForm, RkhsSpace, SampleSet,
    SpaceFamily,
};

use crate::config::{read_json, FitConfig, ModelConfig, Preset, SimulateConfig};
use crate::data::Table;
use crate::{faithful, CliError, CliResult, SCHEMA_VERSION};

/// Quadrature nodes of the `evaluate` metrics.
pub const EVAL_NODES: usize = semidens::simulation::scenario::EVAL_NODES;

/// Command-line values that override the configuration file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
}

/// Fit artifact written by `fit` and read by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub param_names: Vec<String>,
    pub fit: FitResult,
}

impl FitArtifact {
    pub fn read(path: &Path) -> CliResult<Self> {
        let artifact: FitArtifact = read_json(path)?;
        if artifact.schema_version != SCHEMA_VERSION {
            return Err(CliError::input(format!(
                "{}: schema_version {} is not supported",
                path.display(),
                artifact.schema_version
            )));
        }
        Ok(artifact)
    }
}

/// Path of the density CSV written next to the fit artifact `out`.
pub fn density_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.density.csv"))
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::input(format!("cannot write {}: {e}", path.display()))
}

/// Model, samples and options described by a fit configuration.
pub fn prepare_fit(
    cfg: &FitConfig,
    data: Option<&Table>,
    overrides: Overrides,
) -> CliResult<(ModelSpec, SampleSet, FitOptions)> {
    let mut solver = cfg.solver.clone();
    if let Some(seed) = overrides.seed {
        solver.seeds.knots = seed;
    }
    if let Some(alpha) = overrides.alpha {
        solver.alpha_cv = alpha;
    }
    let opts = solver.fit_options()?;
    cfg.output.validate()?;
    let (model, samples) = match cfg.preset {
        Some(Preset::Faithful) => {
            if cfg.model.is_some() {
                return Err(CliError::input("at `model`: not allowed together with a preset"));
            }
            let variable = cfg
                .variable
                .as_deref()
                .ok_or_else(|| CliError::input("at `variable`: the faithful preset needs `waiting` or `duration`"))?;
            let bundled;
            let table = match data {
                Some(t) => t,
                None => {
                    bundled = faithful::table();
                    &bundled
                }
            };
            let x = table.column(variable)?.to_vec();
            (faithful::model(variable, &x)?, SampleSet::single(x))
        }
        None => {
            if cfg.variable.is_some() {
                return Err(CliError::input("at `variable`: only used by presets"));
            }
            let model_cfg = cfg
                .model
                .as_ref()
                .ok_or_else(|| CliError::input("at `model`: required without a preset"))?;
            let table = data.ok_or_else(|| CliError::input("--data is required without a preset"))?;
            build_model(model_cfg, table)?
        }
    };
    model.validate()?;
    samples.validate(&model.domains)?;
    Ok((model, samples, opts))
}

fn build_model(cfg: &ModelConfig, table: &Table) -> CliResult<(ModelSpec, SampleSet)> {
    if cfg.domains.is_empty() {
        return Err(CliError::input("at `model.domains`: need at least one domain"));
    }
    let domains = cfg.domains.iter().map(|d| d.resolve()).collect::<CliResult<Vec<_>>>()?;
    let samples = SampleSet::new(table.select(cfg.columns.as_deref(), domains.len())?);
    let form = match &cfg.form {
        Some(f) => f.resolve()?,
        None => ParametricForm::LinearBasis { powers: vec![] },
    };
    let space = space_for(cfg.space, cfg.composition, &domains)?;
    let mut model = ModelSpec {
        m: domains.len(),
        composition: cfg.composition,
        form,
        space,
        domains,
        theta0_init: vec![],
        link: cfg.link,
        convention: cfg.convention,
        theta_bounds: cfg.theta_bounds.clone(),
    };
    model.theta0_init = match &cfg.theta_init {
        Some(t) => t.clone(),
        None if model.theta_dim() == 0 => vec![],
        None if model.composition == Composition::Transformation => {
            initial_theta(&model.form, &samples)?
        }
        None if model.form == ParametricForm::MixnormLogdensity
            && model.composition == Composition::Additive =>
        {
            faithful::mixture_start(&samples.pooled())?
        }
        None => {
            return Err(CliError::input(format!(
                "at `model.theta_init`: required for form {:?} with this composition",
                model.form
            )))
        }
    };
    Ok((model, samples))
}

/// The space of `h`. Sobolev spaces of additive and nonlinear models live on
/// the hull of the bounded domains; transformation models keep the unit
/// interval of the transformed scale.
fn space_for(family: SpaceFamily, composition: Composition, domains: &[Domain]) -> CliResult<RkhsSpace> {
    let bounded: Vec<&Domain> = domains
        .iter()
        .filter(|d| d.kind == DomainKind::BoundedInterval)
        .collect();
    if family == SpaceFamily::ThinplateReal
        || composition == Composition::Transformation
        || bounded.is_empty()
    {
        return Ok(make_space(family));
    }
    let lo = bounded.iter().map(|d| d.lower).fold(f64::INFINITY, f64::min);
    let hi = bounded.iter().map(|d| d.upper).fold(f64::NEG_INFINITY, f64::max);
    Ok(RkhsSpace::on_interval(family, lo, hi)?)
}

pub fn run_fit(model: &ModelSpec, samples: &SampleSet, opts: &FitOptions) -> CliResult<FitResult> {
    Ok(match model.composition {
        Composition::Additive => fit_additive(model, samples, opts)?,
        Composition::GeneralNonlinear => fit_nonlinear(model, samples, opts)?,
        Composition::Transformation => fit_transformation(model, samples, opts)?,
    })
}

/// Equispaced grid on each fitted domain with the fitted density.
pub fn density_grid(fit: &FitResult, grid_points: usize) -> CliResult<Vec<(usize, Vec<f64>, Vec<f64>)>> {
    (0..fit.model.m)
        .map(|l| {
            let xs = fit.model.domains[l].grid(grid_points);
            let dens = fit.log_density(l, &xs)?.into_iter().map(f64::exp).collect();
            Ok((l, xs, dens))
        })
        .collect()
}

pub fn write_density_csv(path: &Path, grid: &[(usize, Vec<f64>, Vec<f64>)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    w.write_record(["schema_version", "sample", "x", "density"])
        .map_err(|e| io_error(path, e))?;
    for (l, xs, dens) in grid {
        for (x, d) in xs.iter().zip(dens) {
            w.write_record([
                SCHEMA_VERSION.to_string(),
                l.to_string(),
                x.to_string(),
                d.to_string(),
            ])
            .map_err(|e| io_error(path, e))?;
        }
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn cmd_fit(config: &Path, data: Option<&Path>, out: &Path, overrides: Overrides) -> CliResult<FitArtifact> {
    let cfg: FitConfig = read_json(config)?;
    let table = data.map(Table::read).transpose()?;
    let (model, samples, opts) = prepare_fit(&cfg, table.as_ref(), overrides)?;
    info!("fitting {:?} model to {} observations", model.composition, samples.total());
    let fit = run_fit(&model, &samples, &opts)?;
    let grid = density_grid(&fit, cfg.output.grid_points)?;
    let artifact = FitArtifact {
        schema_version: SCHEMA_VERSION,
        param_names: model.form.param_names(),
        fit,
    };
    let json = serde_json::to_string_pretty(&artifact)
        .map_err(|e| CliError::Estimation(format!("cannot serialize fit: {e}")))?;
    std::fs::write(out, json).map_err(|e| io_error(out, e))?;
    write_density_csv(&density_path(out), &grid)?;
    Ok(artifact)
}

pub const SIMULATION_HEADER: [&str; 12] = [
    "schema_version",
    "scenario",
    "estimator",
    "setting",
    "n1",
    "n2",
    "n_replicates",
    "n_failed",
    "metric",
    "mean",
    "bias",
    "variance",
];

pub fn write_simulation_csv(out: impl Write, rows: &[TableRow]) -> csv::Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SIMULATION_HEADER)?;
    for r in rows {
        w.write_record([
            SCHEMA_VERSION.to_string(),
            r.scenario.clone(),
            r.estimator.clone(),
            r.setting.clone(),
            r.n1.to_string(),
            r.n2.map(|n| n.to_string()).unwrap_or_default(),
            r.n_replicates.to_string(),
            r.n_failed.to_string(),
            r.metric.clone(),
            r.mean.to_string(),
            opt(r.bias),
            opt(r.variance),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the scenario and writes its table. The table is written even when
/// too many replicates failed; that case returns an estimation error.
pub fn cmd_simulate(config: &Path, out: &Path, full: bool, overrides: Overrides) -> CliResult<Vec<TableRow>> {
    let mut cfg: SimulateConfig = read_json(config)?;
    if let Some(seed) = overrides.seed {
        cfg.solver.seeds.simulation = Some(seed);
    }
    if let Some(alpha) = overrides.alpha {
        cfg.solver.alpha_cv = alpha;
    }
    let scenario = cfg.scenario(full)?;
    let rows = run_scenario(&scenario)?;
    let file = std::fs::File::create(out).map_err(|e| io_error(out, e))?;
    write_simulation_csv(file, &rows).map_err(|e| io_error(out, e))?;
    check_failure_rate(&rows)?;
    Ok(rows)
}

/// Reference density of one sample: a cataloged truth or a previous fit.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TruthSource {
    Fit {
        fit: PathBuf,
        #[serde(default)]
        sample: usize,
    },
    Density(Truth),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TruthSpec {
    PerSample { truths: Vec<TruthSource> },
    Single(TruthSource),
}

/// One row of the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub sample: usize,
    pub metric: &'static str,
    pub value: f64,
}

fn domains_match(a: &Domain, b: &Domain) -> bool {
    let tol = 1e-12 * (1.0 + a.lower.abs().max(a.upper.abs()));
    a.kind == b.kind && (a.lower - b.lower).abs() <= tol && (a.upper - b.upper).abs() <= tol
}

/// Log density of the truth and the domain the metrics are computed on.
fn reference(source: &TruthSource, fitted: &Domain, base: &Path) -> CliResult<(Domain, Box<dyn Fn(&[f64]) -> CliResult<Vec<f64>>>)> {
    match source {
        TruthSource::Density(truth) => {
            let domain = truth.eval_domain();
            let ok = if truth.is_real_line() {
                fitted.kind == DomainKind::RealLine
            } else {
                fitted.kind == DomainKind::BoundedInterval && domains_match(&domain, fitted)
            };
            if !ok {
                return Err(CliError::input(format!(
                    "truth domain [{}, {}] does not match the fitted domain [{}, {}]",
                    domain.lower, domain.upper, fitted.lower, fitted.upper
                )));
            }
            let truth = *truth;
            Ok((domain, Box::new(move |xs| Ok(xs.iter().map(|&x| truth.log_density(x)).collect()))))
        }
        TruthSource::Fit { fit, sample } => {
            let path = if fit.is_relative() { base.join(fit) } else { fit.clone() };
            let reference = FitArtifact::read(&path)?.fit;
            if *sample >= reference.model.m {
                return Err(CliError::input(format!("reference fit has no sample {sample}")));
            }
            let domain = reference.model.domains[*sample];
            if !domains_match(&domain, fitted) {
                return Err(CliError::input(format!(
                    "reference domain [{}, {}] does not match the fitted domain [{}, {}]",
                    domain.lower, domain.upper, fitted.lower, fitted.upper
                )));
            }
            let sample = *sample;
            Ok((domain, Box::new(move |xs| Ok(reference.eta(sample, xs)?))))
        }
    }
}

/// KL and symmetrized KL of each fitted sample density against its reference.
pub fn evaluate(fit: &FitResult, spec: &TruthSpec, base: &Path) -> CliResult<Vec<EvalRow>> {
    let sources: Vec<&TruthSource> = match spec {
        TruthSpec::Single(s) => vec![s],
        TruthSpec::PerSample { truths } => truths.iter().collect(),
    };
    if sources.len() != fit.model.m {
        return Err(CliError::input(format!(
            "fit has {} samples but {} truths are given",
            fit.model.m,
            sources.len()
        )));
    }
    let mut rows = Vec::new();
    for (l, source) in sources.into_iter().enumerate() {
        let (domain, log_truth) = reference(source, &fit.model.domains[l], base)?;
        let rule = make_rule(&domain, EVAL_NODES)?;
        let eta_true = log_truth(&rule.nodes)?;
        let eta_hat = fit.eta(l, &rule.nodes)?;
        let f_true = normalize_log_density(&rule, &eta_true)?;
        let f_hat = normalize_log_density(&rule, &eta_hat)?;
        rows.push(EvalRow { sample: l, metric: "kl", value: kl(&f_true, &f_hat, &rule)? });
        rows.push(EvalRow { sample: l, metric: "skl", value: skl(&eta_true, &eta_hat, &rule)? });
    }
    Ok(rows)
}

pub fn cmd_evaluate(fit_path: &Path, truth_path: &Path, out: &Path) -> CliResult<Vec<EvalRow>> {
    let artifact = FitArtifact::read(fit_path)?;
    let spec: TruthSpec = read_json(truth_path)?;
    let base = truth_path.parent().unwrap_or(Path::new("."));
    let rows = evaluate(&artifact.fit, &spec, base)?;
    let mut w = csv::Writer::from_path(out).map_err(|e| io_error(out, e))?;
    let write = |w: &mut csv::Writer<std::fs::File>| -> csv::Result<()> {
        w.write_record(["schema_version", "sample", "metric", "value"])?;
        for r in &rows {
            w.write_record([
                SCHEMA_VERSION.to_string(),
                r.sample.to_string(),
                r.metric.to_string(),
                r.value.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(|e| io_error(out, e))?;
    Ok(rows)
}
