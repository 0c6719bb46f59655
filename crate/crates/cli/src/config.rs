//! JSON configuration of the `fit` and `simulate` commands.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use semidens::simulation::{Estimator, Scenario, ScenarioId};
use semidens::{
    Composition, Domain, FitOptions, LambdaSearch, NonlinearLink, OuterLambda, ParametricForm,
    SpaceFamily, TransformConvention,
};

use crate::{CliError, CliResult};

pub const DEFAULT_GRID_POINTS: usize = 512;

/// Reads and parses a JSON file, reporting the field path of schema errors.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            e.into_inner().to_string()
        } else {
            format!("at `{path}`: {}", e.into_inner())
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Normal-mixture semiparametric fit of one Old Faithful variable.
    Faithful,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub preset: Option<Preset>,
    /// Data column fitted by a preset.
    #[serde(default)]
    pub variable: Option<String>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_composition")]
    pub composition: Composition,
    #[serde(default)]
    pub link: NonlinearLink,
    #[serde(default)]
    pub convention: TransformConvention,
    /// Omitted for a purely nonparametric model.
    #[serde(default)]
    pub form: Option<FormConfig>,
    pub space: SpaceFamily,
    pub domains: Vec<DomainConfig>,
    #[serde(default)]
    pub theta_init: Option<Vec<f64>>,
    #[serde(default)]
    pub theta_bounds: Option<Vec<(f64, f64)>>,
    /// Data columns, one per sample; defaults to the leading columns.
    #[serde(default)]
    pub columns: Option<Vec<String>>,
}

fn default_composition() -> Composition {
    Composition::Additive
}

/// A form given by name, or as a full object when it carries fields.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FormConfig {
    Name(String),
    Full(ParametricForm),
}

impl FormConfig {
    pub fn resolve(&self) -> CliResult<ParametricForm> {
        match self {
            FormConfig::Full(f) => Ok(f.clone()),
            FormConfig::Name(name) => {
                serde_json::from_value(serde_json::json!({ "id": name })).map_err(|e| {
                    CliError::input(format!("at `model.form`: {e}"))
                })
            }
        }
    }
}

/// `[lower, upper]` or `"real_line"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum DomainConfig {
    Interval([f64; 2]),
    Named(String),
}

impl DomainConfig {
    pub fn resolve(&self) -> CliResult<Domain> {
        match self {
            DomainConfig::Interval([lo, hi]) => Ok(Domain::bounded(*lo, *hi)?),
            DomainConfig::Named(s) if s == "real_line" => Ok(Domain::real_line()),
            DomainConfig::Named(s) => Err(CliError::input(format!(
                "at `model.domains`: expected [lower, upper] or \"real_line\", got \"{s}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub alpha_cv: f64,
    pub lambda_grid: LambdaGridConfig,
    pub seeds: SeedConfig,
    pub outer_lambda: OuterLambda,
    pub n_knots: Option<usize>,
    pub quadrature_nodes: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let opts = FitOptions::default();
        SolverConfig {
            alpha_cv: opts.alpha_cv,
            lambda_grid: LambdaGridConfig::default(),
            seeds: SeedConfig::default(),
            outer_lambda: opts.outer_lambda,
            n_knots: None,
            quadrature_nodes: None,
        }
    }
}

/// Search range over `log10(n lambda)`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaGridConfig {
    pub log10_min: f64,
    pub log10_max: f64,
    pub grid_points: usize,
    pub golden_iterations: usize,
}

impl Default for LambdaGridConfig {
    fn default() -> Self {
        let s = LambdaSearch::default();
        LambdaGridConfig {
            log10_min: s.log10_min,
            log10_max: s.log10_max,
            grid_points: s.grid_points,
            golden_iterations: s.golden_iterations,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    /// Seed of the random knot subset.
    pub knots: u64,
    /// Base seed of simulation replicates.
    pub simulation: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub grid_points: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> CliResult<()> {
        if !(self.alpha_cv.is_finite() && self.alpha_cv > 0.0) {
            return Err(CliError::input("at `solver.alpha_cv`: must be positive"));
        }
        let g = &self.lambda_grid;
        if !(g.log10_min < g.log10_max) || g.grid_points < 3 {
            return Err(CliError::input(
                "at `solver.lambda_grid`: need log10_min < log10_max and at least 3 grid points",
            ));
        }
        Ok(())
    }

    pub fn fit_options(&self) -> CliResult<FitOptions> {
        self.validate()?;
        let g = &self.lambda_grid;
        Ok(FitOptions {
            alpha_cv: self.alpha_cv,
            lambda_search: LambdaSearch {
                log10_min: g.log10_min,
                log10_max: g.log10_max,
                grid_points: g.grid_points,
                golden_iterations: g.golden_iterations,
            },
            outer_lambda: self.outer_lambda,
            knot_seed: self.seeds.knots,
            n_knots: self.n_knots,
            quadrature_nodes: self.quadrature_nodes,
            ..FitOptions::default()
        })
    }
}

impl OutputConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.grid_points < 2 {
            return Err(CliError::input("at `output.grid_points`: need at least 2"));
        }
        Ok(())
    }
}

/// Configuration of the `simulate` command: a scenario preset with overrides.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: ScenarioId,
    #[serde(default)]
    pub n_replicates: Option<usize>,
    #[serde(default)]
    pub settings: Option<Vec<f64>>,
    #[serde(default)]
    pub sample_sizes: Option<Vec<(usize, Option<usize>)>>,
    #[serde(default)]
    pub estimators: Option<Vec<Estimator>>,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl SimulateConfig {
    /// Scenario after applying overrides. `full` selects the paper's replicate
    /// count and takes precedence over `n_replicates`.
    pub fn scenario(&self, full: bool) -> CliResult<Scenario> {
        let mut sc = Scenario::preset(self.scenario, full);
        if let (false, Some(r)) = (full, self.n_replicates) {
            sc.n_replicates = r;
        }
        if let Some(s) = &self.settings {
            sc.settings = s.clone();
        }
        if let Some(s) = &self.sample_sizes {
            sc.sample_sizes = s.clone();
        }
        if let Some(e) = &self.estimators {
            sc.estimators = e.clone();
        }
        if let Some(seed) = self.solver.seeds.simulation {
            sc.base_seed = seed;
        }
        sc.options = self.solver.fit_options()?;
        sc.validate()?;
        Ok(sc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_model_config_parses() {
        let cfg: FitConfig = parse_json(
            r#"{"model": {"space": "sobolev2_unit", "domains": [[0, 1]]}}"#,
        )
        .unwrap();
        let model = cfg.model.unwrap();
        assert_eq!(model.composition, Composition::Additive);
        assert!(model.form.is_none());
        assert_eq!(cfg.output.grid_points, 512);
        assert_eq!(cfg.solver.alpha_cv, 1.4);
    }

    #[test]
    fn form_by_name_or_object() {
        let f: FormConfig = parse_json(r#""truncnorm_logit""#).unwrap();
        assert_eq!(f.resolve().unwrap(), ParametricForm::TruncnormLogit);
        let f: FormConfig = parse_json(r#"{"id": "linear_basis", "powers": [1, 2]}"#).unwrap();
        assert_eq!(
            f.resolve().unwrap(),
            ParametricForm::LinearBasis { powers: vec![1, 2] }
        );
        let f: FormConfig = parse_json(r#""no_such_form""#).unwrap();
        assert!(f.resolve().is_err());
    }

    #[test]
    fn schema_errors_name_the_field() {
        let err = parse_json::<FitConfig>(r#"{"solver": {"alpha_cv": "high"}}"#).unwrap_err();
        assert!(err.contains("solver.alpha_cv"), "{err}");
        let err = parse_json::<FitConfig>(r#"{"output": {"grid": 10}}"#).unwrap_err();
        assert!(err.contains("output"), "{err}");
    }

    #[test]
    fn domains_accept_interval_and_real_line() {
        let d: Vec<DomainConfig> = parse_json(r#"[[40, 100], "real_line"]"#).unwrap();
        assert_eq!(d[0].resolve().unwrap(), Domain::bounded(40.0, 100.0).unwrap());
        assert_eq!(d[1].resolve().unwrap().kind, semidens::DomainKind::RealLine);
        let bad: DomainConfig = parse_json(r#""half_line""#).unwrap();
        assert!(bad.resolve().is_err());
    }

    #[test]
    fn full_flag_overrides_replicates() {
        let cfg: SimulateConfig =
            parse_json(r#"{"scenario": "near_normal", "n_replicates": 3}"#).unwrap();
        assert_eq!(cfg.scenario(false).unwrap().n_replicates, 3);
        assert_eq!(cfg.scenario(true).unwrap().n_replicates, 100);
    }
}
