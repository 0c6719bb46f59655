//! Catalog of parametric components `alpha_l(x; theta)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum ParametricForm {
    /// `alpha(x) = sum_i theta_i x^{powers_i}`.
    LinearBasis { powers: Vec<i32> },
    /// Logit of a truncated Normal: `-x^2 / (2 s^2) + m x / s^2`, theta = (m, s).
    TruncnormLogit,
    /// Logit of a truncated Gumbel: `-(x - m)/s - exp(-(x - m)/s)`, theta = (m, s).
    GumbelLogit,
    /// `log{lambda_l + (1 - lambda_l) exp(theta_1 + theta_2 x)}` with known per-sample `lambda_l`.
    ExptiltMixture { mixing: Vec<f64> },
    /// `x^theta` on the positive half line.
    PowerTransform,
    /// Identity for the first sample, `(x - m)/s` for the others; theta = (m, s).
    LocationScale,
    /// Log density of a two-component Normal mixture, theta = (m1, s1, m2, s2, p).
    MixnormLogdensity,
}

impl ParametricForm {
    pub fn dim(&self) -> usize {
        match self {
            ParametricForm::LinearBasis { powers } => powers.len(),
            ParametricForm::TruncnormLogit
            | ParametricForm::GumbelLogit
            | ParametricForm::ExptiltMixture { .. }
            | ParametricForm::LocationScale => 2,
            ParametricForm::PowerTransform => 1,
            ParametricForm::MixnormLogdensity => 5,
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            ParametricForm::LinearBasis { powers } => {
                return powers.iter().map(|p| format!("theta_x{p}")).collect()
            }
            ParametricForm::TruncnormLogit
            | ParametricForm::GumbelLogit
            | ParametricForm::LocationScale => &["mu", "sigma"],
            ParametricForm::ExptiltMixture { .. } => &["theta1", "theta2"],
            ParametricForm::PowerTransform => &["gamma"],
            ParametricForm::MixnormLogdensity => &["mu1", "sigma1", "mu2", "sigma2", "p"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Box constraints per coordinate.
    pub fn theta_domain(&self) -> Vec<(f64, f64)> {
        const LOC: (f64, f64) = (-1e3, 1e3);
        const SCALE: (f64, f64) = (1e-2, 1e3);
        match self {
            ParametricForm::LinearBasis { powers } => vec![(-1e3, 1e3); powers.len()],
            ParametricForm::TruncnormLogit
            | ParametricForm::GumbelLogit
            | ParametricForm::LocationScale => vec![LOC, SCALE],
            ParametricForm::ExptiltMixture { .. } => vec![(-50.0, 50.0); 2],
            ParametricForm::PowerTransform => vec![(0.05, 20.0)],
            ParametricForm::MixnormLogdensity => {
                vec![(-1e4, 1e4), (1e-3, 1e4), (-1e4, 1e4), (1e-3, 1e4), (1e-3, 1.0 - 1e-3)]
            }
        }
    }

    pub fn is_invertible_transform(&self) -> bool {
        matches!(
            self,
            ParametricForm::PowerTransform | ParametricForm::LocationScale
        )
    }

    /// Checks per-sample requirements of the form against `m` samples.
    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            ParametricForm::ExptiltMixture { mixing } => {
                if mixing.len() != m {
                    return Err(Error::config(format!(
                        "exptilt_mixture needs {m} mixing weights, got {}",
                        mixing.len()
                    )));
                }
                if mixing.iter().any(|l| !(0.0..=1.0).contains(l)) {
                    return Err(Error::config("mixing weights must lie in [0, 1]"));
                }
            }
            ParametricForm::LinearBasis { powers } if powers.contains(&0) => {
                return Err(Error::config(
                    "linear_basis cannot contain the constant (power 0)",
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// `alpha_l(x; theta)`.
    pub fn eval(&self, x: f64, theta: &[f64], sample: usize) -> f64 {
        match self {
            ParametricForm::LinearBasis { powers } => powers
                .iter()
                .zip(theta)
                .map(|(&p, t)| t * x.powi(p))
                .sum(),
            ParametricForm::TruncnormLogit => {
                let (m, s2) = (theta[0], theta[1] * theta[1]);
                -x * x / (2.0 * s2) + m * x / s2
            }
            ParametricForm::GumbelLogit => {
                let z = (x - theta[0]) / theta[1];
                -z - (-z).exp()
            }
            ParametricForm::ExptiltMixture { mixing } => {
                let lam = mixing[sample];
                let t = theta[0] + theta[1] * x;
                // log(lam + (1 - lam) e^t), stable for large |t|
                if lam <= 0.0 {
                    t
                } else if lam >= 1.0 {
                    0.0
                } else {
                    let (a, b) = (lam.ln(), (1.0 - lam).ln() + t);
                    let hi = a.max(b);
                    hi + ((a - hi).exp() + (b - hi).exp()).ln()
                }
            }
            ParametricForm::PowerTransform => x.powf(theta[0]),
            ParametricForm::LocationScale => {
                if sample == 0 {
                    x
                } else {
                    (x - theta[0]) / theta[1]
                }
            }
            ParametricForm::MixnormLogdensity => {
                let p = theta[4];
                let a = p.ln() + normal_log_pdf(x, theta[0], theta[1]);
                let b = (1.0 - p).ln() + normal_log_pdf(x, theta[2], theta[3]);
                let hi = a.max(b);
                hi + ((a - hi).exp() + (b - hi).exp()).ln()
            }
        }
    }

    /// `d alpha_l / dx`, for the invertible transforms.
    pub fn derivative(&self, x: f64, theta: &[f64], sample: usize) -> Result<f64> {
        match self {
            ParametricForm::PowerTransform => Ok(theta[0] * x.powf(theta[0] - 1.0)),
            ParametricForm::LocationScale => Ok(if sample == 0 { 1.0 } else { 1.0 / theta[1] }),
            _ => Err(Error::Unsupported(format!(
                "{self:?} is not an invertible transform"
            ))),
        }
    }

    /// `alpha_l^{-1}(y; theta)`.
    pub fn inverse(&self, y: f64, theta: &[f64], sample: usize) -> Result<f64> {
        match self {
            ParametricForm::PowerTransform => Ok(y.powf(1.0 / theta[0])),
            ParametricForm::LocationScale => Ok(if sample == 0 {
                y
            } else {
                theta[0] + theta[1] * y
            }),
            _ => Err(Error::Unsupported(format!(
                "{self:?} is not an invertible transform"
            ))),
        }
    }

    pub fn inside_domain(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && self
                .theta_domain()
                .iter()
                .zip(theta)
                .all(|((lo, hi), t)| t.is_finite() && *t >= *lo && *t <= *hi)
    }
}

fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}
