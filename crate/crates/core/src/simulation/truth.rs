//! True densities of the simulation scenarios and a seeded grid sampler.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::Domain;

pub const SAMPLER_GRID: usize = 4097;
/// Tail mass excluded on each side when a real-line truth is evaluated.
pub const EVAL_TAIL: f64 = 1e-4;
/// Tail mass excluded on each side when a real-line truth is sampled.
const SAMPLE_TAIL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Truth {
    /// `exp{-x^2/(2 s^2) + m x / s^2 + a x^3}` on [0, 1].
    NearNormal { a: f64, mu: f64, sigma: f64 },
    /// `exp{-(x - m)/s - exp(-(x - m)/s) + a x^3}` on [0, 1].
    NearGumbel { a: f64, mu: f64, sigma: f64 },
    /// `(g/s)(x/s)^{g-1} exp{-(x/s)^g}` truncated to [0, 1].
    Weibull { gamma: f64, scale: f64 },
    /// `(1/s) exp{-(z + e^{-z})}`, `z = (x - m)/s`, on the real line.
    Gumbel { mu: f64, sigma: f64 },
    /// `e^{-z} / (s (1 + e^{-z})^2)` on the real line.
    Logistic { mu: f64, sigma: f64 },
    Uniform { lower: f64, upper: f64 },
}

impl Truth {
    /// Log density up to an additive constant.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Truth::NearNormal { a, mu, sigma } => {
                let s2 = sigma * sigma;
                -x * x / (2.0 * s2) + mu * x / s2 + a * x.powi(3)
            }
            Truth::NearGumbel { a, mu, sigma } => {
                let z = (x - mu) / sigma;
                -z - (-z).exp() + a * x.powi(3)
            }
            Truth::Weibull { gamma, scale } => {
                let z = x / scale;
                let power = if gamma == 1.0 { 0.0 } else { (gamma - 1.0) * z.ln() };
                gamma.ln() - scale.ln() + power - z.powf(gamma)
            }
            Truth::Gumbel { mu, sigma } => {
                let z = (x - mu) / sigma;
                -sigma.ln() - z - (-z).exp()
            }
            Truth::Logistic { mu, sigma } => {
                let z = (x - mu) / sigma;
                // -z - 2 log(1 + e^{-z}), written symmetric in z
                -sigma.ln() - z.abs() - 2.0 * (-z.abs()).exp().ln_1p()
            }
            Truth::Uniform { .. } => 0.0,
        }
    }

    pub fn is_real_line(&self) -> bool {
        matches!(self, Truth::Gumbel { .. } | Truth::Logistic { .. })
    }

    fn quantile(&self, p: f64) -> Option<f64> {
        match *self {
            Truth::Gumbel { mu, sigma } => Some(mu - sigma * (-p.ln()).ln()),
            Truth::Logistic { mu, sigma } => Some(mu + sigma * (p / (1.0 - p)).ln()),
            _ => None,
        }
    }

    fn bounded_support(&self) -> Domain {
        match *self {
            Truth::Uniform { lower, upper } => Domain {
                kind: crate::space::DomainKind::BoundedInterval,
                lower,
                upper,
            },
            _ => Domain::unit(),
        }
    }

    /// Domain on which metrics are computed: the support for bounded truths,
    /// the central `1 - 2 EVAL_TAIL` quantile range otherwise.
    pub fn eval_domain(&self) -> Domain {
        self.range_with_tail(EVAL_TAIL)
    }

    fn range_with_tail(&self, tail: f64) -> Domain {
        match (self.quantile(tail), self.quantile(1.0 - tail)) {
            (Some(lo), Some(hi)) => Domain {
                kind: crate::space::DomainKind::BoundedInterval,
                lower: lo,
                upper: hi,
            },
            _ => self.bounded_support(),
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        let domain = self.range_with_tail(SAMPLE_TAIL);
        sample_density(|x| self.log_density(x), &domain, n, seed)
    }
}

/// Inverse-CDF sampling on a `SAMPLER_GRID`-point grid, with the CDF built by
/// the trapezoid rule and inverted by linear interpolation.
pub fn sample_density(
    log_density: impl Fn(f64) -> f64,
    domain: &Domain,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grid = domain.grid(SAMPLER_GRID);
    let logs: Vec<f64> = grid.iter().map(|&x| log_density(x)).collect();
    if logs.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::config("log density is not finite on the sampling grid"));
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::config("log density has no mass on the sampling grid"));
    }
    let dens: Vec<f64> = logs.iter().map(|v| (v - max).exp()).collect();
    let mut cdf = vec![0.0; grid.len()];
    for k in 1..grid.len() {
        cdf[k] = cdf[k - 1] + 0.5 * (dens[k] + dens[k - 1]) * (grid[k] - grid[k - 1]);
    }
    let total = cdf[grid.len() - 1];
    cdf.iter_mut().for_each(|c| *c /= total);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            let k = cdf.partition_point(|&c| c <= u).clamp(1, grid.len() - 1);
            let (c0, c1) = (cdf[k - 1], cdf[k]);
            let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
            grid[k - 1] + t * (grid[k] - grid[k - 1])
        })
        .collect())
}

/// Counter-based seed derivation (splitmix64 finalizer over the mixed inputs).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
