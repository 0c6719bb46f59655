//! Divergences, the bias–variance decomposition of the KL risk, parameter MSE
//! and the Gaussian-kernel baseline, all on a shared quadrature rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{EtaField, QuadratureRule};

const NORMALIZATION_TOL: f64 = 1e-6;

fn check_density(rule: &QuadratureRule, f: &[f64], what: &str) -> Result<()> {
    if f.len() != rule.n_nodes() {
        return Err(Error::config(format!("{what} has {} values for {} nodes", f.len(), rule.n_nodes())));
    }
    if f.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::config(format!("{what} has negative or non-finite values")));
    }
    let mass = rule.integrate(f);
    if (mass - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::config(format!("{what} integrates to {mass}, not 1")));
    }
    Ok(())
}

/// Node values of the density proportional to `exp(log_f)` on `rule`.
pub fn normalize_log_density(rule: &QuadratureRule, log_f: &[f64]) -> Result<Vec<f64>> {
    let (probs, _) = EtaField::unweighted(log_f.to_vec()).probabilities(rule)?;
    Ok(probs.iter().zip(&rule.weights).map(|(p, w)| p / w).collect())
}

/// `KL(f, g) = int f log(f / g)`. Returns infinity when `g` vanishes where `f`
/// has mass.
pub fn kl(f_true: &[f64], f_hat: &[f64], rule: &QuadratureRule) -> Result<f64> {
    check_density(rule, f_true, "true density")?;
    check_density(rule, f_hat, "estimated density")?;
    let mut total = 0.0;
    for ((w, f), g) in rule.weights.iter().zip(f_true).zip(f_hat) {
        if *f > 0.0 {
            if *g <= 0.0 {
                return Ok(f64::INFINITY);
            }
            total += w * f * (f / g).ln();
        }
    }
    Ok(total)
}

/// Symmetrized KL from log-density fields, invariant to additive constants:
/// `mu_{f}[eta - eta_hat] + mu_{f_hat}[eta_hat - eta]`.
pub fn skl(eta_true: &[f64], eta_hat: &[f64], rule: &QuadratureRule) -> Result<f64> {
    if eta_true.len() != rule.n_nodes() || eta_hat.len() != rule.n_nodes() {
        return Err(Error::config("log-density fields do not match the rule"));
    }
    let (p, _) = EtaField::unweighted(eta_true.to_vec()).probabilities(rule)?;
    let (q, _) = EtaField::unweighted(eta_hat.to_vec()).probabilities(rule)?;
    Ok(p.iter()
        .zip(&q)
        .zip(eta_true.iter().zip(eta_hat))
        .map(|((p, q), (a, b))| (p - q) * (a - b))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasVariance {
    pub bias: f64,
    pub variance: f64,
    pub mean_kl: f64,
    pub used: usize,
    pub excluded: usize,
}

/// `E KL(f, f_hat) = KL(f, f_bar) + E KL(f_bar, f_hat)` with
/// `f_bar ∝ exp(E log f_hat)`. Each replicate is renormalized on `rule`, so
/// the identity holds exactly up to rounding.
pub fn bias_variance(
    log_fhat_per_replicate: &[Vec<f64>],
    f_true: &[f64],
    rule: &QuadratureRule,
) -> Result<BiasVariance> {
    check_density(rule, f_true, "true density")?;
    let mut logs = Vec::with_capacity(log_fhat_per_replicate.len());
    let mut excluded = 0;
    for rep in log_fhat_per_replicate {
        if rep.len() != rule.n_nodes() || rep.iter().any(|v| !v.is_finite()) {
            excluded += 1;
            continue;
        }
        let f = normalize_log_density(rule, rep)?;
        logs.push(f.iter().map(|v| v.ln()).collect::<Vec<f64>>());
    }
    if logs.len() < 2 {
        return Err(Error::config(format!(
            "bias-variance decomposition needs two usable replicates, got {}",
            logs.len()
        )));
    }
    let r = logs.len() as f64;
    let mean_log: Vec<f64> = (0..rule.n_nodes())
        .map(|k| logs.iter().map(|l| l[k]).sum::<f64>() / r)
        .collect();
    let f_bar = normalize_log_density(rule, &mean_log)?;
    let bias = kl(f_true, &f_bar, rule)?;
    let mut variance = 0.0;
    let mut mean_kl = 0.0;
    for l in &logs {
        let f: Vec<f64> = l.iter().map(|v| v.exp()).collect();
        variance += kl(&f_bar, &f, rule)? / r;
        mean_kl += kl(f_true, &f, rule)? / r;
    }
    Ok(BiasVariance {
        bias,
        variance,
        mean_kl,
        used: logs.len(),
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseSummary {
    pub mse: f64,
    pub bias2: f64,
    pub variance: f64,
}

/// `mse = bias^2 + variance` with the variance taken over replicates (divisor r).
pub fn mse_decomposition(estimates: &[f64], truth: f64) -> Result<MseSummary> {
    if estimates.is_empty() {
        return Err(Error::config("no estimates to summarize"));
    }
    let r = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / r;
    let variance = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / r;
    let bias2 = (mean - truth).powi(2);
    Ok(MseSummary {
        mse: bias2 + variance,
        bias2,
        variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kl_mean: f64,
    pub kl_bias: Option<f64>,
    pub kl_variance: Option<f64>,
    pub skl_mean: f64,
    pub mse: Vec<(String, MseSummary)>,
    pub n_replicates: usize,
    pub n_failed: usize,
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `0.9 n^{-1/5} min(SD, IQR / 1.34)`.
pub fn kernel_bandwidth_from_stats(n: usize, sd: f64, iqr: f64) -> f64 {
    0.9 * (n as f64).powf(-0.2) * sd.min(iqr / 1.34)
}

pub fn kernel_bandwidth(sample: &[f64]) -> Result<f64> {
    if sample.len() < 2 {
        return Err(Error::config("kernel estimate needs at least two observations"));
    }
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let sd = (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    // A zero IQR with positive spread falls back to the SD.
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::degenerate("sample has zero spread"));
    }
    Ok(0.9 * n.powf(-0.2) * spread)
}

/// Gaussian kernel estimate at the nodes of `rule`, renormalized over its domain.
pub fn kernel_baseline(sample: &[f64], rule: &QuadratureRule) -> Result<Vec<f64>> {
    let bw = kernel_bandwidth(sample)?;
    let raw: Vec<f64> = rule
        .nodes
        .iter()
        .map(|&x| {
            sample
                .iter()
                .map(|&xi| (-0.5 * ((x - xi) / bw).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    let mass = rule.integrate(&raw);
    if !(mass > 0.0) {
        return Err(Error::degenerate("kernel estimate has no mass on the domain"));
    }
    Ok(raw.iter().map(|v| v / mass).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::make_rule;
    use crate::space::Domain;

    fn unit_rule() -> QuadratureRule {
        make_rule(&Domain::unit(), 200).unwrap()
    }

    #[test]
    fn kl_closed_form_and_asymmetry() {
        let rule = unit_rule();
        let uniform = vec![1.0; 200];
        let tilted = normalize_log_density(&rule, &rule.nodes).unwrap();
        assert!(kl(&uniform, &uniform, &rule).unwrap().abs() < 1e-12);
        let forward = kl(&uniform, &tilted, &rule).unwrap();
        let expected = (std::f64::consts::E - 1.0).ln() - 0.5;
        assert!((forward - expected).abs() < 1e-10);
        assert!((expected - 0.04132).abs() < 1e-5);
        let backward = kl(&tilted, &uniform, &rule).unwrap();
        assert!((forward - backward).abs() > 1e-4);
    }

    #[test]
    fn kl_signals_vanishing_estimate() {
        let rule = unit_rule();
        let uniform = vec![1.0; 200];
        let mut hat = vec![0.0; 200];
        for v in hat.iter_mut().skip(100) {
            *v = 2.0;
        }
        let mass = rule.integrate(&hat);
        hat.iter_mut().for_each(|v| *v /= mass);
        assert_eq!(kl(&uniform, &hat, &rule).unwrap(), f64::INFINITY);
        assert!(kl(&uniform, &vec![2.0; 200], &rule).is_err());
    }

    #[test]
    fn skl_identities() {
        let rule = unit_rule();
        let a: Vec<f64> = rule.nodes.iter().map(|x| 1.5 * x - x * x).collect();
        let b: Vec<f64> = rule.nodes.iter().map(|x| (3.0 * x).sin()).collect();
        assert!(skl(&a, &a, &rule).unwrap().abs() < 1e-15);
        let s = skl(&a, &b, &rule).unwrap();
        assert!((s - skl(&b, &a, &rule).unwrap()).abs() < 1e-12);
        let fa = normalize_log_density(&rule, &a).unwrap();
        let fb = normalize_log_density(&rule, &b).unwrap();
        let both = kl(&fa, &fb, &rule).unwrap() + kl(&fb, &fa, &rule).unwrap();
        assert!((s - both).abs() < 1e-10);
        let shifted: Vec<f64> = b.iter().map(|v| v + 4.2).collect();
        assert!((skl(&a, &shifted, &rule).unwrap() - s).abs() < 1e-12);
    }

    #[test]
    fn bias_variance_cases() {
        let rule = unit_rule();
        let uniform = vec![1.0; 200];
        let up: Vec<f64> = rule.nodes.clone();
        let down: Vec<f64> = rule.nodes.iter().map(|x| -x).collect();
        let bv = bias_variance(&[up.clone(), down.clone()], &uniform, &rule).unwrap();
        assert!(bv.bias.abs() < 1e-14);
        assert!((bv.bias + bv.variance - bv.mean_kl).abs() < 1e-12);

        let same = bias_variance(&[up.clone(), up.clone()], &uniform, &rule).unwrap();
        assert!(same.variance.abs() < 1e-14);
        let direct = kl(&uniform, &normalize_log_density(&rule, &up).unwrap(), &rule).unwrap();
        assert!((same.bias - direct).abs() < 1e-12);

        let bad = vec![f64::NAN; 200];
        let with_bad = bias_variance(&[up, down, bad], &uniform, &rule).unwrap();
        assert_eq!(with_bad.excluded, 1);
        assert_eq!(with_bad.used, 2);
    }

    #[test]
    fn mse_identity() {
        let s = mse_decomposition(&[0.4, 0.55, 0.61, 0.47], 0.5).unwrap();
        assert!((s.mse - s.bias2 - s.variance).abs() < 1e-12);
        let direct = [0.4f64, 0.55, 0.61, 0.47]
            .iter()
            .map(|e| (e - 0.5).powi(2))
            .sum::<f64>()
            / 4.0;
        assert!((s.mse - direct).abs() < 1e-15);
    }

    #[test]
    fn bandwidth_rule() {
        let h = kernel_bandwidth_from_stats(100, 0.2, 0.25);
        assert!((h - 0.06685).abs() < 1e-5, "{h}");
    }

    #[test]
    fn kernel_symmetry_and_mass() {
        let rule = unit_rule();
        let f = kernel_baseline(&[0.4, 0.6], &rule).unwrap();
        for k in 0..100 {
            assert!((f[k] - f[199 - k]).abs() < 1e-12);
        }
        assert!((rule.integrate(&f) - 1.0).abs() < 1e-10);
        assert!(kernel_baseline(&[0.3, 0.3], &rule).is_err());
    }
}
