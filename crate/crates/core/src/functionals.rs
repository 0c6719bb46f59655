//! Gauss–Legendre quadrature and the weighted moments `mu_{l,f}`, `V_{l,f}`.

use crate::error::{Error, Result};
use crate::space::{Domain, DomainKind};

pub const DEFAULT_BOUNDED_NODES: usize = 200;
pub const DEFAULT_REAL_LINE_NODES: usize = 1200;
pub const MIN_NODES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub domain: Domain,
}

impl QuadratureRule {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    pub fn integrate_fn(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, w)| w * f(x))
            .sum()
    }
}

pub fn default_nodes(domain: &Domain) -> usize {
    match domain.kind {
        DomainKind::BoundedInterval => DEFAULT_BOUNDED_NODES,
        DomainKind::RealLine => DEFAULT_REAL_LINE_NODES,
    }
}

/// Gauss–Legendre rule with `n_nodes` points mapped onto `domain`.
pub fn make_rule(domain: &Domain, n_nodes: usize) -> Result<QuadratureRule> {
    if n_nodes < MIN_NODES {
        return Err(Error::config(format!(
            "quadrature needs at least {MIN_NODES} nodes, got {n_nodes}"
        )));
    }
    let (ref_nodes, ref_weights) = gauss_legendre(n_nodes);
    let half = 0.5 * domain.width();
    let mid = 0.5 * (domain.lower + domain.upper);
    Ok(QuadratureRule {
        nodes: ref_nodes.iter().map(|t| mid + half * t).collect(),
        weights: ref_weights.iter().map(|w| half * w).collect(),
        domain: *domain,
    })
}

/// Nodes (ascending) and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `eta` at the nodes together with the weight function `w` (all ones when absent).
#[derive(Debug, Clone)]
pub struct EtaField {
    pub eta: Vec<f64>,
    pub weight: Vec<f64>,
}

impl EtaField {
    pub fn unweighted(eta: Vec<f64>) -> Self {
        let weight = vec![1.0; eta.len()];
        EtaField { eta, weight }
    }

    /// Normalized node probabilities proportional to `quad_w * w * exp(eta)`,
    /// plus the log normalizer.
    pub fn probabilities(&self, rule: &QuadratureRule) -> Result<(Vec<f64>, f64)> {
        let terms: Vec<f64> = rule
            .weights
            .iter()
            .zip(&self.weight)
            .zip(&self.eta)
            .map(|((qw, w), e)| {
                if *w > 0.0 {
                    qw.ln() + w.ln() + e
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        if terms.iter().any(|t| t.is_nan() || *t == f64::INFINITY) {
            return Err(Error::degenerate("non-finite eta field"));
        }
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::degenerate("eta field has zero mass"));
        }
        let mut probs: Vec<f64> = terms.iter().map(|t| (t - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Ok((probs, max + total.ln()))
    }
}

/// `log int w exp(eta)`, with the maximum exponent subtracted before exponentiation.
pub fn log_normalizer(rule: &QuadratureRule, eta: &[f64], w: &[f64]) -> Result<f64> {
    let field = EtaField {
        eta: eta.to_vec(),
        weight: w.to_vec(),
    };
    Ok(field.probabilities(rule)?.1)
}

/// Weighted mean `int g w e^f / int w e^f`.
pub fn mu(rule: &QuadratureRule, eta: &[f64], w: &[f64], g: &[f64]) -> Result<f64> {
    let field = EtaField {
        eta: eta.to_vec(),
        weight: w.to_vec(),
    };
    let (probs, _) = field.probabilities(rule)?;
    Ok(probs.iter().zip(g).map(|(p, g)| p * g).sum())
}

/// Weighted covariance `mu(g1 g2) - mu(g1) mu(g2)`.
pub fn v(rule: &QuadratureRule, eta: &[f64], w: &[f64], g1: &[f64], g2: &[f64]) -> Result<f64> {
    let field = EtaField {
        eta: eta.to_vec(),
        weight: w.to_vec(),
    };
    let (probs, _) = field.probabilities(rule)?;
    let m1: f64 = probs.iter().zip(g1).map(|(p, g)| p * g).sum();
    let m2: f64 = probs.iter().zip(g2).map(|(p, g)| p * g).sum();
    // Centered form keeps v(g, g) >= 0 up to rounding.
    Ok(probs
        .iter()
        .zip(g1.iter().zip(g2))
        .map(|(p, (a, b))| p * (a - m1) * (b - m2))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rule(n: usize) -> QuadratureRule {
        make_rule(&Domain::unit(), n).unwrap()
    }

    #[test]
    fn polynomial_and_constant_exactness() {
        let rule = unit_rule(32);
        assert!((rule.integrate_fn(|_| 1.0) - 1.0).abs() < 1e-14);
        assert!((rule.integrate_fn(|x| x.powi(3)) - 0.25).abs() < 1e-12);
        let rule2 = make_rule(&Domain::bounded(0.0, 2.0).unwrap(), 64).unwrap();
        let expected = std::f64::consts::E.powi(2) - 1.0;
        assert!((rule2.integrate_fn(f64::exp) - expected).abs() < 1e-10);
    }

    #[test]
    fn nodes_sorted_inside_and_weights_sum_to_width() {
        for n in [8, 9, 200, 300] {
            let d = Domain::bounded(-3.0, 4.5).unwrap();
            let rule = make_rule(&d, n).unwrap();
            assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(rule.nodes.iter().all(|x| d.contains(*x)));
            assert!(rule.weights.iter().all(|w| *w > 0.0));
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 7.5).abs() / 7.5 < 1e-12);
        }
        assert!(make_rule(&Domain::unit(), 7).is_err());
    }

    #[test]
    fn log_normalizer_closed_forms() {
        let rule = unit_rule(200);
        let ones = vec![1.0; 200];
        let zeros = vec![0.0; 200];
        assert!(log_normalizer(&rule, &zeros, &ones).unwrap().abs() < 1e-12);
        let c = vec![3.7; 200];
        assert!((log_normalizer(&rule, &c, &ones).unwrap() - 3.7).abs() < 1e-12);
        let neg: Vec<f64> = rule.nodes.iter().map(|x| -x).collect();
        let expected = (1.0 - (-1.0f64).exp()).ln();
        assert!((log_normalizer(&rule, &neg, &ones).unwrap() - expected).abs() < 1e-12);
        assert!((expected + 0.458675).abs() < 1e-6);
        let all_neg_inf = vec![f64::NEG_INFINITY; 200];
        assert!(log_normalizer(&rule, &all_neg_inf, &ones).is_err());
    }

    #[test]
    fn overflow_safe() {
        let rule = unit_rule(64);
        let big = vec![800.0; 64];
        let ones = vec![1.0; 64];
        assert!((log_normalizer(&rule, &big, &ones).unwrap() - 800.0).abs() < 1e-10);
    }

    #[test]
    fn weighted_moments_closed_forms() {
        let rule = unit_rule(200);
        let ones = vec![1.0; 200];
        let zeros = vec![0.0; 200];
        let x = rule.nodes.clone();
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert!((mu(&rule, &zeros, &ones, &x).unwrap() - 0.5).abs() < 1e-12);
        let tilt: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!((mu(&rule, &tilt, &ones, &ones).unwrap() - 1.0).abs() < 1e-14);
        // int x e^{2x} / int e^{2x} = (e^2 + 1) / (2 (e^2 - 1))
        let e2 = std::f64::consts::E.powi(2);
        let expected = (e2 + 1.0) / (2.0 * (e2 - 1.0));
        assert!((mu(&rule, &tilt, &ones, &x).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.6565).abs() < 1e-4);

        assert!((v(&rule, &zeros, &ones, &x, &x).unwrap() - 1.0 / 12.0).abs() < 1e-12);
        assert!(v(&rule, &tilt, &ones, &x, &ones).unwrap().abs() < 1e-14);
        assert!((v(&rule, &zeros, &ones, &x, &x2).unwrap() - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn weight_function_enters_as_tilt() {
        let rule = unit_rule(100);
        let x = rule.nodes.clone();
        let w: Vec<f64> = x.iter().map(|v| (2.0 * v).exp()).collect();
        let zeros = vec![0.0; 100];
        let ones = vec![1.0; 100];
        let tilt: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let a = mu(&rule, &zeros, &w, &x).unwrap();
        let b = mu(&rule, &tilt, &ones, &x).unwrap();
        assert!((a - b).abs() < 1e-13);
    }
}
