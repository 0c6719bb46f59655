//! Derivative-free minimization of the profile objective over `theta`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadConfig {
    pub max_iter: usize,
    /// Relative spread of function values across the simplex.
    pub f_tol: f64,
    pub min_step: f64,
    pub rel_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig {
            max_iter: 200,
            f_tol: 1e-4,
            min_step: 0.05,
            rel_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder–Mead with reflection 1, expansion 2, contraction 1/2 and shrink 1/2.
///
/// The initial simplex steps `max(rel_step |x_i|, min_step)` along each axis.
/// The returned point is the best one evaluated.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    cfg: &NelderMeadConfig,
) -> NelderMeadResult {
    let n = x0.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        let v = eval(x0, &mut evaluations);
        return NelderMeadResult {
            x: vec![],
            f: v,
            iterations: 0,
            evaluations,
            converged: true,
        };
    }

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evaluations);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += (cfg.rel_step * x0[i].abs()).max(cfg.min_step);
        let v = eval(&x, &mut evaluations);
        simplex.push((x, v));
    }

    let mut iterations = 0;
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if best.is_finite() && (worst - best).abs() <= cfg.f_tol * best.abs().max(1.0) {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let towards = |t: f64, from: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let worst_x = simplex[n].0.clone();
        let reflected = towards(-1.0, &worst_x);
        let fr = eval(&reflected, &mut evaluations);
        if fr < simplex[0].1 {
            let expanded = towards(-2.0, &worst_x);
            let fe = eval(&expanded, &mut evaluations);
            simplex[n] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < worst {
            let x = towards(-0.5, &worst_x);
            let v = eval(&x, &mut evaluations);
            (x, v)
        } else {
            let x = towards(0.5, &worst_x);
            let v = eval(&x, &mut evaluations);
            (x, v)
        };
        if fc < worst.min(fr) {
            simplex[n] = (contracted, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for (x, v) in simplex.iter_mut().skip(1) {
            for (xi, ai) in x.iter_mut().zip(&anchor) {
                *xi = ai + 0.5 * (*xi - ai);
            }
            *v = eval(x, &mut evaluations);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        f: fx,
        iterations,
        evaluations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let r = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 5.0,
            &[0.0, 0.0],
            &NelderMeadConfig {
                f_tol: 1e-12,
                ..Default::default()
            },
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] + 2.0).abs() < 1e-4);
    }

    #[test]
    fn rosenbrock() {
        let r = nelder_mead(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &NelderMeadConfig {
                f_tol: 1e-14,
                max_iter: 2000,
                ..Default::default()
            },
        );
        assert!((r.x[0] - 1.0).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn sentinel_region_is_avoided() {
        let r = nelder_mead(
            |x| if x[0] < 0.5 { 1e10 } else { (x[0] - 0.7).powi(2) },
            &[1.0],
            &NelderMeadConfig {
                f_tol: 1e-12,
                ..Default::default()
            },
        );
        assert!((r.x[0] - 0.7).abs() < 1e-4);
    }

    #[test]
    fn nan_treated_as_infinite_and_zero_dim() {
        let r = nelder_mead(
            |x| if x[0] > 2.0 { f64::NAN } else { (x[0] - 1.0).powi(2) },
            &[1.9],
            &NelderMeadConfig::default(),
        );
        assert!(r.f.is_finite());
        let z = nelder_mead(|_| 3.0, &[], &NelderMeadConfig::default());
        assert_eq!(z.f, 3.0);
    }
}
