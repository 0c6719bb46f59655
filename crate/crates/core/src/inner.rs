//! Weighted penalized likelihood for the spline coefficients, solved by Newton
//! iteration with step halving, and smoothing-parameter selection by the
//! approximate cross-validation score.
//!
//! Every fitter reduces its inner problem to a [`PenalizedProblem`]: for each
//! sample `l`, a linear predictor `eta_l = offset + B beta` evaluated at the
//! observations and at quadrature nodes (the node log-weights absorb both the
//! quadrature weights and any weight function `w_l`). The objective is
//!
//! ```text
//! sum_l { -mean_i eta_l(X_li) + log sum_q exp(logw_lq + eta_l(x_q)) } + lambda/2 c'Qc
//! ```
//!
//! with `beta = (d, c)`; `d` multiplies the null-space basis and `c` the kernel
//! sections at the knots.

use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::QuadratureRule;
use crate::space::RkhsSpace;

pub const DEFAULT_ALPHA_CV: f64 = 1.4;

/// Representer expansion `h(x) = psi(x)'d + xi(x)'c`, `xi_j(x) = R_J(Z_j, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineRep {
    pub d: Vec<f64>,
    pub c: Vec<f64>,
    pub knots: Vec<f64>,
    pub space: RkhsSpace,
}

impl SplineRep {
    pub fn zero(space: RkhsSpace, knots: Vec<f64>) -> Self {
        SplineRep {
            d: vec![0.0; space.null_dim()],
            c: vec![0.0; knots.len()],
            knots,
            space,
        }
    }

    pub fn from_coefficients(space: RkhsSpace, knots: Vec<f64>, beta: &DVector<f64>) -> Self {
        let k = space.null_dim();
        SplineRep {
            d: beta.rows(0, k).iter().copied().collect(),
            c: beta.rows(k, knots.len()).iter().copied().collect(),
            knots,
            space,
        }
    }

    pub fn coefficients(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.d.len() + self.c.len(),
            self.d.iter().chain(&self.c).copied(),
        )
    }

    pub fn eval(&self, x: f64) -> f64 {
        let null: f64 = self
            .space
            .null_basis_eval(x)
            .iter()
            .zip(&self.d)
            .map(|(p, d)| p * d)
            .sum();
        null + self
            .knots
            .iter()
            .zip(&self.c)
            .map(|(&z, c)| c * self.space.rk(z, x))
            .sum::<f64>()
    }

    pub fn eval_many(&self, xs: &[f64]) -> Vec<f64> {
        let basis = self.space.basis_matrix(&self.knots, xs);
        (basis * self.coefficients()).iter().copied().collect()
    }

    /// Roughness `J(h) = c'Qc`.
    pub fn roughness(&self) -> f64 {
        let mut total = 0.0;
        for (i, (&zi, ci)) in self.knots.iter().zip(&self.c).enumerate() {
            total += ci * ci * self.space.rk(zi, zi);
            for (&zj, cj) in self.knots[..i].iter().zip(&self.c) {
                total += 2.0 * ci * cj * self.space.rk(zi, zj);
            }
        }
        total
    }
}

/// `q = min(N, max(30, ceil(10 N^{2/9})))`.
pub fn default_knot_count(n_total: usize) -> usize {
    let rule = (10.0 * (n_total as f64).powf(2.0 / 9.0)).ceil() as usize;
    n_total.min(rule.max(30))
}

/// Random subset of the distinct pooled observations, sorted ascending.
///
/// The pool is sorted and deduplicated before sampling, so the result depends
/// only on the multiset of observations and the seed.
pub fn choose_knots(pooled: &[f64], q_target: usize, seed: u64) -> Result<Vec<f64>> {
    if q_target > pooled.len() {
        return Err(Error::config(format!(
            "requested {q_target} knots from {} observations",
            pooled.len()
        )));
    }
    if q_target == 0 {
        return Err(Error::config("at least one knot is required"));
    }
    let mut distinct = pooled.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::degenerate("observations have fewer than two distinct values"));
    }
    if q_target >= distinct.len() {
        return Ok(distinct);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut knots: Vec<f64> = sample_indices(&mut rng, distinct.len(), q_target)
        .into_iter()
        .map(|i| distinct[i])
        .collect();
    knots.sort_by(f64::total_cmp);
    Ok(knots)
}

/// Raw per-sample inputs of a penalized problem.
#[derive(Debug, Clone)]
pub struct SampleInput {
    /// Basis images at the observations, one row per observation.
    pub data_basis: DMatrix<f64>,
    /// Offsets at the observations (parametric part of `eta`).
    pub data_offset: Vec<f64>,
    /// Basis images at the quadrature nodes.
    pub node_basis: DMatrix<f64>,
    /// `log(quadrature weight) + offset + log w` at the nodes.
    pub node_log_weight: Vec<f64>,
}

impl SampleInput {
    /// Evaluation-functional design: basis rows `[psi(x); xi(x)]` at data and nodes.
    ///
    /// `node_offset` holds `alpha_l + log w_l` at the rule's nodes and
    /// `data_offset` the parametric part at the observations.
    pub fn evaluation(
        space: &RkhsSpace,
        knots: &[f64],
        data: &[f64],
        data_offset: Vec<f64>,
        rule: &QuadratureRule,
        node_offset: &[f64],
    ) -> Self {
        SampleInput {
            data_basis: space.basis_matrix(knots, data),
            data_offset,
            node_basis: space.basis_matrix(knots, &rule.nodes),
            node_log_weight: rule
                .weights
                .iter()
                .zip(node_offset)
                .map(|(w, o)| w.ln() + o)
                .collect(),
        }
    }
}

/// Cached per-sample design.
#[derive(Debug, Clone)]
pub struct SampleDesign {
    pub n_obs: usize,
    data_mean: Arc<DVector<f64>>,
    centered_gram: Arc<DMatrix<f64>>,
    node_basis: Arc<DMatrix<f64>>,
    offset_mean: f64,
    node_log_weight: DVector<f64>,
}

impl SampleDesign {
    pub fn new(input: SampleInput) -> Result<Self> {
        let n = input.data_basis.nrows();
        if n < 2 {
            return Err(Error::config("each sample needs at least two observations"));
        }
        if input.data_offset.len() != n || input.node_log_weight.len() != input.node_basis.nrows()
        {
            return Err(Error::config("sample input dimensions disagree"));
        }
        let p = input.data_basis.ncols();
        let mean = input.data_basis.row_mean().transpose();
        let mut centered = input.data_basis;
        for j in 0..p {
            let m = mean[j];
            centered.column_mut(j).add_scalar_mut(-m);
        }
        let gram = centered.tr_mul(&centered);
        Ok(SampleDesign {
            n_obs: n,
            data_mean: Arc::new(mean),
            centered_gram: Arc::new(gram),
            node_basis: Arc::new(input.node_basis),
            offset_mean: input.data_offset.iter().sum::<f64>() / n as f64,
            node_log_weight: DVector::from_vec(input.node_log_weight),
        })
    }

    /// Same basis, new offsets (used when only theta changes).
    pub fn with_offsets(&self, data_offset: &[f64], node_log_weight: Vec<f64>) -> Self {
        SampleDesign {
            offset_mean: data_offset.iter().sum::<f64>() / data_offset.len() as f64,
            node_log_weight: DVector::from_vec(node_log_weight),
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.node_basis.ncols()
    }

    /// Log normalizer and normalized node probabilities at `beta`.
    fn node_probabilities(&self, beta: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        let mut t = &*self.node_basis * beta;
        t += &self.node_log_weight;
        let max = t.max();
        if !max.is_finite() {
            return Err(Error::Numerical {
                message: "non-finite linear predictor at quadrature nodes".into(),
                condition: f64::NAN,
            });
        }
        t.apply(|v| *v = (*v - max).exp());
        let total = t.sum();
        t /= total;
        Ok((t, max + total.ln()))
    }

    fn log_normalizer(&self, beta: &DVector<f64>) -> Result<f64> {
        Ok(self.node_probabilities(beta)?.1)
    }

    fn data_fit(&self, beta: &DVector<f64>) -> f64 {
        self.offset_mean + self.data_mean.dot(beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub max_iter: usize,
    pub max_halvings: usize,
    pub tol_rel: f64,
    pub tol_grad: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            max_iter: 30,
            max_halvings: 10,
            tol_rel: 1e-7,
            tol_grad: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonDiagnostics {
    pub iterations: usize,
    pub final_objective: f64,
    pub step_halvings: usize,
    pub converged: bool,
    /// Gradient norm in the Hessian metric, `sqrt(g' H^-1 g)`.
    pub gradient_norm: f64,
}

/// Objective, gradient and unpenalized Hessian `sum_l V_l(phi, phi')` at `beta`.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub objective: f64,
    pub gradient: DVector<f64>,
    pub variance: DMatrix<f64>,
    /// `sum_l (mean_i phi(X_li) - mu_l(phi))`.
    pub score: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    pub samples: Vec<SampleDesign>,
    null_dim: usize,
    gram: Arc<DMatrix<f64>>,
}

impl PenalizedProblem {
    pub fn new(space: &RkhsSpace, knots: &[f64], inputs: Vec<SampleInput>) -> Result<Self> {
        let gram = space.penalty_gram(knots)?;
        let samples = inputs
            .into_iter()
            .map(SampleDesign::new)
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(space.null_dim(), gram, samples)
    }

    pub fn from_parts(
        null_dim: usize,
        gram: DMatrix<f64>,
        samples: Vec<SampleDesign>,
    ) -> Result<Self> {
        let p = null_dim + gram.nrows();
        if samples.is_empty() || samples.iter().any(|s| s.dim() != p) {
            return Err(Error::config("penalized problem dimensions disagree"));
        }
        Ok(PenalizedProblem {
            samples,
            null_dim,
            gram: Arc::new(gram),
        })
    }

    /// Same basis and knots, new per-sample offsets.
    pub fn with_samples(&self, samples: Vec<SampleDesign>) -> Self {
        PenalizedProblem {
            samples,
            null_dim: self.null_dim,
            gram: Arc::clone(&self.gram),
        }
    }

    pub fn dim(&self) -> usize {
        self.null_dim + self.gram.nrows()
    }

    pub fn null_dim(&self) -> usize {
        self.null_dim
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn total_obs(&self) -> usize {
        self.samples.iter().map(|s| s.n_obs).sum()
    }

    /// `c'Qc` for `beta = (d, c)`.
    pub fn roughness(&self, beta: &DVector<f64>) -> f64 {
        let c = beta.rows(self.null_dim, self.gram.nrows());
        (c.transpose() * &*self.gram * c)[(0, 0)]
    }

    fn penalty_gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let k = self.null_dim;
        let q = self.gram.nrows();
        let mut g = DVector::zeros(k + q);
        let qc = &*self.gram * beta.rows(k, q);
        g.rows_mut(k, q).copy_from(&qc);
        g
    }

    /// Penalized objective at `beta`.
    pub fn objective(&self, beta: &DVector<f64>, lambda: f64) -> Result<f64> {
        let mut total = 0.0;
        for s in &self.samples {
            total += s.log_normalizer(beta)? - s.data_fit(beta);
        }
        Ok(total + 0.5 * lambda * self.roughness(beta))
    }

    /// Unpenalized negative log likelihood and per-sample log normalizers.
    pub fn neg_log_likelihood(&self, beta: &DVector<f64>) -> Result<(f64, Vec<f64>)> {
        let mut total = 0.0;
        let mut norms = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            let z = s.log_normalizer(beta)?;
            total += z - s.data_fit(beta);
            norms.push(z);
        }
        Ok((total, norms))
    }

    pub fn assemble(&self, beta: &DVector<f64>, lambda: f64) -> Result<Assembly> {
        let p = self.dim();
        let mut objective = 0.5 * lambda * self.roughness(beta);
        let mut score = DVector::zeros(p);
        let mut variance = DMatrix::zeros(p, p);
        for s in &self.samples {
            let (probs, log_z) = s.node_probabilities(beta)?;
            objective += log_z - s.data_fit(beta);
            let basis = &*s.node_basis;
            let mu = basis.tr_mul(&probs);
            let mut scaled = basis.clone();
            let root = probs.map(f64::sqrt);
            for mut col in scaled.column_iter_mut() {
                col.component_mul_assign(&root);
            }
            variance += scaled.tr_mul(&scaled);
            variance -= &mu * mu.transpose();
            score += &*s.data_mean - mu;
        }
        let gradient = self.penalty_gradient(beta) * lambda - &score;
        Ok(Assembly {
            objective,
            gradient,
            variance,
            score,
        })
    }

    /// `H = sum_l V_l(phi, phi') + diag(0, lambda Q)`.
    pub fn hessian(&self, assembly: &Assembly, lambda: f64) -> DMatrix<f64> {
        let mut h = assembly.variance.clone();
        let k = self.null_dim;
        let q = self.gram.nrows();
        let mut block = h.view_mut((k, k), (q, q));
        block += &*self.gram * lambda;
        h
    }

    /// Newton system in the form
    /// `H beta_new = sum_l (mean phi(X_l) - mu_l(phi)) + V_{phi, h~}`.
    pub fn newton_system(
        &self,
        beta: &DVector<f64>,
        lambda: f64,
    ) -> Result<(DMatrix<f64>, DVector<f64>, Assembly)> {
        let assembly = self.assemble(beta, lambda)?;
        let hessian = self.hessian(&assembly, lambda);
        let rhs = &assembly.score + &assembly.variance * beta;
        Ok((hessian, rhs, assembly))
    }

    /// Solves the Newton system at `beta` for the updated coefficients.
    pub fn newton_step(&self, beta: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        let (h, rhs, _) = self.newton_system(beta, lambda)?;
        Ok(factor_spd(&h)?.solve(&rhs))
    }

    /// Newton iteration with step halving from `start`.
    pub fn fit(
        &self,
        lambda: f64,
        start: &DVector<f64>,
        cfg: &NewtonConfig,
    ) -> Result<(DVector<f64>, NewtonDiagnostics)> {
        if !(lambda > 0.0) {
            return Err(Error::config("smoothing parameter must be positive"));
        }
        let mut beta = start.clone();
        let mut assembly = self.assemble(&beta, lambda)?;
        let mut halvings_total = 0;
        let mut iterations = 0;
        let mut stalled = false;
        // Gradient size is measured in the Hessian metric, sqrt(g' H^-1 g),
        // so the tolerance does not depend on the scale of the kernel.
        let mut gradient_norm;
        loop {
            let hessian = self.hessian(&assembly, lambda);
            let direction = -factor_spd(&hessian)?.solve(&assembly.gradient);
            gradient_norm = (-assembly.gradient.dot(&direction)).max(0.0).sqrt();
            if gradient_norm <= cfg.tol_grad || iterations >= cfg.max_iter {
                break;
            }
            iterations += 1;
            let mut step = 1.0;
            let mut accepted = None;
            for halving in 0..=cfg.max_halvings {
                let trial = &beta + &direction * step;
                if let Ok(obj) = self.objective(&trial, lambda) {
                    if obj <= assembly.objective {
                        halvings_total += halving;
                        accepted = Some((trial, obj));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((trial, obj)) = accepted else {
                halvings_total += cfg.max_halvings;
                stalled = true;
                break;
            };
            let previous = assembly.objective;
            beta = trial;
            assembly = self.assemble(&beta, lambda)?;
            debug_assert!((assembly.objective - obj).abs() <= 1e-9 * (1.0 + obj.abs()));
            let rel = (previous - assembly.objective).abs() / (1.0 + previous.abs());
            if rel <= cfg.tol_rel && gradient_norm <= cfg.tol_grad.sqrt() {
                // The objective has stalled near the optimum: take one more
                // full step when it still improves and stop.
                let hessian = self.hessian(&assembly, lambda);
                let direction = -factor_spd(&hessian)?.solve(&assembly.gradient);
                gradient_norm = (-assembly.gradient.dot(&direction)).max(0.0).sqrt();
                let trial = &beta + &direction;
                if let Ok(obj) = self.objective(&trial, lambda) {
                    if obj <= assembly.objective {
                        beta = trial;
                        assembly = self.assemble(&beta, lambda)?;
                        let hessian = self.hessian(&assembly, lambda);
                        let direction = -factor_spd(&hessian)?.solve(&assembly.gradient);
                        gradient_norm = (-assembly.gradient.dot(&direction)).max(0.0).sqrt();
                    }
                }
                break;
            }
        }
        let converged = gradient_norm <= cfg.tol_grad;
        if !converged && !stalled && iterations >= cfg.max_iter {
            log::debug!("Newton hit {iterations} iterations, gradient {gradient_norm:.2e}");
        }
        Ok((
            beta,
            NewtonDiagnostics {
                iterations,
                final_objective: assembly.objective,
                step_halvings: halvings_total,
                converged,
                gradient_norm,
            },
        ))
    }

    /// Approximate cross-validation score at a fitted `beta`.
    pub fn cv_score(&self, beta: &DVector<f64>, lambda: f64, alpha: f64) -> Result<CvScore> {
        let assembly = self.assemble(beta, lambda)?;
        let hessian = self.hessian(&assembly, lambda);
        let inverse = factor_spd(&hessian)?.inverse();
        let mut nll = 0.0;
        let mut traces = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            nll += s.log_normalizer(beta)? - s.data_fit(beta);
            let n = s.n_obs as f64;
            // tr(P R H^{-1} R' P) = tr(H^{-1} R'PR), both symmetric.
            let tr = inverse.component_mul(&s.centered_gram).sum();
            traces.push(tr / (n * (n - 1.0)));
        }
        let trace_term: f64 = traces.iter().sum();
        Ok(CvScore {
            score: nll + alpha * trace_term,
            neg_log_likelihood: nll,
            trace_term,
            per_sample_trace: traces,
        })
    }

    /// Selects `lambda` over the log grid with golden-section refinement.
    pub fn select_lambda(
        &self,
        search: &LambdaSearch,
        alpha: f64,
        start: &DVector<f64>,
        newton: &NewtonConfig,
    ) -> Result<LambdaChoice> {
        let n = self.total_obs() as f64;
        let mut fits: Vec<(f64, DVector<f64>, NewtonDiagnostics, f64)> = Vec::new();
        let mut warm = start.clone();
        let outcome = search.minimize(|log_nl| {
            let lambda = 10f64.powf(log_nl) / n;
            // Warm start from the nearest evaluated point.
            let from = fits
                .iter()
                .min_by(|a, b| (a.0 - log_nl).abs().total_cmp(&(b.0 - log_nl).abs()))
                .map(|f| f.1.clone())
                .unwrap_or_else(|| warm.clone());
            let (beta, diag) = match self.fit(lambda, &from, newton) {
                Ok(r) => r,
                Err(e) => {
                    log::debug!("fit at log10(n lambda) = {log_nl:.3} failed: {e}");
                    return None;
                }
            };
            let score = self.cv_score(&beta, lambda, alpha).ok()?.score;
            if !score.is_finite() {
                return None;
            }
            warm = beta.clone();
            fits.push((log_nl, beta, diag, score));
            Some(score)
        });
        let Some(best) = outcome.best else {
            return Err(Error::Estimation(
                "every smoothing-parameter candidate failed".into(),
            ));
        };
        if let Some(b) = outcome.boundary {
            warn!("cross-validation minimum on the {b:?} edge of the lambda grid");
        }
        let (log_nl, beta, diagnostics, score) = fits
            .into_iter()
            .find(|f| f.0 == best.0)
            .expect("best point was evaluated");
        Ok(LambdaChoice {
            lambda: 10f64.powf(log_nl) / n,
            log10_nlambda: log_nl,
            beta,
            diagnostics,
            score,
            boundary: outcome.boundary,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvScore {
    pub score: f64,
    pub neg_log_likelihood: f64,
    pub trace_term: f64,
    pub per_sample_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LambdaChoice {
    pub lambda: f64,
    pub log10_nlambda: f64,
    pub beta: DVector<f64>,
    pub diagnostics: NewtonDiagnostics,
    pub score: f64,
    pub boundary: Option<GridBoundary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridBoundary {
    Lower,
    Upper,
}

/// Log-uniform grid over `log10(n lambda)` followed by golden-section refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    pub log10_min: f64,
    pub log10_max: f64,
    pub grid_points: usize,
    pub golden_iterations: usize,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        LambdaSearch {
            log10_min: -6.0,
            log10_max: 2.0,
            grid_points: 40,
            golden_iterations: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// `(log10 n lambda, score)` of the selected point.
    pub best: Option<(f64, f64)>,
    pub boundary: Option<GridBoundary>,
    pub evaluations: usize,
}

impl LambdaSearch {
    fn grid(&self) -> Vec<f64> {
        let n = self.grid_points.max(2);
        let step = (self.log10_max - self.log10_min) / (n - 1) as f64;
        (0..n).map(|i| self.log10_min + step * i as f64).collect()
    }

    /// Minimizes `score` (None marks a failed candidate). The grid is scanned
    /// from the largest value down; ties keep the larger `lambda`.
    pub fn minimize(&self, mut score: impl FnMut(f64) -> Option<f64>) -> SearchOutcome {
        let grid = self.grid();
        let mut evaluations = 0;
        let mut values: Vec<Option<f64>> = vec![None; grid.len()];
        for i in (0..grid.len()).rev() {
            values[i] = score(grid[i]);
            evaluations += 1;
        }
        let mut best_idx: Option<usize> = None;
        for i in (0..grid.len()).rev() {
            if let Some(v) = values[i] {
                if best_idx.map_or(true, |b| v < values[b].unwrap()) {
                    best_idx = Some(i);
                }
            }
        }
        let Some(bi) = best_idx else {
            return SearchOutcome {
                best: None,
                boundary: None,
                evaluations,
            };
        };
        let mut best = (grid[bi], values[bi].unwrap());
        if bi == grid.len() - 1 {
            return SearchOutcome {
                best: Some(best),
                boundary: Some(GridBoundary::Upper),
                evaluations,
            };
        }
        if bi == 0 {
            return SearchOutcome {
                best: Some(best),
                boundary: Some(GridBoundary::Lower),
                evaluations,
            };
        }
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (grid[bi - 1], grid[bi + 1]);
        let consider = |x: f64, v: Option<f64>, best: &mut (f64, f64)| {
            if let Some(v) = v {
                if v < best.1 || (v == best.1 && x > best.0) {
                    *best = (x, v);
                }
            }
        };
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let mut fc = score(c);
        let mut fd = score(d);
        evaluations += 2;
        consider(c, fc, &mut best);
        consider(d, fd, &mut best);
        for _ in 2..self.golden_iterations.max(2) {
            let lhs = fc.unwrap_or(f64::INFINITY);
            let rhs = fd.unwrap_or(f64::INFINITY);
            if lhs < rhs {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = score(c);
                consider(c, fc, &mut best);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = score(d);
                consider(d, fd, &mut best);
            }
            evaluations += 1;
        }
        SearchOutcome {
            best: Some(best),
            boundary: None,
            evaluations,
        }
    }
}

/// Relative eigenvalue below which a direction of the scaled Newton matrix is
/// treated as numerically null.
pub const RANK_TOL: f64 = 1e-12;

/// Pseudo-inverse of a symmetric positive semidefinite matrix, computed on the
/// unit-diagonal rescaling. Directions whose eigenvalue is below `RANK_TOL`
/// times the largest carry no information and are dropped.
pub(crate) struct SpdFactor {
    scale: DVector<f64>,
    vectors: DMatrix<f64>,
    inv_values: DVector<f64>,
}

impl SpdFactor {
    pub(crate) fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let scaled = b.component_mul(&self.scale);
        let coef = self.vectors.tr_mul(&scaled).component_mul(&self.inv_values);
        (&self.vectors * coef).component_mul(&self.scale)
    }

    pub(crate) fn inverse(&self) -> DMatrix<f64> {
        let weighted = &self.vectors * DMatrix::from_diagonal(&self.inv_values);
        let inner = weighted * self.vectors.transpose();
        let d = DMatrix::from_diagonal(&self.scale);
        &d * inner * &d
    }
}

pub(crate) fn factor_spd(h: &DMatrix<f64>) -> Result<SpdFactor> {
    let p = h.nrows();
    let scale = DVector::from_iterator(
        p,
        (0..p).map(|i| {
            let v = h[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        }),
    );
    let mut scaled = h.clone();
    for i in 0..p {
        for j in 0..p {
            scaled[(i, j)] *= scale[i] * scale[j];
        }
    }
    let eig = scaled.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min < -1e-8 * max || eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            message: "Newton system is not positive semidefinite".into(),
            condition: max / min.abs(),
        });
    }
    let cutoff = RANK_TOL * max;
    let inv_values = eig.eigenvalues.map(|v| if v > cutoff { 1.0 / v } else { 0.0 });
    Ok(SpdFactor {
        scale,
        vectors: eig.eigenvectors,
        inv_values,
    })
}
