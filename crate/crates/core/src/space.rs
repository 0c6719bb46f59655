//! Domains and reproducing kernel Hilbert spaces for the nonparametric component.
//!
//! Each space splits as a finite null space (functions with zero roughness
//! penalty, constants excluded) plus an RKHS with kernel `R_J`. Sobolev spaces
//! live on a bounded interval and are parameterized through the unit coordinate
//! `u = (x - lower) / (upper - lower)`; the thin-plate space lives on the real
//! line.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::gauss_legendre;

/// Fraction of the data range added on each side when truncating the real line.
pub const REAL_LINE_MARGIN: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    BoundedInterval,
    RealLine,
}

/// Integration domain of one sample. For `RealLine` the bounds are quadrature
/// truncation limits derived from data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub kind: DomainKind,
    pub lower: f64,
    pub upper: f64,
}

impl Domain {
    pub fn bounded(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::config(format!(
                "invalid interval [{lower}, {upper}]"
            )));
        }
        Ok(Domain {
            kind: DomainKind::BoundedInterval,
            lower,
            upper,
        })
    }

    pub fn unit() -> Self {
        Domain {
            kind: DomainKind::BoundedInterval,
            lower: 0.0,
            upper: 1.0,
        }
    }

    /// Real line with placeholder bounds, replaced by data-derived truncation
    /// limits when a model is fitted.
    pub fn real_line() -> Self {
        Domain {
            kind: DomainKind::RealLine,
            lower: -1.0,
            upper: 1.0,
        }
    }

    /// Truncated real line `[min - 0.4 r, max + 0.4 r]` with `r` the data range.
    pub fn truncated_real_line(data: &[f64]) -> Result<Self> {
        let (lo, hi) = data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::degenerate("no finite observations"));
        }
        let range = hi - lo;
        if range <= 0.0 {
            return Err(Error::degenerate("observations have zero range"));
        }
        Ok(Domain {
            kind: DomainKind::RealLine,
            lower: lo - REAL_LINE_MARGIN * range,
            upper: hi + REAL_LINE_MARGIN * range,
        })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// `n` equispaced points including both end points.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        let n = n.max(2);
        let step = self.width() / (n - 1) as f64;
        (0..n).map(|i| self.lower + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceFamily {
    /// `W_2^2[a,b]` minus constants: penalty `int (h'')^2`, null space `{u - 1/2}`.
    Sobolev2Unit,
    /// `W_2^3[a,b]` minus quadratics: penalty `int (h''')^2`, empty null space.
    /// Every function in the space is L2-orthogonal to `{1, x, x^2}`.
    Sobolev3Unit,
    /// Univariate thin-plate space minus constants: penalty `int_R (h'')^2`, null space `{x}`.
    ThinplateReal,
}

impl std::str::FromStr for SpaceFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sobolev2_unit" => Ok(SpaceFamily::Sobolev2Unit),
            "sobolev3_unit" => Ok(SpaceFamily::Sobolev3Unit),
            "thinplate_real" => Ok(SpaceFamily::ThinplateReal),
            other => Err(Error::config(format!("unknown space family `{other}`"))),
        }
    }
}

/// A concrete function space: null-space basis `psi`, kernel `R_J`, penalty order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RkhsSpace {
    pub family: SpaceFamily,
    /// Interval mapped onto `[0, 1]` for the Sobolev families.
    pub lower: f64,
    pub upper: f64,
    /// Thin-plate projection points; the kernel vanishes when either argument is an anchor.
    pub anchors: [f64; 2],
}

pub fn make_space(family: SpaceFamily) -> RkhsSpace {
    RkhsSpace {
        family,
        lower: 0.0,
        upper: 1.0,
        anchors: [-1.0, 1.0],
    }
}

/// Parses the family name and builds the space on the unit interval.
pub fn make_space_named(name: &str) -> Result<RkhsSpace> {
    Ok(make_space(name.parse()?))
}

impl RkhsSpace {
    /// Sobolev space on `[lower, upper]` (the thin-plate family ignores the interval).
    pub fn on_interval(family: SpaceFamily, lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::config(format!("invalid interval [{lower}, {upper}]")));
        }
        Ok(RkhsSpace {
            lower,
            upper,
            ..make_space(family)
        })
    }

    pub fn with_anchors(mut self, a: f64, b: f64) -> Result<Self> {
        if !(a < b) {
            return Err(Error::config("thin-plate anchors must be increasing"));
        }
        self.anchors = [a, b];
        Ok(self)
    }

    pub fn null_dim(&self) -> usize {
        match self.family {
            SpaceFamily::Sobolev2Unit | SpaceFamily::ThinplateReal => 1,
            SpaceFamily::Sobolev3Unit => 0,
        }
    }

    pub fn penalty_order(&self) -> usize {
        match self.family {
            SpaceFamily::Sobolev2Unit | SpaceFamily::ThinplateReal => 2,
            SpaceFamily::Sobolev3Unit => 3,
        }
    }

    fn unit(&self, x: f64) -> f64 {
        (x - self.lower) / (self.upper - self.lower)
    }

    pub fn null_basis_eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.null_dim()];
        self.write_null_basis(x, &mut out);
        out
    }

    pub(crate) fn write_null_basis(&self, x: f64, out: &mut [f64]) {
        match self.family {
            SpaceFamily::Sobolev2Unit => out[0] = self.unit(x) - 0.5,
            SpaceFamily::Sobolev3Unit => {}
            SpaceFamily::ThinplateReal => out[0] = x,
        }
    }

    /// Reproducing kernel `R_J(z, x)`.
    pub fn rk(&self, z: f64, x: f64) -> f64 {
        match self.family {
            SpaceFamily::Sobolev2Unit => {
                let (u, v) = (self.unit(z), self.unit(x));
                k2(u) * k2(v) - k4((u - v).abs())
            }
            SpaceFamily::Sobolev3Unit => sobolev3_projected_rk(self.unit(z), self.unit(x)),
            SpaceFamily::ThinplateReal => self.thinplate_rk(z, x),
        }
    }

    fn thinplate_rk(&self, z: f64, x: f64) -> f64 {
        let [a, b] = self.anchors;
        // Linear interpolation weights at the anchors.
        let lagrange = |t: f64| [(b - t) / (b - a), (t - a) / (b - a)];
        let (lz, lx) = (lagrange(z), lagrange(x));
        let e = thinplate_semi_kernel;
        let mut r = e(z, x);
        for i in 0..2 {
            let ui = self.anchors[i];
            r -= lx[i] * e(z, ui) + lz[i] * e(ui, x);
            for j in 0..2 {
                r += lz[i] * lx[j] * e(ui, self.anchors[j]);
            }
        }
        r
    }

    /// Gram matrix `Q[i][j] = R_J(Z_i, Z_j)` over distinct knots.
    pub fn penalty_gram(&self, knots: &[f64]) -> Result<DMatrix<f64>> {
        let mut sorted = knots.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::degenerate("duplicate knots in penalty Gram matrix"));
        }
        let q = knots.len();
        let mut gram = DMatrix::zeros(q, q);
        for i in 0..q {
            for j in 0..=i {
                let r = self.rk(knots[i], knots[j]);
                gram[(i, j)] = r;
                gram[(j, i)] = r;
            }
        }
        Ok(gram)
    }

    /// Writes `[psi(x); R_J(Z_1, x), ..., R_J(Z_q, x)]` into `out`.
    pub(crate) fn write_basis_row(&self, knots: &[f64], x: f64, out: &mut [f64]) {
        let k = self.null_dim();
        self.write_null_basis(x, &mut out[..k]);
        for (slot, &z) in out[k..].iter_mut().zip(knots) {
            *slot = self.rk(z, x);
        }
    }

    /// Basis matrix with one row per point.
    pub fn basis_matrix(&self, knots: &[f64], xs: &[f64]) -> DMatrix<f64> {
        let p = self.null_dim() + knots.len();
        let mut m = DMatrix::zeros(xs.len(), p);
        let mut row = vec![0.0; p];
        for (i, &x) in xs.iter().enumerate() {
            self.write_basis_row(knots, x, &mut row);
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }
}

fn sobolev3_rk(u: f64, v: f64) -> f64 {
    k3(u) * k3(v) + k6((u - v).abs())
}

/// Orthonormal Legendre polynomials on `[0, 1]`.
fn legendre_unit(u: f64) -> [f64; 3] {
    [
        1.0,
        3f64.sqrt() * (2.0 * u - 1.0),
        5f64.sqrt() * (6.0 * u * u - 6.0 * u + 1.0),
    ]
}

/// Gauss-Legendre rule with `N` nodes mapped onto `[lower, upper]`, exact to degree `2N - 1`.
fn gauss_on<const N: usize>(lower: f64, upper: f64) -> impl Iterator<Item = (f64, f64)> {
    static FIVE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static TEN: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let cell = if N == 5 { &FIVE } else { &TEN };
    let (nodes, weights) = cell.get_or_init(|| gauss_legendre(N));
    let half = 0.5 * (upper - lower);
    let mid = 0.5 * (upper + lower);
    nodes
        .iter()
        .zip(weights)
        .map(move |(t, w)| (mid + half * t, half * w))
}

/// `int_0^1 R(s, v) phi_j(s) ds` for the order-3 kernel, split at the kink
/// `s = v` so each piece is a polynomial of degree 8.
fn sobolev3_moments(v: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (lo, hi) in [(0.0, v), (v, 1.0)] {
        if hi <= lo {
            continue;
        }
        for (s, w) in gauss_on::<5>(lo, hi) {
            let r = w * sobolev3_rk(s, v);
            for (o, p) in out.iter_mut().zip(legendre_unit(s)) {
                *o += r * p;
            }
        }
    }
    out
}

/// `int int R(s, t) phi_j(s) phi_k(t) ds dt`; the moments are polynomials of
/// degree 9 in `t`.
fn sobolev3_double_moments() -> &'static [[f64; 3]; 3] {
    static CELL: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut b = [[0.0; 3]; 3];
        for (t, w) in gauss_on::<10>(0.0, 1.0) {
            let a = sobolev3_moments(t);
            let p = legendre_unit(t);
            for j in 0..3 {
                for k in 0..3 {
                    b[j][k] += w * a[j] * p[k];
                }
            }
        }
        b
    })
}

/// Order-3 kernel with both arguments projected off the quadratics in L2[0, 1].
fn sobolev3_projected_rk(u: f64, v: f64) -> f64 {
    let (pu, pv) = (legendre_unit(u), legendre_unit(v));
    let (au, av) = (sobolev3_moments(u), sobolev3_moments(v));
    let b = sobolev3_double_moments();
    let mut r = sobolev3_rk(u, v);
    for j in 0..3 {
        r -= pu[j] * av[j] + pv[j] * au[j];
        for k in 0..3 {
            r += pu[j] * pv[k] * b[j][k];
        }
    }
    r
}

fn thinplate_semi_kernel(x: f64, y: f64) -> f64 {
    (x - y).abs().powi(3) / 12.0
}

// Scaled Bernoulli polynomials k_r(x) = B_r(x) / r! on [0, 1].

fn k2(x: f64) -> f64 {
    (x * x - x + 1.0 / 6.0) / 2.0
}

fn k3(x: f64) -> f64 {
    x * (x - 0.5) * (x - 1.0) / 6.0
}

fn k4(x: f64) -> f64 {
    let x2 = x * x;
    (x2 * x2 - 2.0 * x2 * x + x2 - 1.0 / 30.0) / 24.0
}

fn k6(x: f64) -> f64 {
    let x2 = x * x;
    let x4 = x2 * x2;
    (x4 * x2 - 3.0 * x4 * x + 2.5 * x4 - 0.5 * x2 + 1.0 / 42.0) / 720.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn k1(x: f64) -> f64 {
        x - 0.5
    }

    #[test]
    fn bernoulli_kernels_match_centered_forms() {
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            let c = k1(x);
            let c2 = c * c;
            assert!((k2(x) - (c2 - 1.0 / 12.0) / 2.0).abs() < 1e-15);
            assert!((k3(x) - c * (c2 - 0.25) / 6.0).abs() < 1e-15);
            assert!((k4(x) - (c2 * c2 - c2 / 2.0 + 7.0 / 240.0) / 24.0).abs() < 1e-15);
            let k6_centered =
                (c2 * c2 * c2 - 1.25 * c2 * c2 + 7.0 * c2 / 16.0 - 31.0 / 1344.0) / 720.0;
            assert!((k6(x) - k6_centered).abs() < 1e-15);
        }
    }

    #[test]
    fn null_dimensions() {
        assert_eq!(make_space(SpaceFamily::Sobolev2Unit).null_dim(), 1);
        assert_eq!(make_space(SpaceFamily::Sobolev3Unit).null_dim(), 0);
        assert_eq!(make_space(SpaceFamily::ThinplateReal).null_dim(), 1);
        assert!(make_space_named("sobolev4").is_err());
    }

    #[test]
    fn null_basis_values() {
        let s2 = make_space(SpaceFamily::Sobolev2Unit);
        assert_eq!(s2.null_basis_eval(0.5), vec![0.0]);
        assert_eq!(s2.null_basis_eval(1.0), vec![0.5]);
        let tp = make_space(SpaceFamily::ThinplateReal);
        assert_eq!(tp.null_basis_eval(-2.0), vec![-2.0]);
        assert!(make_space(SpaceFamily::Sobolev3Unit)
            .null_basis_eval(0.3)
            .is_empty());
    }

    #[test]
    fn kernels_symmetric_on_grid() {
        for family in [
            SpaceFamily::Sobolev2Unit,
            SpaceFamily::Sobolev3Unit,
            SpaceFamily::ThinplateReal,
        ] {
            let space = make_space(family);
            let mut worst: f64 = 0.0;
            for i in 0..50 {
                for j in 0..50 {
                    let (z, x) = (i as f64 / 49.0, j as f64 / 49.0);
                    worst = worst.max((space.rk(z, x) - space.rk(x, z)).abs());
                }
            }
            assert!(worst <= 1e-12, "{family:?}: {worst}");
        }
    }

    #[test]
    fn gram_small_cases() {
        let s2 = make_space(SpaceFamily::Sobolev2Unit);
        let q1 = s2.penalty_gram(&[0.3]).unwrap();
        assert!(q1[(0, 0)] >= 0.0);

        let q = s2.penalty_gram(&[0.25, 0.75]).unwrap();
        assert_eq!(q[(0, 1)], q[(1, 0)]);
        let eig = q.symmetric_eigen();
        assert!(eig.eigenvalues.min() >= -1e-10);

        let tp = make_space(SpaceFamily::ThinplateReal);
        let q = tp.penalty_gram(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(q[(0, 2)], q[(2, 0)]);
        assert!(q.symmetric_eigen().eigenvalues.min() >= -1e-10);

        assert!(matches!(
            s2.penalty_gram(&[0.2, 0.4, 0.2]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn sobolev3_kernel_orthogonal_to_quadratics() {
        let space = make_space(SpaceFamily::Sobolev3Unit);
        // Composite midpoint sums with a fine step, independent of the Gauss moments.
        let m = 20_000;
        for z in [0.0, 0.13, 0.5, 0.91] {
            let mut moments = [0.0; 3];
            for i in 0..m {
                let x = (i as f64 + 0.5) / m as f64;
                let r = space.rk(z, x) / m as f64;
                moments[0] += r;
                moments[1] += r * x;
                moments[2] += r * x * x;
            }
            for v in moments {
                assert!(v.abs() < 1e-9, "z = {z}: {moments:?}");
            }
        }
    }

    #[test]
    fn thinplate_kernel_vanishes_at_anchors() {
        let tp = make_space(SpaceFamily::ThinplateReal);
        for x in [-3.0, 0.2, 5.0] {
            assert!(tp.rk(-1.0, x).abs() < 1e-12);
            assert!(tp.rk(x, 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interval_space_rescales() {
        let s = RkhsSpace::on_interval(SpaceFamily::Sobolev2Unit, 40.0, 100.0).unwrap();
        let unit = make_space(SpaceFamily::Sobolev2Unit);
        assert!((s.rk(55.0, 85.0) - unit.rk(0.25, 0.75)).abs() < 1e-15);
        assert_eq!(s.null_basis_eval(70.0), vec![0.0]);
    }

    #[test]
    fn basis_row_reproduces_representer() {
        let space = make_space(SpaceFamily::Sobolev2Unit);
        let knots = [0.1, 0.35, 0.8];
        let beta = DVector::from_vec(vec![0.7, -1.0, 2.0, 0.5]);
        let xs = [0.0, 0.42, 0.9];
        let m = space.basis_matrix(&knots, &xs);
        let via_matrix = &m * &beta;
        for (i, &x) in xs.iter().enumerate() {
            let direct = 0.7 * (x - 0.5)
                + knots
                    .iter()
                    .zip(beta.iter().skip(1))
                    .map(|(&z, c)| c * space.rk(z, x))
                    .sum::<f64>();
            assert!((via_matrix[i] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn truncated_real_line_bounds() {
        let d = Domain::truncated_real_line(&[1.0, 3.0, 2.0]).unwrap();
        assert_eq!(d.kind, DomainKind::RealLine);
        assert!((d.lower - 0.2).abs() < 1e-12 && (d.upper - 3.8).abs() < 1e-12);
        assert!(Domain::truncated_real_line(&[2.0, 2.0]).is_err());
        assert!(Domain::bounded(1.0, 1.0).is_err());
    }
}
