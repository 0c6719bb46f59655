//! Bundled Old Faithful data and the Normal-mixture semiparametric preset.

use semidens::{make_space, Domain, ModelSpec, ParametricForm, RkhsSpace, SpaceFamily};

use crate::data::Table;
use crate::{CliError, CliResult};

const DATA: &str = include_str!("../data/faithful.csv");

pub fn table() -> Table {
    Table::parse(DATA).expect("bundled data parse")
}

/// Fitting interval of each bundled variable.
pub fn domain(variable: &str) -> CliResult<Domain> {
    let (lo, hi) = match variable {
        "waiting" => (40.0, 100.0),
        "duration" => (1.5, 5.5),
        other => {
            return Err(CliError::input(format!(
                "at `variable`: faithful has `waiting` and `duration`, got `{other}`"
            )))
        }
    };
    Ok(Domain::bounded(lo, hi)?)
}

/// `log f0 + h` with `f0` a two-component Normal mixture and `h` in the
/// second-order Sobolev space on the variable's interval.
pub fn model(variable: &str, data: &[f64]) -> CliResult<ModelSpec> {
    let dom = domain(variable)?;
    let space = RkhsSpace::on_interval(SpaceFamily::Sobolev2Unit, dom.lower, dom.upper)?;
    Ok(ModelSpec::additive(
        ParametricForm::MixnormLogdensity,
        space,
        vec![dom],
        mixture_start(data)?,
    ))
}

/// Nonparametric cubic-spline model on the variable's interval.
pub fn cubic_model(variable: &str) -> CliResult<ModelSpec> {
    let dom = domain(variable)?;
    let space = RkhsSpace {
        lower: dom.lower,
        upper: dom.upper,
        ..make_space(SpaceFamily::Sobolev2Unit)
    };
    Ok(ModelSpec::nonparametric(space, vec![dom]))
}

/// Two-means split point: the midpoint between adjacent sorted observations
/// that minimizes the pooled within-group sum of squares.
pub fn split_point(data: &[f64]) -> CliResult<f64> {
    let mut xs = data.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n < 4 || !(xs[n - 1] > xs[0]) {
        return Err(CliError::input("need at least four observations with positive range"));
    }
    let mut prefix = vec![(0.0, 0.0); n + 1];
    for (i, x) in xs.iter().enumerate() {
        prefix[i + 1] = (prefix[i].0 + x, prefix[i].1 + x * x);
    }
    let sse = |a: usize, b: usize| {
        let (s, q) = (prefix[b].0 - prefix[a].0, prefix[b].1 - prefix[a].1);
        q - s * s / (b - a) as f64
    };
    let best = (2..=n - 2)
        .filter(|&k| xs[k] > xs[k - 1])
        .min_by(|&a, &b| (sse(0, a) + sse(a, n)).total_cmp(&(sse(0, b) + sse(b, n))))
        .ok_or_else(|| CliError::input("no split leaves two distinct observations on each side"))?;
    Ok(0.5 * (xs[best - 1] + xs[best]))
}

/// `(mu1, sigma1, mu2, sigma2, p)` from the two sides of the split point, with `p`
/// the fraction of observations on the left.
pub fn mixture_start(data: &[f64]) -> CliResult<Vec<f64>> {
    let split = split_point(data)?;
    let (left, right): (Vec<f64>, Vec<f64>) = data.iter().partition(|&&x| x < split);
    if left.len() < 2 || right.len() < 2 {
        return Err(CliError::input("split leaves fewer than two observations on a side"));
    }
    let (m1, s1) = mean_sd(&left);
    let (m2, s2) = mean_sd(&right);
    let p = left.len() as f64 / data.len() as f64;
    Ok(vec![m1, s1, m2, s2, p])
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt().max(1e-3 * mean.abs().max(1.0)))
}
