//! Main indices and upper bounds of total indices from derivative estimates.

use crate::derivatives::{
    check_rows_in_domain, estimate_family_runs, family_coefficients, mean_and_se, perturbed_rows, VariableSubset,
};
use crate::distributions::{sample_matrix, Marginal, ProductDistribution, RandomStream};
use crate::error::{Error, Result};
use crate::model::ModelFunction;
use crate::perturb::{sample_perturbations, PerturbationConfig};
use crate::schemes::CoefficientSet;
use ndarray::Array2;
use rayon::prelude::*;
use std::fmt;

/// `[F(min(x,x')) - F(x)F(x')] / (rho(x) rho(x'))`
pub fn main_kernel(m: &Marginal, x: f64, x2: f64) -> Result<f64> {
    let (p, q) = (m.pdf(x), m.pdf(x2));
    if p <= 0.0 || q <= 0.0 {
        return Err(Error::domain(format!("kernel needs positive density at {x} and {x2}")));
    }
    Ok((m.cdf(x.min(x2)) - m.cdf(x) * m.cdf(x2)) / (p * q))
}

/// `F(x)(1 - F(x)) / rho(x)^2`
pub fn ub_kernel(m: &Marginal, x: f64) -> Result<f64> {
    let p = m.pdf(x);
    if p <= 0.0 {
        return Err(Error::domain(format!("kernel needs positive density at {x}")));
    }
    let f = m.cdf(x);
    Ok(f * (1.0 - f) / (p * p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IndexKind {
    Main,
    UpperBound,
}

impl IndexKind {
    pub fn label(&self) -> &'static str {
        match self {
            IndexKind::Main => "S",
            IndexKind::UpperBound => "UB",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Direct,
    Plugin,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Direct => "direct",
            EstimatorKind::Plugin => "plugin",
        })
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(EstimatorKind::Direct),
            "plugin" => Ok(EstimatorKind::Plugin),
            other => Err(Error::param(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEstimate {
    pub raw: f64,
    pub normalized: f64,
    pub std_error: f64,
    pub kind: IndexKind,
    pub subset: VariableSubset,
    pub estimator: EstimatorKind,
    pub runs_used: usize,
}

/// Where the output variance used for normalization comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VarianceSource {
    /// A dedicated sample of this many runs at unperturbed points.
    Dedicated(usize),
    /// Reuse runs already made: unperturbed ones when the stencil has a zero
    /// node, otherwise the first perturbed run per point (biased at O(h)).
    PerturbedRuns,
    /// A known value (no runs).
    Known(f64),
}

/// Output variance estimate and the runs it consumed beyond the estimator's own.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutputVariance {
    pub value: f64,
    pub runs_used: usize,
}

fn sample_variance(y: &[f64]) -> Result<f64> {
    if y.len() < 2 {
        return Err(Error::param("variance needs at least two runs"));
    }
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    Ok(y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Unbiased sample variance of `f` over `n` fresh draws from `dist`.
pub fn dedicated_variance(
    f: &ModelFunction,
    dist: &ProductDistribution,
    n: usize,
    stream: &RandomStream,
) -> Result<OutputVariance> {
    let x = sample_matrix(dist, n, stream);
    check_rows_in_domain(&x, f.domain(), "variance sample")?;
    let y = f.eval_rows(&x)?;
    Ok(OutputVariance {
        value: sample_variance(&y)?,
        runs_used: n,
    })
}

fn check_setup(f: &ModelFunction, dist: &ProductDistribution, cfg: &PerturbationConfig) -> Result<()> {
    if f.dim() != dist.dim() || cfg.dim() != dist.dim() {
        return Err(Error::param(format!(
            "dimension mismatch: model {}, distribution {}, perturbation {}",
            f.dim(),
            dist.dim(),
            cfg.dim()
        )));
    }
    Ok(())
}

fn normalize(raw: f64, var: f64) -> f64 {
    raw / var
}

/// Direct estimators of every first-order main index and upper bound from
/// `3 L N` shared runs.
pub fn direct_indices(
    f: &ModelFunction,
    dist: &ProductDistribution,
    coeffs: &CoefficientSet,
    cfg: &PerturbationConfig,
    n: usize,
    stream: &RandomStream,
    variance: VarianceSource,
) -> Result<Vec<(IndexEstimate, IndexEstimate)>> {
    if coeffs.target_order != 1 {
        return Err(Error::param("direct indices need a first-order stencil"));
    }
    let subsets: Vec<VariableSubset> = (0..dist.dim()).map(VariableSubset::singleton).collect();
    sigma_estimates(f, dist, &subsets, coeffs, cfg, n, stream, variance)
}

/// Main and upper-bound quantities of one subset `u` (product kernels over
/// `u`, `2^-|u|` prefactor on the bound). For singletons this reproduces
/// [`direct_indices`] exactly at a fixed stream.
pub fn generalized_sigma(
    f: &ModelFunction,
    dist: &ProductDistribution,
    u: VariableSubset,
    coeffs: &CoefficientSet,
    cfg: &PerturbationConfig,
    n: usize,
    stream: &RandomStream,
    variance: VarianceSource,
) -> Result<(IndexEstimate, IndexEstimate)> {
    if u.is_empty() || u.len() as u32 != coeffs.target_order {
        return Err(Error::param(format!(
            "subset of size {} needs a stencil of that order, got {}",
            u.len(),
            coeffs.target_order
        )));
    }
    let mut out = sigma_estimates(f, dist, &[u], coeffs, cfg, n, stream, variance)?;
    Ok(out.remove(0))
}

#[allow(clippy::too_many_arguments)]
fn sigma_estimates(
    f: &ModelFunction,
    dist: &ProductDistribution,
    subsets: &[VariableSubset],
    coeffs: &CoefficientSet,
    cfg: &PerturbationConfig,
    n: usize,
    stream: &RandomStream,
    variance: VarianceSource,
) -> Result<Vec<(IndexEstimate, IndexEstimate)>> {
    check_setup(f, dist, cfg)?;
    if n < 2 {
        return Err(Error::param("direct estimators need N >= 2"));
    }
    let d = dist.dim();
    for u in subsets {
        if let Some(j) = u.indices().into_iter().find(|&j| j >= d || !cfg.is_active(j)) {
            return Err(Error::param(format!("coordinate {} is masked or out of range", j + 1)));
        }
    }
    cfg.check_a2(&coeffs.nodes)?;
    let beta = coeffs.nodes.as_slice();
    let l = beta.len();
    let h = &cfg.bandwidth;
    let x = sample_matrix(dist, n, &stream.substream(0));
    let xp = sample_matrix(dist, n, &stream.substream(1));
    let v = sample_perturbations(cfg, n, &stream.substream(2)).v;
    let vp = sample_perturbations(cfg, n, &stream.substream(3)).v;
    let pa = perturbed_rows(|i, j| x[[i, j]], d, beta, h, v.view());
    let pb = perturbed_rows(|i, j| xp[[i, j]], d, beta, h, vp.view());
    let pc = perturbed_rows(|i, j| x[[i, j]], d, beta, h, vp.view());
    for (pts, what) in [(&pa, "first run family"), (&pb, "second run family"), (&pc, "mixed run family")] {
        check_rows_in_domain(pts, f.domain(), what)?;
    }
    let ya = f.eval_rows(&pa)?;
    let yb = f.eval_rows(&pb)?;
    let yc = f.eval_rows(&pc)?;
    let combine = |y: &[f64], i: usize| -> f64 {
        coeffs.coefficients.iter().zip(&y[i * l..(i + 1) * l]).map(|(c, y)| c * y).sum()
    };
    let sa: Vec<f64> = (0..n).map(|i| combine(&ya, i)).collect();
    let sb: Vec<f64> = (0..n).map(|i| combine(&yb, i)).collect();
    let sc: Vec<f64> = (0..n).map(|i| combine(&yc, i)).collect();

    let var = match variance {
        VarianceSource::Dedicated(m) => dedicated_variance(f, dist, m, &stream.substream(4))?,
        VarianceSource::Known(value) => OutputVariance { value, runs_used: 0 },
        VarianceSource::PerturbedRuns => {
            let k = beta.iter().position(|&b| b == 0.0).unwrap_or(0);
            OutputVariance {
                value: sample_variance(&(0..n).map(|i| ya[i * l + k]).collect::<Vec<_>>())?,
                runs_used: 0,
            }
        }
    };
    if !(var.value > 0.0) {
        return Err(Error::domain("estimated output variance is not positive"));
    }
    let runs = 3 * l * n + var.runs_used;
    let s4 = cfg.law.variance().powi(2);

    subsets
        .iter()
        .map(|&u| {
            let idx = u.indices();
            let scale = 0.5f64.powi(idx.len() as i32);
            let mut main_t = Vec::with_capacity(n);
            let mut ub_t = Vec::with_capacity(n);
            for i in 0..n {
                let mut wm = 1.0;
                let mut wu = 1.0;
                for &k in &idx {
                    let m = dist.marginal(k);
                    let vv = v[[i, k]] * vp[[i, k]] / (h[k] * h[k] * s4);
                    wm *= vv * main_kernel(m, x[[i, k]], xp[[i, k]])?;
                    wu *= vv * ub_kernel(m, x[[i, k]])?;
                }
                main_t.push(sa[i] * sb[i] * wm);
                ub_t.push(scale * sa[i] * sc[i] * wu);
            }
            let (mr, mse) = mean_and_se(&main_t);
            let (ur, use_) = mean_and_se(&ub_t);
            let est = |raw, se, kind| IndexEstimate {
                raw,
                normalized: normalize(raw, var.value),
                std_error: se,
                kind,
                subset: u,
                estimator: EstimatorKind::Direct,
                runs_used: runs,
            };
            Ok((est(mr, mse, IndexKind::Main), est(ur, use_, IndexKind::UpperBound)))
        })
        .collect()
}

/// Gradient estimates at sampled points.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSample {
    pub points: Array2<f64>,
    pub gradients: Array2<f64>,
    /// Model runs per point (zero for exact gradients).
    pub runs_per_point: usize,
    /// One model output per point: unperturbed when available.
    pub anchors: Vec<f64>,
    pub anchors_unperturbed: bool,
}

impl GradientSample {
    /// Exact gradients supplied by an oracle (no model runs counted).
    pub fn from_oracle(points: Array2<f64>, grad: impl Fn(&[f64]) -> Vec<f64>, f: &ModelFunction) -> Result<Self> {
        let n = points.nrows();
        let d = points.ncols();
        let mut gradients = Array2::zeros((n, d));
        for (i, row) in points.rows().into_iter().enumerate() {
            let g = grad(&row.to_vec());
            if g.len() != d {
                return Err(Error::param("oracle gradient has the wrong length"));
            }
            gradients.row_mut(i).assign(&ndarray::ArrayView1::from(&g));
        }
        let anchors = points.rows().into_iter().map(|r| f.eval(&r.to_vec())).collect();
        Ok(Self {
            points,
            gradients,
            runs_per_point: 0,
            anchors,
            anchors_unperturbed: true,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn runs_used(&self) -> usize {
        self.len() * self.runs_per_point
    }

    /// Variance of the anchor outputs (no extra runs).
    pub fn anchor_variance(&self) -> Result<OutputVariance> {
        Ok(OutputVariance {
            value: sample_variance(&self.anchors)?,
            runs_used: 0,
        })
    }
}

/// Settings of the per-point gradient estimation.
#[derive(Clone, Debug)]
pub struct InnerSettings {
    pub coeffs: CoefficientSet,
    pub cfg: PerturbationConfig,
    pub n_inner: usize,
}

/// Samples `n1` points and estimates the full gradient at each from
/// `L * n_inner` shared runs, with an independent stream per point.
pub fn plugin_gradients(
    f: &ModelFunction,
    dist: &ProductDistribution,
    n1: usize,
    inner: &InnerSettings,
    stream: &RandomStream,
) -> Result<GradientSample> {
    check_setup(f, dist, &inner.cfg)?;
    if n1 < 2 {
        return Err(Error::param("plug-in estimators need N1 >= 2"));
    }
    if inner.n_inner == 0 {
        return Err(Error::param("inner sample size must be at least 1"));
    }
    if inner.coeffs.target_order != 1 {
        return Err(Error::param("plug-in gradients need a first-order stencil"));
    }
    let d = dist.dim();
    let points = sample_matrix(dist, n1, &stream.substream(0));
    let family = family_coefficients(&inner.coeffs)?;
    let singles: Vec<VariableSubset> = (0..d).map(VariableSubset::singleton).collect();
    // The anchor output is a run the estimator already made: the zero node
    // when the stencil has one (an exact f(x)), else the first node.
    let zero = inner.coeffs.nodes.as_slice().iter().position(|&b| b == 0.0);
    let anchor_node = zero.unwrap_or(0);
    let l = inner.coeffs.len();
    let grads_stream = stream.substream(1);
    let per_point = |i: usize| -> Result<(Vec<f64>, f64)> {
        let x = points.row(i).to_vec();
        let s = grads_stream.substream(i as u64);
        let (est, y) = estimate_family_runs(f, &x, &singles, &family, &inner.cfg, inner.n_inner, &s)?;
        debug_assert_eq!(y.len(), l * inner.n_inner);
        Ok((est.iter().map(|(_, e)| e.value).collect(), y[anchor_node]))
    };
    let results: Vec<Result<(Vec<f64>, f64)>> = if f.is_pure() {
        (0..n1).into_par_iter().map(per_point).collect()
    } else {
        (0..n1).map(per_point).collect()
    };
    let mut gradients = Array2::zeros((n1, d));
    let mut anchors = Vec::with_capacity(n1);
    for (i, r) in results.into_iter().enumerate() {
        let (g, a) = r?;
        gradients.row_mut(i).assign(&ndarray::ArrayView1::from(&g));
        anchors.push(a);
    }
    Ok(GradientSample {
        points,
        gradients,
        runs_per_point: l * inner.n_inner,
        anchors,
        anchors_unperturbed: zero.is_some(),
    })
}

/// Plug-in main indices (one-sample U-statistic, jackknife standard error)
/// and upper bounds.
pub fn plugin_indices(
    g: &GradientSample,
    dist: &ProductDistribution,
    variance: &OutputVariance,
) -> Result<Vec<(IndexEstimate, IndexEstimate)>> {
    let n1 = g.len();
    if n1 < 2 {
        return Err(Error::param("plug-in estimators need N1 >= 2"));
    }
    if g.points.ncols() != dist.dim() {
        return Err(Error::param("gradient sample and distribution disagree on dimension"));
    }
    if !(variance.value > 0.0) {
        return Err(Error::domain("output variance must be positive"));
    }
    let runs = g.runs_used() + variance.runs_used;
    (0..dist.dim())
        .map(|j| {
            let m = dist.marginal(j);
            let xs: Vec<f64> = g.points.column(j).to_vec();
            let ds: Vec<f64> = g.gradients.column(j).to_vec();
            let (raw, se) = u_statistic(m, &xs, &ds)?;
            let ub_terms = canonical_order(&xs, &ds)
                .into_iter()
                .map(|i| Ok(0.5 * ds[i] * ds[i] * ub_kernel(m, xs[i])?))
                .collect::<Result<Vec<f64>>>()?;
            let (ub, ub_se) = mean_and_se(&ub_terms);
            let u = VariableSubset::singleton(j);
            let est = |raw, se, kind| IndexEstimate {
                raw,
                normalized: normalize(raw, variance.value),
                std_error: se,
                kind,
                subset: u,
                estimator: EstimatorKind::Plugin,
                runs_used: runs,
            };
            Ok((est(raw, se, IndexKind::Main), est(ub, ub_se, IndexKind::UpperBound)))
        })
        .collect()
}

// Sorting by coordinate, then derivative, makes sums independent of input order.
fn canonical_order(xs: &[f64], ds: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(ds[a].total_cmp(&ds[b])));
    order
}

/// `2/(n(n-1)) sum_{a<b} D_a D_b K(x_a, x_b)` and its jackknife standard error.
///
/// Points are put in a canonical order first (by coordinate, then by
/// derivative), so the result does not depend on the input order. In that
/// order `K(x_a, x_b) = F_a (1 - F_b) / (rho_a rho_b)` for `a < b`, which
/// turns the double sum into prefix sums.
pub(crate) fn u_statistic(m: &Marginal, xs: &[f64], ds: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len();
    let order = canonical_order(xs, ds);
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for &i in &order {
        let p = m.pdf(xs[i]);
        if p <= 0.0 {
            return Err(Error::domain(format!("kernel needs positive density at {}", xs[i])));
        }
        let f = m.cdf(xs[i]);
        left.push(ds[i] * f / p);
        right.push(ds[i] * (1.0 - f) / p);
    }
    // row[a] = sum_{b != a} h(a, b) in canonical order.
    let mut row = vec![0.0; n];
    let mut prefix = 0.0;
    for a in 0..n {
        row[a] += right[a] * prefix;
        prefix += left[a];
    }
    let mut suffix = 0.0;
    for a in (0..n).rev() {
        row[a] += left[a] * suffix;
        suffix += right[a];
    }
    let total: f64 = {
        let mut s = 0.0;
        let mut acc = 0.0;
        for a in 0..n {
            s += right[a] * acc;
            acc += left[a];
        }
        s
    };
    let nf = n as f64;
    let u = 2.0 * total / (nf * (nf - 1.0));
    if n < 3 {
        return Ok((u, f64::INFINITY));
    }
    let loo: Vec<f64> = row
        .iter()
        .map(|r| 2.0 * (total - r) / ((nf - 1.0) * (nf - 2.0)))
        .collect();
    let mean = loo.iter().sum::<f64>() / nf;
    let var = (nf - 1.0) / nf * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    Ok((u, var.sqrt()))
}
