//! Truncated derivative-based ANOVA surrogate built from derivative estimates
//! at a sample of outer points.

mod state;

pub use state::{decode_state, encode_state, STATE_MAGIC, STATE_VERSION};

use crate::derivatives::{estimate_family_runs, family_coefficients, VariableSubset};
use crate::distributions::{sample_matrix, ProductDistribution, RandomStream};
use crate::error::{Error, Result};
use crate::model::ModelFunction;
use crate::perturb::PerturbationConfig;
use crate::schemes::{build_scheme, solve_coefficients, CoefficientSet, NodeSet, SchemeKind, SchemeParams};
use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

/// Largest truncation order accepted unless explicitly overridden.
pub const DEFAULT_MAX_ORDER: usize = 3;

/// Stencil on nodes `{0, 1, -1, 2, -2}` constraining exponents `0..=4`, for
/// derivative orders up to four.
///
/// Five exponents are needed for five nodes. On symmetric nodes the system is
/// only solvable with three even and two odd exponents, so `0..=4` is the one
/// choice that covers every order up to four.
pub fn five_node_coefficients(order: u32) -> Result<CoefficientSet> {
    if !(1..=4).contains(&order) {
        return Err(Error::param(format!("five-node stencil supports orders 1..=4, got {order}")));
    }
    let params = SchemeParams {
        exponents: Some((0..=4).collect()),
        ..SchemeParams::default()
    };
    let scheme = build_scheme(SchemeKind::Custom, order, &params)?;
    solve_coefficients(&NodeSet::default_nodes(5)?, &scheme)
}

/// How the emulator's constant term is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeanSource {
    /// Zero-node runs when the stencil has a zero node, else a dedicated sample.
    Auto,
    /// Unperturbed runs at the outer points (requires a zero node).
    ZeroNode,
    /// A separate sample of this many runs from the outer distribution.
    Dedicated(usize),
}

#[derive(Clone, Debug)]
pub struct EmulatorConfig {
    /// Highest interaction order kept.
    pub s: usize,
    pub outer_n: usize,
    /// Distribution of the outer points (usually the input distribution).
    pub outer: ProductDistribution,
    /// Stencil for order `s`; lower orders reuse its nodes.
    pub coeffs: CoefficientSet,
    pub cfg: PerturbationConfig,
    pub n_inner: usize,
    pub mean: MeanSource,
    pub max_order: usize,
    pub stream: RandomStream,
}

impl EmulatorConfig {
    pub fn new(
        s: usize,
        outer_n: usize,
        outer: ProductDistribution,
        coeffs: CoefficientSet,
        cfg: PerturbationConfig,
        n_inner: usize,
        stream: RandomStream,
    ) -> Self {
        Self {
            s,
            outer_n,
            outer,
            coeffs,
            cfg,
            n_inner,
            mean: MeanSource::Auto,
            max_order: DEFAULT_MAX_ORDER,
            stream,
        }
    }

    pub fn dim(&self) -> usize {
        self.outer.dim()
    }

    fn mean_runs(&self) -> usize {
        match self.resolved_mean() {
            MeanSource::Dedicated(n) => n,
            _ => 0,
        }
    }

    fn resolved_mean(&self) -> MeanSource {
        match self.mean {
            MeanSource::Auto if self.coeffs.nodes.contains_zero() => MeanSource::ZeroNode,
            MeanSource::Auto => MeanSource::Dedicated(self.outer_n),
            m => m,
        }
    }

    /// Model runs the build will make.
    pub fn planned_runs(&self) -> usize {
        self.outer_n * self.coeffs.len() * self.n_inner + self.mean_runs()
    }

    /// Largest outer sample that fits `budget` runs with `n_inner` samples per
    /// point, counting a dedicated mean sample of one run per outer point when
    /// the stencil has no zero node.
    pub fn outer_for_budget(budget: usize, coeffs: &CoefficientSet, n_inner: usize) -> Result<usize> {
        let per_point = coeffs.len() * n_inner + usize::from(!coeffs.nodes.contains_zero());
        let n = budget / per_point.max(1);
        if n_inner == 0 || n < 2 {
            return Err(Error::param(format!(
                "budget {budget} is too small: each outer point needs {per_point} runs and at least two are required"
            )));
        }
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.s == 0 || self.s > d {
            return Err(Error::param(format!("truncation order must lie in 1..={d}, got {}", self.s)));
        }
        if self.s > self.max_order {
            return Err(Error::param(format!(
                "truncation order {} exceeds the limit {} ({} subsets); raise the limit explicitly",
                self.s,
                self.max_order,
                subset_count(d, self.s)
            )));
        }
        if self.coeffs.target_order as usize != self.s {
            return Err(Error::param(format!(
                "stencil solved for order {}, truncation order is {}",
                self.coeffs.target_order, self.s
            )));
        }
        if self.cfg.dim() != d {
            return Err(Error::param("perturbation configuration has the wrong dimension"));
        }
        if self.outer_n < 2 {
            return Err(Error::param("the emulator needs at least two outer points"));
        }
        if self.n_inner == 0 {
            return Err(Error::param("inner sample size must be at least 1"));
        }
        match self.resolved_mean() {
            MeanSource::ZeroNode if !self.coeffs.nodes.contains_zero() => {
                Err(Error::param("zero-node mean requires a stencil with node 0"))
            }
            MeanSource::Dedicated(n) if n < 2 => Err(Error::param("dedicated mean sample needs at least two runs")),
            _ => Ok(()),
        }
    }
}

fn subset_count(d: usize, s: usize) -> usize {
    let mut total = 0usize;
    let mut c = 1usize;
    for k in 1..=s.min(d) {
        c = c.saturating_mul(d - k + 1) / k;
        total = total.saturating_add(c);
    }
    total
}

/// Exact cross-partial derivative `(u, x) -> D^u f(x)`.
pub type DerivativeOracle<'a> = &'a (dyn Fn(VariableSubset, &[f64]) -> f64 + Sync);

#[derive(Clone, Debug, PartialEq)]
pub struct DbAnovaEmulator {
    pub s: usize,
    pub outer: ProductDistribution,
    pub points: Array2<f64>,
    pub subsets: Vec<VariableSubset>,
    /// `derivatives[[m, k]]` estimates `D^{subsets[k]} f` at outer point `m`.
    pub derivatives: Array2<f64>,
    pub mean: f64,
    /// Per-point model outputs behind the mean, when it came from the outer points.
    pub anchors: Option<Vec<f64>>,
    pub mean_se: f64,
    pub descriptor: String,
    pub runs_used: usize,
}

impl DbAnovaEmulator {
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn outer_n(&self) -> usize {
        self.points.nrows()
    }

    /// Checks the internal consistency of a built or decoded emulator.
    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.points.dim();
        if d != self.outer.dim() || n < 1 {
            return Err(Error::param("outer points do not match the outer distribution"));
        }
        if self.s == 0 || self.s > d {
            return Err(Error::param("truncation order out of range"));
        }
        if self.derivatives.dim() != (n, self.subsets.len()) {
            return Err(Error::param("derivative table is incomplete"));
        }
        if self.subsets.iter().any(|u| u.is_empty() || u.len() > self.s || u.max_index() >= Some(d)) {
            return Err(Error::param("derivative table has a subset outside the truncation"));
        }
        if !self.mean.is_finite() || self.derivatives.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("emulator holds non-finite values"));
        }
        if let Some(a) = &self.anchors {
            if a.len() != n {
                return Err(Error::param("anchor outputs do not match the outer points"));
            }
        }
        for (m, row) in self.points.rows().into_iter().enumerate() {
            for (k, &x) in row.iter().enumerate() {
                if !self.outer.marginal(k).in_open_support(x) || self.outer.marginal(k).pdf(x) <= 0.0 {
                    return Err(Error::domain(format!("outer point {m} lies outside the outer distribution")));
                }
            }
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::param(format!("point has {} coordinates, emulator expects {}", x.len(), self.dim())));
        }
        for (k, &v) in x.iter().enumerate() {
            let (lo, hi) = self.outer.marginal(k).support();
            if !(v >= lo && v <= hi) {
                return Err(Error::domain(format!("coordinate {} = {v} outside the support [{lo}, {hi}]", k + 1)));
            }
        }
        Ok(())
    }

    // Per outer point: sum over subsets of D * prod_k (G_k - 1[X' >= x_k]) / g_k.
    fn terms(&self, cdf: &Array2<f64>, inv_pdf: &Array2<f64>, x: &[f64]) -> Vec<f64> {
        let n = self.outer_n();
        let d = self.dim();
        let mut w = vec![0.0; d];
        (0..n)
            .map(|m| {
                let row = self.points.row(m);
                for k in 0..d {
                    let ind = if row[k] >= x[k] { 1.0 } else { 0.0 };
                    w[k] = (cdf[[m, k]] - ind) * inv_pdf[[m, k]];
                }
                self.subsets
                    .iter()
                    .enumerate()
                    .map(|(c, u)| {
                        let bits = u.bits();
                        let mut p = self.derivatives[[m, c]];
                        for (k, wk) in w.iter().enumerate() {
                            if bits >> k & 1 == 1 {
                                p *= wk;
                            }
                        }
                        p
                    })
                    .sum()
            })
            .collect()
    }

    fn kernel_factors(&self) -> (Array2<f64>, Array2<f64>) {
        let (n, d) = self.points.dim();
        let mut cdf = Array2::zeros((n, d));
        let mut inv = Array2::zeros((n, d));
        for m in 0..n {
            for k in 0..d {
                let mk = self.outer.marginal(k);
                let x = self.points[[m, k]];
                cdf[[m, k]] = mk.cdf(x);
                inv[[m, k]] = 1.0 / mk.pdf(x);
            }
        }
        (cdf, inv)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_with_stderr(x)?.0)
    }

    /// Prediction and its outer-sample standard error.
    pub fn predict_with_stderr(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_point(x)?;
        let (cdf, inv) = self.kernel_factors();
        Ok(self.combine(self.terms(&cdf, &inv, x)))
    }

    fn combine(&self, mut t: Vec<f64>) -> (f64, f64) {
        let n = t.len() as f64;
        let extra = match &self.anchors {
            // The mean and the correction share outer points, so their errors
            // are combined per point.
            Some(a) => {
                for (ti, ai) in t.iter_mut().zip(a) {
                    *ti += ai;
                }
                0.0
            }
            None => self.mean_se * self.mean_se,
        };
        let avg = t.iter().sum::<f64>() / n;
        let var = if t.len() > 1 {
            t.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            f64::INFINITY
        };
        let value = match &self.anchors {
            Some(_) => avg - self.anchor_mean() + self.mean,
            None => self.mean + avg,
        };
        (value, (var / n + extra).sqrt())
    }

    fn anchor_mean(&self) -> f64 {
        self.anchors
            .as_ref()
            .map_or(0.0, |a| a.iter().sum::<f64>() / a.len() as f64)
    }

    /// Predictions at every row of `points`, sharing the per-point kernel factors.
    pub fn predict_batch(&self, points: &Array2<f64>) -> Result<Vec<f64>> {
        if points.nrows() == 0 {
            return Ok(Vec::new());
        }
        let (cdf, inv) = self.kernel_factors();
        let rows: Vec<ArrayView1<'_, f64>> = points.rows().into_iter().collect();
        rows.into_par_iter()
            .map(|r| {
                let x = r.to_vec();
                self.check_point(&x)?;
                Ok(self.combine(self.terms(&cdf, &inv, &x)).0)
            })
            .collect()
    }
}

fn sample_outer(cfg: &EmulatorConfig) -> Array2<f64> {
    sample_matrix(&cfg.outer, cfg.outer_n, &cfg.stream.substream(0))
}

fn finish_mean(
    f: &ModelFunction,
    cfg: &EmulatorConfig,
    anchors: Option<Vec<f64>>,
) -> Result<(f64, f64, Option<Vec<f64>>, usize)> {
    match anchors {
        Some(a) => {
            let (m, se) = crate::derivatives::mean_and_se(&a);
            Ok((m, se, Some(a), 0))
        }
        None => {
            let n = cfg.mean_runs();
            let x = sample_matrix(&cfg.outer, n, &cfg.stream.substream(2));
            let y = f.eval_rows(&x)?;
            let (m, se) = crate::derivatives::mean_and_se(&y);
            Ok((m, se, None, n))
        }
    }
}

/// Builds the emulator from derivative estimates at `outer_n` outer points,
/// each with its own substream and `L * n_inner` runs shared by all subsets.
pub fn build(f: &ModelFunction, cfg: &EmulatorConfig) -> Result<DbAnovaEmulator> {
    cfg.validate()?;
    if f.dim() != cfg.dim() {
        return Err(Error::param("model and outer distribution disagree on dimension"));
    }
    cfg.cfg.check_a2(&cfg.coeffs.nodes)?;
    let d = cfg.dim();
    let subsets = VariableSubset::all_up_to(d, cfg.s);
    let family = family_coefficients(&cfg.coeffs)?;
    let points = sample_outer(cfg);
    let zero = cfg.coeffs.nodes.as_slice().iter().position(|&b| b == 0.0);
    let use_anchor = matches!(cfg.resolved_mean(), MeanSource::ZeroNode);
    let inner = cfg.stream.substream(1);
    let one = |m: usize| -> Result<(Vec<f64>, f64)> {
        let x = points.row(m).to_vec();
        let (est, y) = estimate_family_runs(f, &x, &subsets, &family, &cfg.cfg, cfg.n_inner, &inner.substream(m as u64))
            .map_err(|e| e.context(format!("outer point {m}")))?;
        let mut row = Vec::with_capacity(subsets.len());
        for (u, e) in est {
            if !e.value.is_finite() {
                return Err(Error::domain(format!("outer point {m}, subset {{{u}}}: non-finite derivative estimate")));
            }
            row.push(e.value);
        }
        Ok((row, zero.map_or(f64::NAN, |z| y[z])))
    };
    let results: Vec<Result<(Vec<f64>, f64)>> = if f.is_pure() {
        (0..cfg.outer_n).into_par_iter().map(one).collect()
    } else {
        (0..cfg.outer_n).map(one).collect()
    };
    let mut derivatives = Array2::zeros((cfg.outer_n, subsets.len()));
    let mut anchors = Vec::with_capacity(cfg.outer_n);
    for (m, r) in results.into_iter().enumerate() {
        let (row, a) = r?;
        derivatives.row_mut(m).assign(&ArrayView1::from(&row));
        anchors.push(a);
    }
    let (mean, mean_se, anchors, extra) = finish_mean(f, cfg, use_anchor.then_some(anchors))?;
    Ok(DbAnovaEmulator {
        s: cfg.s,
        outer: cfg.outer.clone(),
        points,
        subsets,
        derivatives,
        mean,
        anchors,
        mean_se,
        descriptor: stencil_descriptor(&cfg.coeffs),
        runs_used: cfg.outer_n * cfg.coeffs.len() * cfg.n_inner + extra,
    })
}

/// Builds the emulator from exact derivatives; the mean uses one model run per
/// outer point.
pub fn build_with_oracle(f: &ModelFunction, cfg: &EmulatorConfig, oracle: DerivativeOracle<'_>) -> Result<DbAnovaEmulator> {
    cfg.validate()?;
    if f.dim() != cfg.dim() {
        return Err(Error::param("model and outer distribution disagree on dimension"));
    }
    let subsets = VariableSubset::all_up_to(cfg.dim(), cfg.s);
    let points = sample_outer(cfg);
    let mut derivatives = Array2::zeros((cfg.outer_n, subsets.len()));
    for (m, row) in points.rows().into_iter().enumerate() {
        let x = row.to_vec();
        for (c, &u) in subsets.iter().enumerate() {
            derivatives[[m, c]] = oracle(u, &x);
        }
    }
    let anchors = f.eval_rows(&points)?;
    let (mean, mean_se) = crate::derivatives::mean_and_se(&anchors);
    Ok(DbAnovaEmulator {
        s: cfg.s,
        outer: cfg.outer.clone(),
        points,
        subsets,
        derivatives,
        mean,
        anchors: Some(anchors),
        mean_se,
        descriptor: "oracle".into(),
        runs_used: cfg.outer_n,
    })
}

fn stencil_descriptor(c: &CoefficientSet) -> String {
    let nodes: Vec<String> = c.nodes.as_slice().iter().map(|b| b.to_string()).collect();
    format!("{}|{}|{}", c.kind, c.target_order, nodes.join(" "))
}

/// Pearson correlation of two equally long samples.
pub fn correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::param("correlation needs two samples of equal length >= 2"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::domain("correlation of a constant sample"));
    }
    Ok(sab / (saa * sbb).sqrt())
}
