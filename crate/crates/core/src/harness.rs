//! Replicated budget sweeps of the index estimators on reference functions,
//! with per-replicate and aggregate CSV output.

use crate::distributions::{GeneratorKind, RandomStream};
use crate::error::{Error, Result};
use crate::perturb::{default_config, PerturbationConfig, PerturbationLaw, ScaleOptions};
use crate::schemes::{family_scheme, solve_coefficients, CoefficientSet, NodeSet};
use crate::sensitivity::{
    dedicated_variance, direct_indices, plugin_gradients, plugin_indices, EstimatorKind, IndexEstimate, IndexKind,
    InnerSettings, VarianceSource,
};
use crate::testbed::{function_by_name, TestFunction};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Budget grid used by the convergence sweeps.
pub const DEFAULT_BUDGETS: [usize; 9] = [500, 1000, 1500, 2000, 3000, 5000, 10000, 15000, 20000];
pub const DEFAULT_REPLICATES: usize = 30;

/// Whether a budget counts model runs or sample points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetUnit {
    Runs,
    Points,
}

impl FromStr for BudgetUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "runs" => Ok(BudgetUnit::Runs),
            "points" => Ok(BudgetUnit::Points),
            other => Err(Error::param(format!("unknown budget unit `{other}`"))),
        }
    }
}

/// Sample size plugged into the bandwidth schedule `h = c_h n^(-gamma/2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthBasis {
    /// The total budget.
    Budget,
    /// Perturbation draws per estimate: `N` for direct, the inner size for plug-in.
    Samples,
}

impl FromStr for BandwidthBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "budget" => Ok(BandwidthBasis::Budget),
            "samples" => Ok(BandwidthBasis::Samples),
            other => Err(Error::param(format!("unknown bandwidth basis `{other}`"))),
        }
    }
}

/// Where the normalizing output variance comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceChoice {
    /// A separate sample as large as the estimator's sample (extra runs).
    Dedicated,
    /// Runs the estimator already made (no extra runs, biased at `O(h)`
    /// without a zero node).
    Reuse,
}

impl FromStr for VarianceChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dedicated" => Ok(VarianceChoice::Dedicated),
            "reuse" => Ok(VarianceChoice::Reuse),
            other => Err(Error::param(format!("unknown variance source `{other}`"))),
        }
    }
}

/// Everything that turns a budget into a concrete estimator call.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorSettings {
    #[serde(serialize_with = "ser_display")]
    pub estimator: EstimatorKind,
    pub l: usize,
    /// Runs per gradient for plug-in estimators; `None` means `2d`.
    pub n0: Option<usize>,
    #[serde(serialize_with = "ser_scale")]
    pub scale: ScaleOptions,
    pub basis: BandwidthBasis,
    pub unit: BudgetUnit,
    #[serde(serialize_with = "ser_display")]
    pub generator: GeneratorKind,
    pub variance: VarianceChoice,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Plugin,
            l: 1,
            n0: None,
            scale: ScaleOptions::default(),
            basis: BandwidthBasis::Samples,
            unit: BudgetUnit::Runs,
            generator: GeneratorKind::Pseudo,
            variance: VarianceChoice::Dedicated,
        }
    }
}

/// Bandwidth prefactor of [`EstimatorSettings::table_protocol`].
pub const TABLE_CH: f64 = 400.0;

impl EstimatorSettings {
    /// Single-budget table runs: plug-in with `L = 1` on scrambled Sobol
    /// draws, the bandwidth scheduled on the total budget with `c_h = 400`,
    /// and the output variance taken from the anchor runs.
    pub fn table_protocol() -> Self {
        Self {
            generator: GeneratorKind::SobolScrambled,
            basis: BandwidthBasis::Budget,
            variance: VarianceChoice::Reuse,
            scale: ScaleOptions {
                c_h: TABLE_CH,
                ..ScaleOptions::default()
            },
            ..Self::default()
        }
    }
}

fn ser_display<T: fmt::Display, S: serde::Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn ser_scale<S: serde::Serializer>(v: &ScaleOptions, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeStruct;
    let mut st = s.serialize_struct("ScaleOptions", 5)?;
    st.serialize_field("rule", &format!("{:?}", v.rule))?;
    st.serialize_field("c_h", &v.c_h)?;
    st.serialize_field("gamma", &v.gamma)?;
    st.serialize_field("xi", &v.xi)?;
    st.serialize_field("sigma", &v.sigma)?;
    st.end()
}

/// First-order stencil on the default `L` nodes.
pub fn first_order_stencil(l: usize) -> Result<CoefficientSet> {
    let nodes = NodeSet::default_nodes(l)?;
    solve_coefficients(&nodes, &family_scheme(&nodes, 1)?)
}

/// Concrete sizes and scales for one budget.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedSettings {
    pub budget: usize,
    /// `N` for direct estimators, `N1` (gradient points) for plug-in.
    pub n: usize,
    /// Perturbation draws per gradient (plug-in only).
    pub n_inner: Option<usize>,
    pub nodes: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub bandwidth: f64,
    #[serde(serialize_with = "ser_display")]
    pub law: PerturbationLaw,
    pub estimator_runs: usize,
    pub variance_runs: usize,
    #[serde(skip)]
    coeffs: Option<CoefficientSet>,
    #[serde(skip)]
    cfg: Option<PerturbationConfig>,
}

impl ResolvedSettings {
    pub fn planned_runs(&self) -> usize {
        self.estimator_runs + self.variance_runs
    }
}

/// Splits `budget` according to `settings`; fails before any model run when
/// the budget cannot support the estimator.
pub fn resolve(tf: &TestFunction, settings: &EstimatorSettings, budget: usize) -> Result<ResolvedSettings> {
    let d = tf.dim();
    let l = settings.l;
    if l == 0 {
        return Err(Error::param("L must be at least 1"));
    }
    let coeffs = first_order_stencil(l)?;
    let (n, n_inner, estimator_runs) = match settings.estimator {
        EstimatorKind::Direct => {
            let n = match settings.unit {
                BudgetUnit::Runs => budget / (3 * l),
                BudgetUnit::Points => budget,
            };
            if n < 2 {
                return Err(Error::param(format!(
                    "direct estimators need a budget of at least {} runs with L={l}, got {budget}",
                    6 * l
                )));
            }
            (n, None, 3 * l * n)
        }
        EstimatorKind::Plugin => {
            let n0 = settings.n0.unwrap_or(2 * d);
            let n_inner = n0 / l;
            if n_inner == 0 {
                return Err(Error::param(format!("N0={n0} runs per gradient cannot cover L={l} nodes")));
            }
            let n1 = match settings.unit {
                BudgetUnit::Runs => budget / (l * n_inner),
                BudgetUnit::Points => budget,
            };
            if n1 < 2 {
                return Err(Error::param(format!(
                    "plug-in estimators need a budget of at least {} runs, got {budget}",
                    2 * l * n_inner
                )));
            }
            (n1, Some(n_inner), n1 * l * n_inner)
        }
    };
    let basis_n = match (settings.basis, n_inner) {
        (BandwidthBasis::Budget, _) => budget,
        (BandwidthBasis::Samples, Some(k)) => k,
        (BandwidthBasis::Samples, None) => n,
    };
    let cfg = default_config(d, 1, &coeffs, basis_n.max(1), &settings.scale)?;
    let variance_runs = match settings.variance {
        VarianceChoice::Dedicated => n,
        VarianceChoice::Reuse => 0,
    };
    Ok(ResolvedSettings {
        budget,
        n,
        n_inner,
        nodes: coeffs.nodes.as_slice().to_vec(),
        coefficients: coeffs.coefficients.clone(),
        bandwidth: cfg.bandwidth[0],
        law: cfg.law,
        estimator_runs,
        variance_runs,
        coeffs: Some(coeffs),
        cfg: Some(cfg),
    })
}

/// Runs one estimator call at the resolved settings.
pub fn estimate_with(
    tf: &TestFunction,
    settings: &EstimatorSettings,
    r: &ResolvedSettings,
    stream: &RandomStream,
) -> Result<Vec<(IndexEstimate, IndexEstimate)>> {
    let coeffs = r.coeffs.as_ref().expect("resolved");
    let cfg = r.cfg.as_ref().expect("resolved");
    match settings.estimator {
        EstimatorKind::Direct => {
            let var = match settings.variance {
                VarianceChoice::Dedicated => VarianceSource::Dedicated(r.n),
                VarianceChoice::Reuse => VarianceSource::PerturbedRuns,
            };
            direct_indices(&tf.model, &tf.dist, coeffs, cfg, r.n, stream, var)
        }
        EstimatorKind::Plugin => {
            let inner = InnerSettings {
                coeffs: coeffs.clone(),
                cfg: cfg.clone(),
                n_inner: r.n_inner.expect("plug-in"),
            };
            let g = plugin_gradients(&tf.model, &tf.dist, r.n, &inner, stream)?;
            let var = match settings.variance {
                VarianceChoice::Dedicated => dedicated_variance(&tf.model, &tf.dist, r.n, &stream.substream(4))?,
                VarianceChoice::Reuse => g.anchor_variance()?,
            };
            plugin_indices(&g, &tf.dist, &var)
        }
    }
}

/// One line of the per-replicate index table.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexRow {
    pub function: String,
    pub estimator: EstimatorKind,
    pub l: usize,
    pub budget: usize,
    pub replicate: usize,
    pub seed: u64,
    /// One-based input index.
    pub j: usize,
    pub quantity: IndexKind,
    pub raw: f64,
    pub normalized: f64,
    pub stderr: f64,
    pub runs_used: usize,
}

pub const INDEX_HEADER: [&str; 12] = [
    "function",
    "estimator",
    "L",
    "budget",
    "replicate",
    "seed",
    "j",
    "quantity",
    "raw",
    "normalized",
    "stderr",
    "runs_used",
];

pub const AGGREGATE_HEADER: [&str; 7] = ["function", "estimator", "L", "budget", "quantity", "value", "n_replicates"];

fn io_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Index rows for one estimator call.
#[allow(clippy::too_many_arguments)]
pub fn index_rows(
    function: &str,
    settings: &EstimatorSettings,
    budget: usize,
    replicate: usize,
    seed: u64,
    est: &[(IndexEstimate, IndexEstimate)],
) -> Vec<IndexRow> {
    let mut rows = Vec::with_capacity(2 * est.len());
    for (j, pair) in est.iter().enumerate() {
        for e in [&pair.0, &pair.1] {
            rows.push(IndexRow {
                function: function.to_string(),
                estimator: settings.estimator,
                l: settings.l,
                budget,
                replicate,
                seed,
                j: j + 1,
                quantity: e.kind,
                raw: e.raw,
                normalized: e.normalized,
                stderr: e.std_error,
                runs_used: e.runs_used,
            });
        }
    }
    rows
}

pub fn write_index_header<W: Write>(w: &mut csv::Writer<W>) -> Result<()> {
    w.write_record(INDEX_HEADER).map_err(io_err)
}

pub fn write_index_rows<W: Write>(w: &mut csv::Writer<W>, rows: &[IndexRow]) -> Result<()> {
    for r in rows {
        w.write_record([
            r.function.clone(),
            r.estimator.to_string(),
            r.l.to_string(),
            r.budget.to_string(),
            r.replicate.to_string(),
            r.seed.to_string(),
            r.j.to_string(),
            r.quantity.label().to_string(),
            format!("{:?}", r.raw),
            format!("{:?}", r.normalized),
            format!("{:?}", r.stderr),
            r.runs_used.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

/// A replicated sweep over budgets.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentPlan {
    pub function: String,
    pub settings: EstimatorSettings,
    pub budgets: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    /// Per-replicate CSV; the aggregate table and the metadata go next to it.
    pub out: Option<PathBuf>,
}

impl ExperimentPlan {
    pub fn new(function: &str, settings: EstimatorSettings) -> Self {
        Self {
            function: function.into(),
            settings,
            budgets: DEFAULT_BUDGETS.to_vec(),
            replicates: DEFAULT_REPLICATES,
            seed: 0,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() {
            return Err(Error::param("plan has no budgets"));
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) || self.budgets[0] == 0 {
            return Err(Error::param("budgets must be positive and strictly increasing"));
        }
        if self.replicates == 0 {
            return Err(Error::param("at least one replicate is required"));
        }
        Ok(())
    }
}

/// Paths of the aggregate table and metadata file next to `out`.
pub fn sidecar_paths(out: &Path) -> (PathBuf, PathBuf) {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dir = out.parent().unwrap_or(Path::new(""));
    (dir.join(format!("{stem}.aggregate.csv")), dir.join(format!("{stem}.meta.json")))
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub function: String,
    pub settings: EstimatorSettings,
    pub budgets: Vec<usize>,
    pub replicates: usize,
    pub rows: Vec<IndexRow>,
    /// Analytic main and total indices of the function (empty when unknown).
    pub main: Vec<f64>,
    pub total: Vec<f64>,
    pub resolved: Vec<ResolvedSettings>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    plan: &'a ExperimentPlan,
    dimension: usize,
    resolved: &'a [ResolvedSettings],
    threads: usize,
    replicate_stream: &'static str,
}

/// Runs every replicate at every budget. Replicate `r` uses substream `r` of
/// the base seed at every budget; rows are emitted in (budget, replicate)
/// order whatever the thread count.
pub fn run_plan(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    plan.validate()?;
    let tf = function_by_name(&plan.function)?;
    // Functions without analytic indices still get per-replicate rows.
    let main = tf.main.clone().unwrap_or_default();
    let total = tf.total.clone().unwrap_or_default();
    let resolved = plan
        .budgets
        .iter()
        .map(|&b| resolve(&tf, &plan.settings, b))
        .collect::<Result<Vec<_>>>()?;

    let mut writer = match &plan.out {
        Some(p) => {
            let (_, meta_path) = sidecar_paths(p);
            let meta = Metadata {
                tool: "dbanova",
                version: env!("CARGO_PKG_VERSION"),
                plan,
                dimension: tf.dim(),
                resolved: &resolved,
                threads: rayon::current_num_threads(),
                replicate_stream: "substream(replicate) of the base seed, shared across budgets",
            };
            let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.into()))?;
            std::fs::write(meta_path, text + "\n")?;
            let mut w = csv::Writer::from_writer(BufWriter::new(File::create(p)?));
            write_index_header(&mut w)?;
            Some(w)
        }
        None => None,
    };

    let base = RandomStream::new(plan.seed, plan.settings.generator);
    let mut rows = Vec::new();
    for r in &resolved {
        let per_rep: Vec<Result<Vec<IndexRow>>> = (0..plan.replicates)
            .into_par_iter()
            .map(|rep| {
                let est = estimate_with(&tf, &plan.settings, r, &base.substream(rep as u64))?;
                Ok(index_rows(&plan.function, &plan.settings, r.budget, rep, plan.seed, &est))
            })
            .collect();
        for block in per_rep {
            let block = block?;
            if let Some(w) = writer.as_mut() {
                write_index_rows(w, &block)?;
            }
            rows.extend(block);
        }
        log::info!("{} {} budget {} done", plan.function, plan.settings.estimator, r.budget);
    }
    let result = ExperimentResult {
        function: plan.function.clone(),
        settings: plan.settings.clone(),
        budgets: plan.budgets.clone(),
        replicates: plan.replicates,
        rows,
        main,
        total,
        resolved,
    };
    if let (Some(p), false) = (&plan.out, result.main.is_empty()) {
        let (agg_path, _) = sidecar_paths(p);
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(agg_path)?));
        let mut agg = mse_curve(&result);
        agg.extend(gap_curve(&result));
        write_aggregate(&mut w, &agg)?;
    }
    Ok(result)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    Mse,
    Gap,
}

impl Quantity {
    pub fn label(&self) -> &'static str {
        match self {
            Quantity::Mse => "mse",
            Quantity::Gap => "gap",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub function: String,
    pub estimator: EstimatorKind,
    pub l: usize,
    pub budget: usize,
    pub quantity: Quantity,
    pub value: f64,
    pub n_replicates: usize,
}

fn curve(result: &ExperimentResult, kind: IndexKind, truth: &[f64], q: Quantity) -> Vec<AggregateRow> {
    if truth.is_empty() {
        return Vec::new();
    }
    result
        .budgets
        .iter()
        .map(|&b| {
            let errs: Vec<f64> = result
                .rows
                .iter()
                .filter(|r| r.budget == b && r.quantity == kind)
                .map(|r| (r.normalized - truth[r.j - 1]).powi(2))
                .collect();
            let n_rep = result
                .rows
                .iter()
                .filter(|r| r.budget == b && r.quantity == kind && r.j == 1)
                .count();
            AggregateRow {
                function: result.function.clone(),
                estimator: result.settings.estimator,
                l: result.settings.l,
                budget: b,
                quantity: q,
                value: errs.iter().sum::<f64>() / errs.len().max(1) as f64,
                n_replicates: n_rep,
            }
        })
        .collect()
}

/// Mean over inputs and replicates of `(S_hat_j - S_j)^2`, per budget; empty
/// when the function has no analytic indices.
pub fn mse_curve(result: &ExperimentResult) -> Vec<AggregateRow> {
    curve(result, IndexKind::Main, &result.main, Quantity::Mse)
}

/// Mean over inputs and replicates of `(UB_hat_j - S_Tj)^2`, per budget.
pub fn gap_curve(result: &ExperimentResult) -> Vec<AggregateRow> {
    curve(result, IndexKind::UpperBound, &result.total, Quantity::Gap)
}

pub fn write_aggregate<W: Write>(w: &mut csv::Writer<W>, rows: &[AggregateRow]) -> Result<()> {
    w.write_record(AGGREGATE_HEADER).map_err(io_err)?;
    for r in rows {
        w.write_record([
            r.function.clone(),
            r.estimator.to_string(),
            r.l.to_string(),
            r.budget.to_string(),
            r.quantity.label().to_string(),
            format!("{:?}", r.value),
            r.n_replicates.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-input mean and standard error of the normalized estimates of `kind`
/// at `budget`, over replicates.
pub fn replicate_means(result: &ExperimentResult, budget: usize, kind: IndexKind) -> Vec<(f64, f64)> {
    let d = result.rows.iter().map(|r| r.j).max().unwrap_or(0);
    (1..=d)
        .map(|j| {
            let v: Vec<f64> = result
                .rows
                .iter()
                .filter(|r| r.budget == budget && r.quantity == kind && r.j == j)
                .map(|r| r.normalized)
                .collect();
            crate::derivatives::mean_and_se(&v)
        })
        .collect()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut k = i;
        while k + 1 < idx.len() && v[idx[k + 1]] == v[idx[i]] {
            k += 1;
        }
        let avg = (i + k) as f64 / 2.0 + 1.0;
        for t in i..=k {
            r[idx[t]] = avg;
        }
        i = k + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    crate::emulator::correlation(&ranks(x), &ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::ishigami;

    fn quick_plan(est: EstimatorKind, budgets: Vec<usize>, reps: usize) -> ExperimentPlan {
        let mut p = ExperimentPlan::new(
            "ishigami",
            EstimatorSettings {
                estimator: est,
                l: 2,
                ..EstimatorSettings::default()
            },
        );
        p.budgets = budgets;
        p.replicates = reps;
        p.seed = 7;
        p
    }

    #[test]
    fn resolution_arithmetic() {
        let tf = ishigami();
        let s = EstimatorSettings::default();
        let r = resolve(&tf, &s, 2000).unwrap();
        assert_eq!((r.n, r.n_inner, r.estimator_runs, r.variance_runs), (333, Some(6), 1998, 333));
        let direct = EstimatorSettings {
            estimator: EstimatorKind::Direct,
            l: 2,
            ..EstimatorSettings::default()
        };
        let r = resolve(&tf, &direct, 600).unwrap();
        assert_eq!((r.n, r.estimator_runs), (100, 600));
        assert!(resolve(&tf, &direct, 11).is_err());
        assert!(resolve(&tf, &s, 11).is_err());
        let points = EstimatorSettings {
            unit: BudgetUnit::Points,
            ..EstimatorSettings::default()
        };
        assert_eq!(resolve(&tf, &points, 50).unwrap().estimator_runs, 300);
        let r = resolve(&tf, &EstimatorSettings { l: 7, ..EstimatorSettings::default() }, 2000);
        assert!(r.is_err());
    }

    #[test]
    fn table_protocol_resolution() {
        let r = resolve(&ishigami(), &EstimatorSettings::table_protocol(), 2000).unwrap();
        assert_eq!((r.n, r.n_inner, r.variance_runs), (333, Some(6), 0));
        assert!((r.bandwidth - 400.0 * 2000f64.powf(-0.75)).abs() < 1e-12);
    }

    #[test]
    fn spearman_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 9.0, 2.0, 1.0]).unwrap(), -1.0);
        let r = spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]).unwrap();
        // ranks (1,2,3) vs (1.5,1.5,3)
        assert!((r - 0.8660254).abs() < 1e-6);
    }

    #[test]
    fn oracle_rows_have_zero_error() {
        let tf = ishigami();
        let main = tf.main.clone().unwrap();
        let total = tf.total.clone().unwrap();
        let settings = EstimatorSettings::default();
        let mut rows = Vec::new();
        for &b in &[500, 1000] {
            for rep in 0..3 {
                for j in 1..=3 {
                    for (q, v) in [(IndexKind::Main, main[j - 1]), (IndexKind::UpperBound, total[j - 1])] {
                        rows.push(IndexRow {
                            function: "ishigami".into(),
                            estimator: settings.estimator,
                            l: 1,
                            budget: b,
                            replicate: rep,
                            seed: 0,
                            j,
                            quantity: q,
                            raw: v,
                            normalized: v,
                            stderr: 0.0,
                            runs_used: 0,
                        });
                    }
                }
            }
        }
        let result = ExperimentResult {
            function: "ishigami".into(),
            settings,
            budgets: vec![500, 1000],
            replicates: 3,
            rows,
            main,
            total,
            resolved: Vec::new(),
        };
        for r in mse_curve(&result).into_iter().chain(gap_curve(&result)) {
            assert_eq!(r.value, 0.0);
            assert_eq!(r.n_replicates, 3);
        }
    }

    #[test]
    fn single_replicate_aggregates_equal_that_replicate() {
        let res = run_plan(&quick_plan(EstimatorKind::Plugin, vec![600], 1)).unwrap();
        let mse = mse_curve(&res);
        let by_hand: f64 = res
            .rows
            .iter()
            .filter(|r| r.quantity == IndexKind::Main)
            .map(|r| (r.normalized - res.main[r.j - 1]).powi(2))
            .sum::<f64>()
            / 3.0;
        assert_eq!(mse[0].value, by_hand);
        assert_eq!(mse[0].n_replicates, 1);
    }

    #[test]
    fn plan_validation_happens_before_runs() {
        let mut p = quick_plan(EstimatorKind::Direct, vec![100, 50], 2);
        assert!(run_plan(&p).is_err());
        p.budgets = vec![5, 100];
        assert!(matches!(run_plan(&p), Err(Error::Parameter(_))));
        p.budgets = vec![100];
        p.replicates = 0;
        assert!(run_plan(&p).is_err());
        p.replicates = 1;
        p.function = "nope".into();
        assert!(run_plan(&p).is_err());
        // No analytic indices: rows but no error curves.
        p.function = "poly:1;x1".into();
        let r = run_plan(&p).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(mse_curve(&r).is_empty() && gap_curve(&r).is_empty());
    }

    #[test]
    fn files_are_deterministic() {
        let dir = std::env::temp_dir().join(format!("dbanova-harness-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut bytes = Vec::new();
        for k in 0..2 {
            let mut p = quick_plan(EstimatorKind::Direct, vec![120, 240], 3);
            let out = dir.join(format!("run{k}.csv"));
            p.out = Some(out.clone());
            run_plan(&p).unwrap();
            let (agg, meta) = sidecar_paths(&out);
            assert!(meta.exists());
            bytes.push((std::fs::read(&out).unwrap(), std::fs::read(agg).unwrap()));
        }
        assert_eq!(bytes[0], bytes[1]);
        let text = String::from_utf8(bytes[0].0.clone()).unwrap();
        assert!(text.starts_with("function,estimator,L,budget,replicate,seed,j,quantity,raw,normalized,stderr,runs_used\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 3 * 3 * 2);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
