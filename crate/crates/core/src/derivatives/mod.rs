//! Randomized estimation of cross-partial derivatives from perturbed runs.

mod io;

pub use io::{read_design_csv, read_outputs_csv, write_design_csv, write_outputs_csv};

use crate::distributions::RandomStream;
use crate::error::{Error, Result};
use crate::model::ModelFunction;
use crate::perturb::{sample_perturbations, PerturbationConfig, PerturbationSample};
use crate::schemes::{family_scheme, solve_coefficients, CoefficientSet, SchemeKind};
use ndarray::{Array2, ArrayView2};
use std::fmt;
use std::str::FromStr;

/// Set of (zero-based) input coordinates, at most 64 of them.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct VariableSubset(u64);

impl VariableSubset {
    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        let mut bits = 0u64;
        for &j in indices {
            if j >= 64 {
                return Err(Error::param(format!("coordinate {} exceeds 64", j + 1)));
            }
            bits |= 1 << j;
        }
        Ok(Self(bits))
    }

    pub fn singleton(j: usize) -> Self {
        Self(1 << j)
    }

    pub fn bits(&self) -> u64 {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn contains(&self, j: usize) -> bool {
        j < 64 && self.0 >> j & 1 == 1
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..64).filter(|&j| self.contains(j)).collect()
    }

    pub fn max_index(&self) -> Option<usize> {
        (self.0 != 0).then(|| 63 - self.0.leading_zeros() as usize)
    }

    /// Every nonempty subset of `{0..d-1}` with at most `s` elements, ordered
    /// by size and then lexicographically.
    pub fn all_up_to(d: usize, s: usize) -> Vec<Self> {
        let mut out = Vec::new();
        for k in 1..=s.min(d) {
            let mut combo: Vec<usize> = (0..k).collect();
            loop {
                out.push(Self(combo.iter().fold(0, |b, &j| b | 1 << j)));
                let mut i = k;
                while i > 0 && combo[i - 1] == d - k + i - 1 {
                    i -= 1;
                }
                if i == 0 {
                    break;
                }
                combo[i - 1] += 1;
                for t in i..k {
                    combo[t] = combo[t - 1] + 1;
                }
            }
        }
        out
    }
}

impl fmt::Debug for VariableSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{self}}}")
    }
}

/// One-based, comma-separated: `1,3`.
impl fmt::Display for VariableSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.indices().iter().map(|j| (j + 1).to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for VariableSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut idx = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let k: usize = part
                .parse()
                .map_err(|_| Error::param(format!("bad coordinate `{part}`")))?;
            if k == 0 {
                return Err(Error::param("coordinates are numbered from 1"));
            }
            idx.push(k - 1);
        }
        Self::from_indices(&idx)
    }
}

/// The `N*L` perturbed points of one estimation, row `i*L + ell`.
#[derive(Clone, Debug)]
pub struct EvaluationDesign {
    pub x: Vec<f64>,
    pub coeffs: CoefficientSet,
    pub sample: PerturbationSample,
    pub points: Array2<f64>,
}

impl EvaluationDesign {
    pub fn n(&self) -> usize {
        self.sample.v.nrows()
    }

    pub fn l(&self) -> usize {
        self.coeffs.len()
    }

    pub fn rows(&self) -> usize {
        self.points.nrows()
    }

    pub fn row_index(&self, i: usize, ell: usize) -> usize {
        i * self.l() + ell
    }

    /// First row with a coordinate outside `domain`, as a domain error.
    pub fn check_domain(&self, domain: &[(f64, f64)]) -> Result<()> {
        for (r, row) in self.points.rows().into_iter().enumerate() {
            if let Some(j) = row
                .iter()
                .zip(domain)
                .position(|(v, (a, b))| !(v > a && v < b))
            {
                return Err(Error::domain(format!(
                    "design row {r} (i={}, ell={}) leaves the domain on coordinate {}: {}",
                    r / self.l(),
                    r % self.l(),
                    j + 1,
                    row[j]
                )));
            }
        }
        Ok(())
    }
}

/// Point estimate of a cross-partial derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
    pub l: usize,
    pub subset: VariableSubset,
    pub scheme: SchemeKind,
    pub runs_used: usize,
}

fn check_request(x: &[f64], u: VariableSubset, cfg: &PerturbationConfig) -> Result<()> {
    if u.is_empty() {
        return Err(Error::param("derivative subset must be nonempty"));
    }
    if x.len() != cfg.dim() {
        return Err(Error::param(format!(
            "point has {} coordinates, configuration has {}",
            x.len(),
            cfg.dim()
        )));
    }
    if let Some(j) = u.indices().into_iter().find(|&j| j >= x.len() || !cfg.is_active(j)) {
        return Err(Error::param(format!(
            "coordinate {} of the subset is masked or out of range",
            j + 1
        )));
    }
    Ok(())
}

/// Lays out `x + beta_ell * h * V_i` for `i < n`, `ell < L`.
pub fn build_design(
    x: &[f64],
    u: VariableSubset,
    coeffs: &CoefficientSet,
    cfg: &PerturbationConfig,
    n: usize,
    stream: &RandomStream,
) -> Result<EvaluationDesign> {
    check_request(x, u, cfg)?;
    if n == 0 {
        return Err(Error::param("sample size must be at least 1"));
    }
    cfg.check_a2(&coeffs.nodes)?;
    let sample = sample_perturbations(cfg, n, stream);
    let points = perturbed_points(x, coeffs.nodes.as_slice(), &cfg.bandwidth, sample.v.view());
    Ok(EvaluationDesign {
        x: x.to_vec(),
        coeffs: coeffs.clone(),
        sample,
        points,
    })
}

pub(crate) fn perturbed_points(x: &[f64], beta: &[f64], h: &[f64], v: ArrayView2<'_, f64>) -> Array2<f64> {
    perturbed_rows(|_, j| x[j], x.len(), beta, h, v)
}

/// Row `i*L + ell` is `base(i) + beta_ell * h * V_i`.
pub(crate) fn perturbed_rows(
    base: impl Fn(usize, usize) -> f64,
    d: usize,
    beta: &[f64],
    h: &[f64],
    v: ArrayView2<'_, f64>,
) -> Array2<f64> {
    let l = beta.len();
    let mut pts = Array2::zeros((v.nrows() * l, d));
    for (i, vi) in v.rows().into_iter().enumerate() {
        for (ell, &b) in beta.iter().enumerate() {
            let mut row = pts.row_mut(i * l + ell);
            for j in 0..d {
                row[j] = base(i, j) + b * h[j] * vi[j];
            }
        }
    }
    pts
}

/// Per-sample terms `T_i = sum_ell C_ell y(i,ell) prod_{k in u} V_ik / (h_k sigma^2)`.
pub fn sample_terms(
    design: &EvaluationDesign,
    outputs: &[f64],
    u: VariableSubset,
    coeffs: &CoefficientSet,
) -> Result<Vec<f64>> {
    if outputs.len() != design.rows() {
        return Err(Error::Alignment {
            expected: design.rows(),
            got: outputs.len(),
        });
    }
    if coeffs.len() != design.l() {
        return Err(Error::param("coefficients do not match the design's node count"));
    }
    let cfg = &design.sample.config;
    check_request(&design.x, u, cfg)?;
    Ok(terms(
        outputs,
        design.sample.v.view(),
        &cfg.bandwidth,
        cfg.law.variance(),
        &coeffs.coefficients,
        &u.indices(),
    ))
}

pub(crate) fn terms(
    outputs: &[f64],
    v: ArrayView2<'_, f64>,
    h: &[f64],
    sigma2: f64,
    c: &[f64],
    u: &[usize],
) -> Vec<f64> {
    let l = c.len();
    v.rows()
        .into_iter()
        .enumerate()
        .map(|(i, vi)| {
            let y = &outputs[i * l..(i + 1) * l];
            let s: f64 = c.iter().zip(y).map(|(c, y)| c * y).sum();
            let w: f64 = u.iter().map(|&k| vi[k] / (h[k] * sigma2)).product();
            s * w
        })
        .collect()
}

/// Mean and standard error (`sd / sqrt(n)`, `n - 1` in the variance).
pub(crate) fn mean_and_se(t: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    if t.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Estimate from externally computed outputs, aligned with the design rows.
pub fn estimate_from_runs(design: &EvaluationDesign, outputs: &[f64], u: VariableSubset) -> Result<DerivativeEstimate> {
    if u.len() as u32 != design.coeffs.target_order {
        return Err(Error::param(format!(
            "subset of size {} but coefficients of order {}",
            u.len(),
            design.coeffs.target_order
        )));
    }
    let t = sample_terms(design, outputs, u, &design.coeffs)?;
    let (value, std_error) = mean_and_se(&t);
    Ok(DerivativeEstimate {
        value,
        std_error,
        n: design.n(),
        l: design.l(),
        subset: u,
        scheme: design.coeffs.kind,
        runs_used: design.rows(),
    })
}

pub(crate) fn check_rows_in_domain(points: &Array2<f64>, domain: &[(f64, f64)], what: &str) -> Result<()> {
    for (r, row) in points.rows().into_iter().enumerate() {
        if let Some(j) = row.iter().zip(domain).position(|(v, (a, b))| !(v > a && v < b)) {
            return Err(Error::domain(format!(
                "{what} row {r} leaves the domain on coordinate {}: {}",
                j + 1,
                row[j]
            )));
        }
    }
    Ok(())
}

fn evaluate_design(f: &ModelFunction, design: &EvaluationDesign) -> Result<Vec<f64>> {
    if f.dim() != design.x.len() {
        return Err(Error::param(format!(
            "model has dimension {}, point has {}",
            f.dim(),
            design.x.len()
        )));
    }
    design.check_domain(f.domain())?;
    f.eval_rows(&design.points)
}

pub fn estimate_cross_partial(
    f: &ModelFunction,
    x: &[f64],
    u: VariableSubset,
    coeffs: &CoefficientSet,
    cfg: &PerturbationConfig,
    n: usize,
    stream: &RandomStream,
) -> Result<DerivativeEstimate> {
    let design = build_design(x, u, coeffs, cfg, n, stream)?;
    let y = evaluate_design(f, &design)?;
    estimate_from_runs(&design, &y, u)
}

/// Like [`estimate_cross_partial`], but halves the bandwidth until every
/// design point lies inside the model's domain (at most 60 times).
pub fn estimate_cross_partial_shrinking(
    f: &ModelFunction,
    x: &[f64],
    u: VariableSubset,
    coeffs: &CoefficientSet,
    cfg: &PerturbationConfig,
    n: usize,
    stream: &RandomStream,
) -> Result<DerivativeEstimate> {
    let mut cfg = cfg.clone();
    for _ in 0..60 {
        let design = build_design(x, u, coeffs, &cfg, n, stream)?;
        match design.check_domain(f.domain()) {
            Ok(()) => {
                let y = f.eval_rows(&design.points)?;
                return estimate_from_runs(&design, &y, u);
            }
            Err(Error::Domain(msg)) => {
                log::info!("{msg}; halving the bandwidth");
                cfg.bandwidth.iter_mut().for_each(|h| *h *= 0.5);
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::domain("no bandwidth keeps the design inside the domain"))
}

/// Coefficient sets for orders `1..=max` on the nodes of `coeffs`; the top
/// order uses `coeffs` itself.
pub fn family_coefficients(coeffs: &CoefficientSet) -> Result<Vec<CoefficientSet>> {
    let top = coeffs.target_order;
    let mut out = Vec::with_capacity(top as usize);
    for k in 1..top {
        let s = family_scheme(&coeffs.nodes, k)?;
        out.push(solve_coefficients(&coeffs.nodes, &s)?);
    }
    out.push(coeffs.clone());
    Ok(out)
}

/// Estimates every subset from one shared design.
pub fn estimate_family(
    f: &ModelFunction,
    x: &[f64],
    subsets: &[VariableSubset],
    coeffs: &CoefficientSet,
    cfg: &PerturbationConfig,
    n: usize,
    stream: &RandomStream,
) -> Result<Vec<(VariableSubset, DerivativeEstimate)>> {
    let family = family_coefficients(coeffs)?;
    estimate_family_with(f, x, subsets, &family, cfg, n, stream)
}

pub(crate) fn estimate_family_with(
    f: &ModelFunction,
    x: &[f64],
    subsets: &[VariableSubset],
    family: &[CoefficientSet],
    cfg: &PerturbationConfig,
    n: usize,
    stream: &RandomStream,
) -> Result<Vec<(VariableSubset, DerivativeEstimate)>> {
    Ok(estimate_family_runs(f, x, subsets, family, cfg, n, stream)?.0)
}

/// As [`estimate_family_with`], also returning the design outputs.
#[allow(clippy::type_complexity)]
pub(crate) fn estimate_family_runs(
    f: &ModelFunction,
    x: &[f64],
    subsets: &[VariableSubset],
    family: &[CoefficientSet],
    cfg: &PerturbationConfig,
    n: usize,
    stream: &RandomStream,
) -> Result<(Vec<(VariableSubset, DerivativeEstimate)>, Vec<f64>)> {
    if subsets.is_empty() {
        return Err(Error::param("no subsets requested"));
    }
    let top = family.last().ok_or_else(|| Error::param("empty stencil family"))?;
    for u in subsets {
        if u.len() > family.len() {
            return Err(Error::param(format!(
                "subset {{{u}}} has order {} beyond the stencil's order {}",
                u.len(),
                family.len()
            )));
        }
        check_request(x, *u, cfg)?;
    }
    let design = build_design(x, subsets[0], top, cfg, n, stream)?;
    let y = evaluate_design(f, &design)?;
    let runs = design.rows();
    let est = subsets
        .iter()
        .map(|&u| {
            let c = &family[u.len() - 1];
            let t = sample_terms(&design, &y, u, c)?;
            let (value, std_error) = mean_and_se(&t);
            Ok((
                u,
                DerivativeEstimate {
                    value,
                    std_error,
                    n,
                    l: design.l(),
                    subset: u,
                    scheme: c.kind,
                    runs_used: runs,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((est, y))
}
