//! Extrapolation stencils: node sets, constraint schemes and the generalized
//! Vandermonde solver that turns them into coefficients.

use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

/// Condition estimates above this trigger a warning.
pub const CONDITION_WARNING: f64 = 1e12;

/// Distinct extrapolation abscissae.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSet {
    nodes: Vec<f64>,
}

impl NodeSet {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::param("node set is empty"));
        }
        if let Some(b) = nodes.iter().find(|b| !b.is_finite()) {
            return Err(Error::param(format!("non-finite node {b}")));
        }
        for i in 0..nodes.len() {
            for k in i + 1..nodes.len() {
                if nodes[i] == nodes[k] {
                    return Err(Error::param(format!(
                        "nodes must be distinct, {} appears twice",
                        nodes[i]
                    )));
                }
            }
        }
        Ok(Self { nodes })
    }

    /// `{1}` for one node, `{1,-1,2,-2,...}` for even counts and `0` followed
    /// by the even set for odd counts.
    pub fn default_nodes(l: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::param("node count must be at least 1"));
        }
        if l == 1 {
            return Self::new(vec![1.0]);
        }
        let mut nodes = Vec::with_capacity(l);
        if l % 2 == 1 {
            nodes.push(0.0);
        }
        for k in 0..l / 2 {
            let b = (1u64 << k) as f64;
            nodes.push(b);
            nodes.push(-b);
        }
        Self::new(nodes)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.nodes
    }

    pub fn beta_max(&self) -> f64 {
        self.nodes.iter().fold(0.0, |m, b| m.max(b.abs()))
    }

    pub fn contains_zero(&self) -> bool {
        self.nodes.contains(&0.0)
    }

    /// Parses a comma-separated list of reals.
    pub fn parse_csv(s: &str) -> Result<Self> {
        let nodes = s
            .split(',')
            .map(crate::distributions::parse_real)
            .collect::<Result<Vec<_>>>()?;
        Self::new(nodes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Single,
    LowOrder,
    Parsimonious,
    BiasOrder2L,
    RateOptimal,
    Intermediate,
    Custom,
}

impl SchemeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Single => "single",
            SchemeKind::LowOrder => "low_order",
            SchemeKind::Parsimonious => "parsimonious",
            SchemeKind::BiasOrder2L => "bias_order_2L",
            SchemeKind::RateOptimal => "rate_optimal",
            SchemeKind::Intermediate => "intermediate",
            SchemeKind::Custom => "custom",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "single" => SchemeKind::Single,
            "low_order" => SchemeKind::LowOrder,
            "parsimonious" => SchemeKind::Parsimonious,
            "bias_order_2l" => SchemeKind::BiasOrder2L,
            "rate_optimal" => SchemeKind::RateOptimal,
            "intermediate" => SchemeKind::Intermediate,
            "custom" => SchemeKind::Custom,
            other => return Err(Error::param(format!("unknown scheme `{other}`"))),
        })
    }
}

/// Optional knobs of [`build_scheme`]; which ones are required depends on the kind.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SchemeParams {
    pub rstar: Option<u32>,
    pub l: Option<usize>,
    pub l_prime: Option<usize>,
    pub epsilon: Option<f64>,
    pub exponents: Option<Vec<u32>>,
}

impl SchemeParams {
    pub fn rstar(r: u32) -> Self {
        Self {
            rstar: Some(r),
            ..Self::default()
        }
    }

    pub fn nodes(l: usize) -> Self {
        Self {
            l: Some(l),
            ..Self::default()
        }
    }
}

/// Exponents `r` at which `sum_l C_l beta_l^r = delta(order, r)` is imposed.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintScheme {
    pub kind: SchemeKind,
    pub target_order: u32,
    pub exponents: Vec<u32>,
}

impl ConstraintScheme {
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Short textual descriptor, e.g. `rate_optimal|2|0,1,2`.
    pub fn descriptor(&self) -> String {
        let ex: Vec<String> = self.exponents.iter().map(u32::to_string).collect();
        format!("{}|{}|{}", self.kind, self.target_order, ex.join(","))
    }
}

fn need<T: Copy>(v: Option<T>, what: &str, kind: SchemeKind) -> Result<T> {
    v.ok_or_else(|| Error::param(format!("scheme {kind} requires {what}")))
}

/// Builds the exponent list of a scheme kind for derivative order `order`.
pub fn build_scheme(kind: SchemeKind, order: u32, p: &SchemeParams) -> Result<ConstraintScheme> {
    if order == 0 {
        return Err(Error::param("derivative order must be at least 1"));
    }
    let o = order;
    let exponents: Vec<u32> = match kind {
        SchemeKind::Single => {
            if let Some(l) = p.l {
                if l != 1 {
                    return Err(Error::param("single scheme uses exactly one node"));
                }
            }
            vec![o]
        }
        SchemeKind::LowOrder => {
            let l = need(p.l, "L", kind)?;
            if l == 0 || l - 1 > o as usize {
                return Err(Error::param(format!("low_order requires 1 <= L <= |u|+1, got L={l}")));
            }
            (0..l as u32 - 1).chain(std::iter::once(o)).collect()
        }
        SchemeKind::RateOptimal => {
            let r = p.rstar.unwrap_or(o - 1);
            if r > o - 1 {
                return Err(Error::param(format!("rate_optimal requires r* <= |u|-1, got r*={r}")));
            }
            if let Some(l) = p.l {
                if l != r as usize + 2 {
                    return Err(Error::param(format!("rate_optimal uses L = r*+2 = {}", r + 2)));
                }
            }
            (0..=r).chain(std::iter::once(o)).collect()
        }
        SchemeKind::BiasOrder2L => {
            let l = need(p.l, "L", kind)? as u32;
            if l == 0 {
                return Err(Error::param("bias_order_2L requires L >= 1"));
            }
            (0..l).map(|k| o + 2 * k).collect()
        }
        SchemeKind::Intermediate => {
            let r = need(p.rstar, "r*", kind)?;
            if o < 2 || r > o - 2 {
                return Err(Error::param(format!("intermediate requires r* <= |u|-2, got r*={r}")));
            }
            let lp = match (p.l_prime, p.epsilon) {
                (Some(lp), _) => lp,
                (None, Some(eps)) => {
                    if !(eps > 0.0 && eps < 1.0) {
                        return Err(Error::param("intermediate requires epsilon in (0,1)"));
                    }
                    let raw = (o - r - 1) as f64 * (1.0 - eps) / (2.0 * eps);
                    raw.floor() as usize
                }
                (None, None) => {
                    return Err(Error::param("intermediate requires L' or epsilon"));
                }
            };
            if lp == 0 {
                return Err(Error::param("intermediate requires L' >= 1"));
            }
            if let Some(l) = p.l {
                if l != r as usize + lp + 1 {
                    return Err(Error::param("intermediate uses L = r*+L'+1"));
                }
            }
            (0..=r).chain((0..lp as u32).map(|k| o + 2 * k)).collect()
        }
        SchemeKind::Parsimonious => {
            let l = need(p.l, "L", kind)?;
            let r = need(p.rstar, "r*", kind)?;
            if r == 0 || r as usize + 2 > l {
                return Err(Error::param(format!("parsimonious requires 0 < r* <= L-2, got r*={r}, L={l}")));
            }
            if o <= r {
                (0..l as u32).collect()
            } else {
                let top = o + l as u32 - r - 2;
                (0..=r).chain(o..=top).collect()
            }
        }
        SchemeKind::Custom => {
            let ex = p
                .exponents
                .clone()
                .ok_or_else(|| Error::param("custom scheme requires an exponent list"))?;
            if ex.is_empty() {
                return Err(Error::param("custom scheme needs at least one exponent"));
            }
            ex
        }
    };
    for i in 0..exponents.len() {
        if exponents[i + 1..].contains(&exponents[i]) {
            return Err(Error::param(format!("exponent {} repeated", exponents[i])));
        }
    }
    if !exponents.contains(&o) {
        return Err(Error::param(format!("scheme must constrain exponent |u|={o}")));
    }
    Ok(ConstraintScheme {
        kind,
        target_order: o,
        exponents,
    })
}

/// `beta^r` with `0^0 = 1`.
pub(crate) fn node_power(beta: f64, r: u32) -> f64 {
    if r == 0 {
        1.0
    } else {
        beta.powi(r as i32)
    }
}

/// Solved stencil.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSet {
    pub kind: SchemeKind,
    pub nodes: NodeSet,
    pub coefficients: Vec<f64>,
    pub target_order: u32,
    /// 1-norm condition estimate of the (row-equilibrated) constraint matrix.
    pub condition: f64,
}

impl CoefficientSet {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// `sum_l C_l beta_l^r`.
    pub fn moment(&self, r: u32) -> f64 {
        self.nodes
            .as_slice()
            .iter()
            .zip(&self.coefficients)
            .map(|(&b, &c)| c * node_power(b, r))
            .sum()
    }

    /// `sum_l |C_l beta_l^r|`.
    pub fn gamma(&self, r: u32) -> f64 {
        self.nodes
            .as_slice()
            .iter()
            .zip(&self.coefficients)
            .map(|(&b, &c)| (c * node_power(b, r)).abs())
            .sum()
    }

    /// `|moment(r) - delta(order, r)|`.
    pub fn residual(&self, r: u32) -> f64 {
        let target = if r == self.target_order { 1.0 } else { 0.0 };
        (self.moment(r) - target).abs()
    }
}

/// Solves the constraint system of `scheme` on `nodes`.
pub fn solve_coefficients(nodes: &NodeSet, scheme: &ConstraintScheme) -> Result<CoefficientSet> {
    let l = nodes.len();
    if l != scheme.len() {
        return Err(Error::param(format!(
            "{} nodes but {} constraints",
            l,
            scheme.len()
        )));
    }
    if l == 1 && nodes.as_slice()[0] != 1.0 {
        return Err(Error::param("a single-node stencil must use the node 1"));
    }
    let beta = nodes.as_slice();
    let mut a: Vec<Vec<f64>> = scheme
        .exponents
        .iter()
        .map(|&r| beta.iter().map(|&b| node_power(b, r)).collect())
        .collect();
    let mut rhs: Vec<f64> = scheme
        .exponents
        .iter()
        .map(|&r| if r == scheme.target_order { 1.0 } else { 0.0 })
        .collect();
    // Row equilibration keeps rows with large exponents comparable.
    for (row, b) in a.iter_mut().zip(rhs.iter_mut()) {
        let s = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if s == 0.0 {
            continue;
        }
        row.iter_mut().for_each(|v| *v /= s);
        *b /= s;
    }

    let lu = match Lu::factor(&a) {
        Some(lu) => lu,
        None => return Err(singular_error(&a, scheme)),
    };
    let mut x = lu.solve(&rhs);
    for _ in 0..3 {
        let r = compensated_residual(&a, &x, &rhs);
        if r.iter().all(|v| *v == 0.0) {
            break;
        }
        let dx = lu.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
    }
    let condition = norm1(&a) * lu.inverse_norm1();
    if !condition.is_finite() || condition * f64::EPSILON >= 1.0 {
        return Err(singular_error(&a, scheme));
    }
    if condition > CONDITION_WARNING {
        log::warn!(
            "constraint system {} is ill-conditioned (estimate {condition:.3e})",
            scheme.descriptor()
        );
    }
    Ok(CoefficientSet {
        kind: scheme.kind,
        nodes: nodes.clone(),
        coefficients: x,
        target_order: scheme.target_order,
        condition,
    })
}

fn singular_error(a: &[Vec<f64>], scheme: &ConstraintScheme) -> Error {
    let mut rows = Vec::new();
    for i in 0..a.len() {
        for k in i + 1..a.len() {
            let same = a[i].iter().zip(&a[k]).all(|(p, q)| (p - q).abs() <= 1e-14);
            let opposite = a[i].iter().zip(&a[k]).all(|(p, q)| (p + q).abs() <= 1e-14);
            if same || opposite {
                rows.push(i);
                rows.push(k);
            }
        }
    }
    rows.sort_unstable();
    rows.dedup();
    if rows.is_empty() {
        rows = dependent_rows(a);
    }
    let exponents = rows.iter().map(|&i| scheme.exponents[i]).collect();
    Error::Singular { rows, exponents }
}

// Smallest prefix-free dependent subset found greedily: rows that do not
// increase the rank of the rows kept so far.
fn dependent_rows(a: &[Vec<f64>]) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for (i, row) in a.iter().enumerate() {
        let mut v = row.clone();
        for b in &basis {
            let p = b.iter().position(|x| x.abs() > 0.0).unwrap_or(0);
            let f = v[p] / b[p];
            v.iter_mut().zip(b).for_each(|(vi, bi)| *vi -= f * bi);
        }
        let scale = row.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        if v.iter().all(|x| x.abs() <= 1e-12 * scale) {
            dependent.push(i);
        } else {
            // Pivot on the largest entry for stability of later reductions.
            let p = (0..v.len())
                .max_by(|&x, &y| v[x].abs().total_cmp(&v[y].abs()))
                .unwrap_or(0);
            for b in basis.iter_mut() {
                let f = b[p] / v[p];
                b.iter_mut().zip(&v).for_each(|(bi, vi)| *bi -= f * vi);
            }
            basis.push(v);
        }
    }
    if dependent.is_empty() {
        (0..a.len()).collect()
    } else {
        dependent
    }
}

fn norm1(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    (0..n)
        .map(|j| a.iter().map(|row| row[j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

// Error-free product and sum transformations give a residual accurate to
// roughly twice the working precision.
fn compensated_residual(a: &[Vec<f64>], x: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut s = bi;
            let mut c = 0.0;
            for (&aij, &xj) in row.iter().zip(x) {
                let p = -aij * xj;
                let pe = (-aij).mul_add(xj, -p);
                let t = s + p;
                let bb = t - s;
                let se = (s - (t - bb)) + (p - bb);
                s = t;
                c += se + pe;
            }
            s + c
        })
        .collect()
}

struct Lu {
    lu: Vec<Vec<f64>>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(a: &[Vec<f64>]) -> Option<Self> {
        let n = a.len();
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * f64::EPSILON * n as f64 * 8.0;
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| lu[i][k].abs().total_cmp(&lu[j][k].abs()))?;
            if lu[p][k].abs() <= tiny {
                return None;
            }
            lu.swap(k, p);
            perm.swap(k, p);
            for i in k + 1..n {
                let f = lu[i][k] / lu[k][k];
                lu[i][k] = f;
                for j in k + 1..n {
                    lu[i][j] -= f * lu[k][j];
                }
            }
        }
        Some(Self { lu, perm })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                y[i] -= self.lu[i][j] * y[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                y[i] -= self.lu[i][j] * y[j];
            }
            y[i] /= self.lu[i][i];
        }
        y
    }

    fn inverse_norm1(&self) -> f64 {
        let n = self.lu.len();
        let mut cols = vec![0.0; n];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = self.solve(&e);
            cols[j] = col.iter().map(|v| v.abs()).sum();
        }
        cols.into_iter().fold(0.0, f64::max)
    }
}

/// Per-exponent residuals of a coefficient set against a scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintReport {
    pub residuals: Vec<(u32, f64)>,
    pub tolerance: f64,
    pub pass: bool,
}

impl ConstraintReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, (_, r)| m.max(*r))
    }

    pub fn failures(&self) -> Vec<u32> {
        self.residuals
            .iter()
            .filter(|(_, r)| *r > self.tolerance)
            .map(|(e, _)| *e)
            .collect()
    }
}

pub fn verify_constraints(c: &CoefficientSet, scheme: &ConstraintScheme, tol: f64) -> Result<ConstraintReport> {
    if !(tol > 0.0) {
        return Err(Error::param("tolerance must be positive"));
    }
    let residuals: Vec<(u32, f64)> = scheme
        .exponents
        .iter()
        .map(|&r| {
            let target = if r == scheme.target_order { 1.0 } else { 0.0 };
            (r, (c.moment(r) - target).abs())
        })
        .collect();
    let pass = residuals.iter().all(|(_, r)| *r <= tol);
    Ok(ConstraintReport {
        residuals,
        tolerance: tol,
        pass,
    })
}

/// Stencil for order `order` on the nodes of a governing stencil: consecutive
/// exponents `0..L-1` when they reach `order`, else `0..L-2` plus `order`.
pub fn family_scheme(nodes: &NodeSet, order: u32) -> Result<ConstraintScheme> {
    let l = nodes.len() as u32;
    if l == 1 {
        return build_scheme(SchemeKind::Single, order, &SchemeParams::default());
    }
    let exponents: Vec<u32> = if order < l {
        (0..l).collect()
    } else {
        (0..l - 1).chain(std::iter::once(order)).collect()
    };
    build_scheme(
        SchemeKind::Custom,
        order,
        &SchemeParams {
            exponents: Some(exponents),
            ..SchemeParams::default()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scheme(order: u32, exps: &[u32]) -> ConstraintScheme {
        build_scheme(
            SchemeKind::Custom,
            order,
            &SchemeParams {
                exponents: Some(exps.to_vec()),
                ..SchemeParams::default()
            },
        )
        .unwrap()
    }

    fn nodes(v: &[f64]) -> NodeSet {
        NodeSet::new(v.to_vec()).unwrap()
    }

    // Independent oracle: Lagrange-basis expansion. For consecutive exponents
    // 0..L-1 the coefficient of node l is the coefficient of t^order in the
    // Lagrange polynomial that is 1 at beta_l and 0 at the other nodes.
    fn lagrange_oracle(beta: &[f64], order: usize) -> Vec<f64> {
        let l = beta.len();
        (0..l)
            .map(|i| {
                let mut poly = vec![1.0];
                let mut denom = 1.0;
                for (k, &b) in beta.iter().enumerate() {
                    if k == i {
                        continue;
                    }
                    let mut next = vec![0.0; poly.len() + 1];
                    for (p, &c) in poly.iter().enumerate() {
                        next[p + 1] += c;
                        next[p] -= b * c;
                    }
                    poly = next;
                    denom *= beta[i] - b;
                }
                poly.get(order).copied().unwrap_or(0.0) / denom
            })
            .collect()
    }

    #[test]
    fn default_node_sets() {
        assert_eq!(NodeSet::default_nodes(1).unwrap().as_slice(), &[1.0]);
        assert_eq!(NodeSet::default_nodes(2).unwrap().as_slice(), &[1.0, -1.0]);
        assert_eq!(
            NodeSet::default_nodes(5).unwrap().as_slice(),
            &[0.0, 1.0, -1.0, 2.0, -2.0]
        );
        assert_eq!(
            NodeSet::default_nodes(6).unwrap().as_slice(),
            &[1.0, -1.0, 2.0, -2.0, 4.0, -4.0]
        );
        assert!(NodeSet::default_nodes(0).is_err());
        assert!(NodeSet::new(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn scheme_exponents() {
        let s = build_scheme(SchemeKind::RateOptimal, 1, &SchemeParams::rstar(0)).unwrap();
        assert_eq!(s.exponents, vec![0, 1]);
        let s = build_scheme(SchemeKind::BiasOrder2L, 1, &SchemeParams::nodes(3)).unwrap();
        assert_eq!(s.exponents, vec![1, 3, 5]);
        let eps = SchemeParams {
            rstar: Some(1),
            epsilon: Some(0.5),
            ..SchemeParams::default()
        };
        assert!(matches!(
            build_scheme(SchemeKind::Intermediate, 3, &eps),
            Err(Error::Parameter(_))
        ));
        let eps = SchemeParams {
            rstar: Some(0),
            epsilon: Some(0.2),
            ..SchemeParams::default()
        };
        // floor(2 * 0.8 / 0.4) = 4
        let s = build_scheme(SchemeKind::Intermediate, 3, &eps).unwrap();
        assert_eq!(s.exponents, vec![0, 3, 5, 7, 9]);
        assert!(build_scheme(SchemeKind::RateOptimal, 2, &SchemeParams::rstar(2)).is_err());
        assert!(build_scheme(SchemeKind::RateOptimal, 1, &SchemeParams::default()).is_ok());
        let low = SchemeParams::nodes(3);
        assert_eq!(
            build_scheme(SchemeKind::LowOrder, 2, &low).unwrap().exponents,
            vec![0, 1, 2]
        );
        assert!(build_scheme(SchemeKind::LowOrder, 1, &SchemeParams::nodes(3)).is_err());
    }

    #[test]
    fn parsimonious_branches() {
        let p = SchemeParams {
            rstar: Some(2),
            l: Some(5),
            ..SchemeParams::default()
        };
        // |u| <= r*: consecutive exponents 0..L-1
        assert_eq!(
            build_scheme(SchemeKind::Parsimonious, 2, &p).unwrap().exponents,
            vec![0, 1, 2, 3, 4]
        );
        // otherwise: 0..r*, |u|..|u|+L-r*-2
        assert_eq!(
            build_scheme(SchemeKind::Parsimonious, 4, &p).unwrap().exponents,
            vec![0, 1, 2, 4, 5]
        );
        let bad = SchemeParams {
            rstar: Some(4),
            l: Some(5),
            ..SchemeParams::default()
        };
        assert!(build_scheme(SchemeKind::Parsimonious, 2, &bad).is_err());
        let zero = SchemeParams {
            rstar: Some(0),
            l: Some(3),
            ..SchemeParams::default()
        };
        assert!(build_scheme(SchemeKind::Parsimonious, 2, &zero).is_err());
    }

    #[test]
    fn solver_examples() {
        let c = solve_coefficients(&nodes(&[1.0, -1.0]), &scheme(1, &[0, 1])).unwrap();
        assert!((c.coefficients[0] - 0.5).abs() < 1e-15);
        assert!((c.coefficients[1] + 0.5).abs() < 1e-15);

        let c = solve_coefficients(&nodes(&[0.0, 1.0, -1.0]), &scheme(2, &[0, 1, 2])).unwrap();
        let oracle = lagrange_oracle(&[0.0, 1.0, -1.0], 2);
        assert_eq!(oracle, vec![-1.0, 0.5, 0.5]);
        for (a, b) in c.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-14);
        }
        // Informational residual at an unconstrained exponent.
        assert!((c.residual(4) - 1.0).abs() < 1e-14);

        match solve_coefficients(&nodes(&[1.0, -1.0]), &scheme(2, &[0, 2])) {
            Err(Error::Singular { rows, exponents }) => {
                assert_eq!(rows, vec![0, 1]);
                assert_eq!(exponents, vec![0, 2]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_node_rules() {
        let s = build_scheme(SchemeKind::Single, 3, &SchemeParams::default()).unwrap();
        let c = solve_coefficients(&nodes(&[1.0]), &s).unwrap();
        assert_eq!(c.coefficients, vec![1.0]);
        assert!(matches!(
            solve_coefficients(&nodes(&[2.0]), &s),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn symmetric_nodes_with_three_odd_rows_are_singular() {
        let n = NodeSet::default_nodes(5).unwrap();
        let err = solve_coefficients(&n, &scheme(5, &[0, 1, 2, 3, 5])).unwrap_err();
        match err {
            Error::Singular { exponents, .. } => assert!(exponents.contains(&5)),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn verify_reports() {
        let s = scheme(1, &[0, 1]);
        let c = solve_coefficients(&nodes(&[1.0, -1.0]), &s).unwrap();
        let rep = verify_constraints(&c, &s, 1e-10).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.max_residual(), 0.0);

        let bad = CoefficientSet {
            kind: SchemeKind::Custom,
            nodes: nodes(&[1.0, -1.0]),
            coefficients: vec![1.0, 1.0],
            target_order: 1,
            condition: 1.0,
        };
        let rep = verify_constraints(&bad, &s, 1e-10).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.residuals, vec![(0, 2.0), (1, 1.0)]);
        assert_eq!(rep.failures(), vec![0, 1]);
        assert!(verify_constraints(&c, &s, 0.0).is_err());
    }

    #[test]
    fn gamma_values() {
        let c = solve_coefficients(&nodes(&[1.0, -1.0]), &scheme(1, &[0, 1])).unwrap();
        assert_eq!(c.gamma(2), 1.0);
        let c = solve_coefficients(&nodes(&[0.0, 1.0, -1.0]), &scheme(2, &[0, 1, 2])).unwrap();
        assert_eq!(c.gamma(0), 2.0);
        assert_eq!(c.gamma(3), 1.0);
    }

    #[test]
    fn family_rule() {
        let n = NodeSet::default_nodes(5).unwrap();
        for k in 1..=4 {
            let s = family_scheme(&n, k).unwrap();
            assert_eq!(s.exponents, vec![0, 1, 2, 3, 4]);
            let c = solve_coefficients(&n, &s).unwrap();
            assert!(verify_constraints(&c, &s, 1e-10).unwrap().pass);
        }
        let n = NodeSet::default_nodes(2).unwrap();
        assert_eq!(family_scheme(&n, 1).unwrap().exponents, vec![0, 1]);
        assert_eq!(family_scheme(&n, 3).unwrap().exponents, vec![0, 3]);
    }

    fn distinct_nodes(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, 1..=max_len).prop_filter("distinct", |v| {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[1] - w[0] > 0.05)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn solver_exactness(beta in distinct_nodes(5), order in 1u32..5) {
            let l = beta.len() as u32;
            prop_assume!(l >= 2);
            let exps: Vec<u32> = if order < l { (0..l).collect() } else { (0..l - 1).chain([order]).collect() };
            let s = scheme(order, &exps);
            let c = solve_coefficients(&nodes(&beta), &s).unwrap();
            let rep = verify_constraints(&c, &s, 1e-8).unwrap();
            prop_assert!(rep.pass, "{:?}", rep);
            if order < l {
                let oracle = lagrange_oracle(&beta, order as usize);
                for (a, b) in c.coefficients.iter().zip(&oracle) {
                    prop_assert!((a - b).abs() <= 1e-7 * (1.0 + b.abs()));
                }
            }
        }

        #[test]
        fn scale_covariance(beta in distinct_nodes(4), scale in prop_oneof![-3.0f64..-0.2, 0.2f64..3.0], order in 1u32..4) {
            let l = beta.len() as u32;
            prop_assume!(l >= 2);
            let exps: Vec<u32> = if order < l { (0..l).collect() } else { (0..l - 1).chain([order]).collect() };
            let s = scheme(order, &exps);
            let scaled: Vec<f64> = beta.iter().map(|b| b * scale).collect();
            let c = solve_coefficients(&nodes(&scaled), &s).unwrap();
            let sum: f64 = c.coefficients.iter().zip(&scaled).map(|(ci, b)| ci * b.powi(order as i32)).sum();
            prop_assert!((sum - 1.0).abs() < 1e-8);
            let base = solve_coefficients(&nodes(&beta), &s).unwrap();
            for (a, b) in c.coefficients.iter().zip(&base.coefficients) {
                prop_assert!((a - b * scale.powi(-(order as i32))).abs() <= 1e-6 * (1.0 + b.abs() * scale.powi(-(order as i32)).abs()));
            }
        }

        #[test]
        fn gamma_finite(beta in distinct_nodes(4), r in 0u32..12) {
            let l = beta.len() as u32;
            prop_assume!(l >= 2);
            let s = scheme(1, &(0..l).collect::<Vec<_>>());
            let c = solve_coefficients(&nodes(&beta), &s).unwrap();
            prop_assert!(c.gamma(r).is_finite() && c.gamma(r) >= 0.0);
        }
    }
}
