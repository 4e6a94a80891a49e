//! Multivariate polynomials with exact cross-partial derivatives.
//!
//! Textual form: `<d>;<term>;<term>...` where a term is a product such as
//! `2.5*x1^2*x3`, `-x2` or `4`.

use super::TestFunction;
use crate::derivatives::VariableSubset;
use crate::distributions::{parse_real, Marginal, ProductDistribution, RandomStream};
use crate::error::{Error, Result};
use crate::model::ModelFunction;
use std::fmt;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    dim: usize,
    /// `(coefficient, exponent per coordinate)`
    terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<(f64, Vec<u32>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("polynomial dimension must be at least 1"));
        }
        if terms.iter().any(|(c, e)| e.len() != dim || !c.is_finite()) {
            return Err(Error::param("every term needs a finite coefficient and one exponent per coordinate"));
        }
        Ok(Self { dim, terms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(f64, Vec<u32>)] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|(c, _)| *c != 0.0)
            .map(|(_, e)| e.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| c * e.iter().zip(x).map(|(&p, &v)| v.powi(p as i32)).product::<f64>())
            .sum()
    }

    /// Differentiates once in every coordinate of `u`.
    pub fn derivative(&self, u: VariableSubset) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter_map(|(c, e)| {
                let mut c = *c;
                let mut e = e.clone();
                for k in u.indices() {
                    if k >= self.dim || e[k] == 0 {
                        return None;
                    }
                    c *= e[k] as f64;
                    e[k] -= 1;
                }
                Some((c, e))
            })
            .collect();
        Polynomial {
            dim: self.dim,
            terms,
        }
    }

    pub fn into_test_function(self, name: &str) -> TestFunction {
        let eval_poly = self.clone();
        let grad_poly = self.clone();
        let d = self.dim;
        TestFunction {
            name: name.into(),
            model: ModelFunction::new(d, move |x| eval_poly.eval(x)).named(name),
            dist: ProductDistribution::iid(Marginal::Uniform { a: 0.0, b: 1.0 }, d)
                .expect("positive dimension"),
            main: None,
            total: None,
            variance: None,
            upper: None,
            gradient: Some(Arc::new(move |x: &[f64]| {
                (0..d)
                    .map(|j| grad_poly.derivative(VariableSubset::singleton(j)).eval(x))
                    .collect()
            })),
            almost_everywhere: false,
            polynomial: Some(self),
        }
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.dim)?;
        for (c, e) in &self.terms {
            write!(f, ";{c:?}")?;
            for (k, &p) in e.iter().enumerate() {
                match p {
                    0 => {}
                    1 => write!(f, "*x{}", k + 1)?,
                    _ => write!(f, "*x{}^{p}", k + 1)?,
                }
            }
        }
        Ok(())
    }
}

/// Parses `<d>;<term>;...`.
pub fn parse_polynomial(spec: &str) -> Result<Polynomial> {
    let mut parts = spec.split(';');
    let head = parts.next().unwrap_or("").trim();
    let dim: usize = head
        .parse()
        .map_err(|_| Error::parse(1, format!("polynomial needs a leading dimension, got `{head}`")))?;
    if dim == 0 || dim > 64 {
        return Err(Error::parse(1, "polynomial dimension must be in 1..=64"));
    }
    let mut terms = Vec::new();
    for raw in parts {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err(Error::parse(1, "empty polynomial term"));
        }
        let (sign, body) = match raw.strip_prefix('-') {
            Some(rest) => (-1.0, rest.trim()),
            None => (1.0, raw),
        };
        let mut coef = sign;
        let mut exps = vec![0u32; dim];
        for factor in body.split('*').map(str::trim) {
            if let Some(var) = factor.strip_prefix('x') {
                let (idx, pow) = match var.split_once('^') {
                    Some((i, p)) => (i, p),
                    None => (var, "1"),
                };
                let k: usize = idx
                    .parse()
                    .map_err(|_| Error::parse(1, format!("bad variable `{factor}`")))?;
                let p: u32 = pow
                    .parse()
                    .map_err(|_| Error::parse(1, format!("bad power in `{factor}`")))?;
                if k == 0 || k > dim {
                    return Err(Error::parse(1, format!("variable x{k} outside 1..={dim}")));
                }
                if p > 64 {
                    return Err(Error::parse(1, "powers above 64 are not supported"));
                }
                exps[k - 1] = exps[k - 1].saturating_add(p);
                if exps[k - 1] > 64 {
                    return Err(Error::parse(1, "powers above 64 are not supported"));
                }
            } else {
                coef *= parse_real(factor)?;
            }
        }
        terms.push((coef, exps));
    }
    if terms.is_empty() {
        return Err(Error::parse(1, "polynomial has no terms"));
    }
    Polynomial::new(dim, terms)
}

/// `count` random polynomials in `d` variables of total degree at most `degree`.
pub fn polynomial_suite(d: usize, degree: u32, count: usize, stream: &RandomStream) -> Result<Vec<Polynomial>> {
    if d == 0 || d > 5 {
        return Err(Error::param("polynomial suite supports 1 <= d <= 5"));
    }
    if degree > 6 {
        return Err(Error::param("polynomial suite supports degree <= 6"));
    }
    (0..count)
        .map(|m| {
            let s = stream.substream(m as u64);
            let u = s.uniform_matrix(1, 64);
            let mut draws = u.iter().copied();
            let mut next = move || draws.next().unwrap_or(0.5);
            let n_terms = 1 + (next() * 6.0) as usize;
            let mut terms = Vec::with_capacity(n_terms);
            for _ in 0..n_terms {
                let mut budget = (next() * (degree as f64 + 1.0)) as u32;
                let mut e = vec![0u32; d];
                while budget > 0 {
                    let k = ((next() * d as f64) as usize).min(d - 1);
                    e[k] += 1;
                    budget -= 1;
                }
                // Coefficients in (-2, 2), kept away from zero.
                let c = 4.0 * next() - 2.0;
                let c = if c.abs() < 0.05 { 0.5 } else { c };
                terms.push((c, e));
            }
            Polynomial::new(d, terms)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parsing_and_derivatives() {
        let p = parse_polynomial("2;1*x1*x2^2").unwrap();
        let d12 = p.derivative("1,2".parse().unwrap());
        assert_eq!(d12.eval(&[0.3, 0.7]), 2.0 * 0.7);
        let q = parse_polynomial("3;3*x1*x2*x3").unwrap();
        let d = q.derivative("1,2,3".parse().unwrap());
        assert_eq!(d.eval(&[0.1, 5.0, -2.0]), 3.0);
        let r = parse_polynomial("2; -x2 ; 0.5*pi ; x1^3").unwrap();
        assert!((r.eval(&[2.0, 1.0]) - (-1.0 + 0.5 * std::f64::consts::PI + 8.0)).abs() < 1e-12);
        assert_eq!(r.degree(), 3);
        let back = parse_polynomial(&r.to_string()).unwrap();
        assert_eq!(back, r);
        for bad in ["", "0;1", "2", "2;", "2;x3", "2;x1^a", "2;abc", "2;x0", "x;1", "2;x1^99"] {
            assert!(parse_polynomial(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn degree_zero_suite_has_vanishing_derivatives() {
        let suite = polynomial_suite(3, 0, 5, &RandomStream::pseudo(1)).unwrap();
        for p in suite {
            assert_eq!(p.degree(), 0);
            for u in VariableSubset::all_up_to(3, 3) {
                assert_eq!(p.derivative(u).eval(&[0.3, 0.4, 0.5]), 0.0);
            }
        }
        assert!(polynomial_suite(6, 2, 1, &RandomStream::pseudo(1)).is_err());
        assert!(polynomial_suite(2, 7, 1, &RandomStream::pseudo(1)).is_err());
    }

    proptest! {
        #[test]
        fn derivative_matches_finite_differences(seed in any::<u64>(), x in prop::collection::vec(-1.0f64..1.0, 3)) {
            let p = &polynomial_suite(3, 4, 1, &RandomStream::pseudo(seed)).unwrap()[0];
            prop_assert!(p.degree() <= 4);
            let h = 1e-4;
            for j in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (p.eval(&xp) - p.eval(&xm)) / (2.0 * h);
                let exact = p.derivative(VariableSubset::singleton(j)).eval(&x);
                prop_assert!((fd - exact).abs() < 1e-5 * (1.0 + exact.abs()));
            }
        }
    }
}
