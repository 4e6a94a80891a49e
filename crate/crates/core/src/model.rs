//! Black-box scalar models and evaluation plumbing.

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

type Callable = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A deterministic function from `R^d` to `R` with a declared open domain.
#[derive(Clone)]
pub struct ModelFunction {
    name: String,
    dim: usize,
    f: Arc<Callable>,
    domain: Vec<(f64, f64)>,
    pure: bool,
    counter: Option<Arc<AtomicU64>>,
}

impl fmt::Debug for ModelFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelFunction")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("pure", &self.pure)
            .finish()
    }
}

/// Shared evaluation counter.
#[derive(Clone, Debug, Default)]
pub struct EvalCounter(Arc<AtomicU64>);

impl EvalCounter {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

impl ModelFunction {
    /// Wraps `f`; the domain defaults to all of `R^dim`.
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: "anonymous".into(),
            dim,
            f: Arc::new(f),
            domain: vec![(f64::NEG_INFINITY, f64::INFINITY); dim],
            pure: true,
            counter: None,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Open interval per coordinate.
    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> Result<Self> {
        if domain.len() != self.dim {
            return Err(Error::param(format!(
                "domain has {} intervals for a {}-dimensional model",
                domain.len(),
                self.dim
            )));
        }
        if domain.iter().any(|(a, b)| !(a < b)) {
            return Err(Error::param("domain intervals must satisfy lo < hi"));
        }
        self.domain = domain;
        Ok(self)
    }

    /// Marks the model as unsafe to call concurrently.
    pub fn impure(mut self) -> Self {
        self.pure = false;
        self
    }

    /// Returns a copy that counts its evaluations, and the counter.
    pub fn counted(&self) -> (Self, EvalCounter) {
        let counter = EvalCounter::default();
        let mut m = self.clone();
        m.counter = Some(counter.0.clone());
        (m, counter)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn is_pure(&self) -> bool {
        self.pure
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if let Some(c) = &self.counter {
            c.fetch_add(1, Ordering::Relaxed);
        }
        (self.f)(x)
    }

    /// First coordinate outside the open domain, if any.
    pub fn outside_domain(&self, x: ArrayView1<'_, f64>) -> Option<usize> {
        x.iter()
            .zip(&self.domain)
            .position(|(v, (a, b))| !(v > a && v < b))
    }

    /// Evaluates every row; concurrently when the model is pure. Output order
    /// always follows row order.
    pub fn eval_rows(&self, rows: &Array2<f64>) -> Result<Vec<f64>> {
        if rows.ncols() != self.dim {
            return Err(Error::param(format!(
                "points have {} columns, model expects {}",
                rows.ncols(),
                self.dim
            )));
        }
        let one = |r: ArrayView1<'_, f64>| match r.as_slice() {
            Some(s) => self.eval(s),
            None => self.eval(&r.to_vec()),
        };
        let out = if self.pure && rows.nrows() >= 64 {
            let views: Vec<_> = rows.rows().into_iter().collect();
            views.into_par_iter().map(one).collect()
        } else {
            rows.rows().into_iter().map(one).collect()
        };
        Ok(out)
    }
}
