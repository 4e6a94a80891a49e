//! Reference functions with closed-form sensitivity indices.

mod poly;

pub use poly::{parse_polynomial, polynomial_suite, Polynomial};

use crate::distributions::{Marginal, ProductDistribution};
use crate::error::{Error, Result};
use crate::model::ModelFunction;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

type Gradient = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A model together with its input law and whatever analytic truth is known.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub model: ModelFunction,
    pub dist: ProductDistribution,
    /// First-order Sobol indices.
    pub main: Option<Vec<f64>>,
    /// Total Sobol indices.
    pub total: Option<Vec<f64>>,
    pub variance: Option<f64>,
    /// Normalized derivative-based upper bounds
    /// `(1/2) E[(d_j f)^2 F(1-F)/rho^2] / Var`, where a closed form is known.
    pub upper: Option<Vec<f64>>,
    pub gradient: Option<Arc<Gradient>>,
    /// Differentiable only outside a null set (test points should avoid it).
    pub almost_everywhere: bool,
    pub polynomial: Option<Polynomial>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("dist", &self.dist)
            .field("main", &self.main)
            .field("total", &self.total)
            .field("variance", &self.variance)
            .finish()
    }
}

impl TestFunction {
    pub fn dim(&self) -> usize {
        self.dist.dim()
    }
}

const ISHIGAMI_A: f64 = 7.0;
const ISHIGAMI_B: f64 = 0.1;

fn ishigami_parts() -> (f64, f64, f64, f64) {
    let (a, b) = (ISHIGAMI_A, ISHIGAMI_B);
    let pi4 = PI.powi(4);
    let pi8 = PI.powi(8);
    let v1 = 0.5 * (1.0 + b * pi4 / 5.0).powi(2);
    let v2 = a * a / 8.0;
    let v13 = b * b * pi8 * 8.0 / 225.0;
    (v1, v2, v13, v1 + v2 + v13)
}

/// `sin x1 + 7 sin^2 x2 + 0.1 x3^4 sin x1` on `U(-pi,pi)^3`.
pub fn ishigami() -> TestFunction {
    let (v1, v2, v13, var) = ishigami_parts();
    let model = ModelFunction::new(3, |x| {
        x[0].sin() + ISHIGAMI_A * x[1].sin().powi(2) + ISHIGAMI_B * x[2].powi(4) * x[0].sin()
    })
    .named("ishigami");
    let u = Marginal::Uniform { a: -PI, b: PI };
    TestFunction {
        name: "ishigami".into(),
        model,
        dist: ProductDistribution::iid(u, 3).expect("three marginals"),
        main: Some(vec![v1 / var, v2 / var, 0.0]),
        total: Some(vec![(v1 + v13) / var, v2 / var, v13 / var]),
        variance: Some(var),
        upper: Some(ishigami_upper_bounds()),
        gradient: Some(Arc::new(|x: &[f64]| {
            vec![
                x[0].cos() * (1.0 + ISHIGAMI_B * x[2].powi(4)),
                2.0 * ISHIGAMI_A * x[1].sin() * x[1].cos(),
                4.0 * ISHIGAMI_B * x[2].powi(3) * x[0].sin(),
            ]
        })),
        almost_everywhere: false,
        polynomial: None,
    }
}

// (1/2) E[(d_j f)^2 F(1-F)/rho^2] over U(-pi,pi)^3, divided by the variance.
// Here F(1-F)/rho^2 = pi^2 - t^2, and the one-dimensional integrals close:
//   E[cos^2 t (pi^2-t^2)] = pi^2/3 - 1/4,  E[sin^2 2t (pi^2-t^2)] = pi^2/3 + 1/16,
//   E[t^6 (pi^2-t^2)] = 2 pi^8 / 63.
fn ishigami_upper_bounds() -> Vec<f64> {
    let (a, b) = (ISHIGAMI_A, ISHIGAMI_B);
    let (_, _, _, var) = ishigami_parts();
    let pi2 = PI * PI;
    let e_x4 = PI.powi(4) / 5.0;
    let e_x8 = PI.powi(8) / 9.0;
    let ub1 = 0.5 * (pi2 / 3.0 - 0.25) * (1.0 + 2.0 * b * e_x4 + b * b * e_x8);
    let ub2 = 0.5 * a * a * (pi2 / 3.0 + 1.0 / 16.0);
    // (d3 f)^2 = 16 b^2 x3^6 sin^2 x1 and E[sin^2 x1] = 1/2.
    let ub3 = 0.5 * 16.0 * b * b * 0.5 * (2.0 * PI.powi(8) / 63.0);
    vec![ub1 / var, ub2 / var, ub3 / var]
}

/// Sobol g-function `prod_j (|4 x_j - 2| + a_j)/(1 + a_j)` on `U(0,1)^d`.
pub fn gfunction(a: &[f64]) -> Result<TestFunction> {
    if a.is_empty() {
        return Err(Error::param("g-function needs at least one coefficient"));
    }
    if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::param("g-function coefficients must be nonnegative"));
    }
    let d = a.len();
    let vj: Vec<f64> = a.iter().map(|a| 1.0 / (3.0 * (1.0 + a).powi(2))).collect();
    let prod: f64 = vj.iter().map(|v| 1.0 + v).product();
    let var = prod - 1.0;
    let main = vj.iter().map(|v| v / var).collect();
    let total = vj.iter().map(|v| v * prod / (1.0 + v) / var).collect();
    let coeffs = a.to_vec();
    let model = ModelFunction::new(d, move |x| {
        coeffs
            .iter()
            .zip(x)
            .map(|(a, x)| ((4.0 * x - 2.0).abs() + a) / (1.0 + a))
            .product()
    });
    let ga = a.to_vec();
    Ok(TestFunction {
        name: "gfun".into(),
        model,
        dist: ProductDistribution::iid(Marginal::Uniform { a: 0.0, b: 1.0 }, d)?,
        main: Some(main),
        total: Some(total),
        variance: Some(var),
        upper: Some(gfunction_upper_bounds(a)),
        gradient: Some(Arc::new(move |x: &[f64]| {
            let factors: Vec<f64> = ga
                .iter()
                .zip(x)
                .map(|(a, x)| ((4.0 * x - 2.0).abs() + a) / (1.0 + a))
                .collect();
            (0..ga.len())
                .map(|j| {
                    let slope = 4.0 * (4.0 * x[j] - 2.0).signum() / (1.0 + ga[j]);
                    let rest: f64 = (0..ga.len()).filter(|&k| k != j).map(|k| factors[k]).product();
                    slope * rest
                })
                .collect()
        })),
        almost_everywhere: true,
        polynomial: None,
    })
}

// (1/2) E[(d_j f)^2 F(1-F)/rho^2] with (d_j f)^2 = 16/(1+a_j)^2 prod_{k!=j} g_k^2 and E[F(1-F)/rho^2] = 1/6 on U(0,1).
fn gfunction_upper_bounds(a: &[f64]) -> Vec<f64> {
    let second: Vec<f64> = a.iter().map(|a| 1.0 + 1.0 / (3.0 * (1.0 + a).powi(2))).collect();
    let prod: f64 = second.iter().product();
    let var = prod - 1.0;
    a.iter()
        .zip(&second)
        .map(|(a, s)| 0.5 * 16.0 / (1.0 + a).powi(2) * (prod / s) / 6.0 / var)
        .collect()
}

pub fn gfun_type_a() -> TestFunction {
    named_gfun("gfun_a")
}

pub fn gfun_type_b() -> TestFunction {
    named_gfun("gfun_b")
}

pub fn gfun_type_c() -> TestFunction {
    named_gfun("gfun_c")
}

fn gfun_coefficients(name: &str) -> Option<Vec<f64>> {
    match name {
        "gfun_a" => {
            let mut a = vec![6.52; 10];
            a[0] = 0.0;
            a[1] = 0.0;
            Some(a)
        }
        "gfun_b" => Some(vec![50.0; 10]),
        "gfun_c" => Some(vec![0.0; 10]),
        _ => None,
    }
}

fn named_gfun(name: &str) -> TestFunction {
    let a = gfun_coefficients(name).expect("known preset");
    let mut t = gfunction(&a).expect("valid preset");
    t.name = name.into();
    t.model = t.model.named(name);
    t
}

/// `sum_j a_j x_j` on `U(0,1)^d`.
pub fn additive_linear(a: &[f64]) -> Result<TestFunction> {
    if a.is_empty() {
        return Err(Error::param("linear function needs at least one coefficient"));
    }
    let d = a.len();
    let var: f64 = a.iter().map(|v| v * v / 12.0).sum();
    let coeffs = a.to_vec();
    let grad = a.to_vec();
    let main: Vec<f64> = a.iter().map(|v| v * v / 12.0 / var).collect();
    Ok(TestFunction {
        name: "linear".into(),
        model: ModelFunction::new(d, move |x| coeffs.iter().zip(x).map(|(a, x)| a * x).sum()).named("linear"),
        dist: ProductDistribution::iid(Marginal::Uniform { a: 0.0, b: 1.0 }, d)?,
        main: Some(main.clone()),
        total: Some(main.clone()),
        variance: Some(var),
        upper: Some(main.clone()),
        gradient: Some(Arc::new(move |_x: &[f64]| grad.clone())),
        almost_everywhere: false,
        polynomial: None,
    })
}

/// Looks up `ishigami`, `gfun_a`, `gfun_b`, `gfun_c` or `poly:<d>;<terms>`.
pub fn function_by_name(name: &str) -> Result<TestFunction> {
    match name {
        "ishigami" => Ok(ishigami()),
        "gfun_a" | "gfun_b" | "gfun_c" => Ok(named_gfun(name)),
        _ => {
            if let Some(spec) = name.strip_prefix("poly:") {
                let p = parse_polynomial(spec)?;
                Ok(p.into_test_function(name))
            } else {
                Err(Error::param(format!(
                    "unknown function `{name}` (expected ishigami, gfun_a, gfun_b, gfun_c or poly:<d>;<terms>)"
                )))
            }
        }
    }
}
