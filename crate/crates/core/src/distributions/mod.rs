//! Independent input marginals and the random streams used by every sampler.

mod joe_kuo;
mod sobol;

use crate::error::{Error, Result};
use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

/// One-dimensional marginal law of an input variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Marginal {
    Uniform { a: f64, b: f64 },
    Gaussian { mean: f64, sd: f64 },
}

impl Marginal {
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::param(format!("uniform({a},{b}) requires a < b")));
        }
        Ok(Marginal::Uniform { a, b })
    }

    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
            return Err(Error::param(format!("gaussian({mean},{sd}) requires sd > 0")));
        }
        Ok(Marginal::Gaussian { mean, sd })
    }

    /// Cumulative distribution function; defined on the closed support.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Marginal::Gaussian { mean, sd } => std_normal_cdf((x - mean) / sd),
        }
    }

    /// Density; zero outside the closed support of a uniform law.
    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Uniform { a, b } => {
                if x < a || x > b {
                    0.0
                } else {
                    1.0 / (b - a)
                }
            }
            Marginal::Gaussian { mean, sd } => {
                let z = (x - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
            }
        }
    }

    /// Inverse CDF for `p` in the open unit interval.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("quantile requires p in (0,1), got {p}")));
        }
        Ok(self.quantile_open(p))
    }

    fn quantile_open(&self, p: f64) -> f64 {
        match *self {
            Marginal::Uniform { a, b } => a + p * (b - a),
            Marginal::Gaussian { mean, sd } => mean + sd * std_normal_quantile(p),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Uniform { a, b } => 0.5 * (a + b),
            Marginal::Gaussian { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Marginal::Uniform { a, b } => (b - a).powi(2) / 12.0,
            Marginal::Gaussian { sd, .. } => sd * sd,
        }
    }

    /// Closed support as an interval (infinite bounds for Gaussian laws).
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Marginal::Uniform { a, b } => (a, b),
            Marginal::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// True when `x` lies in the open support, where the density is positive.
    pub fn in_open_support(&self, x: f64) -> bool {
        let (lo, hi) = self.support();
        x > lo && x < hi
    }
}

impl fmt::Display for Marginal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Marginal::Uniform { a, b } => write!(f, "uniform({a},{b})"),
            Marginal::Gaussian { mean, sd } => write!(f, "gaussian({mean},{sd})"),
        }
    }
}

impl FromStr for Marginal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let open = s
            .find('(')
            .ok_or_else(|| Error::parse(1, format!("expected `name(a,b)`, got `{s}`")))?;
        if !s.ends_with(')') {
            return Err(Error::parse(1, format!("missing `)` in `{s}`")));
        }
        let name = s[..open].trim().to_ascii_lowercase();
        let args: Vec<&str> = s[open + 1..s.len() - 1].split(',').collect();
        if args.len() != 2 {
            return Err(Error::parse(1, format!("`{name}` takes two arguments")));
        }
        let p = parse_real(args[0])?;
        let q = parse_real(args[1])?;
        match name.as_str() {
            "uniform" | "unif" => Marginal::uniform(p, q),
            "gaussian" | "normal" => Marginal::gaussian(p, q),
            other => Err(Error::parse(1, format!("unknown distribution `{other}`"))),
        }
    }
}

/// Parses a real literal, accepting `pi`, `-pi` and `k*pi`.
pub(crate) fn parse_real(s: &str) -> Result<f64> {
    let t = s.trim().to_ascii_lowercase();
    let (sign, body) = match t.strip_prefix('-') {
        Some(rest) => (-1.0, rest.trim()),
        None => (1.0, t.trim_start_matches('+').trim()),
    };
    let value = if body == "pi" {
        PI
    } else if let Some(k) = body.strip_suffix("*pi") {
        k.trim()
            .parse::<f64>()
            .map_err(|_| Error::parse(1, format!("bad number `{s}`")))?
            * PI
    } else {
        body.parse::<f64>()
            .map_err(|_| Error::parse(1, format!("bad number `{s}`")))?
    };
    if !value.is_finite() {
        return Err(Error::parse(1, format!("non-finite number `{s}`")));
    }
    Ok(sign * value)
}

/// Joint law of `d` independent inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductDistribution {
    marginals: Vec<Marginal>,
}

impl ProductDistribution {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::param("a product distribution needs at least one marginal"));
        }
        Ok(Self { marginals })
    }

    pub fn iid(marginal: Marginal, d: usize) -> Result<Self> {
        Self::new(vec![marginal; d])
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn marginal(&self, j: usize) -> &Marginal {
        &self.marginals[j]
    }

    /// Parses a comma-separated list such as `uniform(-pi,pi),gaussian(0,1)`.
    pub fn parse_list(s: &str) -> Result<Self> {
        let mut items = Vec::new();
        let mut depth = 0i32;
        let mut start = 0usize;
        for (i, c) in s.char_indices() {
            match c {
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth < 0 {
                        return Err(Error::parse(1, "unbalanced `)`"));
                    }
                }
                ',' if depth == 0 => {
                    items.push(&s[start..i]);
                    start = i + 1;
                }
                _ => {}
            }
        }
        if depth != 0 {
            return Err(Error::parse(1, "unbalanced `(`"));
        }
        items.push(&s[start..]);
        let marginals = items
            .into_iter()
            .map(str::parse)
            .collect::<Result<Vec<Marginal>>>()?;
        Self::new(marginals)
    }
}

/// Underlying generator family of a [`RandomStream`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GeneratorKind {
    /// ChaCha8 pseudo-random numbers.
    Pseudo,
    /// Owen-scrambled Sobol points.
    SobolScrambled,
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorKind::Pseudo => "pseudo",
            GeneratorKind::SobolScrambled => "sobol",
        })
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pseudo" => Ok(GeneratorKind::Pseudo),
            "sobol" | "sobol_scrambled" => Ok(GeneratorKind::SobolScrambled),
            other => Err(Error::param(format!("unknown generator `{other}`"))),
        }
    }
}

/// A reproducible source of uniform draws.
///
/// Streams are plain values: the same `(seed, kind, index)` always yields the
/// same numbers, and [`RandomStream::substream`] derives independent children.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RandomStream {
    pub seed: u64,
    pub kind: GeneratorKind,
    pub index: u64,
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64, kind: GeneratorKind) -> Self {
        Self {
            seed,
            kind,
            index: 0,
        }
    }

    pub fn pseudo(seed: u64) -> Self {
        Self::new(seed, GeneratorKind::Pseudo)
    }

    pub fn sobol(seed: u64) -> Self {
        Self::new(seed, GeneratorKind::SobolScrambled)
    }

    /// Child stream `k`; children of distinct `k` are independent.
    pub fn substream(&self, k: u64) -> Self {
        let index = splitmix64(self.index ^ splitmix64(k ^ 0x632b_e59b_d9b4_e019));
        Self { index, ..*self }
    }

    /// Same stream, different generator family.
    pub fn with_kind(&self, kind: GeneratorKind) -> Self {
        Self { kind, ..*self }
    }

    /// `n x d` matrix of draws in the open unit interval.
    ///
    /// For the pseudo generator the matrix is filled row-major from one
    /// ChaCha8 stream; for the Sobol generator row `i` is point `i`.
    pub fn uniform_matrix(&self, n: usize, d: usize) -> Array2<f64> {
        match self.kind {
            GeneratorKind::Pseudo => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(self.index);
                Array2::from_shape_simple_fn((n, d), || {
                    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
                })
            }
            GeneratorKind::SobolScrambled => {
                let seed = splitmix64(self.seed ^ splitmix64(self.index));
                let mut out = Array2::zeros((n, d));
                for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                    sobol::fill_point(i as u64, seed, row.as_slice_mut().expect("standard layout"));
                }
                out
            }
        }
    }
}

/// Draws `n` points from `dist`; column `j` follows marginal `j`.
pub fn sample_matrix(dist: &ProductDistribution, n: usize, stream: &RandomStream) -> Array2<f64> {
    let mut u = stream.uniform_matrix(n, dist.dim());
    for (j, m) in dist.marginals().iter().enumerate() {
        u.column_mut(j).mapv_inplace(|p| m.quantile_open(p));
    }
    u
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Standard normal quantile: Acklam's rational approximation (relative
/// error below 1.2e-9) polished by one Halley step on the erfc-based CDF.
pub fn std_normal_quantile(p: f64) -> f64 {
    if p > 0.5 {
        return -std_normal_quantile(1.0 - p);
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let x = if p < 0.02425 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = std_normal_cdf(x) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}
