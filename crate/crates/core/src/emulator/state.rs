//! Versioned flat-file form of a built emulator.
//!
//! ```text
//! dbanova-emulator,1
//! d,2
//! s,1
//! outer_n,3
//! stencil,custom|1|0 1 -1 2 -2
//! mean,1.25,0.01
//! outer,uniform(0,1),uniform(0,1)
//! runs,45
//! [points]
//! x_1,x_2,anchor
//! ...
//! [derivatives]
//! D1,D2
//! ...
//! ```
//! The `anchor` column is present only when the mean came from the outer points.

use super::DbAnovaEmulator;
use crate::derivatives::VariableSubset;
use crate::distributions::ProductDistribution;
use crate::error::{Error, Result};
use ndarray::Array2;
use std::fmt::Write as _;

pub const STATE_MAGIC: &str = "dbanova-emulator";
pub const STATE_VERSION: u32 = 1;

// Guards decoders against absurd allocations.
const MAX_CELLS: usize = 50_000_000;

fn subset_label(u: VariableSubset) -> String {
    let parts: Vec<String> = u.indices().iter().map(|j| (j + 1).to_string()).collect();
    format!("D{}", parts.join("."))
}

fn parse_label(s: &str, line: usize) -> Result<VariableSubset> {
    let body = s
        .trim()
        .strip_prefix('D')
        .ok_or_else(|| Error::parse(line, format!("derivative column `{s}` must start with D")))?;
    let mut idx = Vec::new();
    for p in body.split('.') {
        let k: usize = p
            .parse()
            .map_err(|_| Error::parse(line, format!("bad coordinate in `{s}`")))?;
        if k == 0 || k > 64 {
            return Err(Error::parse(line, format!("coordinate out of range in `{s}`")));
        }
        idx.push(k - 1);
    }
    let u = VariableSubset::from_indices(&idx).map_err(|e| Error::parse(line, e.to_string()))?;
    if u.len() != idx.len() {
        return Err(Error::parse(line, format!("repeated coordinate in `{s}`")));
    }
    Ok(u)
}

pub fn encode_state(e: &DbAnovaEmulator) -> String {
    let mut out = String::new();
    let d = e.dim();
    let _ = writeln!(out, "{STATE_MAGIC},{STATE_VERSION}");
    let _ = writeln!(out, "d,{d}");
    let _ = writeln!(out, "s,{}", e.s);
    let _ = writeln!(out, "outer_n,{}", e.outer_n());
    let _ = writeln!(out, "stencil,{}", e.descriptor);
    let _ = writeln!(out, "mean,{:?},{:?}", e.mean, e.mean_se);
    let marg: Vec<String> = e.outer.marginals().iter().map(|m| m.to_string()).collect();
    let _ = writeln!(out, "outer,{}", marg.join(","));
    let _ = writeln!(out, "runs,{}", e.runs_used);
    out.push_str("[points]\n");
    let mut head: Vec<String> = (1..=d).map(|j| format!("x_{j}")).collect();
    if e.anchors.is_some() {
        head.push("anchor".into());
    }
    out.push_str(&head.join(","));
    out.push('\n');
    for (m, row) in e.points.rows().into_iter().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        if let Some(a) = &e.anchors {
            cells.push(format!("{:?}", a[m]));
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out.push_str("[derivatives]\n");
    let labels: Vec<String> = e.subsets.iter().map(|&u| subset_label(u)).collect();
    out.push_str(&labels.join(","));
    out.push('\n');
    for row in e.derivatives.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        loop {
            match self.inner.next() {
                Some((k, l)) if l.trim().is_empty() => {
                    let _ = k;
                    continue;
                }
                Some((k, l)) => return Ok((k + 1, l.trim_end_matches('\r'))),
                None => return Err(Error::parse(0, format!("unexpected end of file, expected {what}"))),
            }
        }
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (line, l) = self.next(key)?;
        match l.split_once(',') {
            Some((k, v)) if k.trim() == key => Ok((line, v)),
            _ => Err(Error::parse(line, format!("expected `{key},...`"))),
        }
    }
}

fn num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("bad {what} `{s}`")))
}

fn finite(s: &str, line: usize) -> Result<f64> {
    let v: f64 = num(s, line, "number")?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value `{s}`")));
    }
    Ok(v)
}

pub fn decode_state(text: &str) -> Result<DbAnovaEmulator> {
    let mut it = Lines {
        inner: text.lines().enumerate(),
    };
    let (line, head) = it.next("header")?;
    let version = head
        .strip_prefix(STATE_MAGIC)
        .and_then(|r| r.strip_prefix(','))
        .ok_or_else(|| Error::parse(line, "not an emulator state file"))?;
    let version: u32 = num(version, line, "version")?;
    if version != STATE_VERSION {
        return Err(Error::parse(line, format!("unsupported state version {version}")));
    }
    let (line, v) = it.keyed("d")?;
    let d: usize = num(v, line, "dimension")?;
    let (line, v) = it.keyed("s")?;
    let s: usize = num(v, line, "truncation order")?;
    let (line, v) = it.keyed("outer_n")?;
    let n: usize = num(v, line, "outer sample size")?;
    if d == 0 || d > 64 || s == 0 || s > d || n == 0 {
        return Err(Error::parse(line, "header values out of range"));
    }
    if n.saturating_mul(d + 1) > MAX_CELLS {
        return Err(Error::parse(line, "state too large"));
    }
    let (_, descriptor) = it.keyed("stencil")?;
    let (line, v) = it.keyed("mean")?;
    let (m, se) = v
        .split_once(',')
        .ok_or_else(|| Error::parse(line, "mean line needs value and standard error"))?;
    let mean = finite(m, line)?;
    let mean_se: f64 = num(se, line, "standard error")?;
    if !(mean_se >= 0.0) {
        return Err(Error::parse(line, "standard error must be nonnegative"));
    }
    let (line, v) = it.keyed("outer")?;
    let outer = ProductDistribution::parse_list(v).map_err(|e| Error::parse(line, e.to_string()))?;
    if outer.dim() != d {
        return Err(Error::parse(line, "outer distribution dimension differs from d"));
    }
    let (line, v) = it.keyed("runs")?;
    let runs_used: usize = num(v, line, "run count")?;

    let (line, l) = it.next("[points]")?;
    if l.trim() != "[points]" {
        return Err(Error::parse(line, "expected `[points]`"));
    }
    let (line, l) = it.next("points header")?;
    let cols: Vec<&str> = l.split(',').map(str::trim).collect();
    let with_anchor = cols.len() == d + 1 && cols[d] == "anchor";
    if !(cols.len() == d || with_anchor) || (0..d).any(|j| cols[j] != format!("x_{}", j + 1)) {
        return Err(Error::parse(line, "points header must be `x_1,...,x_d[,anchor]`"));
    }
    let mut flat = Vec::with_capacity(n * d);
    let mut anchors = Vec::new();
    for _ in 0..n {
        let (line, l) = it.next("outer point")?;
        let cells: Vec<&str> = l.split(',').collect();
        if cells.len() != cols.len() {
            return Err(Error::parse(line, format!("expected {} fields", cols.len())));
        }
        for c in &cells[..d] {
            flat.push(finite(c, line)?);
        }
        if with_anchor {
            anchors.push(finite(cells[d], line)?);
        }
    }
    let points = Array2::from_shape_vec((n, d), flat).map_err(|e| Error::parse(0, e.to_string()))?;

    let (line, l) = it.next("[derivatives]")?;
    if l.trim() != "[derivatives]" {
        return Err(Error::parse(line, "expected `[derivatives]`"));
    }
    let (line, l) = it.next("derivative header")?;
    let subsets = l
        .split(',')
        .map(|c| parse_label(c, line))
        .collect::<Result<Vec<_>>>()?;
    let expected = VariableSubset::all_up_to(d, s);
    if subsets != expected {
        return Err(Error::parse(line, "derivative columns must list every subset up to the truncation order"));
    }
    if n.saturating_mul(subsets.len()) > MAX_CELLS {
        return Err(Error::parse(line, "state too large"));
    }
    let mut flat = Vec::with_capacity(n * subsets.len());
    for _ in 0..n {
        let (line, l) = it.next("derivative row")?;
        let cells: Vec<&str> = l.split(',').collect();
        if cells.len() != subsets.len() {
            return Err(Error::parse(line, format!("expected {} fields", subsets.len())));
        }
        for c in cells {
            flat.push(finite(c, line)?);
        }
    }
    if let Some((line, _)) = it.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::parse(line + 1, "trailing content after the derivative table"));
    }
    let derivatives =
        Array2::from_shape_vec((n, subsets.len()), flat).map_err(|e| Error::parse(0, e.to_string()))?;
    let e = DbAnovaEmulator {
        s,
        outer,
        points,
        subsets,
        derivatives,
        mean,
        anchors: with_anchor.then_some(anchors),
        mean_se,
        descriptor: descriptor.trim().to_string(),
        runs_used,
    };
    e.validate().map_err(|err| Error::parse(0, err.to_string()))?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{Marginal, RandomStream};
    use crate::emulator::{build, five_node_coefficients, EmulatorConfig};
    use crate::model::ModelFunction;
    use crate::perturb::{PerturbationConfig, PerturbationLaw};

    fn small() -> DbAnovaEmulator {
        let f = ModelFunction::new(3, |x| x[0] * x[1] + x[2].sin());
        let cfg = EmulatorConfig::new(
            2,
            7,
            ProductDistribution::iid(Marginal::Uniform { a: 0.0, b: 1.0 }, 3).unwrap(),
            five_node_coefficients(2).unwrap(),
            PerturbationConfig::new(PerturbationLaw::UniformSym { xi: 0.5 }, vec![0.05; 3], 1.5).unwrap(),
            2,
            RandomStream::pseudo(1),
        );
        build(&f, &cfg).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let e = small();
        let text = encode_state(&e);
        let back = decode_state(&text).unwrap();
        assert_eq!(back, e);
        let x = [0.3, 0.6, 0.9];
        assert_eq!(back.predict(&x).unwrap(), e.predict(&x).unwrap());
        assert_eq!(encode_state(&back), text);
    }

    #[test]
    fn rejects_damage() {
        let text = encode_state(&small());
        assert!(decode_state("").is_err());
        assert!(decode_state(&text.replace("dbanova-emulator,1", "dbanova-emulator,2")).is_err());
        assert!(decode_state(&text.replace("s,2", "s,4")).is_err());
        assert!(decode_state(&text.replace("D1.2", "D2.1.1")).is_err());
        let cut: String = text.lines().take(12).map(|l| format!("{l}\n")).collect();
        assert!(decode_state(&cut).is_err());
        assert!(decode_state(&format!("{text}1,2\n")).is_err());
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[10] = "nan,0.5,0.5,1.0".into();
        assert!(decode_state(&lines.join("\n")).is_err());
    }
}
