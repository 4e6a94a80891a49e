//! CSV exchange of designs and model outputs with external simulators.
//!
//! Design files have the header `row,i,ell,x_1,...,x_d`; output files have
//! `row,output`. Rows must appear in order starting at 0.

use super::EvaluationDesign;
use crate::error::{Error, Result};
use ndarray::Array2;
use std::io::{Read, Write};

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::parse(line, format!("{kind:?}")),
    }
}

fn field_f64(rec: &csv::StringRecord, k: usize, line: usize) -> Result<f64> {
    let raw = rec
        .get(k)
        .ok_or_else(|| Error::parse(line, format!("missing column {}", k + 1)))?;
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("`{raw}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value `{raw}`")));
    }
    Ok(v)
}

fn field_usize(rec: &csv::StringRecord, k: usize, line: usize) -> Result<usize> {
    let raw = rec
        .get(k)
        .ok_or_else(|| Error::parse(line, format!("missing column {}", k + 1)))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("`{raw}` is not a row index")))
}

pub fn write_design_csv<W: Write>(design: &EvaluationDesign, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let d = design.x.len();
    let mut header = vec!["row".to_string(), "i".into(), "ell".into()];
    header.extend((1..=d).map(|j| format!("x_{j}")));
    out.write_record(&header).map_err(csv_error)?;
    let l = design.l();
    for (r, row) in design.points.rows().into_iter().enumerate() {
        let mut rec = vec![r.to_string(), (r / l).to_string(), (r % l).to_string()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        out.write_record(&rec).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// Parsed design file: `(i, ell)` per row and the point matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignTable {
    pub index: Vec<(usize, usize)>,
    pub points: Array2<f64>,
}

pub fn read_design_csv<R: Read>(r: R) -> Result<DesignTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.len() < 4
        || header.get(0).map(str::trim) != Some("row")
        || header.get(1).map(str::trim) != Some("i")
        || header.get(2).map(str::trim) != Some("ell")
    {
        return Err(Error::parse(1, "design header must be `row,i,ell,x_1,...`"));
    }
    let d = header.len() - 3;
    let mut index = Vec::new();
    let mut flat = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = k + 2;
        if rec.len() != d + 3 {
            return Err(Error::parse(line, format!("expected {} fields, got {}", d + 3, rec.len())));
        }
        if field_usize(&rec, 0, line)? != k {
            return Err(Error::parse(line, format!("rows must be numbered consecutively from 0; expected {k}")));
        }
        index.push((field_usize(&rec, 1, line)?, field_usize(&rec, 2, line)?));
        for j in 0..d {
            flat.push(field_f64(&rec, 3 + j, line)?);
        }
    }
    let points = Array2::from_shape_vec((index.len(), d), flat)
        .map_err(|e| Error::parse(0, e.to_string()))?;
    Ok(DesignTable { index, points })
}

pub fn write_outputs_csv<W: Write>(outputs: &[f64], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["row", "output"]).map_err(csv_error)?;
    for (r, y) in outputs.iter().enumerate() {
        out.write_record([r.to_string(), format!("{y:?}")]).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_outputs_csv<R: Read>(r: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.len() != 2 || header.get(0).map(str::trim) != Some("row") {
        return Err(Error::parse(1, "outputs header must be `row,output`"));
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = k + 2;
        if rec.len() != 2 {
            return Err(Error::parse(line, "expected two fields"));
        }
        if field_usize(&rec, 0, line)? != k {
            return Err(Error::parse(line, format!("rows must be numbered consecutively from 0; expected {k}")));
        }
        out.push(field_f64(&rec, 1, line)?);
    }
    Ok(out)
}
