//! Text model format.
//!
//! ```text
//! sisom-mlp 1
//! dims 2 64 32 3
//! capture 0 1
//! W 0 64 2
//! <64 lines, 2 values each>
//! b 0 64
//! <1 line, 64 values>
//! ...
//! end
//! ```
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::matrix::Matrix;
use super::mlp::MlpModel;
use crate::error::{Error, Result};

const MAGIC: &str = "sisom-mlp";
const VERSION: &str = "1";

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn model_to_string(model: &MlpModel) -> String {
    let mut out = String::new();
    let join = |vals: &[usize]| {
        vals.iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "dims {}", join(model.layer_dims()));
    let _ = writeln!(out, "capture {}", join(model.capture_layers()));
    for (l, (w, b)) in model.weights().iter().zip(model.biases()).enumerate() {
        let _ = writeln!(out, "W {l} {} {}", w.rows(), w.cols());
        for r in 0..w.rows() {
            let row: Vec<String> = w.row(r).iter().map(|&v| format_f64(v)).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        let _ = writeln!(out, "b {l} {}", b.len());
        let row: Vec<String> = b.iter().map(|&v| format_f64(v)).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out.push_str("end\n");
    out
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        loop {
            match self.inner.next() {
                Some((i, l)) if l.trim().is_empty() => self.last = i + 1,
                Some((i, l)) => {
                    self.last = i + 1;
                    return Ok((i + 1, l.trim()));
                }
                None => {
                    return Err(Error::Parse {
                        line: self.last + 1,
                        message: format!("unexpected end of file, expected {what}"),
                    })
                }
            }
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_usizes(line: usize, fields: &[&str]) -> Result<Vec<usize>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<usize>()
                .map_err(|_| parse_err(line, format!("expected an integer, got {f:?}")))
        })
        .collect()
}

fn parse_floats(line: usize, text: &str, expected: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| parse_err(line, format!("expected a float, got {f:?}")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != expected {
        return Err(parse_err(
            line,
            format!("expected {expected} values, got {}", vals.len()),
        ));
    }
    Ok(vals)
}

fn keyed<'a>(line: usize, text: &'a str, key: &str) -> Result<Vec<&'a str>> {
    let mut fields = text.split_whitespace();
    match fields.next() {
        Some(k) if k == key => Ok(fields.collect()),
        other => Err(parse_err(
            line,
            format!("expected `{key}`, got {:?}", other.unwrap_or("")),
        )),
    }
}

pub fn parse_model(text: &str) -> Result<MlpModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };

    let (ln, header) = lines.next("header")?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head != [MAGIC, VERSION] {
        return Err(parse_err(ln, format!("expected `{MAGIC} {VERSION}` header")));
    }

    let (ln, l) = lines.next("dims")?;
    let dims = parse_usizes(ln, &keyed(ln, l, "dims")?)?;
    let (ln, l) = lines.next("capture")?;
    let capture = parse_usizes(ln, &keyed(ln, l, "capture")?)?;
    if dims.len() < 3 {
        return Err(Error::Schema(format!("dims needs ≥3 entries, got {}", dims.len())));
    }
    let n_hidden = dims.len() - 2;
    if let Some(&bad) = capture.iter().find(|&&j| j >= n_hidden) {
        return Err(Error::Schema(format!(
            "capture layer {bad} out of range for {n_hidden} hidden layers"
        )));
    }

    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..dims.len() - 1 {
        let (ln, text) = lines.next("W block")?;
        let head = parse_usizes(ln, &keyed(ln, text, "W")?)?;
        if head.len() != 3 || head[0] != l {
            return Err(parse_err(ln, format!("expected `W {l} <rows> <cols>`")));
        }
        let (rows, cols) = (head[1], head[2]);
        if rows != dims[l + 1] || cols != dims[l] {
            return Err(Error::Schema(format!(
                "W {l} is {rows}x{cols}, dims require {}x{}",
                dims[l + 1],
                dims[l]
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, text) = lines.next("weight row")?;
            data.extend(parse_floats(ln, text, cols)?);
        }
        weights.push(Matrix::from_vec(rows, cols, data)?);

        let (ln, text) = lines.next("b block")?;
        let head = parse_usizes(ln, &keyed(ln, text, "b")?)?;
        if head.len() != 2 || head[0] != l {
            return Err(parse_err(ln, format!("expected `b {l} <len>`")));
        }
        if head[1] != dims[l + 1] {
            return Err(Error::Schema(format!(
                "b {l} has length {}, dims require {}",
                head[1],
                dims[l + 1]
            )));
        }
        let (ln, text) = lines.next("bias row")?;
        biases.push(parse_floats(ln, text, head[1])?);
    }
    let (ln, text) = lines.next("end")?;
    if text != "end" {
        return Err(parse_err(ln, "expected `end`"));
    }

    MlpModel::from_parts(dims, capture, weights, biases).map_err(|e| match e {
        Error::InvalidModel(m) => Error::Schema(m),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> MlpModel {
        MlpModel::new(&[3, 5, 4, 2], &[0, 1], 99).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample_model();
        let back = parse_model(&model_to_string(&m)).unwrap();
        assert_eq!(back, m);
        let x = [0.1, -0.4, 2.5];
        assert_eq!(m.forward(&x).unwrap(), back.forward(&x).unwrap());
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let m = sample_model();
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let text = model_to_string(&sample_model());
        let cut: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        match parse_model(&cut) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_float_reports_line() {
        let text = model_to_string(&sample_model()).replacen("e-1", "e-1x", 1);
        assert!(matches!(parse_model(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn capture_out_of_range_is_schema_error() {
        let text = model_to_string(&sample_model()).replace("capture 0 1", "capture 0 2");
        assert!(matches!(parse_model(&text), Err(Error::Schema(_))));
    }

    #[test]
    fn dim_mismatch_is_schema_error() {
        let text = model_to_string(&sample_model()).replace("dims 3 5 4 2", "dims 3 6 4 2");
        assert!(matches!(parse_model(&text), Err(Error::Schema(_))));
    }
}
