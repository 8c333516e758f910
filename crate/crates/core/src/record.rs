//! Portable checkpoint format for a filter and its task heads.
//!
//! ```text
//! MMFREC 1\n
//! filter kind=linear input_dim=20 output_dim=5 hidden= params=100\n
//! <100 little-endian f64>
//! head kind=softmax classes=8 dim=5 lambda=1e-6 intercept=1 params=48\n
//! <48 little-endian f64>
//! ```
//!
//! Each section is one ASCII header line followed by its parameters as raw
//! little-endian 64-bit floats. Filter parameters follow the layout in
//! [`crate::filters`]; head parameters are the weights row-major, then the bias.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filters::{FilterKind, FilterState};
use crate::heads::{ReconstructionHead, SoftmaxHead};
use crate::minimax::FittedHead;

const MAGIC: &str = "MMFREC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub filter: FilterState,
    pub heads: Vec<FittedHead>,
}

fn write_params(w: &mut impl Write, params: &[f64]) -> Result<()> {
    for p in params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_record(mut w: impl Write, filter: &FilterState, heads: &[FittedHead]) -> Result<()> {
    writeln!(w, "{MAGIC} {VERSION}")?;
    let kind = match filter.kind() {
        FilterKind::Linear => "linear",
        FilterKind::TwoLayerSigmoid => "two-layer-sigmoid",
    };
    let hidden: Vec<String> = filter.hidden_dims().iter().map(|h| h.to_string()).collect();
    writeln!(
        w,
        "filter kind={kind} input_dim={} output_dim={} hidden={} params={}",
        filter.input_dim(),
        filter.output_dim(),
        hidden.join(","),
        filter.params().len()
    )?;
    write_params(&mut w, filter.params())?;
    for head in heads {
        match head {
            FittedHead::Softmax(h) => {
                let params = h.params();
                writeln!(
                    w,
                    "head kind=softmax classes={} dim={} lambda={:?} intercept={} params={}",
                    h.num_classes(),
                    h.dim(),
                    h.reg_lambda,
                    u8::from(h.fit_intercept),
                    params.len()
                )?;
                write_params(&mut w, &params)?;
            }
            FittedHead::Regression(h) => {
                let params = h.params();
                writeln!(
                    w,
                    "head kind=regression input_dim={} output_dim={} lambda={:?} intercept={} params={}",
                    h.weights.nrows(),
                    h.weights.ncols(),
                    h.reg_lambda,
                    u8::from(h.fit_intercept),
                    params.len()
                )?;
                write_params(&mut w, &params)?;
            }
        }
    }
    Ok(())
}

fn parse_fields(line: &str) -> (String, HashMap<String, String>) {
    let mut parts = line.split_whitespace();
    let section = parts.next().unwrap_or("").to_string();
    let fields = parts
        .filter_map(|p| p.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    (section, fields)
}

fn field<T: std::str::FromStr>(fields: &HashMap<String, String>, key: &str) -> Result<T> {
    fields
        .get(key)
        .ok_or_else(|| Error::Parse(format!("record header lacks '{key}'")))?
        .parse()
        .map_err(|_| Error::Parse(format!("bad value for '{key}'")))
}

fn read_params(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn read_header(r: &mut impl BufRead) -> Result<Option<String>> {
    let mut line = Vec::new();
    if r.read_until(b'\n', &mut line)? == 0 {
        return Ok(None);
    }
    let text = String::from_utf8(line).map_err(|_| Error::Parse("record header is not UTF-8".into()))?;
    Ok(Some(text.trim_end().to_string()))
}

pub fn read_record(r: impl Read) -> Result<Record> {
    let mut r = BufReader::new(r);
    let magic = read_header(&mut r)?.ok_or_else(|| Error::Parse("empty record".into()))?;
    let version: u32 = magic
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Parse("not a filter record".into()))?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported record version {version}")));
    }
    let header = read_header(&mut r)?.ok_or_else(|| Error::Parse("missing filter section".into()))?;
    let (section, f) = parse_fields(&header);
    if section != "filter" {
        return Err(Error::Parse(format!("expected filter section, found '{section}'")));
    }
    let kind = match f.get("kind").map(String::as_str) {
        Some("linear") => FilterKind::Linear,
        Some("two-layer-sigmoid") => FilterKind::TwoLayerSigmoid,
        other => return Err(Error::Parse(format!("unknown filter kind {other:?}"))),
    };
    let hidden: Vec<usize> = match f.get("hidden").map(String::as_str) {
        None | Some("") => Vec::new(),
        Some(h) => h
            .split(',')
            .map(|s| s.parse().map_err(|_| Error::Parse("bad hidden sizes".into())))
            .collect::<Result<_>>()?,
    };
    let n: usize = field(&f, "params")?;
    let params = read_params(&mut r, n)?;
    let filter = FilterState::new(kind, field(&f, "input_dim")?, field(&f, "output_dim")?, hidden, params)?;

    let mut heads = Vec::new();
    while let Some(line) = read_header(&mut r)? {
        if line.is_empty() {
            continue;
        }
        let (section, f) = parse_fields(&line);
        if section != "head" {
            return Err(Error::Parse(format!("unexpected section '{section}'")));
        }
        let n: usize = field(&f, "params")?;
        let params = read_params(&mut r, n)?;
        let lambda: f64 = field(&f, "lambda")?;
        let intercept = field::<u8>(&f, "intercept")? != 0;
        match f.get("kind").map(String::as_str) {
            Some("softmax") => {
                let (k, d): (usize, usize) = (field(&f, "classes")?, field(&f, "dim")?);
                if n != k * d + k {
                    return Err(Error::Parse("softmax head parameter count mismatch".into()));
                }
                heads.push(FittedHead::Softmax(SoftmaxHead {
                    weights: DMatrix::from_row_slice(k, d, &params[..k * d]),
                    bias: DVector::from_column_slice(&params[k * d..]),
                    reg_lambda: lambda,
                    fit_intercept: intercept,
                }));
            }
            Some("regression") => {
                let (din, dout): (usize, usize) = (field(&f, "input_dim")?, field(&f, "output_dim")?);
                if n != din * dout + dout {
                    return Err(Error::Parse("regression head parameter count mismatch".into()));
                }
                heads.push(FittedHead::Regression(ReconstructionHead {
                    weights: DMatrix::from_row_slice(din, dout, &params[..din * dout]),
                    bias: DVector::from_column_slice(&params[din * dout..]),
                    reg_lambda: lambda,
                    fit_intercept: intercept,
                }));
            }
            other => return Err(Error::Parse(format!("unknown head kind {other:?}"))),
        }
    }
    Ok(Record { filter, heads })
}

pub fn save_record(path: impl AsRef<Path>, filter: &FilterState, heads: &[FittedHead]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_record(&mut w, filter, heads)?;
    w.flush()?;
    Ok(())
}

pub fn load_record(path: impl AsRef<Path>) -> Result<Record> {
    read_record(std::fs::File::open(path)?)
}
