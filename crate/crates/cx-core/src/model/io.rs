//! File formats: dataset JSON Lines and the `cx-repr` representation file
//! that lets externally computed representations drive the analysis.
//!
//! Repr file layout, one JSON object per line:
//!   1. header  `{"format":"cx-repr","version":1,"d":<int>,"classes":[...]}`
//!   2. head    `{"kind":"head","W":[[...]],"bias":[...]|null}` (exactly one)
//!   3+. reprs  `{"kind":"repr","id":"...","h":[...]}`
//!
//! Floats round-trip exactly: serde_json emits shortest representations that
//! parse back to identical bits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BowEncoder, EventSpace, Example, LatentRepr, LinearHead};
use crate::numerics::{Matrix, Vector};

pub const REPR_FORMAT: &str = "cx-repr";
pub const REPR_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ReprHeader {
    format: String,
    version: u32,
    d: usize,
    classes: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind")]
enum ReprLine {
    #[serde(rename = "head")]
    Head {
        #[serde(rename = "W")]
        w: Vec<Vec<f64>>,
        bias: Option<Vec<f64>>,
    },
    #[serde(rename = "repr")]
    Repr { id: String, h: Vec<f64> },
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Write head + representations in the `cx-repr` format.
pub fn export_representations(
    path: &Path,
    head: &LinearHead,
    reprs: &[LatentRepr],
) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    let header = ReprHeader {
        format: REPR_FORMAT.into(),
        version: REPR_VERSION,
        d: head.dim(),
        classes: head.event_space.classes().to_vec(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    let w: Vec<Vec<f64>> = (0..head.weights.rows())
        .map(|r| head.weights.row(r).to_vec())
        .collect();
    let head_line = ReprLine::Head {
        w,
        bias: head.bias.as_ref().map(|b| b.as_slice().to_vec()),
    };
    writeln!(out, "{}", serde_json::to_string(&head_line)?)?;
    for r in reprs {
        if r.h.len() != head.dim() {
            return Err(Error::ShapeMismatch(format!(
                "repr {} has dimension {}, head expects {}",
                r.example_id,
                r.h.len(),
                head.dim()
            )));
        }
        let line = ReprLine::Repr {
            id: r.example_id.clone(),
            h: r.h.as_slice().to_vec(),
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    out.flush()?;
    Ok(())
}

/// Read a `cx-repr` file back into a head and representation list.
/// Errors name the offending 1-based line.
pub fn import_representations(path: &Path) -> Result<(LinearHead, Vec<LatentRepr>)> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected header"))?;
    let header: ReprHeader = serde_json::from_str(&first?)
        .map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    if header.format != REPR_FORMAT {
        return Err(parse_err(
            1,
            format!("unknown format {:?}", header.format),
        ));
    }
    if header.version != REPR_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported version {}", header.version),
        ));
    }
    let space = EventSpace::new(header.classes.clone())
        .map_err(|e| parse_err(1, format!("bad classes: {e}")))?;

    let mut head: Option<LinearHead> = None;
    let mut reprs = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ReprLine = serde_json::from_str(&line)
            .map_err(|e| parse_err(line_no, format!("bad record: {e}")))?;
        match parsed {
            ReprLine::Head { w, bias } => {
                if head.is_some() {
                    return Err(parse_err(line_no, "duplicate head record"));
                }
                let rows = w.len();
                if rows != space.len() {
                    return Err(parse_err(
                        line_no,
                        format!("head has {rows} rows, header lists {} classes", space.len()),
                    ));
                }
                let mut data = Vec::with_capacity(rows * header.d);
                for (r, row) in w.into_iter().enumerate() {
                    if row.len() != header.d {
                        return Err(parse_err(
                            line_no,
                            format!("head row {r} has {} values, expected d={}", row.len(), header.d),
                        ));
                    }
                    data.extend(row);
                }
                let weights = Matrix::new(rows, header.d, data)
                    .map_err(|e| parse_err(line_no, e.to_string()))?;
                let bias = bias
                    .map(Vector::new)
                    .transpose()
                    .map_err(|e| parse_err(line_no, e.to_string()))?;
                head = Some(
                    LinearHead::new(weights, bias, space.clone())
                        .map_err(|e| parse_err(line_no, e.to_string()))?,
                );
            }
            ReprLine::Repr { id, h } => {
                if head.is_none() {
                    return Err(parse_err(line_no, "repr record before head record"));
                }
                if h.len() != header.d {
                    return Err(parse_err(
                        line_no,
                        format!("repr {id} has length {}, expected d={}", h.len(), header.d),
                    ));
                }
                let h = Vector::new(h).map_err(|e| parse_err(line_no, e.to_string()))?;
                reprs.push(LatentRepr::new(id, h));
            }
        }
    }
    let head = head.ok_or_else(|| parse_err(2, "missing head record"))?;
    Ok((head, reprs))
}

/// Read a JSON Lines dataset, one [`Example`] per line.
pub fn read_dataset(path: &Path) -> Result<Vec<Example>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line)
            .map_err(|e| parse_err(idx + 1, format!("bad example: {e}")))?;
        ex.validate()
            .map_err(|e| parse_err(idx + 1, e.to_string()))?;
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "no examples in {}",
            path.display()
        )));
    }
    Ok(examples)
}

/// Write a dataset canonically (stable field order, one example per line).
pub fn write_dataset(path: &Path, dataset: &[Example]) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    for ex in dataset {
        writeln!(out, "{}", serde_json::to_string(ex)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_encoder(path: &Path, encoder: &BowEncoder) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, encoder)?;
    out.flush()?;
    Ok(())
}

pub fn read_encoder(path: &Path) -> Result<BowEncoder> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}
