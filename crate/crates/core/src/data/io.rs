//! Feature file readers and writers.
//!
//! Binary layout (little-endian): `b"LSDC"`, `u32` N, `u32` D, `u32` label
//! flag, then N×D `f32` row-major, then N `u32` labels when the flag is 1.
//! CSV layout: one sample per line, comma-separated decimals, with an
//! optional trailing integer label column.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"LSDC";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Binary,
    /// CSV; when `labels` is set the last column is parsed as the class label.
    Csv { labels: bool },
}

impl FeatureFormat {
    /// Picks a format from the file extension (`.csv` vs anything else).
    pub fn from_path(path: &Path, labels: bool) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FeatureFormat::Csv { labels },
            _ => FeatureFormat::Binary,
        }
    }
}

pub fn load_features(
    path: &Path,
    format: FeatureFormat,
) -> Result<(FeatureMatrix, Option<LabelVector>)> {
    let bytes = fs::read(path)?;
    let parsed = match format {
        FeatureFormat::Binary => parse_binary(&bytes),
        FeatureFormat::Csv { labels } => {
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Invalid(e.to_string()))?;
            parse_csv(text, labels)
        }
    };
    parsed.map_err(|e| match e {
        Error::Invalid(msg) => Error::Parse {
            path: path.to_path_buf(),
            msg,
        },
        Error::Row { row, msg } => Error::Parse {
            path: path.to_path_buf(),
            msg: format!("row {row}: {msg}"),
        },
        other => other,
    })
}

pub fn save_features(
    path: &Path,
    features: &FeatureMatrix,
    labels: Option<&LabelVector>,
    format: FeatureFormat,
) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != features.n_samples() {
            return Err(Error::Shape(format!(
                "{} labels for {} samples",
                l.len(),
                features.n_samples()
            )));
        }
    }
    let bytes = match format {
        FeatureFormat::Binary => encode_binary(features, labels)?,
        FeatureFormat::Csv { .. } => encode_csv(features, labels).into_bytes(),
    };
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub(crate) fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub(crate) fn read_f32(bytes: &[u8], at: usize) -> Option<f32> {
    bytes
        .get(at..at + 4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn parse_binary(bytes: &[u8]) -> Result<(FeatureMatrix, Option<LabelVector>)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Invalid("malformed header: expected LSDC magic".into()));
    }
    let n = read_u32(bytes, 4).unwrap() as usize;
    let d = read_u32(bytes, 8).unwrap() as usize;
    let flag = read_u32(bytes, 12).unwrap();
    if n == 0 || d == 0 {
        return Err(Error::Invalid(format!("malformed header: N={n}, D={d}")));
    }
    if flag > 1 {
        return Err(Error::Invalid(format!("malformed header: label flag {flag}")));
    }
    let payload = &bytes[HEADER_LEN..];
    let available = payload.len() / 4;
    if available < n * d {
        return Err(Error::Row {
            row: available / d,
            msg: format!("truncated: header declares {n}x{d} values"),
        });
    }
    let mut data = Vec::with_capacity(n * d);
    for k in 0..n * d {
        let v = read_f32(payload, 4 * k).unwrap();
        if !v.is_finite() {
            return Err(Error::Row {
                row: k / d,
                msg: "non-finite value".into(),
            });
        }
        data.push(v as f64);
    }
    let mut rest = 4 * n * d;
    let labels = if flag == 1 {
        let mut l = Vec::with_capacity(n);
        for i in 0..n {
            let v = read_u32(payload, rest).ok_or_else(|| Error::Row {
                row: i,
                msg: "missing label".into(),
            })?;
            l.push(v as usize);
            rest += 4;
        }
        Some(LabelVector::new(l))
    } else {
        None
    };
    if rest != payload.len() {
        return Err(Error::Invalid(format!(
            "{} trailing bytes after payload",
            payload.len() - rest
        )));
    }
    let m = Array2::from_shape_vec((n, d), data).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((FeatureMatrix::new(m)?, labels))
}

fn encode_binary(features: &FeatureMatrix, labels: Option<&LabelVector>) -> Result<Vec<u8>> {
    let n = features.n_samples();
    let d = features.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * (d + 1));
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [n, d, labels.is_some() as usize] {
        let v = u32::try_from(v).map_err(|_| Error::Shape("dimension exceeds u32".into()))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in features.view().iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(l) = labels {
        for &y in l.as_slice() {
            let y = u32::try_from(y).map_err(|_| Error::Shape("label exceeds u32".into()))?;
            out.extend_from_slice(&y.to_le_bytes());
        }
    }
    Ok(out)
}

fn parse_csv(text: &str, with_labels: bool) -> Result<(FeatureMatrix, Option<LabelVector>)> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = rows.len();
        let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if with_labels {
            let last = fields.pop().filter(|_| !fields.is_empty()).ok_or(Error::Row {
                row,
                msg: "missing label column".into(),
            })?;
            let y: usize = last.parse().map_err(|_| Error::Row {
                row,
                msg: format!("bad label `{last}`"),
            })?;
            labels.push(y);
        }
        let w = *width.get_or_insert(fields.len());
        if fields.len() != w {
            return Err(Error::Row {
                row,
                msg: format!("expected {w} values, found {}", fields.len()),
            });
        }
        let mut vals = Vec::with_capacity(w);
        for f in fields {
            let v: f64 = f.parse().map_err(|_| Error::Row {
                row,
                msg: format!("bad number `{f}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Row {
                    row,
                    msg: "non-finite value".into(),
                });
            }
            vals.push(v);
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::Invalid("no rows".into()));
    }
    let fm = FeatureMatrix::from_rows(&rows)?;
    Ok((fm, with_labels.then(|| LabelVector::new(labels))))
}

fn encode_csv(features: &FeatureMatrix, labels: Option<&LabelVector>) -> String {
    let mut s = String::new();
    for (i, row) in features.view().rows().into_iter().enumerate() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&line.join(","));
        if let Some(l) = labels {
            s.push_str(&format!(",{}", l.as_slice()[i]));
        }
        s.push('\n');
    }
    s
}
