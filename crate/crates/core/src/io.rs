//! Persistent formats: IDX images, CSV traces, JSON-lines metrics, and
//! static SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::gan::{EpochRecord, RunTrace};
use crate::sim::{SimRecord, SimTrace};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const TRACE_HEADER: [&str; 5] = ["epoch", "margin", "e_real", "e_fake", "margin_updated"];
pub const SIM_TRACE_HEADER: [&str; 7] = ["step", "margin", "e_data", "e_g", "tv", "margin_updated", "step_size"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("byte 0: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },
    #[error("byte {offset}: truncated, need {needed} more bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("byte {offset}: dimension sizes overflow the addressable length")]
    DimensionOverflow { offset: usize },
    #[error("byte {offset}: {extra} trailing bytes after the payload")]
    Trailing { offset: usize, extra: usize },
    #[error("{path} line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("nothing to plot")]
    EmptyPlot,
    #[error("cannot write IDX: {0}")]
    IdxValue(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// A raw unsigned-byte IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<u32>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

fn take<'a>(bytes: &'a [u8], offset: usize, n: usize) -> Result<&'a [u8], IoError> {
    let available = bytes.len().saturating_sub(offset);
    if available < n {
        return Err(IoError::Truncated {
            offset,
            needed: n,
            available,
        });
    }
    Ok(&bytes[offset..offset + n])
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

/// Parses an IDX array whose magic must equal `expected`.
pub fn parse_idx(bytes: &[u8], expected: u32) -> Result<IdxArray, IoError> {
    let magic = be_u32(take(bytes, 0, 4)?);
    if magic != expected {
        return Err(IoError::BadMagic { found: magic, expected });
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    let mut len: usize = 1;
    for i in 0..ndims {
        let offset = 4 + 4 * i;
        let d = be_u32(take(bytes, offset, 4)?);
        len = len
            .checked_mul(d as usize)
            .ok_or(IoError::DimensionOverflow { offset })?;
        dims.push(d);
    }
    let start = 4 + 4 * ndims;
    let data = take(bytes, start, len)?.to_vec();
    if bytes.len() > start + len {
        return Err(IoError::Trailing {
            offset: start + len,
            extra: bytes.len() - start - len,
        });
    }
    Ok(IdxArray { magic, dims, data })
}

/// Images from an IDX file, one sample per image, pixels scaled to `[0, 1]`.
pub fn read_idx(path: &Path) -> Result<Dataset, IoError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let arr = parse_idx(&bytes, IDX_IMAGES_MAGIC)?;
    let dim = (arr.dims[1] as usize) * (arr.dims[2] as usize);
    let points = arr.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Dataset::new(format!("idx:{}", path.display()), dim, points)?)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>, IoError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(parse_idx(&bytes, IDX_LABELS_MAGIC)?
        .data
        .into_iter()
        .map(usize::from)
        .collect())
}

/// Writes samples as `rows × cols` images, quantizing `v` to `round(255 v)`.
pub fn write_idx(path: &Path, data: &Dataset, rows: u32, cols: u32) -> Result<(), IoError> {
    if (rows as usize) * (cols as usize) != data.dim() {
        return Err(IoError::IdxValue(format!(
            "{rows}x{cols} images do not match sample width {}",
            data.dim()
        )));
    }
    if let Some(v) = data.flat().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(IoError::IdxValue(format!("pixel {v} outside [0, 1]")));
    }
    let n = u32::try_from(data.len()).map_err(|_| IoError::IdxValue("too many samples".into()))?;
    let arr = IdxArray {
        magic: IDX_IMAGES_MAGIC,
        dims: vec![n, rows, cols],
        data: data.flat().iter().map(|v| (v * 255.0).round() as u8).collect(),
    };
    fs::write(path, arr.to_bytes()).map_err(|e| io_err(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<(), IoError> {
    let data = labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| IoError::IdxValue(format!("label {l} exceeds 255"))))
        .collect::<Result<Vec<_>, _>>()?;
    let arr = IdxArray {
        magic: IDX_LABELS_MAGIC,
        dims: vec![labels.len() as u32],
        data,
    };
    fs::write(path, arr.to_bytes()).map_err(|e| io_err(path, e))
}

/// 17 significant digits: parses back to the same bits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let parse_err = |line: usize, reason: String| IoError::Parse {
        path: path.display().to_string(),
        line,
        reason,
    };
    let got = r.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(parse_err(1, format!("expected header {}", header.join(","))));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| rec.map_err(|e| parse_err(i + 2, e.to_string())))
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, line: usize, i: usize) -> Result<T, IoError>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(i).ok_or_else(|| IoError::Parse {
        path: path.display().to_string(),
        line,
        reason: format!("missing column {}", i + 1),
    })?;
    raw.parse().map_err(|e: T::Err| IoError::Parse {
        path: path.display().to_string(),
        line,
        reason: format!("column {}: `{raw}`: {e}", i + 1),
    })
}

fn flag(path: &Path, rec: &csv::StringRecord, line: usize, i: usize) -> Result<bool, IoError> {
    match field::<u8>(path, rec, line, i)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(IoError::Parse {
            path: path.display().to_string(),
            line,
            reason: format!("flag must be 0 or 1, got {v}"),
        }),
    }
}

pub fn write_trace(trace: &RunTrace, path: &Path) -> Result<(), IoError> {
    write_csv(
        path,
        &TRACE_HEADER,
        trace.records.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                fmt_float(r.margin),
                fmt_float(r.e_real),
                fmt_float(r.e_fake),
                u8::from(r.margin_updated).to_string(),
            ]
        }),
    )
}

/// Reads a trace written by [`write_trace`]; per-batch sums and coverage
/// are not stored and come back empty.
pub fn read_trace(path: &Path) -> Result<RunTrace, IoError> {
    let records = read_csv(path, &TRACE_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let line = i + 2;
            Ok(EpochRecord {
                epoch: field(path, rec, line, 0)?,
                margin: field(path, rec, line, 1)?,
                e_real: field(path, rec, line, 2)?,
                e_fake: field(path, rec, line, 3)?,
                margin_updated: flag(path, rec, line, 4)?,
                batch_real_sums: Vec::new(),
                batch_fake_sums: Vec::new(),
                coverage: None,
            })
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    Ok(RunTrace { records })
}

pub fn write_sim_trace(trace: &SimTrace, path: &Path) -> Result<(), IoError> {
    write_csv(
        path,
        &SIM_TRACE_HEADER,
        trace.records.iter().map(|r| {
            vec![
                r.step.to_string(),
                fmt_float(r.margin),
                fmt_float(r.e_data),
                fmt_float(r.e_g),
                fmt_float(r.tv),
                u8::from(r.margin_updated).to_string(),
                fmt_float(r.step_size),
            ]
        }),
    )
}

/// Reads the records of a sim trace; the `converged` and `stalled` flags
/// are not stored.
pub fn read_sim_trace(path: &Path) -> Result<Vec<SimRecord>, IoError> {
    read_csv(path, &SIM_TRACE_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let line = i + 2;
            Ok(SimRecord {
                step: field(path, rec, line, 0)?,
                margin: field(path, rec, line, 1)?,
                e_data: field(path, rec, line, 2)?,
                e_g: field(path, rec, line, 3)?,
                tv: field(path, rec, line, 4)?,
                margin_updated: flag(path, rec, line, 5)?,
                step_size: field(path, rec, line, 6)?,
            })
        })
        .collect()
}

/// Rows of a `[n × d]` tensor as CSV with header `x0,x1,...`.
pub fn write_points(points: &Tensor, path: &Path) -> Result<(), IoError> {
    let d = points.shape().last().copied().unwrap_or(0);
    let header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, &header, points.rows().map(|r| r.iter().map(|&v| fmt_float(v)).collect()))
}

pub fn read_points(path: &Path) -> Result<Tensor, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let d = r
        .headers()
        .map_err(|e| IoError::Parse {
            path: path.display().to_string(),
            line: 1,
            reason: e.to_string(),
        })?
        .len();
    let mut data = Vec::new();
    let mut n = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| IoError::Parse {
            path: path.display().to_string(),
            line: i + 2,
            reason: e.to_string(),
        })?;
        for j in 0..d {
            data.push(field::<f64>(path, &rec, i + 2, j)?);
        }
        n += 1;
    }
    Tensor::matrix(n, d, data).map_err(|e| IoError::Parse {
        path: path.display().to_string(),
        line: 1,
        reason: e.to_string(),
    })
}

/// One JSON object per line.
pub fn write_metrics<T: Serialize>(records: &[T], path: &Path) -> Result<(), IoError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| io_err(path, e))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<serde_json::Value>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| IoError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// A named set of points drawn in one color.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: &str, color: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            color: color.into(),
            points,
        }
    }
}

/// A labeled horizontal reference line.
#[derive(Clone, Debug, PartialEq)]
pub struct HLine {
    pub label: String,
    pub y: f64,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const PAD: f64 = 56.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it
                .filter(|v| v.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let m = 0.05 * (hi - lo);
                (lo - m, hi + m)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - PAD - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * PAD)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open_svg(out: &mut String, title: &str, f: &Frame) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (l, r, t, b) = (PAD, WIDTH - PAD, PAD, HEIGHT - PAD);
    let _ = writeln!(
        out,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    for (x, anchor) in [(f.x0, "start"), (f.x1, "end")] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{}</text>"#,
            f.px(x),
            b + 16.0,
            short(x)
        );
    }
    for y in [f.y0, f.y1] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            l - 4.0,
            f.py(y) + 4.0,
            short(y)
        );
    }
}

fn short(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Legend swatches are squares so markers stay countable.
fn legend(out: &mut String, entries: &[(&str, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = PAD + 6.0 + 16.0 * i as f64;
        let x = WIDTH - PAD - 120.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#,
            y - 9.0,
            escape(color)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="11">{}</text>"#,
            x + 14.0,
            escape(label)
        );
    }
}

/// Scatter plot with one `<circle>` per point.
pub fn render_scatter(title: &str, series: &[Series]) -> Result<String, IoError> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(IoError::EmptyPlot);
    }
    let pts = series.iter().flat_map(|s| s.points.iter());
    let f = Frame::fit(pts.clone().map(|p| p.0), pts.map(|p| p.1));
    let mut out = String::new();
    open_svg(&mut out, title, &f);
    for s in series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="{}" fill-opacity="0.6"/>"#,
                    f.px(x),
                    f.py(y),
                    escape(&s.color)
                );
            }
        }
    }
    let entries: Vec<(&str, &str)> = series.iter().map(|s| (s.label.as_str(), s.color.as_str())).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Line plot with one `<polyline>` per series and dashed horizontal lines.
pub fn render_curves(title: &str, series: &[Series], hlines: &[HLine]) -> Result<String, IoError> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(IoError::EmptyPlot);
    }
    let pts = series.iter().flat_map(|s| s.points.iter());
    let ys = pts.clone().map(|p| p.1).chain(hlines.iter().map(|h| h.y));
    let f = Frame::fit(pts.map(|p| p.0), ys);
    let mut out = String::new();
    open_svg(&mut out, title, &f);
    for h in hlines {
        let y = f.py(h.y);
        let _ = writeln!(
            out,
            r#"<line x1="{PAD}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black" stroke-dasharray="4 3"><title>{}</title></line>"#,
            WIDTH - PAD,
            escape(&h.label)
        );
    }
    for s in series.iter().filter(|s| !s.points.is_empty()) {
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            escape(&s.color),
            coords.join(" ")
        );
    }
    let entries: Vec<(&str, &str)> = series.iter().map(|s| (s.label.as_str(), s.color.as_str())).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Energy curves for a run; the margin is a curve when it adapts and a
/// horizontal line when fixed.
pub fn trace_curves(trace: &RunTrace, fixed_margin: Option<f64>) -> (Vec<Series>, Vec<HLine>) {
    let at = |f: fn(&EpochRecord) -> f64| -> Vec<(f64, f64)> {
        trace.records.iter().map(|r| (r.epoch as f64, f(r))).collect()
    };
    let mut series = vec![
        Series::new("real energy", "#1f77b4", at(|r| r.e_real)),
        Series::new("synthetic energy", "#d62728", at(|r| r.e_fake)),
    ];
    let hlines = match fixed_margin {
        Some(m) => vec![HLine {
            label: format!("margin {m}"),
            y: m,
        }],
        None => {
            series.push(Series::new("margin", "#2ca02c", at(|r| r.margin)));
            Vec::new()
        }
    };
    (series, hlines)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}
