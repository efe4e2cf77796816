//! Matrix files, layer-stack directories and run reports.
//!
//! Three matrix formats are understood:
//!
//! * `rawbin` (`.rscm`, `.bin`): the canonical format. A 24-byte header
//!   (`b"RSCM"`, `u32` version 1, `u64` rows, `u64` columns, all little-endian)
//!   followed by row-major little-endian `f64` values. The file size must be
//!   exactly `24 + 8·n·d` bytes.
//! * `csv` (`.csv`): numbers only, with an optional single header row.
//! * `npy` (`.npy`): NPY version 1.0, 2-D, C order, `<f4` or `<f8`. `f32` data
//!   is widened to `f64`.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::{AggregateCalibrationResult, CalibrationResult};
use crate::error::{Error, Result};
use crate::matrix::{EmbeddingMatrix, LayerStack};
use crate::metrics::MetricSpec;

pub const RAWBIN_MAGIC: &[u8; 4] = b"RSCM";
pub const RAWBIN_VERSION: u32 = 1;
pub const RAWBIN_HEADER_LEN: usize = 24;

const NPY_MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    Csv,
    Rawbin,
    Npy,
}

impl MatrixFormat {
    /// Picks the format from a file extension (case-insensitive).
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "csv" => Some(MatrixFormat::Csv),
            "rscm" | "bin" | "rawbin" => Some(MatrixFormat::Rawbin),
            "npy" => Some(MatrixFormat::Npy),
            _ => None,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        path.extension()
            .and_then(|e| e.to_str())
            .and_then(Self::from_extension)
            .ok_or_else(|| {
                Error::format(
                    path,
                    "unrecognized extension; expected .csv, .npy, .rscm or .bin",
                )
            })
    }
}

impl FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_extension(s)
            .ok_or_else(|| Error::param(format!("unknown matrix format {s:?}; expected csv, rawbin or npy")))
    }
}

/// A matrix file on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixFile {
    pub path: PathBuf,
    pub format: MatrixFormat,
}

impl MatrixFile {
    /// Infers the format from the extension.
    pub fn new(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let format = MatrixFormat::from_path(&path)?;
        Ok(Self { path, format })
    }

    pub fn with_format(path: impl Into<PathBuf>, format: MatrixFormat) -> Self {
        Self {
            path: path.into(),
            format,
        }
    }

    pub fn load(&self) -> Result<EmbeddingMatrix> {
        let bytes = fs::read(&self.path)?;
        match self.format {
            MatrixFormat::Csv => parse_csv(&self.path, &bytes),
            MatrixFormat::Rawbin => parse_rawbin(&self.path, &bytes),
            MatrixFormat::Npy => parse_npy(&self.path, &bytes),
        }
    }

    pub fn save(&self, m: &EmbeddingMatrix) -> Result<()> {
        let bytes = match self.format {
            MatrixFormat::Csv => encode_csv(m),
            MatrixFormat::Rawbin => encode_rawbin(m),
            MatrixFormat::Npy => encode_npy(m),
        };
        fs::write(&self.path, bytes)?;
        Ok(())
    }
}

/// Loads a matrix, choosing the format from the extension.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    MatrixFile::new(path.as_ref())?.load()
}

/// Saves a matrix, choosing the format from the extension.
pub fn save_matrix(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    MatrixFile::new(path.as_ref())?.save(m)
}

fn finish(path: &Path, n: usize, d: usize, data: Vec<f64>) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::from_rows(n, d, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn encode_rawbin(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAWBIN_HEADER_LEN + 8 * m.n() * m.d());
    out.extend_from_slice(RAWBIN_MAGIC);
    out.extend_from_slice(&RAWBIN_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.n() as u64).to_le_bytes());
    out.extend_from_slice(&(m.d() as u64).to_le_bytes());
    for v in m.values().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_rawbin(path: &Path, bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < RAWBIN_HEADER_LEN {
        return Err(Error::format(
            path,
            format!(
                "truncated header: expected at least {RAWBIN_HEADER_LEN} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    if &bytes[0..4] != RAWBIN_MAGIC {
        return Err(Error::format(path, "bad magic bytes; expected \"RSCM\""));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != RAWBIN_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}; expected {RAWBIN_VERSION}"),
        ));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let d = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(8))
        .and_then(|p| p.checked_add(RAWBIN_HEADER_LEN as u64))
        .ok_or_else(|| Error::format(path, format!("declared shape {n}x{d} overflows")))?;
    if expected != bytes.len() as u64 {
        return Err(Error::format(
            path,
            format!(
                "size mismatch for {n}x{d}: expected {expected} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    let data = bytes[RAWBIN_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    finish(path, n as usize, d as usize, data)
}

pub fn encode_csv(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = String::new();
    for row in m.values().rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

/// Parses numeric CSV. The first row is treated as a header when any of its
/// cells is not a number.
pub fn parse_csv(path: &Path, bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(bytes);
    let mut data = Vec::new();
    let mut d = None;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        let parsed: std::result::Result<Vec<f64>, usize> = record
            .iter()
            .enumerate()
            .map(|(j, cell)| cell.parse::<f64>().map_err(|_| j))
            .collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(j) => {
                return Err(Error::format(
                    path,
                    format!("line {line}, column {}: {:?} is not a number", j + 1, &record[j]),
                ))
            }
        };
        match d {
            None => d = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::format(
                    path,
                    format!("line {line} has {} columns, expected {d}", values.len()),
                ))
            }
            _ => {}
        }
        data.extend(values);
        rows += 1;
    }
    let Some(d) = d else {
        return Err(Error::format(path, "no numeric rows"));
    };
    finish(path, rows, d, data)
}

pub fn encode_npy(m: &EmbeddingMatrix) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}), }}",
        m.n(),
        m.d()
    );
    // Pad so that magic + version + length + header is a multiple of 64.
    let unpadded = NPY_MAGIC.len() + 2 + 2 + dict.len() + 1;
    let header_len = dict.len() + 1 + (64 - unpadded % 64) % 64;
    let mut out = Vec::with_capacity(10 + header_len + 8 * m.n() * m.d());
    out.extend_from_slice(NPY_MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.resize(10 + header_len - 1, b' ');
    out.push(b'\n');
    for v in m.values().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn npy_value<'a>(dict: &'a str, key: &str) -> Option<&'a str> {
    let start = dict.find(&format!("'{key}'"))? + key.len() + 2;
    let rest = dict[start..].trim_start().strip_prefix(':')?;
    Some(rest.trim_start())
}

pub fn parse_npy(path: &Path, bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let bad = |msg: String| Error::format(path, msg);
    if bytes.len() < 10 || &bytes[..6] != NPY_MAGIC {
        return Err(bad("not an NPY file (bad magic)".into()));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(bad(format!(
            "unsupported NPY version {}.{}; expected 1.0",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = 10 + header_len;
    if bytes.len() < data_start {
        return Err(bad(format!(
            "truncated header: expected {data_start} bytes, found {}",
            bytes.len()
        )));
    }
    let dict = std::str::from_utf8(&bytes[10..data_start]).map_err(|_| bad("header is not ASCII".into()))?;

    let descr = npy_value(dict, "descr")
        .and_then(|v| v.strip_prefix('\''))
        .and_then(|v| v.split('\'').next())
        .ok_or_else(|| bad("header lacks 'descr'".into()))?;
    let width = match descr {
        "<f8" => 8,
        "<f4" => 4,
        other => return Err(bad(format!("unsupported dtype {other:?}; expected '<f8' or '<f4'"))),
    };
    let fortran = npy_value(dict, "fortran_order").ok_or_else(|| bad("header lacks 'fortran_order'".into()))?;
    if !fortran.starts_with("False") {
        return Err(bad("Fortran-ordered arrays are not supported".into()));
    }
    let shape = npy_value(dict, "shape")
        .and_then(|v| v.strip_prefix('('))
        .and_then(|v| v.split(')').next())
        .ok_or_else(|| bad("header lacks 'shape'".into()))?;
    let dims = shape
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| bad(format!("bad shape ({shape})")))?;
    let [n, d] = dims[..] else {
        return Err(bad(format!("expected a 2-D array, got shape ({shape})")));
    };
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(width))
        .and_then(|p| p.checked_add(data_start))
        .ok_or_else(|| bad(format!("declared shape {n}x{d} overflows")))?;
    if expected != bytes.len() {
        return Err(bad(format!(
            "size mismatch for {n}x{d}: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let payload = &bytes[data_start..];
    let data = if width == 8 {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    } else {
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()
    };
    finish(path, n, d, data)
}

/// Loads `layer_<index>.<ext>` files from `dir`, ordered by index.
///
/// Indices must be contiguous and start at 0 or 1. Files that do not match
/// the pattern are ignored.
pub fn load_stack(dir: impl AsRef<Path>) -> Result<LayerStack> {
    let dir = dir.as_ref();
    let stack_err = |message: String| Error::Stack {
        dir: dir.to_path_buf(),
        message,
    };
    let mut files: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let (Some(stem), Some(ext)) = (
            path.file_stem().and_then(|s| s.to_str()),
            path.extension().and_then(|e| e.to_str()),
        ) else {
            continue;
        };
        let Some(index) = stem.strip_prefix("layer_").and_then(|i| i.parse::<usize>().ok()) else {
            continue;
        };
        if MatrixFormat::from_extension(ext).is_none() {
            continue;
        }
        files.push((index, path));
    }
    files.sort();
    if files.is_empty() {
        return Err(stack_err("no layer_<index> files found".into()));
    }
    if let Some(w) = files.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(stack_err(format!(
            "layer index {} appears twice ({} and {})",
            w[0].0,
            w[0].1.display(),
            w[1].1.display()
        )));
    }
    let base = files[0].0;
    if base > 1 {
        return Err(stack_err(format!("layer indices must start at 0 or 1, found {base}")));
    }
    if let Some((pos, _)) = files.iter().enumerate().find(|(pos, (i, _))| *i != base + pos) {
        return Err(stack_err(format!("missing layer index {}", base + pos)));
    }
    let layers = files
        .iter()
        .map(|(_, p)| load_matrix(p))
        .collect::<Result<Vec<_>>>()?;
    let n = layers[0].n();
    if let Some((pos, l)) = layers.iter().enumerate().find(|(_, l)| l.n() != n) {
        return Err(stack_err(format!(
            "ragged layers: layer_{} has {} rows, layer_{base} has {n}",
            base + pos,
            l.n()
        )));
    }
    LayerStack::new(layers)
}

/// Writes `stack` as `layer_0.<ext>`, `layer_1.<ext>`, … into `dir`.
pub fn save_stack(dir: impl AsRef<Path>, stack: &LayerStack, format: MatrixFormat) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let ext = match format {
        MatrixFormat::Csv => "csv",
        MatrixFormat::Rawbin => "rscm",
        MatrixFormat::Npy => "npy",
    };
    for (i, layer) in stack.iter().enumerate() {
        MatrixFile::with_format(dir.join(format!("layer_{i}.{ext}")), format).save(layer)?;
    }
    Ok(())
}

/// One input file or directory of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputInfo {
    pub role: String,
    pub path: PathBuf,
    /// `[n, d]` per matrix; a stack has one entry per layer.
    pub shapes: Vec<[usize; 2]>,
}

impl InputInfo {
    pub fn matrix(role: &str, path: impl Into<PathBuf>, m: &EmbeddingMatrix) -> Self {
        Self {
            role: role.into(),
            path: path.into(),
            shapes: vec![[m.n(), m.d()]],
        }
    }

    pub fn stack(role: &str, path: impl Into<PathBuf>, s: &LayerStack) -> Self {
        Self {
            role: role.into(),
            path: path.into(),
            shapes: s.iter().map(|m| [m.n(), m.d()]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReportResult {
    Scalar(CalibrationResult),
    Aggregate(AggregateCalibrationResult),
}

/// Everything needed to reproduce and audit one calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub version: String,
    pub inputs: Vec<InputInfo>,
    pub metric: MetricSpec,
    pub permutations: usize,
    pub alpha: f64,
    pub seed: u64,
    /// False when the null vector was dropped to keep the report small.
    pub nulls_included: bool,
    pub result: ReportResult,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn new(inputs: Vec<InputInfo>, metric: MetricSpec, result: ReportResult, wall_clock_seconds: f64) -> Self {
        let (permutations, alpha, seed) = match &result {
            ReportResult::Scalar(r) => (r.permutations, r.alpha, r.seed),
            ReportResult::Aggregate(r) => (r.permutations, r.alpha, r.seed),
        };
        Self {
            version: library_version().to_string(),
            inputs,
            metric,
            permutations,
            alpha,
            seed,
            nulls_included: true,
            result,
            wall_clock_seconds,
        }
    }

    /// Drops the null vector.
    pub fn without_nulls(mut self) -> Self {
        match &mut self.result {
            ReportResult::Scalar(r) => r.null_scores.clear(),
            ReportResult::Aggregate(r) => r.null_aggregates.clear(),
        }
        self.nulls_included = false;
        self
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// A one-row summary table (header plus one line); nulls and the layer
    /// score matrix are omitted.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let s_max = |m: Option<f64>| m.map_or_else(|| "unbounded".to_string(), |v| v.to_string());
        match &self.result {
            ReportResult::Scalar(r) => {
                w.write_record([
                    "metric", "s_obs", "tau_alpha", "p_value", "s_cal", "alpha", "permutations", "seed", "s_max",
                ])?;
                w.write_record([
                    r.metric.clone(),
                    r.s_obs.to_string(),
                    r.tau_alpha.to_string(),
                    r.p_value.to_string(),
                    r.s_cal.to_string(),
                    r.alpha.to_string(),
                    r.permutations.to_string(),
                    r.seed.to_string(),
                    s_max(r.s_max),
                ])?;
            }
            ReportResult::Aggregate(r) => {
                w.write_record([
                    "metric",
                    "aggregator",
                    "layers_a",
                    "layers_b",
                    "t_obs",
                    "tau_agg",
                    "p_agg",
                    "t_cal",
                    "alpha",
                    "permutations",
                    "seed",
                    "s_max",
                ])?;
                w.write_record([
                    r.metric.clone(),
                    r.aggregator.to_string(),
                    r.scores.len().to_string(),
                    r.scores.first().map_or(0, Vec::len).to_string(),
                    r.t_obs.to_string(),
                    r.tau_agg.to_string(),
                    r.p_agg.to_string(),
                    r.t_cal.to_string(),
                    r.alpha.to_string(),
                    r.permutations.to_string(),
                    r.seed.to_string(),
                    s_max(r.s_max),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

pub fn library_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}
