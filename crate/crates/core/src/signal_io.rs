//! Recording ingestion, strip extraction and ECG-grid geometry.
//!
//! Two on-disk formats are supported:
//!
//! * **columnar CSV**: `#`-prefixed `key: value` preamble lines (`id`, `fs`, optional
//!   `gain`, `age`, `sex`, `interpretation`), one header row naming the leads, then one
//!   row per sample instant.
//! * **int16 binary + JSON header**: a JSON sidecar ([`BinaryHeader`]) describing a
//!   little-endian, frame-interleaved `i16` data file.
//!
//! Amplitudes are held in millivolts as `f64` after applying `(raw - baseline) / gain`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("malformed data row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("non-finite sample at row {row}, lead {lead}")]
    NonFinite { row: usize, lead: String },
    #[error("lead {lead} has {found} samples, expected {expected}")]
    LengthMismatch {
        lead: String,
        expected: usize,
        found: usize,
    },
    #[error("unknown lead {0:?}")]
    UnknownLead(String),
    #[error("window [{t_start} s, +{duration} s] is outside the record ({available} s)")]
    WindowOutOfRange {
        t_start: f64,
        duration: f64,
        available: f64,
    },
    #[error("{name} must be positive, got {value}")]
    NonPositiveScale { name: &'static str, value: f64 },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("amplitude {value} mV of lead {lead} does not fit the int16 range at gain {gain}")]
    Overflow { lead: String, value: f64, gain: f64 },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SignalError + '_ {
    move |source| SignalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpretation: Option<String>,
}

impl RecordMeta {
    fn is_empty(&self) -> bool {
        self.age.is_none() && self.sex.is_none() && self.interpretation.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lead {
    pub name: String,
    /// Amplitudes in millivolts.
    pub samples: Vec<f64>,
}

/// A multi-lead recording. All leads share one length and sampling rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub fs: f64,
    pub leads: Vec<Lead>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<RecordMeta>,
}

impl Record {
    pub fn new(
        id: impl Into<String>,
        fs: f64,
        leads: Vec<Lead>,
        meta: Option<RecordMeta>,
    ) -> Result<Self, SignalError> {
        let record = Record {
            id: id.into(),
            fs,
            leads,
            meta: meta.filter(|m| !m.is_empty()),
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(SignalError::NonPositiveScale {
                name: "fs",
                value: self.fs,
            });
        }
        let Some(first) = self.leads.first() else {
            return Err(SignalError::InvalidRecord("record has no leads".into()));
        };
        let expected = first.samples.len();
        for lead in &self.leads {
            if lead.samples.len() != expected {
                return Err(SignalError::LengthMismatch {
                    lead: lead.name.clone(),
                    expected,
                    found: lead.samples.len(),
                });
            }
            if let Some(row) = lead.samples.iter().position(|v| !v.is_finite()) {
                return Err(SignalError::NonFinite {
                    row,
                    lead: lead.name.clone(),
                });
            }
        }
        for (i, lead) in self.leads.iter().enumerate() {
            if self.leads[..i].iter().any(|l| l.name == lead.name) {
                return Err(SignalError::InvalidRecord(format!(
                    "duplicate lead name {:?}",
                    lead.name
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.leads.first().map_or(0, |l| l.samples.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    pub fn lead(&self, name: &str) -> Option<&Lead> {
        self.leads.iter().find(|l| l.name == name)
    }

    pub fn lead_names(&self) -> Vec<String> {
        self.leads.iter().map(|l| l.name.clone()).collect()
    }

    pub fn read_json(path: &Path) -> Result<Self, SignalError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let record: Record = serde_json::from_str(&text)
            .map_err(|e| SignalError::MalformedHeader(format!("{}: {e}", path.display())))?;
        record.validate()?;
        Ok(record)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), SignalError> {
        let text = serde_json::to_string(self).expect("record serialises");
        fs::write(path, text).map_err(io_err(path))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordFormat {
    /// `#`-preamble CSV with one column per lead.
    ColumnarCsv,
    /// Interleaved little-endian int16 samples described by a JSON header.
    BinaryInt16,
}

impl std::str::FromStr for RecordFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" | "columnar-csv" => Ok(RecordFormat::ColumnarCsv),
            "bin" | "binary" | "binary-int16" => Ok(RecordFormat::BinaryInt16),
            other => Err(format!("unknown record format {other:?}")),
        }
    }
}

/// Loads a record. For [`RecordFormat::BinaryInt16`] `path` is the JSON header.
pub fn load_record(path: &Path, format: RecordFormat) -> Result<Record, SignalError> {
    match format {
        RecordFormat::ColumnarCsv => load_csv(path),
        RecordFormat::BinaryInt16 => load_binary(path),
    }
}

/// ADC gain, either shared by all leads or given per lead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gain {
    Uniform(f64),
    PerLead(Vec<f64>),
}

impl Gain {
    fn resolve(&self, n_leads: usize) -> Result<Vec<f64>, SignalError> {
        let gains = match self {
            Gain::Uniform(g) => vec![*g; n_leads],
            Gain::PerLead(g) if g.len() == n_leads => g.clone(),
            Gain::PerLead(g) => {
                return Err(SignalError::MalformedHeader(format!(
                    "{} gains for {n_leads} leads",
                    g.len()
                )))
            }
        };
        if let Some(bad) = gains.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(SignalError::MalformedHeader(format!(
                "gain must be positive, got {bad}"
            )));
        }
        Ok(gains)
    }
}

/// JSON sidecar describing an int16 sample file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryHeader {
    pub id: String,
    pub fs: f64,
    pub leads: Vec<String>,
    /// ADC units per millivolt.
    pub gain: Gain,
    /// ADC value corresponding to 0 mV, per lead. Defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Vec<i32>>,
    /// Data file, resolved relative to the header's directory.
    pub data_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<RecordMeta>,
}

impl BinaryHeader {
    pub fn for_record(record: &Record, gain: Gain, data_file: impl Into<String>) -> Self {
        BinaryHeader {
            id: record.id.clone(),
            fs: record.fs,
            leads: record.lead_names(),
            gain,
            baseline: None,
            data_file: data_file.into(),
            n_samples: Some(record.len()),
            meta: record.meta.clone(),
        }
    }

    fn baselines(&self) -> Result<Vec<i32>, SignalError> {
        match &self.baseline {
            None => Ok(vec![0; self.leads.len()]),
            Some(b) if b.len() == self.leads.len() => Ok(b.clone()),
            Some(b) => Err(SignalError::MalformedHeader(format!(
                "{} baselines for {} leads",
                b.len(),
                self.leads.len()
            ))),
        }
    }
}

fn load_binary(header_path: &Path) -> Result<Record, SignalError> {
    let text = fs::read_to_string(header_path).map_err(io_err(header_path))?;
    let header: BinaryHeader = serde_json::from_str(&text)
        .map_err(|e| SignalError::MalformedHeader(e.to_string()))?;
    if header.leads.is_empty() {
        return Err(SignalError::MalformedHeader("no leads declared".into()));
    }
    if !(header.fs.is_finite() && header.fs > 0.0) {
        return Err(SignalError::MalformedHeader(format!(
            "fs must be positive, got {}",
            header.fs
        )));
    }
    let gains = header.gain.resolve(header.leads.len())?;
    let baselines = header.baselines()?;
    let data_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.data_file);
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    let frame = 2 * header.leads.len();
    if bytes.len() % frame != 0 {
        return Err(SignalError::LengthMismatch {
            lead: header.leads[bytes.len() / 2 % header.leads.len()].clone(),
            expected: bytes.len() / frame + 1,
            found: bytes.len() / frame,
        });
    }
    let n = bytes.len() / frame;
    if let Some(declared) = header.n_samples {
        if declared != n {
            return Err(SignalError::LengthMismatch {
                lead: header.leads[0].clone(),
                expected: declared,
                found: n,
            });
        }
    }
    let mut leads: Vec<Lead> = header
        .leads
        .iter()
        .map(|name| Lead {
            name: name.clone(),
            samples: Vec::with_capacity(n),
        })
        .collect();
    for (i, pair) in bytes.chunks_exact(2).enumerate() {
        let raw = i16::from_le_bytes([pair[0], pair[1]]);
        let l = i % header.leads.len();
        leads[l]
            .samples
            .push((f64::from(raw) - f64::from(baselines[l])) / gains[l]);
    }
    Record::new(header.id, header.fs, leads, header.meta)
}

/// Writes `record` as int16 samples next to `header_path` using the header's gain.
///
/// Values are rounded to the nearest ADC unit, so a record loaded from the same
/// header is written back bit-exactly.
pub fn write_binary(
    record: &Record,
    header: &BinaryHeader,
    header_path: &Path,
) -> Result<(), SignalError> {
    record.validate()?;
    if header.leads != record.lead_names() {
        return Err(SignalError::MalformedHeader(
            "header leads do not match the record".into(),
        ));
    }
    let gains = header.gain.resolve(record.leads.len())?;
    let baselines = header.baselines()?;
    let mut bytes = Vec::with_capacity(record.len() * record.leads.len() * 2);
    for i in 0..record.len() {
        for (l, lead) in record.leads.iter().enumerate() {
            let v = lead.samples[i];
            let raw = (v * gains[l] + f64::from(baselines[l])).round();
            if raw < f64::from(i16::MIN) || raw > f64::from(i16::MAX) {
                return Err(SignalError::Overflow {
                    lead: lead.name.clone(),
                    value: v,
                    gain: gains[l],
                });
            }
            bytes.extend_from_slice(&(raw as i16).to_le_bytes());
        }
    }
    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    let data_path = dir.join(&header.data_file);
    fs::write(&data_path, bytes).map_err(io_err(&data_path))?;
    let mut header = header.clone();
    header.n_samples = Some(record.len());
    let text = serde_json::to_string_pretty(&header).expect("header serialises");
    fs::write(header_path, text).map_err(io_err(header_path))
}

fn load_csv(path: &Path) -> Result<Record, SignalError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_csv(&text)
}

/// Parses the columnar CSV format from memory.
pub fn parse_csv(text: &str) -> Result<Record, SignalError> {
    let mut id = None;
    let mut fs_hz = None;
    let mut gain = 1.0;
    let mut meta = RecordMeta::default();
    for line in text.lines().map(str::trim).filter(|l| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim();
        let Some((key, value)) = body.split_once(':') else {
            continue;
        };
        let value = value.trim();
        match key.trim() {
            "id" => id = Some(value.to_string()),
            "fs" => {
                fs_hz = Some(value.parse::<f64>().map_err(|_| {
                    SignalError::MalformedHeader(format!("fs is not a number: {value:?}"))
                })?)
            }
            "gain" => {
                gain = value.parse::<f64>().map_err(|_| {
                    SignalError::MalformedHeader(format!("gain is not a number: {value:?}"))
                })?
            }
            "age" => meta.age = value.parse().ok(),
            "sex" => meta.sex = Some(value.to_string()),
            "interpretation" => meta.interpretation = Some(value.to_string()),
            _ => {}
        }
    }
    let fs_hz = fs_hz.ok_or_else(|| SignalError::MalformedHeader("missing fs".into()))?;
    if !(fs_hz.is_finite() && fs_hz > 0.0) {
        return Err(SignalError::MalformedHeader(format!(
            "fs must be positive, got {fs_hz}"
        )));
    }
    if !(gain.is_finite() && gain > 0.0) {
        return Err(SignalError::MalformedHeader(format!(
            "gain must be positive, got {gain}"
        )));
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| SignalError::MalformedHeader(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(SignalError::MalformedHeader("missing lead names".into()));
    }
    let mut leads: Vec<Lead> = names
        .iter()
        .map(|name| Lead {
            name: name.clone(),
            samples: Vec::new(),
        })
        .collect();
    for (row, result) in reader.records().enumerate() {
        let fields = result.map_err(|e| SignalError::MalformedRow {
            row,
            message: e.to_string(),
        })?;
        if fields.len() != names.len() {
            return Err(SignalError::LengthMismatch {
                lead: names[fields.len().min(names.len() - 1)].clone(),
                expected: names.len(),
                found: fields.len(),
            });
        }
        for (lead, field) in leads.iter_mut().zip(fields.iter()) {
            let v: f64 = field.parse().map_err(|_| SignalError::MalformedRow {
                row,
                message: format!("{field:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(SignalError::NonFinite {
                    row,
                    lead: lead.name.clone(),
                });
            }
            lead.samples.push(v / gain);
        }
    }
    Record::new(id.unwrap_or_else(|| "record".into()), fs_hz, leads, Some(meta))
}

/// Writes the columnar CSV format with unit gain.
pub fn write_csv<W: Write>(record: &Record, out: W) -> Result<(), SignalError> {
    let mut out = io::BufWriter::new(out);
    let map = |e: io::Error| SignalError::Io {
        path: PathBuf::from("<csv>"),
        source: e,
    };
    writeln!(out, "# id: {}", record.id).map_err(map)?;
    writeln!(out, "# fs: {}", record.fs).map_err(map)?;
    let mut writer = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| SignalError::MalformedRow {
        row: 0,
        message: e.to_string(),
    };
    writer.write_record(record.lead_names()).map_err(csv_err)?;
    for i in 0..record.len() {
        writer
            .write_record(record.leads.iter().map(|l| l.samples[i].to_string()))
            .map_err(csv_err)?;
    }
    writer.flush().map_err(map)
}

/// One lead of a record over a time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strip {
    pub record_id: String,
    pub lead: String,
    /// Window start in seconds from the beginning of the record.
    pub t_start: f64,
    pub duration: f64,
    pub fs: f64,
    pub samples: Vec<f64>,
}

pub fn extract_strip(
    record: &Record,
    lead: &str,
    t_start: f64,
    duration: f64,
) -> Result<Strip, SignalError> {
    let source = record
        .lead(lead)
        .ok_or_else(|| SignalError::UnknownLead(lead.to_string()))?;
    let out_of_range = || SignalError::WindowOutOfRange {
        t_start,
        duration,
        available: record.duration(),
    };
    if !(t_start.is_finite() && duration.is_finite()) || t_start < 0.0 || duration <= 0.0 {
        return Err(out_of_range());
    }
    let start = (t_start * record.fs).round() as usize;
    let count = (duration * record.fs).round() as usize;
    if count == 0 || start + count > source.samples.len() {
        return Err(out_of_range());
    }
    Ok(Strip {
        record_id: record.id.clone(),
        lead: lead.to_string(),
        t_start,
        duration,
        fs: record.fs,
        samples: source.samples[start..start + count].to_vec(),
    })
}

/// Grid line positions in millimetres from the strip origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub major_mm: f64,
    pub minor_mm: f64,
    /// x positions of major vertical lines, inclusive of both strip edges.
    pub vertical_major: Vec<f64>,
    pub vertical_minor: Vec<f64>,
    /// y positions (upwards, 0 mm = 0 mV) of major horizontal lines.
    pub horizontal_major: Vec<f64>,
    pub horizontal_minor: Vec<f64>,
}

/// Millimetre geometry for drawing a strip on a standard ECG grid.
///
/// The mapping is affine: sample `i` with amplitude `v` lands at
/// `(i * mm_per_s / fs, v * mm_per_mv)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub mm_per_mv: f64,
    pub mm_per_s: f64,
    pub fs: f64,
    pub n_samples: usize,
    pub mm_per_sample: f64,
    pub width_mm: f64,
    pub y_min_mm: f64,
    pub y_max_mm: f64,
    pub grid: Grid,
}

pub const DEFAULT_MM_PER_MV: f64 = 10.0;
pub const DEFAULT_MM_PER_S: f64 = 25.0;
const MAJOR_MM: f64 = 5.0;
const MINOR_MM: f64 = 1.0;

impl RenderSpec {
    pub fn x_mm(&self, sample: f64) -> f64 {
        sample * self.mm_per_s / self.fs
    }

    pub fn y_mm(&self, mv: f64) -> f64 {
        mv * self.mm_per_mv
    }

    /// Inverse of [`RenderSpec::x_mm`]; fractional sample index.
    pub fn sample_at(&self, x_mm: f64) -> f64 {
        x_mm * self.fs / self.mm_per_s
    }

    pub fn mv_at(&self, y_mm: f64) -> f64 {
        y_mm / self.mm_per_mv
    }
}

fn lines(from: f64, to: f64, step: f64) -> Vec<f64> {
    let first = (from / step - 1e-9).ceil() as i64;
    let last = (to / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

pub fn render_params(strip: &Strip, mm_per_mv: f64, mm_per_s: f64) -> Result<RenderSpec, SignalError> {
    for (name, value) in [("mm_per_mv", mm_per_mv), ("mm_per_s", mm_per_s), ("fs", strip.fs)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(SignalError::NonPositiveScale { name, value });
        }
    }
    let n = strip.samples.len();
    let width_mm = n as f64 * mm_per_s / strip.fs;
    let (lo, hi) = strip
        .samples
        .iter()
        .fold((0.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let y_min_mm = ((lo * mm_per_mv / MAJOR_MM).floor() * MAJOR_MM).min(-MAJOR_MM);
    let y_max_mm = ((hi * mm_per_mv / MAJOR_MM).ceil() * MAJOR_MM).max(MAJOR_MM);
    Ok(RenderSpec {
        mm_per_mv,
        mm_per_s,
        fs: strip.fs,
        n_samples: n,
        mm_per_sample: mm_per_s / strip.fs,
        width_mm,
        y_min_mm,
        y_max_mm,
        grid: Grid {
            major_mm: MAJOR_MM,
            minor_mm: MINOR_MM,
            vertical_major: lines(0.0, width_mm, MAJOR_MM),
            vertical_minor: lines(0.0, width_mm, MINOR_MM),
            horizontal_major: lines(y_min_mm, y_max_mm, MAJOR_MM),
            horizontal_minor: lines(y_min_mm, y_max_mm, MINOR_MM),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(n: usize, fs: f64) -> Record {
        let leads = ["I", "II", "V1"]
            .iter()
            .enumerate()
            .map(|(k, name)| Lead {
                name: name.to_string(),
                samples: (0..n).map(|i| ((i + k) as f64 * 0.01).sin()).collect(),
            })
            .collect();
        Record::new("rec", fs, leads, None).unwrap()
    }

    #[test]
    fn csv_three_leads_ten_seconds() {
        let mut text = String::from("# id: r1\n# fs: 360\nI,II,V1\n");
        for i in 0..3600 {
            text.push_str(&format!("{},{},{}\n", i, -(i as i64), 0));
        }
        let rec = parse_csv(&text).unwrap();
        assert_eq!(rec.leads.len(), 3);
        assert_eq!(rec.len(), 3600);
        assert_eq!(rec.duration(), 10.0);
        assert_eq!(rec.id, "r1");
    }

    #[test]
    fn csv_gain_converts_to_millivolts() {
        let rec = parse_csv("# fs: 100\n# gain: 200\nI\n400\n-100\n").unwrap();
        assert_eq!(rec.leads[0].samples, vec![2.0, -0.5]);
    }

    #[test]
    fn csv_nan_row_is_named() {
        let err = parse_csv("# fs: 100\nI,II\n1,2\n3,4\nNaN,5\n6,7\n").unwrap_err();
        match err {
            SignalError::NonFinite { row, lead } => {
                assert_eq!(row, 2);
                assert_eq!(lead, "I");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_header_errors() {
        assert!(matches!(
            parse_csv("I\n1\n"),
            Err(SignalError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_csv("# fs: abc\nI\n1\n"),
            Err(SignalError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_csv("# fs: 100\nI,II\n1,2\n3\n"),
            Err(SignalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn binary_gain_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let raw: Vec<i16> = vec![400, -200, 0, 32767, -32768, 1];
        let bytes: Vec<u8> = raw.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.path().join("r.dat"), &bytes).unwrap();
        let header = r#"{"id":"r","fs":360,"leads":["I","II"],"gain":200,"data_file":"r.dat"}"#;
        let hpath = dir.path().join("r.json");
        fs::write(&hpath, header).unwrap();

        let rec = load_record(&hpath, RecordFormat::BinaryInt16).unwrap();
        assert_eq!(rec.leads[0].samples[0], 2.0);
        assert_eq!(rec.leads[1].samples[0], -1.0);
        assert_eq!(rec.len(), 3);

        let out = dir.path().join("out.json");
        let h = BinaryHeader::for_record(&rec, Gain::Uniform(200.0), "out.dat");
        write_binary(&rec, &h, &out).unwrap();
        assert_eq!(fs::read(dir.path().join("out.dat")).unwrap(), bytes);
        let again = load_record(&out, RecordFormat::BinaryInt16).unwrap();
        for (a, b) in rec.leads.iter().zip(&again.leads) {
            let a: Vec<u64> = a.samples.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = b.samples.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn binary_truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("r.dat"), [0u8; 6]).unwrap();
        let hpath = dir.path().join("r.json");
        fs::write(
            &hpath,
            r#"{"id":"r","fs":360,"leads":["I","II"],"gain":[1,1],"data_file":"r.dat"}"#,
        )
        .unwrap();
        assert!(matches!(
            load_record(&hpath, RecordFormat::BinaryInt16),
            Err(SignalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn strip_windows() {
        let rec = record(3600, 360.0);
        let full = extract_strip(&rec, "II", 0.0, rec.duration()).unwrap();
        assert_eq!(full.samples, rec.lead("II").unwrap().samples);
        let s = extract_strip(&rec, "I", 1.0, 2.0).unwrap();
        assert_eq!(s.samples.len(), 720);
        assert_eq!(s.samples[0], rec.leads[0].samples[360]);
        assert!(matches!(
            extract_strip(&rec, "I", 9.0, 2.0),
            Err(SignalError::WindowOutOfRange { .. })
        ));
        assert!(matches!(
            extract_strip(&rec, "aVF", 0.0, 1.0),
            Err(SignalError::UnknownLead(_))
        ));
    }

    #[test]
    fn render_geometry() {
        let rec = record(720, 360.0);
        let strip = extract_strip(&rec, "I", 0.0, 2.0).unwrap();
        let spec = render_params(&strip, 10.0, 25.0).unwrap();
        assert!((spec.mm_per_sample - 0.069_444_444_444_444_44).abs() < 1e-15);
        assert_eq!(spec.width_mm, 50.0);
        assert_eq!(spec.grid.vertical_major.len(), 11);
        assert_eq!(spec.grid.vertical_minor.len(), 51);
        assert_eq!(spec.y_mm(1.5), 15.0);
        for i in 0..strip.samples.len() {
            let x = spec.x_mm(i as f64);
            assert!((x - i as f64 * 25.0 / 360.0).abs() < 1e-12);
            assert!((spec.sample_at(x) - i as f64).abs() < 1e-9);
        }
        assert!(matches!(
            render_params(&strip, 0.0, 25.0),
            Err(SignalError::NonPositiveScale { .. })
        ));
        assert!(render_params(&strip, 10.0, -1.0).is_err());
    }
}
