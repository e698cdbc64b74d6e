use super::DataError;
use crate::features::parse_timestamp;
use crate::sphere::{GeoPoint, SphereError};
use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::Value;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const RECORD_COLUMNS: [&str; 7] = [
    "image_id",
    "user_id",
    "lat",
    "lon",
    "posted_time",
    "outdoor",
    "prob_row",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub user_id: String,
    pub location: GeoPoint,
    pub posted_time: DateTime<Utc>,
    pub outdoor: Option<bool>,
    pub prob_row: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Delimited,
    LineJson,
}

impl RecordFormat {
    /// Guesses from the file extension: `.jsonl`/`.json`/`.ndjson` are line-JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json" | "ndjson") => RecordFormat::LineJson,
            _ => RecordFormat::Delimited,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub records: Vec<ImageRecord>,
    pub rejected: Vec<Rejection>,
}

/// Raw string fields of one row, before validation.
#[derive(Default)]
struct RawRow {
    image_id: Option<String>,
    user_id: Option<String>,
    lat: Option<String>,
    lon: Option<String>,
    posted_time: Option<String>,
    outdoor: Option<String>,
    prob_row: Option<String>,
}

fn coordinate_reason(e: SphereError) -> String {
    match e {
        SphereError::LatitudeOutOfRange(_) => "latitude out of range".into(),
        SphereError::LongitudeOutOfRange(_) => "longitude out of range".into(),
        other => other.to_string(),
    }
}

fn validate(raw: RawRow) -> Result<ImageRecord, String> {
    let need = |v: Option<String>, name: &str| -> Result<String, String> {
        match v {
            Some(s) if !s.trim().is_empty() => Ok(s.trim().to_string()),
            _ => Err(format!("missing {name}")),
        }
    };
    let image_id = need(raw.image_id, "image_id")?;
    let user_id = need(raw.user_id, "user_id")?;
    let lat: f64 = need(raw.lat, "lat")?
        .parse()
        .map_err(|_| "latitude is not a number".to_string())?;
    let lon: f64 = need(raw.lon, "lon")?
        .parse()
        .map_err(|_| "longitude is not a number".to_string())?;
    let location = GeoPoint::new(lat, lon).map_err(coordinate_reason)?;
    let time_text = need(raw.posted_time, "posted_time")?;
    let posted_time =
        parse_timestamp(&time_text).map_err(|_| format!("bad timestamp `{time_text}`"))?;
    let outdoor = match raw.outdoor.as_deref().map(str::trim) {
        None | Some("") => None,
        Some("1" | "true") => Some(true),
        Some("0" | "false") => Some(false),
        Some(other) => return Err(format!("bad outdoor flag `{other}`")),
    };
    let prob_row = match raw.prob_row.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(s) => Some(s.parse().map_err(|_| format!("bad prob_row `{s}`"))?),
    };
    Ok(ImageRecord {
        image_id,
        user_id,
        location,
        posted_time,
        outdoor,
        prob_row,
    })
}

fn json_field(obj: &serde_json::Map<String, Value>, name: &str) -> Option<String> {
    match obj.get(name)? {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        other => Some(other.to_string()),
    }
}

fn finish(rows: Vec<(u64, Result<RawRow, String>)>) -> Result<IngestReport, DataError> {
    let total = rows.len();
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    for (line, row) in rows {
        match row.and_then(validate) {
            Ok(record) => {
                if seen.insert(record.image_id.clone()) {
                    report.records.push(record);
                } else {
                    report.rejected.push(Rejection {
                        line,
                        reason: format!("duplicate image_id `{}`", record.image_id),
                    });
                }
            }
            Err(reason) => report.rejected.push(Rejection { line, reason }),
        }
    }
    if total > 0 && report.rejected.len() * 2 > total {
        return Err(DataError::FormatMismatch {
            rejected: report.rejected.len(),
            total,
        });
    }
    Ok(report)
}

fn parse_delimited<R: Read>(reader: R) -> Result<IngestReport, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let idx: Vec<Option<usize>> = RECORD_COLUMNS.iter().map(|c| column(c)).collect();
    for required in 0..5 {
        if idx[required].is_none() {
            return Err(DataError::MissingColumn(RECORD_COLUMNS[required].to_string()));
        }
    }
    let mut rows = Vec::new();
    for result in rdr.records() {
        let record = result?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |i: usize| idx[i].and_then(|c| record.get(c)).map(str::to_string);
        rows.push((
            line,
            Ok(RawRow {
                image_id: get(0),
                user_id: get(1),
                lat: get(2),
                lon: get(3),
                posted_time: get(4),
                outdoor: get(5),
                prob_row: get(6),
            }),
        ));
    }
    finish(rows)
}

fn parse_line_json<R: Read>(reader: R) -> Result<IngestReport, DataError> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(obj)) => Ok(RawRow {
                image_id: json_field(&obj, "image_id"),
                user_id: json_field(&obj, "user_id"),
                lat: json_field(&obj, "lat"),
                lon: json_field(&obj, "lon"),
                posted_time: json_field(&obj, "posted_time"),
                outdoor: json_field(&obj, "outdoor"),
                prob_row: json_field(&obj, "prob_row"),
            }),
            Ok(_) => Err("line is not a JSON object".to_string()),
            Err(e) => Err(format!("invalid JSON: {e}")),
        };
        rows.push((i as u64 + 1, row));
    }
    finish(rows)
}

pub fn parse_records<R: Read>(reader: R, format: RecordFormat) -> Result<IngestReport, DataError> {
    match format {
        RecordFormat::Delimited => parse_delimited(reader),
        RecordFormat::LineJson => parse_line_json(reader),
    }
}

/// Reads and validates a records file; invalid rows are reported, never dropped silently.
pub fn ingest_records(path: &Path, format: RecordFormat) -> Result<IngestReport, DataError> {
    let file = File::open(path).map_err(|e| DataError::Unreadable {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_records(file, format)
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Writes records in canonical column order with ISO-8601 UTC timestamps.
pub fn write_records<W: Write>(
    writer: W,
    records: &[ImageRecord],
    format: RecordFormat,
) -> Result<(), DataError> {
    match format {
        RecordFormat::Delimited => {
            let mut w = csv::Writer::from_writer(writer);
            w.write_record(RECORD_COLUMNS)?;
            for r in records {
                w.write_record([
                    r.image_id.clone(),
                    r.user_id.clone(),
                    r.location.lat_deg().to_string(),
                    r.location.lon_deg().to_string(),
                    format_timestamp(&r.posted_time),
                    r.outdoor.map_or(String::new(), |o| u8::from(o).to_string()),
                    r.prob_row.map_or(String::new(), |p| p.to_string()),
                ])?;
            }
            w.flush()?;
        }
        RecordFormat::LineJson => {
            let mut w = BufWriter::new(writer);
            for r in records {
                let value = serde_json::json!({
                    "image_id": r.image_id,
                    "user_id": r.user_id,
                    "lat": r.location.lat_deg(),
                    "lon": r.location.lon_deg(),
                    "posted_time": format_timestamp(&r.posted_time),
                    "outdoor": r.outdoor.map(u8::from),
                    "prob_row": r.prob_row,
                });
                writeln!(w, "{value}")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn save_records(path: &Path, records: &[ImageRecord], format: RecordFormat) -> Result<(), DataError> {
    write_records(File::create(path)?, records, format)
}
