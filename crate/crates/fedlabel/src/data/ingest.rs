//! Accelerometer CSV ingestion with a configurable column mapping.
//!
//! Rows are grouped into recordings by contiguous label runs. Malformed
//! rows are skipped and counted. The sampling rate comes from an optional
//! rate column or is inferred from timestamps.

use std::collections::HashMap;
use std::path::Path;

use crate::data::labels::ActivityLabel;
use crate::data::recording::RawRecording;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeUnit {
    Seconds,
    Millis,
    Micros,
    Nanos,
}

impl TimeUnit {
    pub fn to_seconds_factor(self) -> f64 {
        match self {
            TimeUnit::Seconds => 1.0,
            TimeUnit::Millis => 1e-3,
            TimeUnit::Micros => 1e-6,
            TimeUnit::Nanos => 1e-9,
        }
    }

    pub fn parse(s: &str) -> Result<TimeUnit> {
        match s {
            "s" => Ok(TimeUnit::Seconds),
            "ms" => Ok(TimeUnit::Millis),
            "us" => Ok(TimeUnit::Micros),
            "ns" => Ok(TimeUnit::Nanos),
            other => Err(Error::Schema(format!("unknown timestamp unit `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub timestamp: String,
    pub x: String,
    pub y: String,
    pub z: String,
    pub label: String,
    /// Optional per-row sampling-rate column (Hz). When absent the rate is
    /// inferred from timestamps and rounded to the nearest Hz.
    pub rate: Option<String>,
    pub delimiter: u8,
    pub timestamp_unit: TimeUnit,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            timestamp: "timestamp".into(),
            x: "x".into(),
            y: "y".into(),
            z: "z".into(),
            label: "label".into(),
            rate: None,
            delimiter: b',',
            timestamp_unit: TimeUnit::Seconds,
        }
    }
}

#[derive(Debug)]
pub struct IngestReport {
    pub recordings: Vec<RawRecording>,
    pub malformed_rows: usize,
}

struct ParsedRow {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    label: String,
    rate: Option<f64>,
}

pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .flexible(true)
        .from_path(path)?;

    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Schema("file has no header row".into()));
    }
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };
    let ti = col(&schema.timestamp)?;
    let xi = col(&schema.x)?;
    let yi = col(&schema.y)?;
    let zi = col(&schema.z)?;
    let li = col(&schema.label)?;
    let ri = schema.rate.as_deref().map(col).transpose()?;

    let mut rows: Vec<ParsedRow> = Vec::new();
    let mut malformed = 0usize;
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                malformed += 1;
                continue;
            }
        };
        let parse = |i: usize| -> Option<f64> { record.get(i)?.trim().parse::<f64>().ok() };
        let label = record.get(li).map(|s| s.trim().to_string());
        match (parse(ti), parse(xi), parse(yi), parse(zi), label) {
            (Some(t), Some(x), Some(y), Some(z), Some(label)) if !label.is_empty() => {
                let rate = ri.and_then(parse);
                if ri.is_some() && rate.is_none() {
                    malformed += 1;
                    continue;
                }
                rows.push(ParsedRow {
                    t: t * schema.timestamp_unit.to_seconds_factor(),
                    x,
                    y,
                    z,
                    label,
                    rate,
                });
            }
            _ => malformed += 1,
        }
    }

    // Label ids by first appearance; experiments remap by name.
    let mut label_ids: HashMap<String, u32> = HashMap::new();
    let mut recordings = Vec::new();
    let mut run: Vec<&ParsedRow> = Vec::new();

    let flush = |run: &mut Vec<&ParsedRow>,
                     label_ids: &mut HashMap<String, u32>,
                     recordings: &mut Vec<RawRecording>| {
        if run.is_empty() {
            return;
        }
        let rate = match run[0].rate {
            Some(r) if r > 0.0 => r,
            Some(_) | None if run.len() >= 2 => {
                let span = run[run.len() - 1].t - run[0].t;
                if span > 0.0 {
                    ((run.len() - 1) as f64 / span).round()
                } else {
                    0.0
                }
            }
            _ => 0.0,
        };
        if rate <= 0.0 {
            // Too short to infer a rate; useless for 2 s windows anyway.
            log::debug!("dropping {}-sample run without a usable rate", run.len());
            run.clear();
            return;
        }
        let next_id = label_ids.len() as u32;
        let id = *label_ids.entry(run[0].label.clone()).or_insert(next_id);
        let label = ActivityLabel::new(id, run[0].label.clone());
        let rec = RawRecording::new(
            run.iter().map(|r| r.t).collect(),
            [
                run.iter().map(|r| r.x).collect(),
                run.iter().map(|r| r.y).collect(),
                run.iter().map(|r| r.z).collect(),
            ],
            rate,
            label,
        )
        .expect("consistent run");
        recordings.push(rec);
        run.clear();
    };

    for row in &rows {
        if let Some(last) = run.last() {
            if last.label != row.label {
                flush(&mut run, &mut label_ids, &mut recordings);
            }
        }
        run.push(row);
    }
    flush(&mut run, &mut label_ids, &mut recordings);

    Ok(IngestReport { recordings, malformed_rows: malformed })
}
