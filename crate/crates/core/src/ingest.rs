//! Sensor data and label ingestion.
//!
//! Data files are CSV with a header `time,<id1>,<id2>,...`. The time column
//! holds either integer steps or RFC-3339 timestamps; every other cell is a
//! decimal value, or empty for a missing sample. Sampling must be uniform:
//! a skipped step is reported as a gap, never resampled.
//!
//! Label files are headerless CSV, one sensor per line: `id,tag1,tag2,...`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use chrono::{DateTime, Duration, FixedOffset};

use crate::error::{Error, Result};

/// Marker stored in a sample slot when the value is missing.
pub const MISSING: f64 = f64::NAN;

/// Nominal seconds per step for datasets indexed by integer steps.
pub const DEFAULT_INTERVAL_SECS: i64 = 60;

#[inline]
pub fn is_missing(value: f64) -> bool {
    value.is_nan()
}

#[derive(Debug, Clone, PartialEq)]
pub enum TimeAxis {
    /// Integer step indices `start, start + stride, ...`.
    Steps { start: i64, stride: i64 },
    /// Wall-clock timestamps `start, start + interval, ...`.
    Clock {
        start: DateTime<FixedOffset>,
        interval_secs: i64,
    },
}

impl TimeAxis {
    pub fn interval_secs(&self) -> i64 {
        match self {
            TimeAxis::Steps { stride, .. } => stride * DEFAULT_INTERVAL_SECS,
            TimeAxis::Clock { interval_secs, .. } => *interval_secs,
        }
    }

    /// Time label of row `t`, formatted as it appears in a data CSV.
    pub fn label(&self, t: usize) -> String {
        match self {
            TimeAxis::Steps { start, stride } => (start + stride * t as i64).to_string(),
            TimeAxis::Clock {
                start,
                interval_secs,
            } => (*start + Duration::seconds(interval_secs * t as i64)).to_rfc3339(),
        }
    }
}

impl Default for TimeAxis {
    fn default() -> Self {
        TimeAxis::Steps {
            start: 0,
            stride: 1,
        }
    }
}

/// Time-aligned samples for a set of uniquely named sensors.
///
/// Immutable after construction. Every sensor has the same number of
/// samples; a sample is either finite or [`MISSING`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sensors: Vec<String>,
    samples: Vec<Vec<f64>>,
    time: TimeAxis,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(sensors: Vec<String>, samples: Vec<Vec<f64>>, time: TimeAxis) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::InsufficientData("dataset has no sensors".into()));
        }
        if sensors.len() != samples.len() {
            return Err(Error::InvalidParameter(format!(
                "{} sensor ids for {} sample series",
                sensors.len(),
                samples.len()
            )));
        }
        let mut index = HashMap::with_capacity(sensors.len());
        for (i, id) in sensors.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "sensor {i} has an empty id"
                )));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateSensor(id.clone()));
            }
        }
        let len = samples[0].len();
        for (id, series) in sensors.iter().zip(&samples) {
            if series.len() != len {
                return Err(Error::InvalidParameter(format!(
                    "sensor `{id}` has {} samples, expected {len}",
                    series.len()
                )));
            }
            if series.iter().any(|v| v.is_infinite()) {
                return Err(Error::InvalidParameter(format!(
                    "sensor `{id}` has an infinite sample"
                )));
            }
        }
        Ok(Self {
            sensors,
            samples,
            time,
            index,
        })
    }

    /// Dataset indexed by integer steps starting at 0.
    pub fn from_series(sensors: Vec<String>, samples: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(sensors, samples, TimeAxis::default())
    }

    pub fn sensors(&self) -> &[String] {
        &self.sensors
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    /// Number of time steps `T`.
    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn series(&self, sensor: usize) -> &[f64] {
        &self.samples[sensor]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn time_axis(&self) -> &TimeAxis {
        &self.time
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = Vec::with_capacity(self.sensors.len() + 1);
        header.push("time".to_string());
        header.extend(self.sensors.iter().cloned());
        writer.write_record(&header).map_err(csv_io)?;
        let mut row = Vec::with_capacity(header.len());
        for t in 0..self.len() {
            row.clear();
            row.push(self.time.label(t));
            for series in &self.samples {
                let v = series[t];
                row.push(if is_missing(v) {
                    String::new()
                } else {
                    v.to_string()
                });
            }
            writer.write_record(&row).map_err(csv_io)?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn csv_io(err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Parse {
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

fn csv_read_err(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        csv::ErrorKind::Utf8 { err, .. } => Error::Parse {
            line,
            message: err.to_string(),
        },
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Column configuration for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub delimiter: u8,
    /// Expected spacing between rows: steps for integer time, seconds for
    /// timestamps. Inferred from the first two rows when `None`.
    pub interval: Option<i64>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            delimiter: b',',
            interval: None,
        }
    }
}

enum TimeValue {
    Step(i64),
    Clock(DateTime<FixedOffset>),
}

impl TimeValue {
    fn parse(cell: &str, line: u64) -> Result<Self> {
        let cell = cell.trim();
        if let Ok(step) = cell.parse::<i64>() {
            return Ok(TimeValue::Step(step));
        }
        DateTime::parse_from_rfc3339(cell)
            .map(TimeValue::Clock)
            .map_err(|_| Error::Parse {
                line,
                message: format!("unparseable time `{cell}`"),
            })
    }

    /// Offset from `origin` in axis units (steps or seconds).
    fn offset_from(&self, origin: &TimeValue, line: u64) -> Result<i64> {
        match (self, origin) {
            (TimeValue::Step(a), TimeValue::Step(b)) => Ok(a - b),
            (TimeValue::Clock(a), TimeValue::Clock(b)) => Ok((*a - *b).num_seconds()),
            _ => Err(Error::Parse {
                line,
                message: "time column mixes integer steps and timestamps".into(),
            }),
        }
    }
}

fn describe_time(origin: &TimeValue, offset: i64) -> String {
    match origin {
        TimeValue::Step(s) => format!("step {}", s + offset),
        TimeValue::Clock(c) => format!("time {}", (*c + Duration::seconds(offset)).to_rfc3339()),
    }
}

/// Parse a data CSV into a [`Dataset`].
pub fn load_csv<R: Read>(source: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let header = reader.headers().map_err(csv_read_err)?.clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "header needs a time column and at least one sensor column".into(),
        });
    }
    let sensors: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut seen = HashSet::with_capacity(sensors.len());
    for id in &sensors {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateSensor(id.clone()));
        }
    }

    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); sensors.len()];
    let mut origin: Option<TimeValue> = None;
    let mut interval = schema.interval;
    let mut previous = 0i64;
    let mut rows = 0usize;

    for record in reader.records() {
        let record = record.map_err(csv_read_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(Error::RaggedRow {
                line,
                found: record.len(),
                expected: header.len(),
            });
        }
        let time = TimeValue::parse(&record[0], line)?;
        match &origin {
            None => origin = Some(time),
            Some(first) => {
                let offset = time.offset_from(first, line)?;
                let step = offset - previous;
                if step <= 0 {
                    return Err(Error::NonMonotone {
                        line,
                        time: record[0].to_string(),
                    });
                }
                let expected = *interval.get_or_insert(step);
                if step != expected {
                    if step > expected && step % expected == 0 {
                        return Err(Error::Gap {
                            line,
                            missing: describe_time(first, previous + expected),
                        });
                    }
                    return Err(Error::NonUniform {
                        line,
                        found: step,
                        expected,
                    });
                }
                previous = offset;
            }
        }
        for (series, cell) in samples.iter_mut().zip(record.iter().skip(1)) {
            let value = if cell.is_empty() {
                MISSING
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("invalid number `{cell}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: format!("non-finite value `{cell}`"),
                    });
                }
                v
            };
            series.push(value);
        }
        rows += 1;
    }

    let Some(origin) = origin else {
        return Err(Error::InsufficientData("data file has no rows".into()));
    };
    debug_assert!(rows > 0);
    let time = match origin {
        TimeValue::Step(start) => TimeAxis::Steps {
            start,
            stride: interval.unwrap_or(1),
        },
        TimeValue::Clock(start) => TimeAxis::Clock {
            start,
            interval_secs: interval.unwrap_or(DEFAULT_INTERVAL_SECS),
        },
    };
    Dataset::new(sensors, samples, time)
}

/// Sensor id → tag tokens.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelRegistry {
    tags: BTreeMap<String, Vec<String>>,
}

impl LabelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, tags: Vec<String>) -> Result<()> {
        let id = id.into();
        let tags: Vec<String> = tags
            .into_iter()
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect();
        if tags.is_empty() {
            return Err(Error::EmptyTags(id));
        }
        if self.tags.contains_key(&id) {
            return Err(Error::DuplicateSensor(id));
        }
        self.tags.insert(id, tags);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[String]> {
        self.tags.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.tags.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Registry ids that do not name a sensor of `dataset`.
    pub fn unknown_ids<'a>(&'a self, dataset: &Dataset) -> Vec<&'a str> {
        self.tags
            .keys()
            .filter(|id| dataset.position(id).is_none())
            .map(String::as_str)
            .collect()
    }

    /// Dataset sensors with no registry entry.
    pub fn untagged<'a>(&self, dataset: &'a Dataset) -> Vec<&'a str> {
        dataset
            .sensors()
            .iter()
            .filter(|id| !self.tags.contains_key(id.as_str()))
            .map(String::as_str)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::WriterBuilder::new().flexible(true).from_writer(out);
        for (id, tags) in &self.tags {
            let mut row = Vec::with_capacity(tags.len() + 1);
            row.push(id.as_str());
            row.extend(tags.iter().map(String::as_str));
            writer.write_record(&row).map_err(csv_io)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Parse a labels CSV (`id,tag1,tag2,...` per line, no header).
pub fn load_labels<R: Read>(source: R) -> Result<LabelRegistry> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut registry = LabelRegistry::new();
    for record in reader.records() {
        let record = record.map_err(csv_read_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let Some(id) = record.get(0).filter(|id| !id.is_empty()) else {
            return Err(Error::Parse {
                line,
                message: "label record without a sensor id".into(),
            });
        };
        let tags = record.iter().skip(1).map(str::to_string).collect();
        registry.insert(id, tags)?;
    }
    Ok(registry)
}

/// The last `span` samples ending at `t_end`, for every sensor.
#[derive(Debug, Clone)]
pub struct Window<'a> {
    rows: Vec<&'a [f64]>,
    start: usize,
}

impl<'a> Window<'a> {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn span(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    /// First step covered by the window.
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn row(&self, sensor: usize) -> &'a [f64] {
        self.rows[sensor]
    }

    pub fn rows(&self) -> &[&'a [f64]] {
        &self.rows
    }
}

pub fn window(dataset: &Dataset, t_end: usize, span: usize) -> Result<Window<'_>> {
    if span == 0 || span > t_end + 1 || t_end >= dataset.len() {
        return Err(Error::Range(format!(
            "window ending at {t_end} with span {span} (dataset length {})",
            dataset.len()
        )));
    }
    let start = t_end + 1 - span;
    Ok(Window {
        rows: dataset.samples.iter().map(|s| &s[start..=t_end]).collect(),
        start,
    })
}
