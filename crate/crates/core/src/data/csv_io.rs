use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use log::warn;

use crate::data::FarmSeries;
use crate::error::{Error, Result};

/// How a record's time is spelled in the file.
#[derive(Clone, Debug, PartialEq)]
pub enum TimeColumns {
    /// A single calendar timestamp column parsed with a chrono format string.
    Timestamp { column: String, format: String },
    /// A day counter plus a clock column, as in datasets without calendar
    /// dates. Day `day_origin` maps to `epoch`.
    DayClock {
        day_column: String,
        clock_column: String,
        clock_format: String,
        epoch: NaiveDate,
        day_origin: i64,
    },
}

/// Column mapping for long-format telemetry (one row per turbine and time).
#[derive(Clone, Debug, PartialEq)]
pub struct CsvSchema {
    pub turbine_column: String,
    pub time: TimeColumns,
    pub power_column: String,
    pub exo_columns: Vec<String>,
    /// Extra spelling of a missing value besides the empty field and `NaN`.
    pub missing_sentinel: Option<String>,
    pub cadence_secs: i64,
}

impl CsvSchema {
    /// Layout written by the synthetic generator.
    pub fn synthetic(exo_columns: Vec<String>) -> Self {
        CsvSchema {
            turbine_column: "turbine".into(),
            time: TimeColumns::Timestamp {
                column: "timestamp".into(),
                format: "%Y-%m-%d %H:%M:%S".into(),
            },
            power_column: "power_kw".into(),
            exo_columns,
            missing_sentinel: None,
            cadence_secs: 600,
        }
    }

    fn time_column_names(&self) -> Vec<&str> {
        match &self.time {
            TimeColumns::Timestamp { column, .. } => vec![column],
            TimeColumns::DayClock {
                day_column,
                clock_column,
                ..
            } => vec![day_column, clock_column],
        }
    }
}

pub fn parse_csv(path: &Path, schema: &CsvSchema) -> Result<FarmSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv_reader(file, schema)
}

/// Pivots long-format rows into a [`FarmSeries`] on a regular time grid.
///
/// Turbines are numbered in order of first appearance. Grid points with no
/// row for a turbine are marked missing. Duplicate `(turbine, time)` rows keep
/// the last occurrence.
pub fn parse_csv_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<FarmSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column '{name}' not found in CSV header")))
    };
    let turbine_col = col(&schema.turbine_column)?;
    let time_cols = schema
        .time_column_names()
        .into_iter()
        .map(col)
        .collect::<Result<Vec<_>>>()?;
    let power_col = col(&schema.power_column)?;
    let exo_cols = schema
        .exo_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let n_exo = exo_cols.len();

    let mut turbines: Vec<String> = Vec::new();
    let mut turbine_index: HashMap<String, usize> = HashMap::new();
    let mut rows: HashMap<(usize, NaiveDateTime), Vec<f64>> = HashMap::new();
    let mut duplicates = 0usize;

    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let id = field(turbine_col).to_string();
        let turbine = *turbine_index.entry(id.clone()).or_insert_with(|| {
            turbines.push(id);
            turbines.len() - 1
        });
        let ts = parse_time(&schema.time, &time_cols, &field).map_err(|e| {
            Error::Data(format!("row {}: {e}", line + 2))
        })?;
        let mut values = Vec::with_capacity(n_exo + 1);
        values.push(parse_value(field(power_col), schema, line)?);
        for &c in &exo_cols {
            values.push(parse_value(field(c), schema, line)?);
        }
        if rows.insert((turbine, ts), values).is_some() {
            duplicates += 1;
        }
    }
    if duplicates > 0 {
        warn!("{duplicates} duplicate (turbine, timestamp) rows; kept the last occurrence of each");
    }
    if rows.is_empty() {
        return Err(Error::Data("CSV contains no data rows".into()));
    }

    let cadence = schema.cadence_secs;
    if cadence <= 0 {
        return Err(Error::Data("cadence must be positive".into()));
    }
    let first = rows.keys().map(|k| k.1).min().expect("non-empty");
    let last = rows.keys().map(|k| k.1).max().expect("non-empty");
    for &(_, ts) in rows.keys() {
        if (ts - first).num_seconds() % cadence != 0 {
            return Err(Error::Data(format!(
                "timestamp {ts} is off the {cadence} s grid starting at {first}"
            )));
        }
    }
    let t_len = ((last - first).num_seconds() / cadence) as usize + 1;
    let n = turbines.len();
    let timestamps: Vec<NaiveDateTime> = (0..t_len)
        .map(|k| first + Duration::seconds(cadence * k as i64))
        .collect();

    let mut power = vec![f64::NAN; t_len * n];
    let mut exo = vec![f64::NAN; t_len * n * n_exo];
    let mut missing = vec![true; t_len * n * (n_exo + 1)];
    for ((turbine, ts), values) in rows {
        let t = ((ts - first).num_seconds() / cadence) as usize;
        let cell = t * n + turbine;
        for (ch, v) in values.into_iter().enumerate() {
            if ch == 0 {
                power[cell] = v;
            } else {
                exo[cell * n_exo + ch - 1] = v;
            }
            missing[cell * (n_exo + 1) + ch] = v.is_nan();
        }
    }

    let series = FarmSeries {
        timestamps,
        cadence_secs: cadence,
        turbines,
        exo_names: schema.exo_columns.clone(),
        target_kw: power.clone(),
        power,
        exo,
        missing,
        scaling: None,
    };
    series.check_consistent()?;
    Ok(series)
}

fn parse_time<'a>(
    spec: &TimeColumns,
    cols: &[usize],
    field: &dyn Fn(usize) -> &'a str,
) -> std::result::Result<NaiveDateTime, String> {
    match spec {
        TimeColumns::Timestamp { format, .. } => {
            let raw = field(cols[0]);
            NaiveDateTime::parse_from_str(raw, format)
                .map_err(|e| format!("bad timestamp '{raw}': {e}"))
        }
        TimeColumns::DayClock {
            clock_format,
            epoch,
            day_origin,
            ..
        } => {
            let raw_day = field(cols[0]);
            let day: i64 = raw_day
                .parse()
                .map_err(|_| format!("bad day index '{raw_day}'"))?;
            let raw_clock = field(cols[1]);
            let clock = NaiveTime::parse_from_str(raw_clock, clock_format)
                .map_err(|e| format!("bad clock '{raw_clock}': {e}"))?;
            let date = *epoch + Duration::days(day - day_origin);
            Ok(date.and_time(clock))
        }
    }
}

fn parse_value(raw: &str, schema: &CsvSchema, line: usize) -> Result<f64> {
    if raw.is_empty() || schema.missing_sentinel.as_deref() == Some(raw) {
        return Ok(f64::NAN);
    }
    raw.parse::<f64>()
        .map_err(|_| Error::Data(format!("row {}: '{raw}' is not a number", line + 2)))
}

/// Writes `fs` back out in long format using `schema`'s column names.
///
/// Missing cells are written as empty fields. Values use Rust's shortest
/// round-trip float formatting, so parsing the file back is lossless.
pub fn write_csv<W: Write>(fs: &FarmSeries, schema: &CsvSchema, out: W) -> Result<()> {
    let TimeColumns::Timestamp { column, format } = &schema.time else {
        return Err(Error::Contract("write_csv needs a calendar timestamp column".into()));
    };
    if schema.exo_columns.len() != fs.n_exo() {
        return Err(Error::Contract(format!(
            "schema names {} exogenous columns, series has {}",
            schema.exo_columns.len(),
            fs.n_exo()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![schema.turbine_column.clone(), column.clone()];
    header.extend(schema.exo_columns.iter().cloned());
    header.push(schema.power_column.clone());
    w.write_record(&header)?;
    let fmt = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
    for (t, ts) in fs.timestamps.iter().enumerate() {
        let stamp = ts.format(format).to_string();
        for (i, id) in fs.turbines.iter().enumerate() {
            let mut row = vec![id.clone(), stamp.clone()];
            row.extend((0..fs.n_exo()).map(|c| fmt(fs.exo_at(t, i, c))));
            row.push(fmt(fs.target_kw[t * fs.n_turbines() + i]));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}
