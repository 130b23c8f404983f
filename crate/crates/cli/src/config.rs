//! Run configuration: a flat INI file with `[data]`, `[model]`, `[train]`
//! and `[run]` sections.
//!
//! ```ini
//! [data]
//! source = synthetic      # or csv
//! turbines = 8
//! steps = 20000
//!
//! [model]
//! d_model = 16
//!
//! [train]
//! max_epochs = 20
//!
//! [run]
//! out = runs/desk
//! ```
//!
//! Unknown sections or keys are errors. Every key has a default, so an
//! empty file is a valid configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use thiserror::Error;

use dxformer::data::{CsvSchema, SynthConfig, TimeColumns};
use dxformer::model::ModelConfig;
use dxformer::training::TrainConfig;

const TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Syntax { path: String, line: usize, msg: String },

    #[error("[{section}] {key}: {msg}")]
    Value { section: String, key: String, msg: String },

    #[error("{0}")]
    Invalid(String),
}

fn value_err(section: &str, key: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError::Value {
        section: section.into(),
        key: key.into(),
        msg: msg.to_string(),
    }
}

/// Where the farm telemetry comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Synthetic,
    Csv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: Source,
    pub synth: SynthConfig,
    /// Long-format telemetry file, for `source = csv`.
    pub path: Option<PathBuf>,
    pub schema: CsvSchema,
}

impl Default for DataConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        DataConfig {
            source: Source::Synthetic,
            schema: CsvSchema::synthetic(vec!["wind_speed".into(), "temperature".into()]),
            synth,
            path: None,
        }
    }
}

impl DataConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse '{v}'"))
        }
        match key {
            "source" => {
                self.source = match v {
                    "synthetic" => Source::Synthetic,
                    "csv" => Source::Csv,
                    _ => return Err(format!("expected synthetic or csv, got '{v}'")),
                }
            }
            "path" => self.path = Some(PathBuf::from(v)),
            "turbines" => self.synth.turbines = num(v)?,
            "steps" => self.synth.steps = num(v)?,
            "exo" => self.synth.exo = num(v)?,
            "seed" => self.synth.seed = num(v)?,
            "start" => {
                self.synth.start =
                    NaiveDateTime::parse_from_str(v, TIME_FORMAT).map_err(|e| format!("'{v}': {e}"))?
            }
            "rated_kw" => self.synth.rated_kw = num(v)?,
            "missing_rate" => self.synth.missing_rate = num(v)?,
            "cadence_secs" => {
                let c: i64 = num(v)?;
                self.synth.cadence_secs = c;
                self.schema.cadence_secs = c;
            }
            "turbine_column" => self.schema.turbine_column = v.into(),
            "power_column" => self.schema.power_column = v.into(),
            "exo_columns" => {
                self.schema.exo_columns = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
            }
            "missing_sentinel" => self.schema.missing_sentinel = (!v.is_empty()).then(|| v.to_string()),
            "time_column" | "time_format" => {
                let (mut column, mut format) = match &self.schema.time {
                    TimeColumns::Timestamp { column, format } => (column.clone(), format.clone()),
                    TimeColumns::DayClock { .. } => ("timestamp".into(), TIME_FORMAT.into()),
                };
                if key == "time_column" {
                    column = v.into();
                } else {
                    format = v.into();
                }
                self.schema.time = TimeColumns::Timestamp { column, format };
            }
            "day_column" | "clock_column" | "clock_format" | "epoch" | "day_origin" => {
                let (mut day, mut clock, mut fmt, mut epoch, mut origin) = match &self.schema.time {
                    TimeColumns::DayClock {
                        day_column,
                        clock_column,
                        clock_format,
                        epoch,
                        day_origin,
                    } => (day_column.clone(), clock_column.clone(), clock_format.clone(), *epoch, *day_origin),
                    TimeColumns::Timestamp { .. } => (
                        "Day".into(),
                        "Tmstamp".into(),
                        "%H:%M".into(),
                        NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
                        1,
                    ),
                };
                match key {
                    "day_column" => day = v.into(),
                    "clock_column" => clock = v.into(),
                    "clock_format" => fmt = v.into(),
                    "epoch" => epoch = NaiveDate::parse_from_str(v, "%Y-%m-%d").map_err(|e| format!("'{v}': {e}"))?,
                    _ => origin = num(v)?,
                }
                self.schema.time = TimeColumns::DayClock {
                    day_column: day,
                    clock_column: clock,
                    clock_format: fmt,
                    epoch,
                    day_origin: origin,
                };
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![(
            "source",
            match self.source {
                Source::Synthetic => "synthetic",
                Source::Csv => "csv",
            }
            .to_string(),
        )];
        let s = &self.synth;
        out.extend([
            ("turbines", s.turbines.to_string()),
            ("steps", s.steps.to_string()),
            ("exo", s.exo.to_string()),
            ("seed", s.seed.to_string()),
            ("start", s.start.format(TIME_FORMAT).to_string()),
            ("rated_kw", format!("{:?}", s.rated_kw)),
            ("missing_rate", format!("{:?}", s.missing_rate)),
            ("cadence_secs", s.cadence_secs.to_string()),
        ]);
        if let Some(p) = &self.path {
            out.push(("path", p.display().to_string()));
        }
        let sc = &self.schema;
        out.push(("turbine_column", sc.turbine_column.clone()));
        out.push(("power_column", sc.power_column.clone()));
        out.push(("exo_columns", sc.exo_columns.join(",")));
        if let Some(m) = &sc.missing_sentinel {
            out.push(("missing_sentinel", m.clone()));
        }
        match &sc.time {
            TimeColumns::Timestamp { column, format } => {
                out.push(("time_column", column.clone()));
                out.push(("time_format", format.clone()));
            }
            TimeColumns::DayClock {
                day_column,
                clock_column,
                clock_format,
                epoch,
                day_origin,
            } => {
                out.push(("day_column", day_column.clone()));
                out.push(("clock_column", clock_column.clone()));
                out.push(("clock_format", clock_format.clone()));
                out.push(("epoch", epoch.format("%Y-%m-%d").to_string()));
                out.push(("day_origin", day_origin.to_string()));
            }
        }
        out
    }
}

/// Everything one command needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Run directory; every output file lands under it.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            out: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses INI text; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let syntax = |msg: &str| ConfigError::Syntax {
                path: origin.into(),
                line: n + 1,
                msg: msg.into(),
            };
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| syntax("unterminated section header"))?;
                section = name.trim().to_string();
                if !["data", "model", "train", "run"].contains(&section.as_str()) {
                    return Err(syntax(&format!("unknown section [{section}]")));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| syntax("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            match section.as_str() {
                "data" => cfg.data.set(key, value).map_err(|m| value_err("data", key, m))?,
                "model" => cfg.model.set(key, value).map_err(|e| value_err("model", key, e))?,
                "train" => cfg.train.set(key, value).map_err(|e| value_err("train", key, e))?,
                "run" if key == "out" => cfg.out = PathBuf::from(value),
                "run" => return Err(value_err("run", key, "unknown key")),
                _ => return Err(syntax("key outside of a section")),
            }
        }
        Ok(cfg)
    }

    /// INI text that parses back to this configuration.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let mut section = |name: &str, pairs: Vec<(&'static str, String)>| {
            let _ = writeln!(s, "[{name}]");
            for (k, v) in pairs {
                let _ = writeln!(s, "{k} = {v}");
            }
            s.push('\n');
        };
        section("data", self.data.pairs());
        section("model", self.model.to_pairs());
        section("train", self.train.to_pairs());
        section("run", vec![("out", self.out.display().to_string())]);
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.data.source == Source::Csv && self.data.path.is_none() {
            return Err(ConfigError::Invalid("[data] source = csv needs a path".into()));
        }
        self.model.validate().map_err(|e| ConfigError::Invalid(format!("[model] {e}")))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(format!("[train] {e}")))?;
        Ok(())
    }

    /// Writes the resolved configuration as `config.ini` in the run directory.
    pub fn write_resolved(&self) -> anyhow::Result<PathBuf> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join("config.ini");
        fs::write(&path, self.to_ini())?;
        Ok(path)
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find(['#', ';']) {
        Some(i) => &line[..i],
        None => line,
    }
}
