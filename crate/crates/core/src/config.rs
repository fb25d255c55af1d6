//! Scenario files.
//!
//! A scenario is a line-oriented text file split into sections. Each
//! `[zone]`, `[sensor]` and `[device]` header starts a new entity;
//! `[run]` and `[radio]` may appear at most once. Inside a section every
//! non-blank line is `key = value`; lines starting with `#` are comments.
//! The full key list is in the README.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::{Point2D, Rect};
use crate::positioning::FusionConfig;
use crate::protocol::BtAddress;
use crate::sim::{DeviceSpec, RadioParams, SensorSpec, Waypoint, ZoneSpec};

pub const DEFAULT_SCAN_INTERVAL_S: f64 = 10.0;
pub const DEFAULT_MESSAGE: &str = "You are in {zone}";

/// Invalid scenario content, located by a field path such as
/// `sensor[2].scan_interval_s` and, when known, a source line.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
    pub line: Option<usize>,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
            line: None,
        }
    }

    fn at(line: usize, path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            ..Self::new(path, message)
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Unvalidated world description; see [`crate::sim::build_world`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorldConfig {
    /// Defaults to the bounding box of all zones.
    pub bounds: Option<Rect>,
    pub radio: RadioParams,
    pub sensors: Vec<SensorSpec>,
    pub zones: Vec<ZoneSpec>,
    pub devices: Vec<DeviceSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositioningMode {
    #[default]
    Fusion,
    Fingerprint,
}

impl FromStr for PositioningMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fusion" => Ok(Self::Fusion),
            "fingerprint" => Ok(Self::Fingerprint),
            other => Err(format!("unknown positioning mode {other:?}")),
        }
    }
}

impl fmt::Display for PositioningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fusion => "fusion",
            Self::Fingerprint => "fingerprint",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub duration_s: f64,
    pub tick_s: f64,
    pub seed: u64,
    pub mode: PositioningMode,
    pub cell_size_m: f64,
    pub fusion: FusionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            duration_s: 60.0,
            tick_s: 1.0,
            seed: 0,
            mode: PositioningMode::Fusion,
            cell_size_m: 1.0,
            fusion: FusionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioConfig {
    pub world: WorldConfig,
    pub run: RunConfig,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Config { path: PathBuf, source: ConfigError },
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text).map_err(|source| LoadError::Config {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Run,
    Radio,
    Zone,
    Sensor,
    Device,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Run => "run",
            Kind::Radio => "radio",
            Kind::Zone => "zone",
            Kind::Sensor => "sensor",
            Kind::Device => "device",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            Kind::Run => &[
                "duration_s",
                "tick_s",
                "seed",
                "mode",
                "cell_size_m",
                "bounds",
                "min_anchors",
                "max_sample_age_ms",
                "collinearity_tol",
            ],
            Kind::Radio => &[
                "p0_dbm",
                "d0_m",
                "path_loss_exponent",
                "noise_sigma_db",
                "detect_threshold_dbm",
                "detect_prob",
            ],
            Kind::Zone => &["id", "rect"],
            Kind::Sensor => &["id", "pos", "zone", "scan_interval_s", "message"],
            Kind::Device => &["addr", "name", "discoverable", "accepts_push", "wp"],
        }
    }
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

struct Section {
    kind: Kind,
    index: usize,
    line: usize,
    entries: Vec<Entry>,
}

impl Section {
    fn path(&self, key: &str) -> String {
        match self.kind {
            Kind::Run | Kind::Radio => format!("{}.{key}", self.kind.name()),
            _ => format!("{}[{}].{key}", self.kind.name(), self.index),
        }
    }

    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    fn required(&self, key: &str) -> Result<&Entry, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError::at(self.line, self.path(key), "missing required key"))
    }

    fn parse<T>(&self, entry: &Entry, f: impl FnOnce(&str) -> Result<T, String>) -> Result<T, ConfigError> {
        f(&entry.value).map_err(|m| ConfigError::at(entry.line, self.path(&entry.key), m))
    }

    fn opt<T>(&self, key: &str, f: impl FnOnce(&str) -> Result<T, String>) -> Result<Option<T>, ConfigError> {
        self.get(key).map(|e| self.parse(e, f)).transpose()
    }

    fn req<T>(&self, key: &str, f: impl FnOnce(&str) -> Result<T, String>) -> Result<T, ConfigError> {
        let entry = self.required(key)?;
        self.parse(entry, f)
    }
}

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("expected a number, got {s:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a finite number, got {s:?}"))
    }
}

fn numbers<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated numbers, got {s:?}"));
    }
    let mut out = [0.0; N];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = number(part)?;
    }
    Ok(out)
}

fn boolean(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("expected true or false, got {other:?}")),
    }
}

fn unsigned(s: &str) -> Result<u64, String> {
    s.parse().map_err(|_| format!("expected a non-negative integer, got {s:?}"))
}

fn text(s: &str) -> Result<String, String> {
    Ok(s.to_string())
}

fn rect(s: &str) -> Result<Rect, String> {
    let [a, b, c, d] = numbers::<4>(s)?;
    Ok(Rect::new(a, b, c, d))
}

fn point(s: &str) -> Result<Point2D, String> {
    let [x, y] = numbers::<2>(s)?;
    Ok(Point2D::new(x, y))
}

fn split_sections(input: &str) -> Result<Vec<Section>, ConfigError> {
    let mut sections: Vec<Section> = Vec::new();
    let mut counts = [0usize; 5];
    for (n, raw) in input.lines().enumerate() {
        let line = n + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let kind = match name.trim() {
                "run" => Kind::Run,
                "radio" => Kind::Radio,
                "zone" => Kind::Zone,
                "sensor" => Kind::Sensor,
                "device" => Kind::Device,
                other => return Err(ConfigError::at(line, other, "unknown section")),
            };
            let slot = &mut counts[kind as usize];
            if matches!(kind, Kind::Run | Kind::Radio) && *slot > 0 {
                return Err(ConfigError::at(line, kind.name(), "section may appear only once"));
            }
            sections.push(Section {
                kind,
                index: *slot,
                line,
                entries: Vec::new(),
            });
            *slot += 1;
            continue;
        }
        let Some(section) = sections.last_mut() else {
            return Err(ConfigError::at(line, "", "key outside of any section"));
        };
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ConfigError::at(line, section.path(""), "expected `key = value`"));
        };
        let key = key.trim();
        if !section.kind.keys().contains(&key) {
            return Err(ConfigError::at(line, section.path(key), "unknown key"));
        }
        if key != "wp" && section.get(key).is_some() {
            return Err(ConfigError::at(line, section.path(key), "duplicate key"));
        }
        section.entries.push(Entry {
            line,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(sections)
}

/// Parses scenario text. Only syntax and per-field values are checked
/// here; cross-entity invariants are enforced by `build_world`.
pub fn parse_scenario(input: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut config = ScenarioConfig::default();
    let mut saw_run = false;
    for section in split_sections(input)? {
        match section.kind {
            Kind::Run => {
                saw_run = true;
                let run = &mut config.run;
                run.duration_s = section.req("duration_s", number)?;
                if run.duration_s <= 0.0 {
                    return Err(section_err(&section, "duration_s", "must be > 0"));
                }
                if let Some(v) = section.opt("tick_s", number)? {
                    if v <= 0.0 {
                        return Err(section_err(&section, "tick_s", "must be > 0"));
                    }
                    run.tick_s = v;
                }
                if let Some(v) = section.opt("seed", unsigned)? {
                    run.seed = v;
                }
                if let Some(v) = section.opt("mode", |s| s.parse())? {
                    run.mode = v;
                }
                if let Some(v) = section.opt("cell_size_m", number)? {
                    if v <= 0.0 {
                        return Err(section_err(&section, "cell_size_m", "must be > 0"));
                    }
                    run.cell_size_m = v;
                }
                config.world.bounds = section.opt("bounds", rect)?;
                if let Some(v) = section.opt("min_anchors", unsigned)? {
                    if v < 3 {
                        return Err(section_err(&section, "min_anchors", "must be >= 3"));
                    }
                    run.fusion.min_anchors = v as usize;
                }
                if let Some(v) = section.opt("max_sample_age_ms", unsigned)? {
                    run.fusion.max_sample_age_ms = v;
                }
                if let Some(v) = section.opt("collinearity_tol", number)? {
                    if v < 0.0 {
                        return Err(section_err(&section, "collinearity_tol", "must be >= 0"));
                    }
                    run.fusion.collinearity_tol = v;
                }
            }
            Kind::Radio => {
                let r = &mut config.world.radio;
                for (key, slot) in [
                    ("p0_dbm", &mut r.p0_dbm),
                    ("d0_m", &mut r.d0_m),
                    ("path_loss_exponent", &mut r.path_loss_exponent),
                    ("noise_sigma_db", &mut r.noise_sigma_db),
                    ("detect_threshold_dbm", &mut r.detect_threshold_dbm),
                    ("detect_prob", &mut r.detect_prob),
                ] {
                    if let Some(v) = section.opt(key, number)? {
                        *slot = v;
                    }
                }
            }
            Kind::Zone => config.world.zones.push(ZoneSpec {
                id: section.req("id", text)?,
                rect: section.req("rect", rect)?,
            }),
            Kind::Sensor => config.world.sensors.push(SensorSpec {
                id: section.req("id", text)?,
                pos: section.req("pos", point)?,
                zone: section.req("zone", text)?,
                scan_interval_s: section
                    .opt("scan_interval_s", number)?
                    .unwrap_or(DEFAULT_SCAN_INTERVAL_S),
                message_template: section
                    .opt("message", text)?
                    .unwrap_or_else(|| DEFAULT_MESSAGE.to_string()),
            }),
            Kind::Device => {
                let addr: BtAddress = section.req("addr", |s| s.parse().map_err(|e| format!("{e}")))?;
                let mut trajectory = Vec::new();
                for entry in section.entries.iter().filter(|e| e.key == "wp") {
                    let [t, x, y] = section.parse(entry, numbers::<3>)?;
                    trajectory.push(Waypoint::new(t, x, y));
                }
                config.world.devices.push(DeviceSpec {
                    addr,
                    friendly_name: section.req("name", text)?,
                    discoverable: section.opt("discoverable", boolean)?.unwrap_or(true),
                    accepts_push: section.opt("accepts_push", boolean)?.unwrap_or(true),
                    trajectory,
                });
            }
        }
    }
    if !saw_run {
        return Err(ConfigError::new("run", "missing [run] section"));
    }
    Ok(config)
}

fn section_err(section: &Section, key: &str, message: &str) -> ConfigError {
    let line = section.get(key).map_or(section.line, |e| e.line);
    ConfigError::at(line, section.path(key), message)
}
