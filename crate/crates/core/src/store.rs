//! Server-side ingestion and persistence.
//!
//! Incoming report bytes are first staged verbatim (one file per report
//! under `staging/`), then a commit decodes every staged item and appends
//! its detections to per-sensor table files under `tables/`. Table files
//! are CSV with a fixed header and are the durable copy of the database:
//! [`Store::open`] rebuilds the in-memory tables from them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use crate::protocol::{self, decode_report, BtAddress, ParseError};

pub const TABLE_HEADER: &str = "sensor_id,seq,timestamp_ms,addr,rssi_dbm,friendly_name";

const STAGING_DIR: &str = "staging";
const TABLES_DIR: &str = "tables";

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub sensor_id: String,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub addr: BtAddress,
    pub rssi_dbm: f64,
    pub friendly_name: String,
}

impl DetectionRow {
    fn table_key(&self) -> (u64, BtAddress) {
        (self.seq, self.addr)
    }

    fn addr_key(&self) -> (u64, &str, u64) {
        (self.timestamp_ms, &self.sensor_id, self.seq)
    }

    /// One table line, without the trailing LF.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.sensor_id,
            self.seq,
            self.timestamp_ms,
            self.addr,
            protocol::format_rssi(self.rssi_dbm),
            csv_field(&self.friendly_name)
        )
    }

    pub fn from_csv(line: &str) -> Result<Self, String> {
        let mut parts = line.splitn(6, ',');
        let mut next = |what: &str| parts.next().ok_or_else(|| format!("missing {what}"));
        let sensor_id = next("sensor_id")?.to_string();
        let seq = next("seq")?.parse().map_err(|_| "bad seq".to_string())?;
        let timestamp_ms = next("timestamp_ms")?
            .parse()
            .map_err(|_| "bad timestamp_ms".to_string())?;
        let addr = next("addr")?.parse().map_err(|e| format!("{e}"))?;
        let rssi_dbm: f64 = next("rssi_dbm")?
            .parse()
            .map_err(|_| "bad rssi_dbm".to_string())?;
        let friendly_name = parse_csv_field(next("friendly_name")?)?;
        if !protocol::is_valid_sensor_id(&sensor_id) {
            return Err(format!("bad sensor_id {sensor_id:?}"));
        }
        if !(protocol::MIN_RSSI_DBM..=protocol::MAX_RSSI_DBM).contains(&rssi_dbm) {
            return Err("rssi_dbm out of range".into());
        }
        Ok(Self {
            sensor_id,
            seq,
            timestamp_ms,
            addr,
            rssi_dbm,
            friendly_name,
        })
    }
}

/// Quotes a field when it contains a comma or a double quote.
pub fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn parse_csv_field(s: &str) -> Result<String, String> {
    match s.strip_prefix('"') {
        None => Ok(s.to_string()),
        Some(rest) => {
            let inner = rest
                .strip_suffix('"')
                .ok_or_else(|| "unterminated quoted field".to_string())?;
            Ok(inner.replace("\"\"", "\""))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagedItem {
    pub source_id: String,
    pub raw: Vec<u8>,
    pub received_at_ms: u64,
    pub path: PathBuf,
}

/// Identifies one staged item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedHandle {
    pub source_id: String,
    pub index: u32,
    pub path: PathBuf,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("refusing to stage an empty payload")]
    EmptyPayload,
    #[error("invalid source id {0:?}")]
    InvalidSourceId(String),
    #[error("inverted time window [{from}, {to}]")]
    InvertedWindow { from: u64, to: u64 },
    #[error("corrupt table {}: line {line}: {reason}", path.display())]
    CorruptTable {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Why a staged item was not committed.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RejectReason {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("duplicate row ({sensor_id}, {seq}, {addr})")]
    DuplicateRow {
        sensor_id: String,
        seq: u64,
        addr: BtAddress,
    },
}

#[derive(Debug, Default)]
pub struct CommitSummary {
    pub committed: usize,
    /// Rows added to tables by this commit.
    pub rows: usize,
    pub rejected: Vec<(String, RejectReason)>,
    /// Devices that appear in the committed rows.
    pub addrs: BTreeSet<BtAddress>,
}

#[derive(Debug, Default)]
struct Staging {
    items: Vec<StagedItem>,
    next_index: HashMap<String, u32>,
}

/// Staging area plus per-sensor detection tables.
///
/// `ingest` takes `&self` and may be called from many threads. `commit`
/// needs `&mut self`, so it can never interleave with ingest or queries.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    staging: Mutex<Staging>,
    tables: BTreeMap<String, Vec<DetectionRow>>,
    /// Every row again, grouped by device and ordered by
    /// (timestamp_ms, sensor_id, seq).
    by_addr: HashMap<BtAddress, Vec<DetectionRow>>,
}

fn is_valid_source_id(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 128
        && !s.starts_with('.')
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.' | b':'))
}

impl Store {
    /// Opens (creating if needed) a store rooted at `root`, loading any
    /// existing tables and staged items.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let staging_dir = root.join(STAGING_DIR);
        let tables_dir = root.join(TABLES_DIR);
        fs::create_dir_all(&staging_dir).map_err(io_err(&staging_dir))?;
        fs::create_dir_all(&tables_dir).map_err(io_err(&tables_dir))?;

        let mut store = Store {
            root,
            staging: Mutex::new(Staging::default()),
            tables: BTreeMap::new(),
            by_addr: HashMap::new(),
        };
        for path in sorted_entries(&tables_dir)? {
            if path.extension().is_some_and(|e| e == "csv") {
                store.load_table(&path)?;
            }
        }
        let staging = store.staging.get_mut().expect("staging lock poisoned");
        let mut staged = Vec::new();
        for path in sorted_entries(&staging_dir)? {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let Some((source, index)) = name.rsplit_once('.') else {
                continue;
            };
            let Ok(index) = index.parse::<u32>() else {
                continue;
            };
            let raw = fs::read(&path).map_err(io_err(&path))?;
            staged.push((source.to_string(), index, raw, path));
        }
        staged.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        for (source, index, raw, path) in staged {
            let next = staging.next_index.entry(source.clone()).or_insert(1);
            *next = (*next).max(index + 1);
            staging.items.push(StagedItem {
                source_id: source,
                raw,
                received_at_ms: 0,
                path,
            });
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn table_path(&self, sensor_id: &str) -> PathBuf {
        self.root.join(TABLES_DIR).join(format!("{sensor_id}.csv"))
    }

    fn load_table(&mut self, path: &Path) -> Result<(), StoreError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let corrupt = |line: usize, reason: String| StoreError::CorruptTable {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut lines = text.lines();
        if lines.next() != Some(TABLE_HEADER) {
            return Err(corrupt(1, "missing header".into()));
        }
        let mut rows: Vec<DetectionRow> = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = DetectionRow::from_csv(line).map_err(|r| corrupt(i + 2, r))?;
            if let Some(prev) = rows.last() {
                if prev.sensor_id != row.sensor_id || prev.table_key() >= row.table_key() {
                    return Err(corrupt(i + 2, "rows out of order".into()));
                }
            }
            rows.push(row);
        }
        // A table with a header only belongs to a sensor whose reports so
        // far were all empty; its id is the file name.
        let sensor_id = match rows.first() {
            Some(first) => first.sensor_id.clone(),
            None => path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| corrupt(1, "unnamed table".into()))?
                .to_string(),
        };
        for row in &rows {
            insert_by_addr(&mut self.by_addr, row.clone());
        }
        self.tables.insert(sensor_id, rows);
        Ok(())
    }

    /// Stages `raw` verbatim as `staging/<source_id>.<NNNN>`. The content
    /// is not inspected.
    pub fn ingest(
        &self,
        source_id: &str,
        raw: &[u8],
        received_at_ms: u64,
    ) -> Result<StagedHandle, StoreError> {
        if raw.is_empty() {
            return Err(StoreError::EmptyPayload);
        }
        if !is_valid_source_id(source_id) {
            return Err(StoreError::InvalidSourceId(source_id.to_string()));
        }
        let mut staging = self.staging.lock().expect("staging lock poisoned");
        let slot = staging.next_index.entry(source_id.to_string()).or_insert(1);
        let index = *slot;
        let path = self
            .root
            .join(STAGING_DIR)
            .join(format!("{source_id}.{index:04}"));
        fs::write(&path, raw).map_err(io_err(&path))?;
        *slot += 1;
        staging.items.push(StagedItem {
            source_id: source_id.to_string(),
            raw: raw.to_vec(),
            received_at_ms,
            path: path.clone(),
        });
        Ok(StagedHandle {
            source_id: source_id.to_string(),
            index,
            path,
        })
    }

    pub fn staged_len(&self) -> usize {
        self.staging.lock().expect("staging lock poisoned").items.len()
    }

    /// Decodes every staged item in arrival order and commits its rows.
    /// A rejected item leaves every table untouched.
    pub fn commit(&mut self) -> Result<CommitSummary, StoreError> {
        let items = std::mem::take(&mut self.staging.get_mut().expect("staging lock poisoned").items);
        let mut summary = CommitSummary::default();
        for item in items {
            match decode_report(&item.raw) {
                Err(e) => summary.rejected.push((item.source_id.clone(), e.into())),
                Ok(report) => {
                    let table = self.tables.get(&report.sensor_id);
                    let duplicate = table.and_then(|rows| {
                        report.detections.iter().find(|d| {
                            rows.binary_search_by(|r| r.table_key().cmp(&(report.seq, d.addr)))
                                .is_ok()
                        })
                    });
                    if let Some(d) = duplicate {
                        summary.rejected.push((
                            item.source_id.clone(),
                            RejectReason::DuplicateRow {
                                sensor_id: report.sensor_id.clone(),
                                seq: report.seq,
                                addr: d.addr,
                            },
                        ));
                    } else {
                        let rows: Vec<DetectionRow> = report
                            .detections
                            .into_iter()
                            .map(|d| DetectionRow {
                                sensor_id: report.sensor_id.clone(),
                                seq: report.seq,
                                timestamp_ms: report.timestamp_ms,
                                addr: d.addr,
                                rssi_dbm: d.rssi_dbm,
                                friendly_name: d.friendly_name,
                            })
                            .collect();
                        summary.rows += rows.len();
                        summary.addrs.extend(rows.iter().map(|r| r.addr));
                        self.append_rows(&report.sensor_id, rows)?;
                        summary.committed += 1;
                    }
                }
            }
            fs::remove_file(&item.path).map_err(io_err(&item.path))?;
        }
        Ok(summary)
    }

    fn append_rows(&mut self, sensor_id: &str, rows: Vec<DetectionRow>) -> Result<(), StoreError> {
        let path = self.table_path(sensor_id);
        let is_new = !self.tables.contains_key(sensor_id);
        let table = self.tables.entry(sensor_id.to_string()).or_default();
        // Rows normally arrive in sequence order and are simply appended.
        let in_order = match (table.last(), rows.first()) {
            (Some(last), Some(first)) => last.table_key() < first.table_key(),
            _ => true,
        };
        for row in &rows {
            insert_by_addr(&mut self.by_addr, row.clone());
        }
        if in_order {
            let mut buf = String::new();
            if is_new {
                buf.push_str(TABLE_HEADER);
                buf.push('\n');
            }
            for row in &rows {
                buf.push_str(&row.to_csv());
                buf.push('\n');
            }
            table.extend(rows);
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(io_err(&path))?;
            file.write_all(buf.as_bytes()).map_err(io_err(&path))?;
        } else {
            table.extend(rows);
            table.sort_by_key(DetectionRow::table_key);
            let text = render_table(table);
            fs::write(&path, text).map_err(io_err(&path))?;
        }
        Ok(())
    }

    /// Row count per sensor table. Sensors without a table are absent.
    pub fn retrieve_counts(&self) -> BTreeMap<String, usize> {
        self.tables
            .iter()
            .map(|(id, rows)| (id.clone(), rows.len()))
            .collect()
    }

    pub fn table(&self, sensor_id: &str) -> Option<&[DetectionRow]> {
        self.tables.get(sensor_id).map(Vec::as_slice)
    }

    pub fn table_ids(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn total_rows(&self) -> usize {
        self.tables.values().map(Vec::len).sum()
    }

    /// Table contents exactly as written to disk.
    pub fn export_table(&self, sensor_id: &str) -> Option<String> {
        self.tables.get(sensor_id).map(|rows| render_table(rows))
    }

    /// Rows for `addr` with `from_ms <= timestamp_ms <= to_ms`, ordered by
    /// (timestamp_ms, sensor_id).
    pub fn query_detections(
        &self,
        addr: &BtAddress,
        from_ms: u64,
        to_ms: u64,
    ) -> Result<Vec<DetectionRow>, StoreError> {
        if from_ms > to_ms {
            return Err(StoreError::InvertedWindow {
                from: from_ms,
                to: to_ms,
            });
        }
        let Some(rows) = self.by_addr.get(addr) else {
            return Ok(Vec::new());
        };
        let start = rows.partition_point(|r| r.timestamp_ms < from_ms);
        let end = rows.partition_point(|r| r.timestamp_ms <= to_ms);
        Ok(rows[start..end.max(start)].to_vec())
    }
}

fn insert_by_addr(index: &mut HashMap<BtAddress, Vec<DetectionRow>>, row: DetectionRow) {
    let rows = index.entry(row.addr).or_default();
    let at = rows.partition_point(|r| r.addr_key() <= row.addr_key());
    rows.insert(at, row);
}

fn render_table(rows: &[DetectionRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(TABLE_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.file_type().map_err(io_err(dir))?.is_file() {
            paths.push(entry.path());
        }
    }
    paths.sort();
    Ok(paths)
}
