//! Sensor to server scan report wire format.
//!
//! A report is a small pipe-delimited text document:
//!
//! ```text
//! RPT|S1|7|1000|1
//! DET|AA:BB:CC:DD:EE:FF|-57.0|Nokia 6230
//! END
//! ```
//!
//! The header carries the sensor id, a per-sensor sequence number, the
//! scan timestamp in milliseconds and the number of `DET` lines that
//! follow. Lines are LF terminated and the document ends with `END`.
//! Decoding is strict: anything the encoder would not produce for some
//! report (apart from redundant leading zeros in numbers) is rejected.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Longest friendly name a device may advertise, in bytes of UTF-8.
pub const MAX_NAME_BYTES: usize = 248;
/// Longest sensor id token on the wire.
pub const MAX_SENSOR_ID_LEN: usize = 64;
pub const MIN_RSSI_DBM: f64 = -120.0;
pub const MAX_RSSI_DBM: f64 = 0.0;

const MIN_RSSI_TENTHS: i64 = -1200;
const MAX_RSSI_TENTHS: i64 = 0;

/// 48-bit Bluetooth device address.
///
/// Ordering is by octets, which coincides with ordering by the canonical
/// uppercase text form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BtAddress(pub [u8; 6]);

impl BtAddress {
    pub const fn new(octets: [u8; 6]) -> Self {
        Self(octets)
    }

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }
}

impl fmt::Display for BtAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d, e, g] = self.0;
        write!(f, "{a:02X}:{b:02X}:{c:02X}:{d:02X}:{e:02X}:{g:02X}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid Bluetooth address {0:?}")]
pub struct AddressParseError(pub String);

impl FromStr for BtAddress {
    type Err = AddressParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || AddressParseError(s.to_string());
        let bytes = s.as_bytes();
        if bytes.len() != 17 {
            return Err(err());
        }
        let mut octets = [0u8; 6];
        for (i, octet) in octets.iter_mut().enumerate() {
            let at = i * 3;
            if i < 5 && bytes[at + 2] != b':' {
                return Err(err());
            }
            let hi = hex_value(bytes[at]).ok_or_else(err)?;
            let lo = hex_value(bytes[at + 1]).ok_or_else(err)?;
            *octet = (hi << 4) | lo;
        }
        Ok(BtAddress(octets))
    }
}

fn hex_value(b: u8) -> Option<u8> {
    match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'a'..=b'f' => Some(b - b'a' + 10),
        b'A'..=b'F' => Some(b - b'A' + 10),
        _ => None,
    }
}

/// One device seen during an inquiry scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub addr: BtAddress,
    /// Received signal strength. Quantized to 0.1 dB on the wire.
    pub rssi_dbm: f64,
    pub friendly_name: String,
}

/// The result of one sensor scan, as sent to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanReport {
    pub sensor_id: String,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("invalid sensor id {0:?}")]
    InvalidSensorId(String),
    #[error("detection {index}: rssi {rssi} dBm outside [-120, 0]")]
    RssiOutOfRange { index: usize, rssi: String },
    #[error("detection {index}: invalid friendly name: {reason}")]
    InvalidName { index: usize, reason: NameError },
    #[error("detections not strictly ascending by address at index {index}")]
    Unsorted { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("empty")]
    Empty,
    #[error("longer than 248 bytes")]
    TooLong,
    #[error("contains a control character")]
    ControlChar,
    #[error("contains '|'")]
    Pipe,
}

/// Checks a friendly name against the wire constraints.
pub fn validate_friendly_name(name: &str) -> Result<(), NameError> {
    if name.is_empty() {
        return Err(NameError::Empty);
    }
    if name.len() > MAX_NAME_BYTES {
        return Err(NameError::TooLong);
    }
    if name.chars().any(char::is_control) {
        return Err(NameError::ControlChar);
    }
    if name.contains('|') {
        return Err(NameError::Pipe);
    }
    Ok(())
}

pub fn is_valid_sensor_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= MAX_SENSOR_ID_LEN
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// Rounds to tenths of a dB, half away from zero.
pub fn rssi_to_tenths(rssi_dbm: f64) -> i64 {
    (rssi_dbm * 10.0).round() as i64
}

pub fn tenths_to_rssi(tenths: i64) -> f64 {
    tenths as f64 / 10.0
}

/// Same quantization the encoder applies.
pub fn quantize_rssi(rssi_dbm: f64) -> f64 {
    tenths_to_rssi(rssi_to_tenths(rssi_dbm))
}

/// Formats tenths of a dB with exactly one decimal digit.
pub fn format_tenths(tenths: i64) -> String {
    let sign = if tenths < 0 { "-" } else { "" };
    let abs = tenths.unsigned_abs();
    format!("{sign}{}.{}", abs / 10, abs % 10)
}

pub fn format_rssi(rssi_dbm: f64) -> String {
    format_tenths(rssi_to_tenths(rssi_dbm))
}

pub fn encode_report(report: &ScanReport) -> Result<Vec<u8>, EncodeError> {
    if !is_valid_sensor_id(&report.sensor_id) {
        return Err(EncodeError::InvalidSensorId(report.sensor_id.clone()));
    }
    let mut out = format!(
        "RPT|{}|{}|{}|{}\n",
        report.sensor_id,
        report.seq,
        report.timestamp_ms,
        report.detections.len()
    );
    for (index, det) in report.detections.iter().enumerate() {
        if index > 0 && report.detections[index - 1].addr >= det.addr {
            return Err(EncodeError::Unsorted { index });
        }
        let tenths = if det.rssi_dbm.is_finite() {
            rssi_to_tenths(det.rssi_dbm)
        } else {
            i64::MIN
        };
        if !(MIN_RSSI_TENTHS..=MAX_RSSI_TENTHS).contains(&tenths) {
            return Err(EncodeError::RssiOutOfRange {
                index,
                rssi: det.rssi_dbm.to_string(),
            });
        }
        validate_friendly_name(&det.friendly_name)
            .map_err(|reason| EncodeError::InvalidName { index, reason })?;
        out.push_str("DET|");
        out.push_str(&det.addr.to_string());
        out.push('|');
        out.push_str(&format_tenths(tenths));
        out.push('|');
        out.push_str(&det.friendly_name);
        out.push('\n');
    }
    out.push_str("END\n");
    Ok(out.into_bytes())
}

/// Decoding failure, with the 1-based line where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("empty input")]
    Empty,
    #[error("bad magic, expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("malformed header")]
    BadHeader,
    #[error("invalid sensor id")]
    BadSensorId,
    #[error("invalid {field} number")]
    BadNumber { field: &'static str },
    #[error("detection count mismatch: header declares {declared}, found {found}")]
    CountMismatch { declared: u64, found: u64 },
    #[error("malformed detection line")]
    BadDetection,
    #[error("invalid address")]
    BadAddress,
    #[error("invalid rssi")]
    BadRssi,
    #[error("rssi out of range [-120.0, 0.0]")]
    RssiOutOfRange,
    #[error("friendly name too long")]
    NameTooLong,
    #[error("invalid friendly name: {0}")]
    BadName(NameError),
    #[error("detections not strictly ascending by address")]
    Unsorted,
    #[error("line is not valid UTF-8")]
    InvalidUtf8,
    #[error("missing END")]
    MissingEnd,
    #[error("line not terminated by LF")]
    Unterminated,
    #[error("trailing bytes after END")]
    TrailingBytes,
}

fn perr(line: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, kind }
}

/// Splits the input into LF-terminated lines. The final element is the
/// unterminated remainder (empty when the input ends with LF).
struct Lines<'a> {
    rest: &'a [u8],
    line: usize,
}

enum Line<'a> {
    Complete(&'a str),
    /// Bytes after the last LF.
    Unterminated,
    Eof,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, Line<'a>), ParseError> {
        self.line += 1;
        if self.rest.is_empty() {
            return Ok((self.line, Line::Eof));
        }
        match self.rest.iter().position(|&b| b == b'\n') {
            Some(end) => {
                let raw = &self.rest[..end];
                self.rest = &self.rest[end + 1..];
                let text = std::str::from_utf8(raw)
                    .map_err(|_| perr(self.line, ParseErrorKind::InvalidUtf8))?;
                Ok((self.line, Line::Complete(text)))
            }
            None => Ok((self.line, Line::Unterminated)),
        }
    }
}

fn parse_u64(s: &str, field: &'static str, line: usize) -> Result<u64, ParseError> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(perr(line, ParseErrorKind::BadNumber { field }));
    }
    s.parse()
        .map_err(|_| perr(line, ParseErrorKind::BadNumber { field }))
}

/// Parses `"-"? digits "." digit` into tenths of a dB.
fn parse_rssi_tenths(s: &str, line: usize) -> Result<i64, ParseError> {
    let bad = || perr(line, ParseErrorKind::BadRssi);
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int_part, frac) = body.split_once('.').ok_or_else(bad)?;
    if int_part.is_empty()
        || !int_part.bytes().all(|b| b.is_ascii_digit())
        || frac.len() != 1
        || !frac.as_bytes()[0].is_ascii_digit()
    {
        return Err(bad());
    }
    let significant = int_part.trim_start_matches('0');
    // Anything with more than 4 significant integer digits is far outside
    // the accepted range.
    if significant.len() > 4 {
        return Err(perr(line, ParseErrorKind::RssiOutOfRange));
    }
    let whole: i64 = if significant.is_empty() {
        0
    } else {
        significant.parse().map_err(|_| bad())?
    };
    let magnitude = whole * 10 + i64::from(frac.as_bytes()[0] - b'0');
    let tenths = if negative { -magnitude } else { magnitude };
    if !(MIN_RSSI_TENTHS..=MAX_RSSI_TENTHS).contains(&tenths) {
        return Err(perr(line, ParseErrorKind::RssiOutOfRange));
    }
    Ok(tenths)
}

fn parse_detection(text: &str, line: usize) -> Result<Detection, ParseError> {
    let mut fields = text.splitn(4, '|');
    let (Some("DET"), Some(addr), Some(rssi), Some(name)) =
        (fields.next(), fields.next(), fields.next(), fields.next())
    else {
        return Err(perr(line, ParseErrorKind::BadDetection));
    };
    let addr: BtAddress = addr
        .parse()
        .map_err(|_| perr(line, ParseErrorKind::BadAddress))?;
    let tenths = parse_rssi_tenths(rssi, line)?;
    validate_friendly_name(name).map_err(|e| {
        let kind = match e {
            NameError::TooLong => ParseErrorKind::NameTooLong,
            other => ParseErrorKind::BadName(other),
        };
        perr(line, kind)
    })?;
    Ok(Detection {
        addr,
        rssi_dbm: tenths_to_rssi(tenths),
        friendly_name: name.to_string(),
    })
}

pub fn decode_report(bytes: &[u8]) -> Result<ScanReport, ParseError> {
    let mut lines = Lines { rest: bytes, line: 0 };

    let header = match lines.next_line()? {
        (line, Line::Eof) => return Err(perr(line, ParseErrorKind::Empty)),
        (line, Line::Unterminated) => return Err(perr(line, ParseErrorKind::Unterminated)),
        (_, Line::Complete(text)) => text,
    };
    if !header.starts_with("RPT|") {
        return Err(perr(1, ParseErrorKind::BadMagic { expected: "RPT" }));
    }
    let fields: Vec<&str> = header.split('|').collect();
    if fields.len() != 5 {
        return Err(perr(1, ParseErrorKind::BadHeader));
    }
    if !is_valid_sensor_id(fields[1]) {
        return Err(perr(1, ParseErrorKind::BadSensorId));
    }
    let seq = parse_u64(fields[2], "seq", 1)?;
    let timestamp_ms = parse_u64(fields[3], "timestamp", 1)?;
    let declared = parse_u64(fields[4], "count", 1)?;

    let mut detections: Vec<Detection> = Vec::new();
    loop {
        let (line, text) = match lines.next_line()? {
            (line, Line::Eof) => return Err(perr(line, ParseErrorKind::MissingEnd)),
            (line, Line::Unterminated) => {
                return Err(perr(line, ParseErrorKind::Unterminated))
            }
            (line, Line::Complete(text)) => (line, text),
        };
        let found = detections.len() as u64;
        if text == "END" {
            if found != declared {
                return Err(perr(line, ParseErrorKind::CountMismatch { declared, found }));
            }
            break;
        }
        if !text.starts_with("DET|") {
            return Err(perr(line, ParseErrorKind::BadMagic { expected: "DET or END" }));
        }
        if found == declared {
            return Err(perr(
                line,
                ParseErrorKind::CountMismatch {
                    declared,
                    found: found + 1,
                },
            ));
        }
        let det = parse_detection(text, line)?;
        if let Some(prev) = detections.last() {
            if prev.addr >= det.addr {
                return Err(perr(line, ParseErrorKind::Unsorted));
            }
        }
        detections.push(det);
    }

    if !lines.rest.is_empty() {
        return Err(perr(lines.line + 1, ParseErrorKind::TrailingBytes));
    }
    Ok(ScanReport {
        sensor_id: fields[1].to_string(),
        seq,
        timestamp_ms,
        detections,
    })
}
