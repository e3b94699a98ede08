//! Typed cell values and the text/timestamp parsing shared by every loader.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::schema::DeclaredType;

/// One stored value. Timestamps are UTC seconds since the epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Boolean(bool),
    Timestamp(i64),
}

impl Cell {
    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    /// Parses raw text according to the column's declared storage type.
    ///
    /// Returns `None` when the text cannot be read as that type. The empty
    /// string is null for every type.
    pub fn parse_as(raw: &str, declared: DeclaredType) -> Option<Cell> {
        if raw.is_empty() {
            return Some(Cell::Null);
        }
        match declared {
            DeclaredType::Integer => raw.trim().parse::<i64>().ok().map(Cell::Integer),
            DeclaredType::Real => raw.trim().parse::<f64>().ok().map(Cell::Real),
            DeclaredType::Text | DeclaredType::Unknown => Some(Cell::Text(raw.to_string())),
            DeclaredType::Boolean => parse_bool(raw).map(Cell::Boolean),
            DeclaredType::Datetime => parse_timestamp(raw).map(Cell::Timestamp),
        }
    }

    /// Canonical text form used for CSV export and vocabulary keys.
    ///
    /// Null renders as the empty string.
    pub fn render(&self) -> String {
        match self {
            Cell::Null => String::new(),
            Cell::Integer(v) => v.to_string(),
            Cell::Real(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Boolean(b) => b.to_string(),
            Cell::Timestamp(t) => format_timestamp(*t),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Integer(v) => Some(*v as f64),
            Cell::Real(v) => Some(*v),
            Cell::Boolean(b) => Some(if *b { 1.0 } else { 0.0 }),
            Cell::Timestamp(t) => Some(*t as f64),
            Cell::Text(s) => s.trim().parse::<f64>().ok(),
            Cell::Null => None,
        }
    }

    /// Seconds since the epoch, when the cell can be read as a point in time.
    pub fn as_timestamp(&self) -> Option<i64> {
        match self {
            Cell::Timestamp(t) | Cell::Integer(t) => Some(*t),
            Cell::Real(v) if v.is_finite() => Some(v.floor() as i64),
            Cell::Text(s) => parse_timestamp(s),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Boolean(_) => 1,
            Cell::Integer(_) => 2,
            Cell::Real(_) => 3,
            Cell::Timestamp(_) => 4,
            Cell::Text(_) => 5,
        }
    }
}

// Reals compare by bit pattern so cells can serve as hash keys.
impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Cell::Null, Cell::Null) => true,
            (Cell::Integer(a), Cell::Integer(b)) => a == b,
            (Cell::Real(a), Cell::Real(b)) => a.to_bits() == b.to_bits(),
            (Cell::Text(a), Cell::Text(b)) => a == b,
            (Cell::Boolean(a), Cell::Boolean(b)) => a == b,
            (Cell::Timestamp(a), Cell::Timestamp(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Cell {}

impl Hash for Cell {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Cell::Null => {}
            Cell::Integer(v) | Cell::Timestamp(v) => v.hash(state),
            Cell::Real(v) => v.to_bits().hash(state),
            Cell::Text(s) => s.hash(state),
            Cell::Boolean(b) => b.hash(state),
        }
    }
}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Cell::Integer(a), Cell::Integer(b)) | (Cell::Timestamp(a), Cell::Timestamp(b)) => {
                a.cmp(b)
            }
            (Cell::Real(a), Cell::Real(b)) => a.total_cmp(b),
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (Cell::Boolean(a), Cell::Boolean(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Null => f.write_str("NULL"),
            other => f.write_str(&other.render()),
        }
    }
}

pub fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "t" | "1" | "yes" | "y" => Some(true),
        "false" | "f" | "0" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Parses RFC 3339 / ISO-8601 datetimes (with or without offset, `T` or
/// space separator) and bare `YYYY-MM-DD` dates into UTC epoch seconds.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if s.len() < 10 {
        return None;
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&naive).timestamp());
        }
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%z", "%Y-%m-%dT%H:%M:%S%z", "%Y-%m-%d %H:%M:%S%:z"] {
        if let Ok(dt) = DateTime::parse_from_str(s, fmt) {
            return Some(dt.timestamp());
        }
    }
    if s.len() == 10 {
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Some(Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0)?).timestamp());
        }
    }
    None
}

pub fn format_timestamp(secs: i64) -> String {
    match Utc.timestamp_opt(secs, 0).single() {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => secs.to_string(),
    }
}
