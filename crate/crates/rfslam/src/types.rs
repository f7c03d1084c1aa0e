//! Domain types shared by the whole pipeline: node identities, radio
//! fingerprints, and per-user traces.

use crate::geom::Pose2;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// A 48-bit access-point MAC address, canonicalized at parse time to the
/// lowercase colon-free hex form that fingerprint similarity keys on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mac(u64);

#[derive(Debug, Error, PartialEq)]
pub enum MacError {
    #[error("MAC address must contain exactly 12 hex digits, got {0:?}")]
    BadLength(String),
    #[error("MAC address contains a non-hex digit: {0:?}")]
    BadDigit(String),
}

impl Mac {
    /// Parses `aa:bb:cc:dd:ee:ff`, `AA-BB-..`, or bare hex into the
    /// canonical form. Separators `:`, `-`, and `.` are dropped.
    pub fn parse(s: &str) -> Result<Mac, MacError> {
        let hex: String = s.chars().filter(|c| !matches!(c, ':' | '-' | '.')).collect();
        if hex.len() != 12 {
            return Err(MacError::BadLength(s.to_string()));
        }
        u64::from_str_radix(&hex, 16).map(Mac).map_err(|_| MacError::BadDigit(s.to_string()))
    }

    /// Builds a MAC from its 48-bit value (used by the simulator).
    pub fn from_raw(raw: u64) -> Mac {
        Mac(raw & 0xffff_ffff_ffff)
    }

    pub fn raw(&self) -> u64 {
        self.0
    }
}

impl fmt::Display for Mac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:012x}", self.0)
    }
}

impl Serialize for Mac {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Mac {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Mac, D::Error> {
        let s = String::deserialize(deserializer)?;
        Mac::parse(&s).map_err(de::Error::custom)
    }
}

/// Identifies one pose-graph node: user index plus the time-step index
/// within that user's trace. Ordering is (user, step), which fixes the
/// deterministic node order used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub user: u32,
    pub step: u32,
}

impl NodeId {
    pub fn new(user: u32, step: u32) -> Self {
        Self { user, step }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.user, self.step)
    }
}

/// One Wi-Fi scan bound to the odometric pose where it was recorded.
///
/// Readings hold at most one RSS value per AP; RSS is in dBm and never
/// positive. The `BTreeMap` keeps AP iteration order canonical so
/// similarity sums are reproducible bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub node: NodeId,
    /// Recording timestamp in seconds (trace-local clock).
    pub t: f64,
    /// Odometric pose at recording time.
    pub pose: Pose2,
    pub readings: BTreeMap<Mac, i32>,
}

impl Fingerprint {
    pub fn new(node: NodeId, t: f64, pose: Pose2, readings: BTreeMap<Mac, i32>) -> Self {
        debug_assert!(readings.values().all(|&rss| rss <= 0), "RSS must be <= 0 dBm");
        Self { node, t, pose, readings }
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }
}

/// One user's time-ordered recording: odometry, optional inertial streams,
/// and the fingerprints bound to it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Trace {
    pub user: u32,
    /// (timestamp s, pose); either recorded directly or dead-reckoned from
    /// the inertial streams at ingestion.
    pub odometry: Vec<(f64, Pose2)>,
    /// (timestamp s, acceleration magnitude m/s^2) at a fixed rate.
    pub accel: Vec<(f64, f64)>,
    /// (timestamp s, heading rad).
    pub compass: Vec<(f64, f64)>,
    pub fingerprints: Vec<Fingerprint>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("user {user}: {stream} timestamps must be strictly increasing (index {index})")]
    NonMonotonicTimestamps { user: u32, stream: &'static str, index: usize },
    #[error("user {user}: fingerprint at t={t} has rss {rss} > 0 dBm for {mac}")]
    PositiveRss { user: u32, t: f64, mac: Mac, rss: i32 },
}

impl Trace {
    /// Checks the timestamp-ordering and RSS-sign invariants.
    pub fn validate(&self) -> Result<(), TraceError> {
        fn check<T>(user: u32, stream: &'static str, items: &[(f64, T)]) -> Result<(), TraceError> {
            for (i, w) in items.windows(2).enumerate() {
                if w[1].0 <= w[0].0 {
                    return Err(TraceError::NonMonotonicTimestamps { user, stream, index: i + 1 });
                }
            }
            Ok(())
        }
        check(self.user, "odometry", &self.odometry)?;
        check(self.user, "accel", &self.accel)?;
        check(self.user, "compass", &self.compass)?;
        for (i, f) in self.fingerprints.iter().enumerate() {
            if i > 0 && f.t <= self.fingerprints[i - 1].t {
                return Err(TraceError::NonMonotonicTimestamps { user: self.user, stream: "wifi", index: i });
            }
            for (mac, &rss) in &f.readings {
                if rss > 0 {
                    return Err(TraceError::PositiveRss { user: self.user, t: f.t, mac: *mac, rss });
                }
            }
        }
        Ok(())
    }
}
