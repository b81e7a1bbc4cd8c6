//! Millisecond-precision UTC timestamps and the clocks that produce them.
//!
//! Every timestamp that enters the event log goes through [`Timestamp`], which
//! truncates to whole milliseconds. That keeps a value identical after a
//! round trip through the RFC 3339 text form, which replay depends on.

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use chrono::{DateTime, Duration, SecondsFormat, TimeZone, Timelike, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn new(at: DateTime<Utc>) -> Self {
        let nanos = at.nanosecond() % 1_000_000_000;
        let truncated = at
            .with_nanosecond(nanos - nanos % 1_000_000)
            .expect("nanosecond value stays in range");
        Timestamp(truncated)
    }

    pub fn from_millis(millis: i64) -> Self {
        Timestamp(
            Utc.timestamp_millis_opt(millis)
                .single()
                .expect("millisecond timestamp in chrono range"),
        )
    }

    pub fn as_datetime(&self) -> DateTime<Utc> {
        self.0
    }

    pub fn plus_millis(&self, millis: i64) -> Self {
        Timestamp(self.0 + Duration::milliseconds(millis))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_rfc3339_opts(SecondsFormat::Millis, true))
    }
}

impl FromStr for Timestamp {
    type Err = chrono::ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parsed = DateTime::parse_from_rfc3339(s)?;
        Ok(Timestamp::new(parsed.with_timezone(&Utc)))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Source of "now" for every mutation. Engines take one reading per operation.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::new(Utc::now())
    }
}

/// Deterministic clock: the first reading is `start`, each later reading is
/// `step_millis` after the previous one.
#[derive(Debug)]
pub struct SteppingClock {
    next: Mutex<Timestamp>,
    step_millis: i64,
}

impl SteppingClock {
    /// 2024-01-01T00:00:00.000Z
    pub const DEFAULT_START_MILLIS: i64 = 1_704_067_200_000;

    pub fn new(start: Timestamp, step_millis: i64) -> Self {
        SteppingClock {
            next: Mutex::new(start),
            step_millis,
        }
    }
}

impl Default for SteppingClock {
    fn default() -> Self {
        SteppingClock::new(Timestamp::from_millis(Self::DEFAULT_START_MILLIS), 1000)
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> Timestamp {
        let mut next = self.next.lock().expect("clock mutex poisoned");
        let current = *next;
        *next = current.plus_millis(self.step_millis);
        current
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncates_to_millis_and_round_trips() {
        let raw = Utc.timestamp_opt(1_700_000_000, 123_456_789).unwrap();
        let ts = Timestamp::new(raw);
        assert_eq!(ts.to_string(), "2023-11-14T22:13:20.123Z");
        let back: Timestamp = ts.to_string().parse().unwrap();
        assert_eq!(back, ts);
    }

    #[test]
    fn offsets_normalize_to_utc() {
        let ts: Timestamp = "2024-03-01T05:30:00.250+05:30".parse().unwrap();
        assert_eq!(ts.to_string(), "2024-03-01T00:00:00.250Z");
    }

    #[test]
    fn stepping_clock_advances() {
        let clock = SteppingClock::default();
        let a = clock.now();
        let b = clock.now();
        assert_eq!(a.to_string(), "2024-01-01T00:00:00.000Z");
        assert_eq!(b.to_string(), "2024-01-01T00:00:01.000Z");
    }
}
