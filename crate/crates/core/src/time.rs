//! Virtual time for the deterministic bus simulation.
//!
//! All scheduling is done in integer microseconds so burst intervals and
//! TTL boundaries compare exactly.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A point on the simulation clock, in microseconds since simulation start.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    /// Whole milliseconds, truncated.
    pub const fn as_millis(self) -> u64 {
        self.0 / 1_000
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub const fn plus_micros(self, us: u64) -> Self {
        SimTime(self.0 + us)
    }

    pub const fn plus_millis(self, ms: u64) -> Self {
        SimTime(self.0 + ms * 1_000)
    }

    /// Microseconds elapsed since `earlier`, zero if `earlier` is in the future.
    pub const fn micros_since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}ms", self.0 / 1_000, self.0 % 1_000)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn millis_and_micros_agree() {
        let t = SimTime::from_millis(5_002);
        assert_eq!(t.as_micros(), 5_002_000);
        assert_eq!(t.plus_micros(1).as_millis(), 5_002);
        assert_eq!(t.to_string(), "5002.000ms");
    }

    #[test]
    fn since_saturates() {
        let a = SimTime::from_millis(10);
        let b = SimTime::from_millis(4);
        assert_eq!(a.micros_since(b), 6_000);
        assert_eq!(b.micros_since(a), 0);
    }
}
