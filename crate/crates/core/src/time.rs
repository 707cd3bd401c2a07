//! Integer-nanosecond simulation time.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};
use std::str::FromStr;

use serde::{Deserialize, Deserializer};

/// Nanoseconds since simulation start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    pub const fn as_ns(self) -> u64 {
        self.0
    }

    /// Microseconds as a float, for reporting only.
    pub fn as_us_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn checked_sub(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_sub(rhs.0).map(SimTime)
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    /// Time needed to serialize `bits` at `rate_bps`, rounded up to the next nanosecond.
    pub fn for_bits(bits: u64, rate_bps: u64) -> SimTime {
        assert!(rate_bps > 0, "rate must be positive");
        let ns = (bits as u128 * 1_000_000_000).div_ceil(rate_bps as u128);
        SimTime(ns.min(u64::MAX as u128) as u64)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_add(rhs.0).expect("simulation time overflow"))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_sub(rhs.0).expect("negative simulation time"))
    }
}

impl Mul<u64> for SimTime {
    type Output = SimTime;
    fn mul(self, rhs: u64) -> SimTime {
        SimTime(self.0.checked_mul(rhs).expect("simulation time overflow"))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ns = self.0;
        if ns == 0 {
            write!(f, "0ns")
        } else if ns.is_multiple_of(1_000_000_000) {
            write!(f, "{}s", ns / 1_000_000_000)
        } else if ns.is_multiple_of(1_000_000) {
            write!(f, "{}ms", ns / 1_000_000)
        } else if ns.is_multiple_of(1_000) {
            write!(f, "{}us", ns / 1_000)
        } else {
            write!(f, "{}ns", ns)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid time `{input}`: {reason}")]
pub struct ParseTimeError {
    input: String,
    reason: &'static str,
}

impl FromStr for SimTime {
    type Err = ParseTimeError;

    /// Accepts `<number><unit>` with unit one of `ns`, `us`, `µs`, `ms`, `s`.
    /// Decimal numbers are allowed as long as the result is a whole number of nanoseconds.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| ParseTimeError {
            input: s.to_string(),
            reason,
        };
        let t = s.trim();
        let split = t
            .find(|c: char| !(c.is_ascii_digit() || c == '.'))
            .ok_or_else(|| err("missing unit suffix (ns, us, ms, s)"))?;
        let (num, unit) = t.split_at(split);
        let scale: u64 = match unit.trim() {
            "ns" => 1,
            "us" | "µs" => 1_000,
            "ms" => 1_000_000,
            "s" => 1_000_000_000,
            _ => return Err(err("unknown unit suffix")),
        };
        if num.is_empty() {
            return Err(err("missing number"));
        }
        let (int_part, frac_part) = match num.split_once('.') {
            Some((i, f)) => (i, f),
            None => (num, ""),
        };
        if frac_part.contains('.') {
            return Err(err("malformed number"));
        }
        let int: u64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| err("malformed number"))?
        };
        let mut ns = int.checked_mul(scale).ok_or_else(|| err("out of range"))?;
        if !frac_part.is_empty() {
            let digits = frac_part.len() as u32;
            let frac: u64 = frac_part.parse().map_err(|_| err("malformed number"))?;
            let denom = 10u64.checked_pow(digits).ok_or_else(|| err("too many digits"))?;
            let scaled = frac as u128 * scale as u128;
            if !scaled.is_multiple_of(denom as u128) {
                return Err(err("not a whole number of nanoseconds"));
            }
            ns = ns
                .checked_add((scaled / denom as u128) as u64)
                .ok_or_else(|| err("out of range"))?;
        }
        Ok(SimTime(ns))
    }
}

impl<'de> Deserialize<'de> for SimTime {
    /// Strings carry a unit suffix; bare integers are nanoseconds.
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Ns(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Ns(ns) => Ok(SimTime(ns)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}
