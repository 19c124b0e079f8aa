use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A percentage held in tenths of a point, so 91.7% is `Percent(917)`.
///
/// Ratios are rounded half away from zero using integer arithmetic, which keeps
/// table values exact (11/12 is always 91.7, never 91.66666).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Percent(u32);

impl Percent {
    pub const ZERO: Percent = Percent(0);
    pub const HUNDRED: Percent = Percent(1000);

    /// `numerator / denominator * 100`, rounded to one decimal.
    ///
    /// Panics if `denominator` is zero or `numerator > denominator`.
    pub fn ratio(numerator: usize, denominator: usize) -> Percent {
        assert!(denominator > 0, "percentage of an empty set");
        assert!(numerator <= denominator, "ratio above 100%");
        let (n, d) = (numerator as u64, denominator as u64);
        Percent(((2 * n * 1000 + d) / (2 * d)) as u32)
    }

    pub fn from_tenths(tenths: u32) -> Percent {
        Percent(tenths)
    }

    pub fn tenths(self) -> u32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0 / 10, self.0 % 10)
    }
}

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        if !(0.0..=100.0).contains(&v) {
            return Err(serde::de::Error::custom(format!("percentage {v} outside [0, 100]")));
        }
        Ok(Percent((v * 10.0).round() as u32))
    }
}
