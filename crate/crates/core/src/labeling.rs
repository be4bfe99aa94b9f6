//! Power classes and their two-output target codes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum ClassLabel {
    Lowest = 1,
    Low = 2,
    High = 3,
    Highest = 4,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Lowest,
        ClassLabel::Low,
        ClassLabel::High,
        ClassLabel::Highest,
    ];

    /// 1-based class number.
    pub fn index(self) -> u8 {
        self as u8
    }

    /// 0-based position, for indexing arrays of per-class data.
    pub fn position(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(index: u8) -> Result<Self> {
        match index {
            1 => Ok(ClassLabel::Lowest),
            2 => Ok(ClassLabel::Low),
            3 => Ok(ClassLabel::High),
            4 => Ok(ClassLabel::Highest),
            other => Err(Error::InvalidInput(format!(
                "class index {other} not in 1..=4"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Lowest => "Lowest-Power-Consuming",
            ClassLabel::Low => "Low-Power-Consuming",
            ClassLabel::High => "High-Power-Consuming",
            ClassLabel::Highest => "Highest-Power-Consuming",
        }
    }

    pub fn encode(self) -> TargetCode {
        let (a, b) = match self {
            ClassLabel::Lowest => (1, 1),
            ClassLabel::Low => (-1, 1),
            ClassLabel::High => (1, -1),
            ClassLabel::Highest => (-1, -1),
        };
        TargetCode { a, b }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.index(), self.name())
    }
}

impl From<ClassLabel> for u8 {
    fn from(c: ClassLabel) -> u8 {
        c.index()
    }
}

impl TryFrom<u8> for ClassLabel {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        ClassLabel::from_index(v)
    }
}

/// Sign pair fed to / read from the two output neurons (neuron 1 = `a`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TargetCode {
    a: i8,
    b: i8,
}

impl TargetCode {
    pub fn new(a: i8, b: i8) -> Result<Self> {
        if a.abs() != 1 || b.abs() != 1 {
            return Err(Error::InvalidInput(format!(
                "target code ({a}, {b}) is not ±1"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn pair(self) -> (i8, i8) {
        (self.a, self.b)
    }

    pub fn as_f64(self) -> [f64; 2] {
        [self.a as f64, self.b as f64]
    }

    pub fn decode(self) -> ClassLabel {
        match (self.a, self.b) {
            (1, 1) => ClassLabel::Lowest,
            (-1, 1) => ClassLabel::Low,
            (1, -1) => ClassLabel::High,
            _ => ClassLabel::Highest,
        }
    }
}

/// Wattage cut points splitting `[min_w, max_w]` into four classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassBounds {
    pub min_w: f64,
    pub max_w: f64,
    pub cuts: [f64; 3],
}

/// How cut points are placed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundsPolicy {
    /// Four equal-width intervals between min and max.
    #[default]
    EqualWidth,
    /// Quartiles, so each class holds about the same number of readings.
    EqualFrequency,
}

/// Which readings the class cut points are fit on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundsSource {
    /// Every reading, train and test.
    #[default]
    All,
    Train,
}

fn range_of(watts: &[f64]) -> Result<(f64, f64)> {
    if let Some(w) = watts.iter().find(|w| !w.is_finite()) {
        return Err(Error::InvalidInput(format!("wattage {w} is not finite")));
    }
    let min = watts.iter().copied().fold(f64::INFINITY, f64::min);
    let max = watts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if watts.is_empty() || min >= max {
        return Err(Error::DegenerateRange(
            "need at least two distinct wattages".into(),
        ));
    }
    Ok((min, max))
}

impl ClassBounds {
    pub fn fit(watts: &[f64], policy: BoundsPolicy) -> Result<Self> {
        match policy {
            BoundsPolicy::EqualWidth => fit_bounds(watts),
            BoundsPolicy::EqualFrequency => fit_quantile_bounds(watts),
        }
    }

    /// Class of a wattage. Intervals are right-open except the last;
    /// values outside `[min_w, max_w]` clamp to the end classes.
    pub fn classify(&self, watts: f64) -> Result<ClassLabel> {
        if !watts.is_finite() {
            return Err(Error::InvalidInput(format!(
                "wattage {watts} is not finite"
            )));
        }
        let [c1, c2, c3] = self.cuts;
        Ok(if watts < c1 {
            ClassLabel::Lowest
        } else if watts < c2 {
            ClassLabel::Low
        } else if watts < c3 {
            ClassLabel::High
        } else {
            ClassLabel::Highest
        })
    }
}

/// Equal-width bounds over the full range of `watts`.
pub fn fit_bounds(watts: &[f64]) -> Result<ClassBounds> {
    let (min_w, max_w) = range_of(watts)?;
    let step = (max_w - min_w) / 4.0;
    Ok(ClassBounds {
        min_w,
        max_w,
        cuts: [min_w + step, min_w + 2.0 * step, min_w + 3.0 * step],
    })
}

fn fit_quantile_bounds(watts: &[f64]) -> Result<ClassBounds> {
    let (min_w, max_w) = range_of(watts)?;
    let mut sorted = watts.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let cuts = [quantile(0.25), quantile(0.5), quantile(0.75)];
    if !(min_w < cuts[0] && cuts[0] < cuts[1] && cuts[1] < cuts[2] && cuts[2] < max_w) {
        return Err(Error::DegenerateRange(
            "too many repeated wattages for four quantile classes".into(),
        ));
    }
    Ok(ClassBounds { min_w, max_w, cuts })
}

pub fn classify_watts(watts: f64, bounds: &ClassBounds) -> Result<ClassLabel> {
    bounds.classify(watts)
}

pub fn encode(label: ClassLabel) -> TargetCode {
    label.encode()
}

pub fn decode(code: TargetCode) -> ClassLabel {
    code.decode()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_cuts() {
        let b = fit_bounds(&[100.0, 180.0, 150.0]).unwrap();
        assert_eq!(b.cuts, [120.0, 140.0, 160.0]);
        let b = fit_bounds(&[0.0, 4.0]).unwrap();
        assert_eq!(b.cuts, [1.0, 2.0, 3.0]);
        assert!(matches!(
            fit_bounds(&[150.0; 5]),
            Err(Error::DegenerateRange(_))
        ));
    }

    #[test]
    fn interval_membership() {
        let b = fit_bounds(&[100.0, 180.0]).unwrap();
        assert_eq!(b.classify(125.0).unwrap(), ClassLabel::Low);
        assert_eq!(b.classify(140.0).unwrap(), ClassLabel::High);
        assert_eq!(b.classify(180.0).unwrap(), ClassLabel::Highest);
        assert_eq!(b.classify(100.0).unwrap(), ClassLabel::Lowest);
        assert_eq!(b.classify(50.0).unwrap(), ClassLabel::Lowest);
        assert_eq!(b.classify(500.0).unwrap(), ClassLabel::Highest);
        assert!(b.classify(f64::NAN).is_err());
    }

    #[test]
    fn code_table() {
        assert_eq!(encode(ClassLabel::Lowest).pair(), (1, 1));
        assert_eq!(encode(ClassLabel::Low).pair(), (-1, 1));
        assert_eq!(encode(ClassLabel::High).pair(), (1, -1));
        assert_eq!(encode(ClassLabel::Highest).pair(), (-1, -1));
        assert_eq!(
            decode(TargetCode::new(-1, -1).unwrap()),
            ClassLabel::Highest
        );
        for c in ClassLabel::ALL {
            assert_eq!(decode(encode(c)), c);
            assert_eq!(ClassLabel::from_index(c.index()).unwrap(), c);
        }
        assert!(TargetCode::new(0, 1).is_err());
    }

    #[test]
    fn quantile_bounds_balance_classes() {
        let watts: Vec<f64> = (0..100).map(|i| 100.0 + (i * i) as f64 * 0.01).collect();
        let b = ClassBounds::fit(&watts, BoundsPolicy::EqualFrequency).unwrap();
        let mut counts = [0; 4];
        for &w in &watts {
            counts[b.classify(w).unwrap().position()] += 1;
        }
        assert!(counts.iter().all(|&c| (24..=26).contains(&c)), "{counts:?}");
    }
}
