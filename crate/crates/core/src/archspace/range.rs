use serde::{Deserialize, Serialize};

use super::SpaceError;

const GRID_TOL: f64 = 1e-9;

/// A `(lo, hi, step)` triplet describing the legal values of one variable factor.
///
/// Serialized as a three-element array, e.g. `[192, 240, 24]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct FactorRange {
    lo: f64,
    hi: f64,
    step: f64,
}

impl FactorRange {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self, SpaceError> {
        let malformed =
            |reason: &str| SpaceError::MalformedRange { lo, hi, step, reason: reason.to_string() };
        if !(lo.is_finite() && hi.is_finite() && step.is_finite()) {
            return Err(malformed("non-finite bound"));
        }
        if step <= 0.0 {
            return Err(malformed("step must be positive"));
        }
        if lo > hi {
            return Err(malformed("lower bound exceeds upper bound"));
        }
        let spans = (hi - lo) / step;
        if (spans - spans.round()).abs() > GRID_TOL * spans.max(1.0) {
            return Err(malformed("span is not a multiple of the step"));
        }
        Ok(Self { lo, hi, step })
    }

    /// Single-value range.
    pub fn fixed(value: f64) -> Self {
        Self { lo: value, hi: value, step: 1.0 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        ((self.hi - self.lo) / self.step).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Value at grid index `i`; the last index maps exactly onto `hi`.
    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.len() {
            self.hi
        } else {
            self.lo + i as f64 * self.step
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }

    /// Integer view of the grid. Only meaningful for channel/count factors.
    pub fn int_values(&self) -> Vec<usize> {
        self.values().into_iter().map(|v| v.round() as usize).collect()
    }

    /// Grid index of `value`, if it lies on the grid.
    pub fn index_of(&self, value: f64) -> Option<usize> {
        if value < self.lo - GRID_TOL || value > self.hi + GRID_TOL {
            return None;
        }
        let idx = ((value - self.lo) / self.step).round();
        let snapped = self.lo + idx * self.step;
        if (snapped - value).abs() <= GRID_TOL * value.abs().max(1.0) {
            Some(idx as usize)
        } else {
            None
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.index_of(value).is_some()
    }

    pub fn is_integral(&self) -> bool {
        self.lo.fract() == 0.0 && self.step.fract() == 0.0
    }
}

impl TryFrom<[f64; 3]> for FactorRange {
    type Error = SpaceError;

    fn try_from([lo, hi, step]: [f64; 3]) -> Result<Self, Self::Error> {
        FactorRange::new(lo, hi, step)
    }
}

impl From<FactorRange> for [f64; 3] {
    fn from(r: FactorRange) -> Self {
        [r.lo, r.hi, r.step]
    }
}

/// Expands a range into its ordered list of legal values.
pub fn expand_range(range: &FactorRange) -> Vec<f64> {
    range.values()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_triplet() {
        let r = FactorRange::new(192.0, 240.0, 24.0).unwrap();
        assert_eq!(expand_range(&r), vec![192.0, 216.0, 240.0]);
    }

    #[test]
    fn degenerate_range() {
        let r = FactorRange::new(12.0, 12.0, 1.0).unwrap();
        assert_eq!(expand_range(&r), vec![12.0]);
    }

    #[test]
    fn fractional_step() {
        let r = FactorRange::new(3.5, 4.0, 0.5).unwrap();
        assert_eq!(expand_range(&r), vec![3.5, 4.0]);
        assert_eq!(r.index_of(4.0), Some(1));
        assert_eq!(r.index_of(3.75), None);
    }

    #[test]
    fn malformed() {
        assert!(FactorRange::new(1.0, 2.0, 0.0).is_err());
        assert!(FactorRange::new(1.0, 2.0, -1.0).is_err());
        assert!(FactorRange::new(3.0, 2.0, 1.0).is_err());
        assert!(FactorRange::new(192.0, 240.0, 25.0).is_err());
        assert!(serde_json::from_str::<FactorRange>("[1, 2, 0]").is_err());
    }

    #[test]
    fn triplet_serde() {
        let r: FactorRange = serde_json::from_str("[3, 4, 0.5]").unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(serde_json::to_string(&r).unwrap(), "[3.0,4.0,0.5]");
    }

    proptest::proptest! {
        #[test]
        fn length_matches_span(lo in -50i32..50, n in 0usize..40, step in 1u32..9) {
            let step = step as f64 * 0.25;
            let hi = lo as f64 + n as f64 * step;
            let r = FactorRange::new(lo as f64, hi, step).unwrap();
            let v = expand_range(&r);
            proptest::prop_assert_eq!(v.len(), n + 1);
            proptest::prop_assert!(v.windows(2).all(|w| w[0] < w[1]));
            proptest::prop_assert_eq!(*v.last().unwrap(), hi);
        }
    }
}
