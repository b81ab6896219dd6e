use serde::{Deserialize, Serialize};

/// Train-fitted min-max range for one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    /// Fits over the finite values; `None` when there are none.
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f64>) -> Option<Self> {
        let mut it = values.into_iter().copied().filter(|v| v.is_finite());
        let first = it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Some(Self { min, max })
    }

    /// Maps into [0, 1], clamping values outside the train range. A degenerate
    /// range maps everything to 0. NaN passes through.
    pub fn apply(&self, v: f64) -> f64 {
        if v.is_nan() {
            return v;
        }
        let width = self.max - self.min;
        if width <= 0.0 {
            return 0.0;
        }
        ((v - self.min) / width).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let s = MinMax::fit(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(s.apply(4.0), 0.5);
        assert_eq!(s.apply(8.0), 1.0);
        assert_eq!(s.apply(-1.0), 0.0);
        let d = MinMax::fit(&[3.0, 3.0]).unwrap();
        assert_eq!(d.apply(3.0), 0.0);
        assert_eq!(d.apply(10.0), 0.0);
        assert!(s.apply(f64::NAN).is_nan());
        assert!(MinMax::fit(&[f64::NAN]).is_none());
    }
}
