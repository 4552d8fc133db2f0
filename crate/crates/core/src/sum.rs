//! Neumaier compensated summation.

/// Running sum with a separate compensation term for lost low-order bits.
///
/// Partial sums computed over disjoint blocks can be folded together with
/// [`CompensatedSum::merge`]; merging in a fixed order gives a result that
/// does not depend on how the blocks were scheduled.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub const fn new() -> Self {
        Self { sum: 0.0, compensation: 0.0 }
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if libm::fabs(self.sum) >= libm::fabs(value) {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl core::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}
