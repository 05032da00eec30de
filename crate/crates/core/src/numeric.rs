//! Small numeric helpers shared by the metric and statistics code.

/// Neumaier-compensated accumulator, so that means are independent of
/// summation order up to rounding of the final result.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Arithmetic mean with compensated summation. `None` for an empty input.
pub fn mean<I: IntoIterator<Item = f64>>(values: I) -> Option<f64> {
    let mut acc = CompensatedSum::new();
    let mut n = 0usize;
    for v in values {
        acc.add(v);
        n += 1;
    }
    (n > 0).then(|| acc.total() / n as f64)
}

/// Sum and trailing error of two floats (Knuth's TwoSum).
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Mean held as an unevaluated sum `hi + lo` with roughly twice the
/// precision of an `f64`.
fn wide_mean(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for &v in values {
        let (s, e) = two_sum(hi, v);
        hi = s;
        lo += e;
    }
    let (hi, lo) = two_sum(hi, lo);
    let n = values.len() as f64;
    let q1 = hi / n;
    let r = (-q1).mul_add(n, hi) + lo;
    Some(two_sum(q1, r / n))
}

/// `|mean(a) - mean(b)|` rounded once at the end, so decimal inputs such as
/// `{0.8, 0.6}` against `{0.2}` give exactly `0.5`. `None` if either side is
/// empty.
pub fn mean_gap(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ah, al) = wide_mean(a)?;
    let (bh, bl) = wide_mean(b)?;
    let (s, e) = two_sum(ah, -bh);
    Some((s + (e + (al - bl))).abs())
}

/// Population standard deviation (divides by `n`). `None` for an empty input.
pub fn population_std(values: &[f64]) -> Option<f64> {
    let m = mean(values.iter().copied())?;
    let var = mean(values.iter().map(|v| (v - m) * (v - m)))?;
    Some(var.max(0.0).sqrt())
}

/// Rounds to six decimal places, the precision used by every emitted artifact.
pub fn round6(value: f64) -> f64 {
    if !value.is_finite() {
        return value;
    }
    let r = (value * 1e6).round() / 1e6;
    // avoid emitting "-0.0"
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_gap_rounds_once() {
        assert_eq!(mean_gap(&[0.8, 0.6], &[0.2]), Some(0.5));
        assert_eq!(mean_gap(&[0.2], &[0.8, 0.6]), Some(0.5));
        assert_eq!(mean_gap(&[], &[0.2]), None);
        assert!(mean_gap(&[0.1, 0.2, 0.3], &[0.2]).is_some_and(|g| g < 1e-16));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = CompensatedSum::new();
        acc.add(1e16);
        for _ in 0..10 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_eq!(acc.total(), 10.0);
    }

    #[test]
    fn population_std_of_counts() {
        assert!((population_std(&[3.0, 2.0, 1.0, 1.0, 1.0]).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(population_std(&[]), None);
        assert_eq!(population_std(&[4.0]), Some(0.0));
    }

    #[test]
    fn round6_behaviour() {
        assert_eq!(round6(0.1234565), 0.123457);
        assert_eq!(round6(-0.0000001), 0.0);
        assert_eq!(round6(2.0), 2.0);
    }
}
