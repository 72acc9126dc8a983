/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Sample mean and standard error of the mean. Standard error is zero for fewer than two values.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let count = values.len();
    if count == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sum(values.iter().copied()) / count as f64;
    if count < 2 {
        return (mean, 0.0);
    }
    let var = sum(values.iter().map(|v| (v - mean) * (v - mean))) / (count - 1) as f64;
    (mean, (var / count as f64).sqrt())
}
