//! Small numerical kernels shared by the combinatorial and asymptotic code.

use statrs::function::factorial::ln_binomial;

/// Natural log of the binomial coefficient, `-inf` when `k > n`.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        f64::NEG_INFINITY
    } else {
        ln_binomial(n, k)
    }
}

/// One term `sign * exp(log_magnitude)` of an alternating series.
#[derive(Debug, Clone, Copy)]
pub struct SignedLogTerm {
    pub negative: bool,
    pub log_magnitude: f64,
}

impl SignedLogTerm {
    pub fn new(negative: bool, log_magnitude: f64) -> Self {
        Self { negative, log_magnitude }
    }
}

/// Result of summing an alternating series in the log domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesSum {
    pub value: f64,
    /// Sum of absolute term magnitudes; rounding error is bounded by a small
    /// multiple of `f64::EPSILON * absolute_mass`.
    pub absolute_mass: f64,
}

impl SeriesSum {
    pub fn rounding_bound(&self, n_terms: usize) -> f64 {
        4.0 * f64::EPSILON * self.absolute_mass * (n_terms.max(1) as f64).sqrt()
    }
}

/// Sums signed terms given as logs of their magnitudes.
///
/// Terms are rescaled by the largest magnitude before exponentiation and
/// accumulated with Neumaier compensation.
pub fn sum_signed_log_terms(terms: &[SignedLogTerm]) -> SeriesSum {
    let max_log = terms.iter().map(|t| t.log_magnitude).filter(|l| l.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !max_log.is_finite() {
        return SeriesSum { value: 0.0, absolute_mass: 0.0 };
    }
    let mut acc = NeumaierSum::default();
    let mut mass = 0.0;
    for t in terms {
        if !t.log_magnitude.is_finite() {
            continue;
        }
        let scaled = (t.log_magnitude - max_log).exp();
        mass += scaled;
        acc.add(if t.negative { -scaled } else { scaled });
    }
    let scale = max_log.exp();
    SeriesSum { value: acc.total() * scale, absolute_mass: mass * scale }
}

/// Compensated (Kahan–Babuška–Neumaier) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl std::iter::FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = NeumaierSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// `e^x - 1 - x`, accurate for small `x`.
pub fn exp_minus_one_minus_x(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        let x2 = x * x;
        x2 * (0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x / 120.0)))
    } else {
        x.exp_m1() - x
    }
}

/// SplitMix64 finaliser, used to derive independent seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
