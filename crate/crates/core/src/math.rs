//! Floating-point helpers. Everything goes through `libm` so results are the
//! same with and without `std`.

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// `ln Σ exp(xs)`, shifted by the maximum. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| exp(x - max)).sum();
    max + ln(sum)
}

/// Normalized probabilities from log-scores.
pub fn softmax(log_scores: &[f64]) -> alloc::vec::Vec<f64> {
    let lse = log_sum_exp(log_scores);
    log_scores.iter().map(|&s| exp(s - lse)).collect()
}
