//! Finite-difference helpers for verifying analytic gradients.

/// Step used by the crate's gradient checks.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Central difference `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps gradients that are zero up to rounding (e.g. a bias feeding
/// straight into batch normalization) from producing meaningless ratios.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Worst mismatch found by a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Label, analytic value, and numeric value at the worst entry.
    pub worst: Option<(String, f64, f64)>,
}

impl GradReport {
    pub fn new() -> Self {
        Self {
            checked: 0,
            max_relative_error: 0.0,
            worst: None,
        }
    }

    pub fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64, floor: f64) {
        self.checked += 1;
        let err = relative_error(analytic, numeric, floor);
        if err > self.max_relative_error || self.worst.is_none() {
            self.max_relative_error = self.max_relative_error.max(err);
            self.worst = Some((label(), analytic, numeric));
        }
    }
}

impl Default for GradReport {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_derivative() {
        let d = central_difference(|x| x * x * x, 2.0, DEFAULT_STEP);
        assert!((d - 12.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0, 0.0), 0.0);
        assert_eq!(relative_error(1e-12, 0.0, 1e-6), 1e-6);
        assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
    }
}
