//! Central finite differences, used as the oracle for analytic gradients.

/// Outcome of comparing analytic and numeric derivatives on a set of probes.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub probes: usize,
    pub passed: usize,
    pub worst_relative: f64,
    pub failures: Vec<GradProbe>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradProbe {
    pub label: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn pass_fraction(&self) -> f64 {
        if self.probes == 0 {
            return 0.0;
        }
        self.passed as f64 / self.probes as f64
    }
}

/// `(f(θ+h) − f(θ−h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, theta: f64, h: f64) -> f64 {
    (f(theta + h) - f(theta - h)) / (2.0 * h)
}

/// Relative discrepancy `|a − n| / max(|a|, |n|)`; pairs with both
/// magnitudes below `floor` count as agreeing.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < floor {
        return 0.0;
    }
    (analytic - numeric).abs() / scale
}

/// Accumulates probes against a relative tolerance.
#[derive(Debug)]
pub struct GradChecker {
    tolerance: f64,
    floor: f64,
    report: GradCheckReport,
}

impl GradChecker {
    pub fn new(tolerance: f64, floor: f64) -> Self {
        GradChecker {
            tolerance,
            floor,
            report: GradCheckReport { probes: 0, passed: 0, worst_relative: 0.0, failures: Vec::new() },
        }
    }

    pub fn record(&mut self, label: impl Into<String>, analytic: f64, numeric: f64) -> bool {
        let rel = relative_error(analytic, numeric, self.floor);
        self.report.probes += 1;
        let ok = rel <= self.tolerance && analytic.is_finite() && numeric.is_finite();
        if ok {
            self.report.passed += 1;
        } else {
            self.report.failures.push(GradProbe { label: label.into(), analytic, numeric });
        }
        if rel.is_finite() {
            self.report.worst_relative = self.report.worst_relative.max(rel);
        }
        ok
    }

    pub fn finish(self) -> GradCheckReport {
        self.report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_cubic() {
        let d = central_difference(|x| x * x * x, 2.0, 1e-4);
        assert!((d - 12.0).abs() < 1e-7);
    }

    #[test]
    fn tiny_pairs_agree() {
        assert_eq!(relative_error(1e-14, -1e-14, 1e-10), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-10) - 0.1 / 1.1).abs() < 1e-12);
    }
}
