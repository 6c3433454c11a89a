//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor for the relative error, so near-zero gradients are
    /// compared absolutely.
    pub rel_floor: f64,
    /// Skip entries whose one-sided differences disagree, i.e. where the
    /// perturbation crosses a ReLU or max-pool kink.
    pub skip_kinks: bool,
    /// Check at most this many entries (chosen with `seed`).
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            rel_floor: 1e-6,
            skip_kinks: false,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance && self.checked > 0
    }

    /// Combines reports from several parameter tensors.
    pub fn merge(reports: &[GradCheckReport]) -> GradCheckReport {
        let mut out = GradCheckReport {
            max_rel_error: 0.0,
            worst_index: None,
            checked: 0,
            skipped_kinks: 0,
            tolerance: reports.iter().map(|r| r.tolerance).fold(f64::INFINITY, f64::min),
        };
        for r in reports {
            if r.max_rel_error > out.max_rel_error || out.worst_index.is_none() {
                out.max_rel_error = out.max_rel_error.max(r.max_rel_error);
                out.worst_index = r.worst_index.or(out.worst_index);
            }
            out.checked += r.checked;
            out.skipped_kinks += r.skipped_kinks;
        }
        out
    }
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `f` around `point`.
pub fn gradient_check(
    point: &Tensor,
    analytic: &Tensor,
    mut f: impl FnMut(&Tensor) -> f64,
    tolerance: f64,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    if point.shape() != analytic.shape() {
        return Err(shape_err(
            "gradient_check",
            format!("{:?} vs {:?}", point.shape(), analytic.shape()),
        ));
    }
    let indices: Vec<usize> = match opts.max_entries {
        Some(m) if m < point.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut v = sample(&mut rng, point.len(), m).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..point.len()).collect(),
    };
    let h = opts.step;
    let f0 = if opts.skip_kinks { f(point) } else { 0.0 };
    let mut x = point.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped_kinks: 0,
        tolerance,
    };
    for i in indices {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let fp = f(&x);
        x.data_mut()[i] = orig - h;
        let fm = f(&x);
        x.data_mut()[i] = orig;
        if opts.skip_kinks {
            let fwd = (fp - f0) / h;
            let bwd = (f0 - fm) / h;
            if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()).max(1.0) {
                report.skipped_kinks += 1;
                continue;
            }
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = relative_error(analytic.data()[i], numeric, opts.rel_floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic(x: &Tensor) -> f64 {
        x.data().iter().map(|v| v * v * v + 2.0 * v).sum()
    }

    #[test]
    fn exact_gradient_passes() {
        let x = Tensor::from_fn(&[6], |i| i as f64 * 0.3 - 1.0);
        let g = x.map(|v| 3.0 * v * v + 2.0);
        let r = gradient_check(&x, &g, cubic, 1e-6, GradCheckOptions::default()).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn scaled_gradient_fails() {
        let x = Tensor::from_fn(&[6], |i| i as f64 * 0.3 - 1.0);
        let g = x.map(|v| 1.01 * (3.0 * v * v + 2.0));
        let r = gradient_check(&x, &g, cubic, 1e-4, GradCheckOptions::default()).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn kink_is_skipped() {
        let x = Tensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        let g = Tensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        let opts = GradCheckOptions {
            skip_kinks: true,
            ..Default::default()
        };
        let r = gradient_check(&x, &g, |t| t.data().iter().map(|v| v.max(0.0)).sum(), 1e-6, opts)
            .unwrap();
        assert_eq!(r.skipped_kinks, 1);
        assert!(r.passed());
    }
}
