//! One-pass-evaluation Success and Precision.
//!
//! Success is the area under the success plot (fraction of frames whose
//! IoU exceeds a threshold, thresholds over `[0, 1]`), which equals the
//! mean IoU. Precision is the normalised area under the precision plot
//! (fraction of frames whose centre error is within a threshold,
//! thresholds over `[0, 2]` m), which equals `1 - mean(min(d, 2)) / 2`.
//! Both are reported on a 0–100 scale.

use alloc::vec::Vec;

/// Upper end of the precision-plot threshold range (m).
pub const PRECISION_RANGE: f64 = 2.0;

/// `100 * mean(iou)`; 0 for no frames.
pub fn success_metric(ious: &[f64]) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    100.0 * ious.iter().map(|v| v.clamp(0.0, 1.0)).sum::<f64>() / ious.len() as f64
}

/// `100 * (1 - mean(min(d, 2)) / 2)`; 0 for no frames.
pub fn precision_metric(distances: &[f64]) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    let mean = distances
        .iter()
        .map(|d| d.clamp(0.0, PRECISION_RANGE))
        .sum::<f64>()
        / distances.len() as f64;
    100.0 * (1.0 - mean / PRECISION_RANGE)
}

/// `count` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Fraction of frames with IoU strictly above each threshold.
pub fn success_curve(ious: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let n = ious.len().max(1) as f64;
    thresholds
        .iter()
        .map(|t| ious.iter().filter(|v| **v > *t).count() as f64 / n)
        .collect()
}

/// Fraction of frames with centre error at most each threshold.
pub fn precision_curve(distances: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let n = distances.len().max(1) as f64;
    thresholds
        .iter()
        .map(|t| distances.iter().filter(|d| **d <= *t).count() as f64 / n)
        .collect()
}

/// Trapezoidal integral of `ys` over the abscissae `xs`.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Success as `100 x` the trapezoidal area under the success plot sampled
/// at `count` thresholds.
pub fn success_auc(ious: &[f64], count: usize) -> f64 {
    let xs = linspace(0.0, 1.0, count);
    100.0 * trapezoid(&xs, &success_curve(ious, &xs))
}

/// Precision as `100 x` the normalised trapezoidal area under the precision
/// plot sampled at `count` thresholds over `[0, 2]` m.
pub fn precision_auc(distances: &[f64], count: usize) -> f64 {
    let xs = linspace(0.0, PRECISION_RANGE, count);
    100.0 * trapezoid(&xs, &precision_curve(distances, &xs)) / PRECISION_RANGE
}

/// Exact area under the step-shaped success plot, integrating piece by
/// piece between the sorted IoU values.
pub fn success_step_area(ious: &[f64]) -> f64 {
    step_area(
        ious.iter().map(|v| v.clamp(0.0, 1.0)),
        1.0,
        ious.len(),
        true,
    )
}

/// Exact normalised area under the step-shaped precision plot.
pub fn precision_step_area(distances: &[f64]) -> f64 {
    step_area(
        distances.iter().map(|d| d.clamp(0.0, PRECISION_RANGE)),
        PRECISION_RANGE,
        distances.len(),
        false,
    ) / PRECISION_RANGE
}

/// Area over `[0, hi]` of the fraction of values above (`above = true`) or
/// at-or-below each abscissa.
fn step_area(values: impl Iterator<Item = f64>, hi: f64, n: usize, above: bool) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    let mut area = 0.0;
    let mut prev = 0.0;
    for (k, x) in v.iter().chain(core::iter::once(&hi)).enumerate() {
        // On (prev, x) exactly k values lie below.
        let frac = if above { (n - k) as f64 } else { k as f64 } / n as f64;
        area += (x - prev) * frac;
        prev = *x;
    }
    100.0 * area
}
