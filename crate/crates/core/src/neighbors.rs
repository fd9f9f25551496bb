//! Brute-force neighbour queries. Clouds in this pipeline hold at most a
//! few thousand points, where an exhaustive scan is both exact and fast
//! enough.

use alloc::vec::Vec;

use crate::geom::Point3;
use crate::math::sqrt;

#[inline]
fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = a - b;
    d.x * d.x + d.y * d.y + d.z * d.z
}

/// Indices of the `k` nearest other points for every point of `points`,
/// sorted by increasing distance (ties by lower index). `k` is clamped to
/// `points.len() - 1`.
pub fn k_nearest(points: &[Point3], k: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let k = k.min(n.saturating_sub(1));
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if k == 0 {
                return Vec::new();
            }
            scratch.clear();
            scratch.extend(
                points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(j, q)| (dist2(p, q), j)),
            );
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < scratch.len() {
                scratch.select_nth_unstable_by(k - 1, cmp);
                scratch.truncate(k);
            }
            scratch.sort_unstable_by(cmp);
            scratch.iter().map(|(_, j)| *j).collect()
        })
        .collect()
}

/// For every point in `from`, the Euclidean distance to its nearest point in
/// `to` (`f64::INFINITY` when `to` is empty).
pub fn nearest_distances(from: &[Point3], to: &[Point3]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            let best = to.iter().fold(f64::INFINITY, |m, q| m.min(dist2(p, q)));
            if best.is_finite() {
                sqrt(best)
            } else {
                best
            }
        })
        .collect()
}

/// Indices of points of `points` within `radius` of `center` (inclusive).
pub fn within_radius(points: &[Point3], center: &Point3, radius: f64) -> Vec<usize> {
    let r2 = radius * radius;
    points
        .iter()
        .enumerate()
        .filter(|(_, q)| dist2(center, q) <= r2)
        .map(|(i, _)| i)
        .collect()
}
