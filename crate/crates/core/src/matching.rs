//! Registration-aided matching: instance normalisation to a positive
//! similarity map, slack-augmented Sinkhorn normalisation, and the
//! post-registration spatial distance mask.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::math::{exp, fabs, sqrt};

/// Non-negative `N x M` score matrix.
pub type MatchMatrix = DMatrix<f64>;

/// Added to the standard deviation in [`positivize`].
pub const INSTANCE_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Value of every slack-row / slack-column entry.
    pub slack_value: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            tolerance: 1e-4,
            slack_value: 1.0,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("sinkhorn_iterations", "must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("sinkhorn_tolerance", "must be positive"));
        }
        if !(self.slack_value > 0.0) || !self.slack_value.is_finite() {
            return Err(Error::invalid("slack_value", "must be positive"));
        }
        Ok(())
    }
}

/// Z-scores all entries of `a` together, then exponentiates.
pub fn positivize(a: &MatchMatrix) -> MatchMatrix {
    let n = (a.nrows() * a.ncols()) as f64;
    if n == 0.0 {
        return a.clone();
    }
    let mean = a.sum() / n;
    let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = sqrt(var) + INSTANCE_NORM_EPS;
    a.map(|v| exp((v - mean) / std))
}

/// Result of the slack Sinkhorn iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackSinkhorn {
    /// `(N+1) x (M+1)` matrix including the slack row and column.
    pub augmented: DMatrix<f64>,
    pub iterations: usize,
    /// Largest deviation of a constrained row or column sum from 1 at exit.
    pub max_deviation: f64,
}

impl SlackSinkhorn {
    /// Inner `N x M` block with the slack row and column removed.
    pub fn inner(&self) -> MatchMatrix {
        let (r, c) = self.augmented.shape();
        self.augmented.view((0, 0), (r - 1, c - 1)).into_owned()
    }

    pub fn converged(&self, tolerance: f64) -> bool {
        self.max_deviation < tolerance
    }
}

/// Largest deviation from 1 among the sums of rows `0..N` and columns
/// `0..M` of an augmented matrix.
pub fn constrained_marginal_deviation(aug: &DMatrix<f64>) -> f64 {
    let (r, c) = aug.shape();
    let rows = (0..r - 1).map(|i| fabs(aug.row(i).sum() - 1.0));
    let cols = (0..c - 1).map(|j| fabs(aug.column(j).sum() - 1.0));
    rows.chain(cols).fold(0.0, f64::max)
}

/// Slack-augmented Sinkhorn, keeping the augmented matrix.
///
/// Rows `0..N` and columns `0..M` are alternately scaled to sum to one; the
/// slack row and column are never normalisation targets and only change as
/// members of normalised columns / rows.
pub fn sinkhorn_slack_augmented(
    a_pos: &MatchMatrix,
    cfg: &SinkhornConfig,
) -> Result<SlackSinkhorn> {
    cfg.validate()?;
    let (n, m) = a_pos.shape();
    if n == 0 || m == 0 {
        return Err(Error::Empty("sinkhorn input"));
    }
    if a_pos.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::NonPositiveMatrix);
    }
    let mut aug = DMatrix::from_element(n + 1, m + 1, cfg.slack_value);
    aug.view_mut((0, 0), (n, m)).copy_from(a_pos);

    let mut iterations = 0;
    let mut deviation = f64::INFINITY;
    let mut row_sums = alloc::vec![0.0; n];
    while iterations < cfg.max_iterations {
        iterations += 1;
        // Rows 0..N (storage is column-major, so accumulate column by column).
        row_sums.iter_mut().for_each(|s| *s = 0.0);
        for col in aug.column_iter() {
            for (s, v) in row_sums.iter_mut().zip(col.iter()) {
                *s += *v;
            }
        }
        for mut col in aug.column_iter_mut() {
            for (v, s) in col.iter_mut().zip(row_sums.iter()) {
                *v /= *s;
            }
        }
        // Columns 0..M.
        for j in 0..m {
            let mut col = aug.column_mut(j);
            let s = col.sum();
            col /= s;
        }
        deviation = constrained_marginal_deviation(&aug);
        if deviation < cfg.tolerance {
            break;
        }
    }
    Ok(SlackSinkhorn {
        augmented: aug,
        iterations,
        max_deviation: deviation,
    })
}

/// Slack Sinkhorn returning the inner `N x M` assignment.
pub fn sinkhorn_slack(a_pos: &MatchMatrix, cfg: &SinkhornConfig) -> Result<MatchMatrix> {
    Ok(sinkhorn_slack_augmented(a_pos, cfg)?.inner())
}

/// Single distance-map entry `max(1 - d^2 / sigma^2, 0)` for distance
/// `d`.
#[inline]
pub fn distance_score(d: f64, sigma: f64) -> f64 {
    (1.0 - (d * d) / (sigma * sigma)).max(0.0)
}

/// `D_ij = max(1 - |xbar_i - y_j|^2 / sigma^2, 0)`.
pub fn distance_map(xbar: &[Point3], y: &[Point3], sigma: f64) -> Result<MatchMatrix> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma", "must be positive"));
    }
    let s2 = sigma * sigma;
    Ok(DMatrix::from_fn(xbar.len(), y.len(), |i, j| {
        let d2 = (xbar[i] - y[j]).norm_squared();
        (1.0 - d2 / s2).max(0.0)
    }))
}

/// Hadamard product `Ã ⊙ D`.
pub fn refine(a_tilde: &MatchMatrix, d_reg: &MatchMatrix) -> Result<MatchMatrix> {
    if a_tilde.shape() != d_reg.shape() {
        return Err(Error::ShapeMismatch {
            left_rows: a_tilde.nrows(),
            left_cols: a_tilde.ncols(),
            right_rows: d_reg.nrows(),
            right_cols: d_reg.ncols(),
        });
    }
    Ok(a_tilde.component_mul(d_reg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn positivize_examples() {
        let c = DMatrix::from_element(3, 4, 2.5);
        assert!(positivize(&c).iter().all(|v| *v == 1.0));
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 2.0]);
        let p = positivize(&a);
        // std = 1 (+eps), z = -1/+1 up to the eps guard.
        assert!((p[(0, 0)] - exp(-1.0 / (1.0 + INSTANCE_NORM_EPS))).abs() < 1e-15);
        assert!((p[(0, 0)] - exp(-1.0)).abs() < 1e-6);
        assert!((p[(0, 1)] - exp(1.0)).abs() < 1e-5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = DMatrix::from_fn(5, 6, |_, _| rng.random_range(-1e3..1e3));
        assert!(positivize(&r).iter().all(|v| *v > 0.0));
        let shifted = r.add_scalar(123.0);
        assert!((positivize(&r) - positivize(&shifted)).amax() < 1e-9);
    }

    #[test]
    fn sinkhorn_one_by_one_fixed_point() {
        // Closed 2x2 system [[p,1],[1,1]] with row 0 and column 0
        // constrained: r + p r^2 = 1, inner = p r^2.
        for p in [0.1, 1.0, 2.0, 7.5] {
            let cfg = SinkhornConfig {
                max_iterations: 10_000,
                tolerance: 1e-13,
                slack_value: 1.0,
            };
            let out = sinkhorn_slack_augmented(&DMatrix::from_element(1, 1, p), &cfg).unwrap();
            let r = (-1.0 + (1.0 + 4.0 * p).sqrt()) / (2.0 * p);
            let inner = out.augmented[(0, 0)];
            assert!(
                (inner - p * r * r).abs() < 1e-9,
                "p={p}: {inner} vs {}",
                p * r * r
            );
            assert!((inner + out.augmented[(0, 1)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sinkhorn_uniform_symmetric() {
        let out = sinkhorn_slack(
            &DMatrix::from_element(2, 2, 0.7),
            &SinkhornConfig::default(),
        )
        .unwrap();
        let v = out[(0, 0)];
        assert!(out.iter().all(|x| (x - v).abs() < 1e-15));
    }

    #[test]
    fn sinkhorn_rejects_non_positive() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(
            sinkhorn_slack(&a, &SinkhornConfig::default()),
            Err(Error::NonPositiveMatrix)
        );
        let bad = SinkhornConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(sinkhorn_slack(&DMatrix::from_element(1, 1, 1.0), &bad).is_err());
    }

    #[test]
    fn sinkhorn_inner_marginals_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = DMatrix::from_fn(6, 9, |_, _| rng.random_range(0.01..5.0));
            let cfg = SinkhornConfig::default();
            let out = sinkhorn_slack_augmented(&a, &cfg).unwrap();
            let inner = out.inner();
            if out.converged(cfg.tolerance) {
                assert!(inner.row_iter().all(|r| r.sum() <= 1.0 + cfg.tolerance));
                assert!(inner.column_iter().all(|c| c.sum() <= 1.0 + cfg.tolerance));
            }
        }
    }

    #[test]
    fn distance_map_examples() {
        let o = [Point3::origin()];
        let d = distance_map(
            &o,
            &[
                Point3::origin(),
                Point3::new(0.4, 0.0, 0.0),
                Point3::new(0.0, 0.2, 0.0),
            ],
            0.4,
        )
        .unwrap();
        assert_eq!(d[(0, 0)], 1.0);
        assert_eq!(d[(0, 1)], 0.0);
        assert!((d[(0, 2)] - 0.75).abs() < 1e-15);
        assert!(distance_map(&o, &o, 0.0).is_err());
    }

    #[test]
    fn refine_examples() {
        let a = DMatrix::from_row_slice(1, 2, &[0.6, 0.4]);
        let ones = DMatrix::from_element(1, 2, 1.0);
        assert_eq!(refine(&a, &ones).unwrap(), a);
        assert_eq!(
            refine(&a, &DMatrix::zeros(1, 2)).unwrap(),
            DMatrix::zeros(1, 2)
        );
        let d = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(
            refine(&a, &d).unwrap(),
            DMatrix::from_row_slice(1, 2, &[0.6, 0.0])
        );
        assert!(refine(&a, &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn distance_map_monotone() {
        let ds: Vec<f64> = (0..40).map(|k| k as f64 * 0.01).collect();
        let vals: Vec<f64> = ds.iter().map(|d| distance_score(*d, 0.4)).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }
}
