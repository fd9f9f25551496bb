//! Ground-truth registration targets and the registration-level losses,
//! evaluated forward only.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::{BBox3D, Point3, RigidTransform};
use crate::math::{log, sqrt};
use crate::neighbors::nearest_distances;
use crate::reg::InlierScores;

/// Predictions are clamped to `[P_CLAMP, 1 - P_CLAMP]` before taking logs.
pub const P_CLAMP: f64 = 1e-7;

/// Ground-truth transform between two boxes expressed in the same
/// canonical frame: `z` rotation by the heading difference and translation
/// by the centre difference.
pub fn gt_transform(b1: &BBox3D, b2: &BBox3D) -> RigidTransform {
    RigidTransform::from_yaw(b2.heading() - b1.heading(), b2.center - b1.center)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InlierLabels {
    pub template: Vec<u8>,
    pub search: Vec<u8>,
}

/// `1` where the ground-truth aligned residual to the opposite cloud is
/// strictly below `tau`.
pub fn inlier_labels(
    x: &[Point3],
    y: &[Point3],
    t_star: &RigidTransform,
    tau: f64,
) -> Result<InlierLabels> {
    if !(tau > 0.0) {
        return Err(Error::invalid("tau", "must be positive"));
    }
    let moved: Vec<Point3> = x.iter().map(|p| t_star.apply(p)).collect();
    let label = |d: f64| u8::from(d < tau);
    Ok(InlierLabels {
        template: nearest_distances(&moved, y)
            .into_iter()
            .map(label)
            .collect(),
        search: nearest_distances(y, &moved)
            .into_iter()
            .map(label)
            .collect(),
    })
}

/// `-q log p - (1 - q) log(1 - p)` with `p` clamped.
pub fn bce(p: f64, q: f64) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    -q * log(p) - (1.0 - q) * log(1.0 - p)
}

/// Summed binary cross-entropy over the template and search clouds.
pub fn bce_loss(
    template_pred: &InlierScores,
    search_pred: &InlierScores,
    labels: &InlierLabels,
) -> Result<f64> {
    for (pred, lab) in [
        (template_pred, &labels.template),
        (search_pred, &labels.search),
    ] {
        if pred.len() != lab.len() {
            return Err(Error::DimensionMismatch {
                context: "bce labels",
                expected: pred.len(),
                actual: lab.len(),
            });
        }
    }
    let sum = |pred: &InlierScores, lab: &[u8]| -> f64 {
        pred.as_slice()
            .iter()
            .zip(lab)
            .map(|(p, q)| bce(*p, f64::from(*q)))
            .sum()
    };
    Ok(sum(template_pred, &labels.template) + sum(search_pred, &labels.search))
}

/// `sum_i |R* x'_i + t* - ŷ'_i|_2` over kept template points.
pub fn corr_loss(
    kept_template: &[Point3],
    t_star: &RigidTransform,
    soft_corr: &[Point3],
) -> Result<f64> {
    if kept_template.len() != soft_corr.len() {
        return Err(Error::DimensionMismatch {
            context: "correspondence loss",
            expected: kept_template.len(),
            actual: soft_corr.len(),
        });
    }
    Ok(kept_template
        .iter()
        .zip(soft_corr)
        .map(|(x, y)| sqrt((t_star.apply(x) - y).norm_squared()))
        .sum())
}

/// `|R̂ᵀ R* - I|_F^2 + |t̂ - t*|^2`.
pub fn trans_loss(t_hat: &RigidTransform, t_star: &RigidTransform) -> f64 {
    let r = t_hat.rotation.transpose() * t_star.rotation - nalgebra::Matrix3::identity();
    r.norm_squared() + (t_hat.translation - t_star.translation).norm_squared()
}
