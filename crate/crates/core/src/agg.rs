//! Target-specific aggregation of template information into the search
//! area, and box localisation from the refined matching map.
//!
//! Localisation does not use a learned detection head. The registered
//! template centre gives a first estimate; the matched search points then
//! contribute a score-weighted residual displacement on top of it.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feat::{FeatureMatrix, DESCRIPTOR_DIM};
use crate::geom::{BBox3D, Point3, RigidTransform, Vec3};
use crate::matching::MatchMatrix;
use crate::math::median;
use crate::nn::{LinearLayer, Mlp, WeightStore};

/// Per-search-point fused embedding (`|Y| x d`).
pub type TargetFeature = DMatrix<f64>;

/// Parameters of the aggregation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights {
    /// Projection of the embedded descriptor giving the point features `Φ`.
    pub backbone: LinearLayer,
    pub global: Mlp,
    pub local: Mlp,
    pub fuse: Mlp,
}

impl AggregationWeights {
    pub fn seeded(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            backbone: LinearLayer::orthogonal(DESCRIPTOR_DIM, dim, &mut rng),
            global: Mlp::seeded(&[dim, dim, dim], &mut rng),
            local: Mlp::seeded(&[2 * dim + 4, dim, dim], &mut rng),
            fuse: Mlp::seeded(&[2 * dim, dim, dim], &mut rng),
        }
    }

    pub fn write_to(&self, prefix: &str, store: &mut WeightStore) {
        store.insert(alloc::format!("{prefix}.backbone"), self.backbone.clone());
        store.insert_mlp(&alloc::format!("{prefix}.global"), &self.global);
        store.insert_mlp(&alloc::format!("{prefix}.local"), &self.local);
        store.insert_mlp(&alloc::format!("{prefix}.fuse"), &self.fuse);
    }

    pub fn read_from(prefix: &str, store: &WeightStore) -> Result<Self> {
        let w = Self {
            backbone: store.require(&alloc::format!("{prefix}.backbone"))?.clone(),
            global: store.mlp(&alloc::format!("{prefix}.global"))?,
            local: store.mlp(&alloc::format!("{prefix}.local"))?,
            fuse: store.mlp(&alloc::format!("{prefix}.fuse"))?,
        };
        w.validate()?;
        Ok(w)
    }

    /// Checks that the layer shapes chain for feature width `dim()`.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let shapes = [
            ("backbone", self.backbone.input_dim(), DESCRIPTOR_DIM),
            ("global", self.global.input_dim(), d),
            ("global", self.global.output_dim(), d),
            ("local", self.local.input_dim(), 2 * d + 4),
            ("local", self.local.output_dim(), d),
            ("fuse", self.fuse.input_dim(), 2 * d),
            ("fuse", self.fuse.output_dim(), d),
        ];
        for (context, actual, expected) in shapes {
            if actual != expected {
                return Err(Error::DimensionMismatch {
                    context,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.backbone.output_dim()
    }
}

fn check_match_shape(a_reg: &MatchMatrix, n: usize, m: usize) -> Result<()> {
    if a_reg.shape() != (n, m) {
        return Err(Error::ShapeMismatch {
            left_rows: a_reg.nrows(),
            left_cols: a_reg.ncols(),
            right_rows: n,
            right_cols: m,
        });
    }
    Ok(())
}

/// Column-wise maximum over template points of the score-scaled template
/// features: `pooled[j][k] = max_i a_ij * phi_x[i][k]`.
pub fn score_weighted_maxpool(a_reg: &MatchMatrix, phi_x: &FeatureMatrix) -> Result<DMatrix<f64>> {
    if a_reg.nrows() != phi_x.nrows() || a_reg.nrows() == 0 {
        return Err(Error::DimensionMismatch {
            context: "maxpool template rows",
            expected: a_reg.nrows(),
            actual: phi_x.nrows(),
        });
    }
    let (n, m) = a_reg.shape();
    let d = phi_x.ncols();
    let mut pooled = DMatrix::from_element(m, d, f64::NEG_INFINITY);
    for k in 0..d {
        let feat = phi_x.column(k);
        for j in 0..m {
            let scores = a_reg.column(j);
            let mut best = f64::NEG_INFINITY;
            for i in 0..n {
                best = best.max(scores[i] * feat[i]);
            }
            pooled[(j, k)] = best;
        }
    }
    Ok(pooled)
}

/// Global target embedding `MLP(maxpool_i(a_ij * phi_x_i))` per search point.
pub fn global_embedding(
    a_reg: &MatchMatrix,
    phi_x: &FeatureMatrix,
    mlp: &Mlp,
) -> Result<DMatrix<f64>> {
    mlp.forward(&score_weighted_maxpool(a_reg, phi_x)?)
}

/// `argmax_i a_ij` for every column, ties to the lowest index.
pub fn best_template_index(a_reg: &MatchMatrix) -> Vec<usize> {
    a_reg
        .column_iter()
        .map(|col| {
            let mut best = 0;
            for (i, v) in col.iter().enumerate() {
                if *v > col[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Local target embedding `MLP([phi_y_j, a_k*j, phi_x_k*, xbar_k*])`.
pub fn local_embedding(
    a_reg: &MatchMatrix,
    phi_x: &FeatureMatrix,
    xbar: &[Point3],
    phi_y: &FeatureMatrix,
    mlp: &Mlp,
) -> Result<DMatrix<f64>> {
    check_match_shape(a_reg, phi_x.nrows(), phi_y.nrows())?;
    if xbar.len() != phi_x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "template points",
            expected: phi_x.nrows(),
            actual: xbar.len(),
        });
    }
    let (dy, dx) = (phi_y.ncols(), phi_x.ncols());
    let width = dy + 1 + dx + 3;
    let best = best_template_index(a_reg);
    let mut input = DMatrix::zeros(phi_y.nrows(), width);
    for (j, &k) in best.iter().enumerate() {
        input.view_mut((j, 0), (1, dy)).copy_from(&phi_y.row(j));
        input[(j, dy)] = a_reg[(k, j)];
        input
            .view_mut((j, dy + 1), (1, dx))
            .copy_from(&phi_x.row(k));
        let p = xbar[k];
        input[(j, dy + 1 + dx)] = p.x;
        input[(j, dy + 2 + dx)] = p.y;
        input[(j, dy + 3 + dx)] = p.z;
    }
    mlp.forward(&input)
}

/// `MLP([global_j, local_j])`.
pub fn fuse(global: &DMatrix<f64>, local: &DMatrix<f64>, mlp: &Mlp) -> Result<TargetFeature> {
    if global.nrows() != local.nrows() {
        return Err(Error::ShapeMismatch {
            left_rows: global.nrows(),
            left_cols: global.ncols(),
            right_rows: local.nrows(),
            right_cols: local.ncols(),
        });
    }
    let mut cat = DMatrix::zeros(global.nrows(), global.ncols() + local.ncols());
    cat.columns_mut(0, global.ncols()).copy_from(global);
    cat.columns_mut(global.ncols(), local.ncols())
        .copy_from(local);
    mlp.forward(&cat)
}

/// Global, local and fused embeddings in one call.
pub fn target_features(
    a_reg: &MatchMatrix,
    phi_x: &FeatureMatrix,
    xbar: &[Point3],
    phi_y: &FeatureMatrix,
    w: &AggregationWeights,
) -> Result<TargetFeature> {
    let g = global_embedding(a_reg, phi_x, &w.global)?;
    let l = local_embedding(a_reg, phi_x, xbar, phi_y, &w.local)?;
    fuse(&g, &l, &w.fuse)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationOutput {
    /// World-frame box; size always equals the previous box's size.
    pub bbox: BBox3D,
    pub confidence: f64,
    pub used_registration: bool,
    /// Canonical-frame residual displacement added to the registered centre.
    pub residual: Vec3,
}

/// Registration outcome as consumed by [`localize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationEstimate {
    pub transform: RigidTransform,
    pub degenerate: bool,
}

impl RegistrationEstimate {
    pub fn identity() -> Self {
        Self {
            transform: RigidTransform::identity(),
            degenerate: false,
        }
    }
}

/// Locates the target in the search area.
///
/// All points are in the canonical frame of `prev_box`, which also carries
/// the world pose used to map the result back. With `use_residual = false`
/// the box follows the registration alone.
pub fn localize(
    a_reg: &MatchMatrix,
    xbar: &[Point3],
    y: &[Point3],
    prev_box: &BBox3D,
    reg: &RegistrationEstimate,
    use_residual: bool,
) -> Result<LocalizationOutput> {
    check_match_shape(a_reg, xbar.len(), y.len())?;
    let used_registration = !reg.degenerate;
    let transform = if used_registration {
        reg.transform
    } else {
        RigidTransform::identity()
    };
    let registered_center = transform.translation;
    let heading_increment = if used_registration {
        transform.yaw().angle
    } else {
        0.0
    };

    let scores: Vec<f64> = a_reg
        .column_iter()
        .map(|c| c.iter().fold(0.0f64, |m, v| m.max(*v)))
        .collect();
    let best = best_template_index(a_reg);

    let mut residual = Vec3::zeros();
    let mut confidence = 0.0;
    let total: f64 = scores.iter().sum();
    if total > 0.0 && !y.is_empty() {
        let cut = median(&scores).unwrap_or(0.0);
        let mut num = Vec3::zeros();
        let mut den = 0.0;
        for (j, s) in scores.iter().enumerate() {
            if *s >= cut {
                num += (y[j] - xbar[best[j]]) * *s;
                den += *s;
            }
        }
        if use_residual && den > 0.0 {
            residual = num / den;
        }
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let top = sorted.len().div_ceil(4).max(1);
        confidence = (sorted[..top].iter().sum::<f64>() / top as f64).clamp(0.0, 1.0);
    }

    let canonical_center = registered_center + residual;
    let world_center = prev_box
        .pose()
        .apply(&Point3::from(canonical_center))
        .coords;
    let bbox = BBox3D::new(
        world_center,
        prev_box.size,
        prev_box.heading() + heading_increment,
    )?;
    Ok(LocalizationOutput {
        bbox,
        confidence,
        used_registration,
        residual,
    })
}
