//! Per-point features: a training-free handcrafted descriptor followed by
//! iterative cross-attention between template and search area, with an
//! elliptical gate in the `yz` plane restricting which pairs exchange
//! messages.

use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud, Vec3};
use crate::math::{exp, sqrt};
use crate::neighbors::k_nearest;
use crate::nn::{LinearLayer, Mlp, WeightStore};

pub type FeatureMatrix = DMatrix<f64>;

/// Number of radii at which neighbourhood context is summarised.
pub const CONTEXT_SCALES: usize = 4;

/// Width of the raw handcrafted descriptor (see [`raw_descriptor`]).
pub const RAW_DESCRIPTOR_DIM: usize = 9 + 3 * CONTEXT_SCALES;

/// Width of the embedded descriptor: the weighted raw columns plus one
/// norm-completing column.
pub const DESCRIPTOR_DIM: usize = RAW_DESCRIPTOR_DIM + 1;

/// Default neighbourhood size for the covariance features.
pub const DEFAULT_K_NEIGHBORS: usize = 16;

/// Mean neighbour spacing (m) at which the density feature equals 1/2.
const DENSITY_SCALE: f64 = 0.1;

/// Nominal magnitude of each raw column, used to size the norm-completing
/// column. Values beyond it only weaken the kernel property for that point.
const COLUMN_BOUNDS: [f64; RAW_DESCRIPTOR_DIM] = {
    let mut b = [1.0; RAW_DESCRIPTOR_DIM];
    b[0] = 8.0;
    b[1] = 8.0;
    b[2] = 8.0;
    b[6] = 8.0;
    b[8] = 8.0;
    b
};

/// How raw descriptors are computed and embedded.
///
/// The embedding scales every raw column by `column_weights / kernel_width`
/// and appends `sqrt(L^2 - |v|^2)` with `L` fixed by the weights, so all
/// embedded rows share the norm `L`. Inner products of embeddings are then
/// `L^2 - |v_i - v_j|^2 / 2`, and a softmax over them is a Gaussian kernel of
/// width `kernel_width` in weighted descriptor space.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorConfig {
    pub k_neighbors: usize,
    /// Radii (m) of the context columns.
    pub context_radii: [f64; CONTEXT_SCALES],
    /// Points below this height are left out of context neighbourhoods.
    pub context_floor: Option<f64>,
    pub column_weights: [f64; RAW_DESCRIPTOR_DIM],
    pub kernel_width: f64,
}

impl DescriptorConfig {
    /// Motion-invariant columns only (height and context), for registration.
    pub fn registration() -> Self {
        let mut w = [0.0; RAW_DESCRIPTOR_DIM];
        w[2] = 1.0;
        w[9..].fill(1.0);
        Self {
            k_neighbors: DEFAULT_K_NEIGHBORS,
            context_radii: [0.4, 0.8, 1.6, 3.2],
            context_floor: None,
            column_weights: w,
            kernel_width: 0.03,
        }
    }

    /// Coordinates plus context, for matching after alignment.
    pub fn backbone() -> Self {
        let mut w = [0.0; RAW_DESCRIPTOR_DIM];
        w[..3].fill(1.0);
        w[9..].fill(1.0);
        Self {
            column_weights: w,
            kernel_width: 0.1,
            ..Self::registration()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::invalid("k_neighbors", "must be at least 1"));
        }
        if self
            .context_radii
            .iter()
            .any(|r| !(*r > 0.0) || !r.is_finite())
        {
            return Err(Error::invalid("context_radii", "must be positive"));
        }
        if self
            .column_weights
            .iter()
            .any(|w| !(*w >= 0.0) || !w.is_finite())
        {
            return Err(Error::invalid(
                "column_weights",
                "must be finite and non-negative",
            ));
        }
        if !(self.kernel_width > 0.0) || !self.kernel_width.is_finite() {
            return Err(Error::invalid("kernel_width", "must be positive"));
        }
        Ok(())
    }

    /// Common norm `L` of the embedded rows.
    pub fn embedding_norm(&self) -> f64 {
        let s: f64 = self
            .column_weights
            .iter()
            .zip(COLUMN_BOUNDS)
            .map(|(w, b)| {
                let v = w * b / self.kernel_width;
                v * v
            })
            .sum();
        sqrt(s.max(1.0))
    }
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self::registration()
    }
}

/// Semi-axes of the elliptical gate: `a` along `y`, `b` along `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConfig {
    pub a: f64,
    pub b: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { a: 1.6, b: 0.4 }
    }
}

impl GateConfig {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(b > 0.0) || !(a >= b) || !a.is_finite() {
            return Err(Error::invalid("gate", "requires a >= b > 0"));
        }
        Ok(Self { a, b })
    }

    /// Normalised elliptical distance; the `x` offset is ignored.
    #[inline]
    pub fn distance(&self, xi: &Point3, yj: &Point3) -> f64 {
        let dy = (yj.y - xi.y) / self.a;
        let dz = (yj.z - xi.z) / self.b;
        dy * dy + dz * dz
    }
}

/// `true` iff `yj` lies inside the ellipse around `xi`.
#[inline]
pub fn spatial_gate(xi: &Point3, yj: &Point3, g: &GateConfig) -> bool {
    g.distance(xi, yj) <= 1.0
}

/// Gate values for every `(i, j)` pair, stored row-major (`i * cols + j`).
#[derive(Debug, Clone, PartialEq)]
pub struct GateMask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl GateMask {
    pub fn build(x: &[Point3], y: &[Point3], g: &GateConfig) -> Self {
        let data = x
            .iter()
            .flat_map(|xi| y.iter().map(move |yj| spatial_gate(xi, yj, g)))
            .collect();
        Self {
            rows: x.len(),
            cols: y.len(),
            data,
        }
    }

    pub fn all(rows: usize, cols: usize, value: bool) -> Self {
        Self {
            rows,
            cols,
            data: alloc::vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn transpose(&self) -> Self {
        let mut data = alloc::vec![false; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.get(i, j);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Number of admitted pairs.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }
}

/// Raw descriptor for every point:
///
/// | cols  | meaning |
/// |-------|---------|
/// | 0..3  | coordinates in the input (canonical) frame |
/// | 3..6  | linearity, planarity, scattering of the k-NN covariance |
/// | 6     | height above the cloud's minimum `z` |
/// | 7     | local density `1 / (1 + mean_nn_dist / 0.1)` |
/// | 8     | horizontal radial distance from the frame origin |
/// | 9..21 | per context radius `r`: mean offset to the neighbours within `r`, divided by `r` |
///
/// Neighbourhoods are clamped to the points available; an isolated point
/// gets zero eigen, density and context features.
pub fn raw_descriptor(c: &PointCloud, cfg: &DescriptorConfig) -> Result<DMatrix<f64>> {
    if c.is_empty() {
        return Err(Error::EmptyCloud);
    }
    cfg.validate()?;
    let pts = &c.points;
    let min_z = pts.iter().fold(f64::INFINITY, |m, p| m.min(p.z));
    let knn = k_nearest(pts, cfg.k_neighbors);
    let context = context_offsets(pts, cfg);
    let mut out = DMatrix::zeros(pts.len(), RAW_DESCRIPTOR_DIM);
    for (i, p) in pts.iter().enumerate() {
        let nbrs = &knn[i];
        let (lin, pla, sca) = eigen_features(p, nbrs.iter().map(|&j| &pts[j]));
        let density = if nbrs.is_empty() {
            0.0
        } else {
            let mean = nbrs.iter().map(|&j| (pts[j] - p).norm()).sum::<f64>() / nbrs.len() as f64;
            1.0 / (1.0 + mean / DENSITY_SCALE)
        };
        let head = [
            p.x,
            p.y,
            p.z,
            lin,
            pla,
            sca,
            p.z - min_z,
            density,
            sqrt(p.x * p.x + p.y * p.y),
        ];
        for (col, v) in head.iter().chain(context[i].iter()).enumerate() {
            out[(i, col)] = *v;
        }
    }
    Ok(out)
}

/// Mean neighbour offsets at every context radius, scaled by the radius.
fn context_offsets(pts: &[Point3], cfg: &DescriptorConfig) -> Vec<[f64; 3 * CONTEXT_SCALES]> {
    let radii2 = cfg.context_radii.map(|r| r * r);
    let floor = cfg.context_floor.unwrap_or(f64::NEG_INFINITY);
    pts.iter()
        .enumerate()
        .map(|(i, p)| {
            let mut sums = [Vec3::zeros(); CONTEXT_SCALES];
            let mut counts = [0usize; CONTEXT_SCALES];
            for (j, q) in pts.iter().enumerate() {
                if j == i || q.z < floor {
                    continue;
                }
                let d = q - p;
                let d2 = d.norm_squared();
                for s in 0..CONTEXT_SCALES {
                    if d2 <= radii2[s] {
                        sums[s] += d;
                        counts[s] += 1;
                    }
                }
            }
            let mut row = [0.0; 3 * CONTEXT_SCALES];
            for s in 0..CONTEXT_SCALES {
                if counts[s] > 0 {
                    let m = sums[s] / (counts[s] as f64 * cfg.context_radii[s]);
                    row[3 * s..3 * s + 3].copy_from_slice(m.as_slice());
                }
            }
            row
        })
        .collect()
}

/// Linearity, planarity and scattering of the covariance of `p` and its
/// neighbours; all zero for a degenerate neighbourhood.
fn eigen_features<'a>(
    p: &'a Point3,
    nbrs: impl Iterator<Item = &'a Point3> + Clone,
) -> (f64, f64, f64) {
    let count = nbrs.clone().count();
    if count == 0 {
        return (0.0, 0.0, 0.0);
    }
    let n = (count + 1) as f64;
    let mean = (nbrs.clone().fold(p.coords, |acc, q| acc + q.coords)) / n;
    let mut cov = Matrix3::zeros();
    for q in core::iter::once(p).chain(nbrs) {
        let d = q.coords - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let mut ev: Vec<f64> = cov
        .symmetric_eigenvalues()
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let (l1, l2, l3) = (ev[0], ev[1], ev[2]);
    if l1 <= f64::EPSILON * 16.0 {
        return (0.0, 0.0, 0.0);
    }
    ((l1 - l2) / l1, (l2 - l3) / l1, l3 / l1)
}

/// Weighted raw descriptor with the norm-completing column appended
/// (`n x DESCRIPTOR_DIM`).
pub fn embed_descriptor(raw: &DMatrix<f64>, cfg: &DescriptorConfig) -> Result<DMatrix<f64>> {
    if raw.ncols() != RAW_DESCRIPTOR_DIM {
        return Err(Error::DimensionMismatch {
            context: "raw descriptor width",
            expected: RAW_DESCRIPTOR_DIM,
            actual: raw.ncols(),
        });
    }
    cfg.validate()?;
    let norm2 = cfg.embedding_norm() * cfg.embedding_norm();
    let mut out = DMatrix::zeros(raw.nrows(), DESCRIPTOR_DIM);
    for i in 0..raw.nrows() {
        let mut sq = 0.0;
        for k in 0..RAW_DESCRIPTOR_DIM {
            let v = raw[(i, k)] * cfg.column_weights[k] / cfg.kernel_width;
            out[(i, k)] = v;
            sq += v * v;
        }
        out[(i, RAW_DESCRIPTOR_DIM)] = sqrt((norm2 - sq).max(0.0));
    }
    Ok(out)
}

/// Embedded descriptor projected to `d` dimensions by `projection`.
pub fn handcrafted_descriptor(
    c: &PointCloud,
    cfg: &DescriptorConfig,
    projection: &LinearLayer,
) -> Result<FeatureMatrix> {
    projection.forward(&embed_descriptor(&raw_descriptor(c, cfg)?, cfg)?)
}

/// Parameters of one attention iteration, shared by both message
/// directions.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub query: LinearLayer,
    pub key: LinearLayer,
    pub value: LinearLayer,
    /// `d -> d -> d` message MLP.
    pub message: Mlp,
}

impl AttentionWeights {
    /// Kaiming-initialised projections with a zero output layer in the
    /// message MLP, so an untrained iteration leaves features unchanged.
    pub fn seeded(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            query: LinearLayer::kaiming_unbiased(d, d, rng),
            key: LinearLayer::kaiming_unbiased(d, d, rng),
            value: LinearLayer::kaiming_unbiased(d, d, rng),
            message: Mlp::seeded_zero_last(&[d, d, d], rng),
        }
    }

    /// Every layer Kaiming-initialised.
    pub fn kaiming(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            query: LinearLayer::kaiming_unbiased(d, d, rng),
            key: LinearLayer::kaiming_unbiased(d, d, rng),
            value: LinearLayer::kaiming_unbiased(d, d, rng),
            message: Mlp::seeded(&[d, d, d], rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.output_dim()
    }

    fn validate(&self, d: usize) -> Result<()> {
        let dims = [
            self.query.input_dim(),
            self.query.output_dim(),
            self.key.input_dim(),
            self.key.output_dim(),
            self.value.input_dim(),
            self.value.output_dim(),
            self.message.input_dim(),
            self.message.output_dim(),
        ];
        match dims.iter().find(|v| **v != d) {
            Some(bad) => Err(Error::DimensionMismatch {
                context: "attention weights",
                expected: d,
                actual: *bad,
            }),
            None => Ok(()),
        }
    }
}

/// Descriptor projection plus `T` independent attention iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWeights {
    pub projection: LinearLayer,
    pub iterations: Vec<AttentionWeights>,
}

impl FeatureWeights {
    /// Semi-orthogonal projection and zero-output attention iterations.
    pub fn seeded(dim: usize, iterations: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = LinearLayer::orthogonal(DESCRIPTOR_DIM, dim, &mut rng);
        let iterations = (0..iterations)
            .map(|_| AttentionWeights::seeded(dim, &mut rng))
            .collect();
        Self {
            projection,
            iterations,
        }
    }

    /// Fully Kaiming-initialised projection and iterations.
    pub fn kaiming(dim: usize, iterations: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = LinearLayer::kaiming(DESCRIPTOR_DIM, dim, &mut rng);
        let iterations = (0..iterations)
            .map(|_| AttentionWeights::kaiming(dim, &mut rng))
            .collect();
        Self {
            projection,
            iterations,
        }
    }

    pub fn dim(&self) -> usize {
        self.projection.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.projection.input_dim() != DESCRIPTOR_DIM {
            return Err(Error::DimensionMismatch {
                context: "descriptor projection",
                expected: DESCRIPTOR_DIM,
                actual: self.projection.input_dim(),
            });
        }
        if self.iterations.is_empty() {
            return Err(Error::invalid(
                "iterations",
                "at least one attention iteration is required",
            ));
        }
        self.iterations
            .iter()
            .try_for_each(|w| w.validate(self.dim()))
    }

    pub fn write_to(&self, prefix: &str, store: &mut WeightStore) {
        store.insert(alloc::format!("{prefix}.proj"), self.projection.clone());
        for (t, w) in self.iterations.iter().enumerate() {
            store.insert(alloc::format!("{prefix}.t{t}.q"), w.query.clone());
            store.insert(alloc::format!("{prefix}.t{t}.k"), w.key.clone());
            store.insert(alloc::format!("{prefix}.t{t}.v"), w.value.clone());
            store.insert_mlp(&alloc::format!("{prefix}.t{t}.mlp"), &w.message);
        }
    }

    pub fn read_from(prefix: &str, store: &WeightStore) -> Result<Self> {
        let projection = store.require(&alloc::format!("{prefix}.proj"))?.clone();
        let mut iterations = Vec::new();
        while store
            .get(&alloc::format!("{prefix}.t{}.q", iterations.len()))
            .is_some()
        {
            let t = iterations.len();
            iterations.push(AttentionWeights {
                query: store.require(&alloc::format!("{prefix}.t{t}.q"))?.clone(),
                key: store.require(&alloc::format!("{prefix}.t{t}.k"))?.clone(),
                value: store.require(&alloc::format!("{prefix}.t{t}.v"))?.clone(),
                message: store.mlp(&alloc::format!("{prefix}.t{t}.mlp"))?,
            });
        }
        let w = Self {
            projection,
            iterations,
        };
        w.validate()?;
        Ok(w)
    }
}

fn check_rows(context: &'static str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n {
        return Err(Error::DimensionMismatch {
            context,
            expected: n,
            actual: m.nrows(),
        });
    }
    Ok(())
}

/// Softmax over each column of `scores` in place (max-subtracted).
fn softmax_columns(scores: &mut DMatrix<f64>) {
    for mut col in scores.column_iter_mut() {
        let max = col.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let mut sum = 0.0;
        for v in col.iter_mut() {
            *v = exp(*v - max);
            sum += *v;
        }
        col /= sum;
    }
}

/// Pre-gate attention of queries from `fx` over keys from `fy`:
/// `alpha[i][j] = softmax_j(Q_i · K_j / sqrt(d))`, returned as an `N x M`
/// matrix.
pub fn attention_weights(
    fx: &FeatureMatrix,
    fy: &FeatureMatrix,
    w: &AttentionWeights,
) -> Result<DMatrix<f64>> {
    Ok(attention_weights_transposed(fx, fy, w)?.transpose())
}

/// Same as [`attention_weights`] but `M x N` (one column per query).
fn attention_weights_transposed(
    fx: &FeatureMatrix,
    fy: &FeatureMatrix,
    w: &AttentionWeights,
) -> Result<DMatrix<f64>> {
    let q = w.query.forward(fx)?;
    let k = w.key.forward(fy)?;
    let mut st = k * q.transpose();
    st /= sqrt(w.dim() as f64);
    softmax_columns(&mut st);
    Ok(st)
}

/// One message-passing step from `Y` to `X`:
/// `F'_i = F_i + MLP(sum_j alpha_ij * beta_ij * V_j)`.
///
/// `gate` must be the `N x M` mask of `X` against `Y`.
pub fn cross_attention_step_masked(
    fx: &FeatureMatrix,
    fy: &FeatureMatrix,
    w: &AttentionWeights,
    gate: &GateMask,
) -> Result<FeatureMatrix> {
    w.validate(w.dim())?;
    let d = w.dim();
    if fx.ncols() != d || fy.ncols() != d {
        return Err(Error::DimensionMismatch {
            context: "attention feature width",
            expected: d,
            actual: if fx.ncols() != d {
                fx.ncols()
            } else {
                fy.ncols()
            },
        });
    }
    if gate.shape() != (fx.nrows(), fy.nrows()) {
        return Err(Error::ShapeMismatch {
            left_rows: gate.shape().0,
            left_cols: gate.shape().1,
            right_rows: fx.nrows(),
            right_cols: fy.nrows(),
        });
    }
    if w.message.is_zero_map() {
        // F + MLP(.) with an all-zero output layer is F exactly.
        return Ok(fx.clone());
    }
    let mut st = attention_weights_transposed(fx, fy, w)?;
    for (i, mut col) in st.column_iter_mut().enumerate() {
        for (j, v) in col.iter_mut().enumerate() {
            if !gate.get(i, j) {
                *v = 0.0;
            }
        }
    }
    let v = w.value.forward(fy)?;
    let message = st.transpose() * v;
    Ok(fx + w.message.forward(&message)?)
}

/// [`cross_attention_step_masked`] with the gate computed from the clouds.
pub fn cross_attention_step(
    fx: &FeatureMatrix,
    fy: &FeatureMatrix,
    x: &PointCloud,
    y: &PointCloud,
    w: &AttentionWeights,
    g: &GateConfig,
) -> Result<FeatureMatrix> {
    check_rows("template features", fx, x.len())?;
    check_rows("search features", fy, y.len())?;
    let gate = GateMask::build(&x.points, &y.points, g);
    cross_attention_step_masked(fx, fy, w, &gate)
}

/// Iterative gated cross-attention. Both directions of iteration `t` read
/// the features of iteration `t - 1`.
pub fn tsnonlocal(
    x: &PointCloud,
    y: &PointCloud,
    weights: &FeatureWeights,
    g: &GateConfig,
    descriptor: &DescriptorConfig,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    weights.validate()?;
    let mut fx = handcrafted_descriptor(x, descriptor, &weights.projection)?;
    let mut fy = handcrafted_descriptor(y, descriptor, &weights.projection)?;
    let gate_xy = GateMask::build(&x.points, &y.points, g);
    let gate_yx = gate_xy.transpose();
    for w in &weights.iterations {
        let nx = cross_attention_step_masked(&fx, &fy, w, &gate_xy)?;
        let ny = cross_attention_step_masked(&fy, &fx, w, &gate_yx)?;
        fx = nx;
        fy = ny;
    }
    Ok((fx, fy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{apply_transform, BBox3D, BoxSize, RigidTransform, Vec3};
    use alloc::vec;
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64, spread: f64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-spread..spread),
                        rng.random_range(-spread..spread),
                        rng.random_range(-spread / 4.0..spread / 4.0),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn gate_examples() {
        let g = GateConfig::new(1.6, 0.4).unwrap();
        let o = Point3::origin();
        assert!(spatial_gate(&o, &o, &g));
        assert!(spatial_gate(&o, &Point3::new(5.0, 0.8, 0.2), &g));
        assert!((g.distance(&o, &Point3::new(0.0, 0.8, 0.2)) - 0.5).abs() < 1e-15);
        assert!(!spatial_gate(&o, &Point3::new(0.0, 0.0, 0.5), &g));
        assert!((g.distance(&o, &Point3::new(0.0, 0.0, 0.5)) - 1.5625).abs() < 1e-12);
        assert!(GateConfig::new(0.2, 0.4).is_err());
        assert!(GateConfig::new(1.0, 0.0).is_err());
    }

    #[test]
    fn single_point_descriptor_is_degenerate() {
        let c = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0)]);
        let cfg = DescriptorConfig::default();
        let d = raw_descriptor(&c, &cfg).unwrap();
        assert_eq!([d[(0, 3)], d[(0, 4)], d[(0, 5)], d[(0, 7)]], [0.0; 4]);
        assert_eq!(d[(0, 6)], 0.0);
        assert!(d.columns(9, 3 * CONTEXT_SCALES).iter().all(|v| *v == 0.0));
        assert!(raw_descriptor(&PointCloud::default(), &cfg).is_err());
    }

    #[test]
    fn descriptor_is_canonical_frame_invariant() {
        let local = random_cloud(80, 3, 2.0);
        let frame = BBox3D::new(
            Vec3::new(12.0, -4.0, 0.7),
            BoxSize::new(4.0, 2.0, 1.5).unwrap(),
            2.1,
        )
        .unwrap();
        let world = apply_transform(&frame.pose(), &local);
        let back = crate::geom::canonicalize(&world, &frame);
        let w = FeatureWeights::seeded(16, 1, 9);
        let cfg = DescriptorConfig::backbone();
        let a = handcrafted_descriptor(&local, &cfg, &w.projection).unwrap();
        let b = handcrafted_descriptor(&back, &cfg, &w.projection).unwrap();
        assert!((a - b).amax() < 1e-9);
    }

    #[test]
    fn gated_out_rows_get_constant_shift() {
        let w = FeatureWeights::kaiming(8, 1, 4);
        let fx = DMatrix::from_fn(3, 8, |r, c| (r + c) as f64 * 0.1);
        let fy = DMatrix::from_fn(5, 8, |r, c| (r * c) as f64 * 0.05);
        let out =
            cross_attention_step_masked(&fx, &fy, &w.iterations[0], &GateMask::all(3, 5, false))
                .unwrap();
        let shift = w.iterations[0]
            .message
            .forward(&DMatrix::zeros(1, 8))
            .unwrap();
        for i in 0..3 {
            for c in 0..8 {
                assert!((out[(i, c)] - fx[(i, c)] - shift[(0, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_key_attention_passes_its_value() {
        let w = FeatureWeights::kaiming(6, 1, 5);
        let it = &w.iterations[0];
        let fx = DMatrix::from_fn(2, 6, |r, c| (r as f64) - (c as f64) * 0.3);
        let fy = DMatrix::from_fn(1, 6, |_, c| 0.2 * c as f64);
        let alpha = attention_weights(&fx, &fy, it).unwrap();
        assert!(alpha.iter().all(|v| (*v - 1.0).abs() < 1e-15));
        let out = cross_attention_step_masked(&fx, &fy, it, &GateMask::all(2, 1, true)).unwrap();
        let v = it.value.forward(&fy).unwrap();
        let msg = it.message.forward(&v).unwrap();
        for i in 0..2 {
            for c in 0..6 {
                assert!((out[(i, c)] - fx[(i, c)] - msg[(0, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let w = FeatureWeights::seeded(16, 1, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fx = DMatrix::from_fn(7, 16, |_, _| rng.random_range(-3.0..3.0));
        let fy = DMatrix::from_fn(11, 16, |_, _| rng.random_range(-3.0..3.0));
        let alpha = attention_weights(&fx, &fy, &w.iterations[0]).unwrap();
        for row in alpha.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let w = FeatureWeights::seeded(8, 1, 1);
        let x = random_cloud(4, 1, 1.0);
        let y = random_cloud(5, 2, 1.0);
        let fx = DMatrix::zeros(4, 7);
        let fy = DMatrix::zeros(5, 8);
        let g = GateConfig::default();
        assert!(cross_attention_step(&fx, &fy, &x, &y, &w.iterations[0], &g).is_err());
        assert!(
            cross_attention_step(&DMatrix::zeros(3, 8), &fy, &x, &y, &w.iterations[0], &g).is_err()
        );
    }

    #[test]
    fn tsnonlocal_is_symmetric_for_identical_clouds() {
        let c = random_cloud(40, 7, 2.0);
        let w = FeatureWeights::kaiming(12, 3, 2);
        let (fx, fy) = tsnonlocal(
            &c,
            &c,
            &w,
            &GateConfig::default(),
            &DescriptorConfig::default(),
        )
        .unwrap();
        assert_eq!(fx, fy);
    }

    #[test]
    fn tsnonlocal_single_iteration_unrolls() {
        let x = random_cloud(20, 1, 2.0);
        let y = random_cloud(30, 2, 2.0);
        let w = FeatureWeights::kaiming(8, 1, 3);
        let g = GateConfig::default();
        let cfg = DescriptorConfig {
            k_neighbors: 6,
            ..DescriptorConfig::backbone()
        };
        let (fx, fy) = tsnonlocal(&x, &y, &w, &g, &cfg).unwrap();
        let fx0 = handcrafted_descriptor(&x, &cfg, &w.projection).unwrap();
        let fy0 = handcrafted_descriptor(&y, &cfg, &w.projection).unwrap();
        let ex = cross_attention_step(&fx0, &fy0, &x, &y, &w.iterations[0], &g).unwrap();
        let ey = cross_attention_step(&fy0, &fx0, &y, &x, &w.iterations[0], &g).unwrap();
        assert_eq!(fx, ex);
        assert_eq!(fy, ey);
        let empty = FeatureWeights::seeded(8, 0, 3);
        assert!(tsnonlocal(&x, &y, &empty, &g, &cfg).is_err());
    }

    #[test]
    fn weights_store_roundtrip() {
        let w = FeatureWeights::seeded(6, 2, 17);
        let mut store = WeightStore::new();
        w.write_to("feat", &mut store);
        assert_eq!(FeatureWeights::read_from("feat", &store).unwrap(), w);
    }

    #[test]
    fn transformed_pair_gives_finite_features() {
        let x = random_cloud(64, 10, 2.0);
        let y = apply_transform(&RigidTransform::from_yaw(0.1, Vec3::new(0.3, 0.1, 0.0)), &x);
        let w = FeatureWeights::seeded(16, 2, 1);
        let (fx, fy) = tsnonlocal(
            &x,
            &y,
            &w,
            &GateConfig::default(),
            &DescriptorConfig::default(),
        )
        .unwrap();
        assert!(fx.iter().chain(fy.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn embedding_has_constant_norm() {
        let c = random_cloud(60, 12, 2.0);
        let cfg = DescriptorConfig::backbone();
        let raw = raw_descriptor(&c, &cfg).unwrap();
        let e = embed_descriptor(&raw, &cfg).unwrap();
        let l2 = cfg.embedding_norm() * cfg.embedding_norm();
        for i in 0..e.nrows() {
            assert!((e.row(i).norm_squared() - l2).abs() < 1e-9 * l2);
        }
        for k in 0..RAW_DESCRIPTOR_DIM {
            let scale = cfg.column_weights[k] / cfg.kernel_width;
            assert!(
                (0..e.nrows())
                    .all(|i| (e[(i, k)] - raw[(i, k)] * scale).abs()
                        < 1e-12 * (1.0 + e[(i, k)].abs()))
            );
        }
        assert!(embed_descriptor(&DMatrix::zeros(2, 5), &cfg).is_err());
    }

    #[test]
    fn seeded_iterations_start_as_identity() {
        let x = random_cloud(20, 1, 2.0);
        let y = random_cloud(30, 2, 2.0);
        let cfg = DescriptorConfig::default();
        let w = FeatureWeights::seeded(8, 3, 3);
        let (fx, fy) = tsnonlocal(&x, &y, &w, &GateConfig::default(), &cfg).unwrap();
        assert_eq!(fx, handcrafted_descriptor(&x, &cfg, &w.projection).unwrap());
        assert_eq!(fy, handcrafted_descriptor(&y, &cfg, &w.projection).unwrap());
    }
}
