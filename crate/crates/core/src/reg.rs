//! Tracking-specific registration: inlier scoring and rejection, soft
//! correspondences from feature similarity, and a weighted SVD fit of the
//! rigid transform aligning the template to the search area.

use alloc::string::ToString;
use alloc::vec::Vec;
use core::str::FromStr;

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::feat::{tsnonlocal, DescriptorConfig, FeatureMatrix, FeatureWeights, GateConfig};
use crate::geom::{Point3, PointCloud, RigidTransform, Vec3};
use crate::math::{ceil, exp, sigmoid};
use crate::neighbors::nearest_distances;
use crate::nn::{Mlp, WeightStore};

/// Per-point inlier probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InlierScores(Vec<f64>);

impl InlierScores {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::invalid("scores", "inlier scores must lie in [0, 1]"));
        }
        Ok(Self(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Which inlier classifier produces the scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InlierBackendKind {
    /// Training-free: Gaussian kernel of the nearest cross-cloud distance.
    #[default]
    Mnn,
    /// 3-layer MLP with sigmoid output over the learned features.
    Mlp,
}

impl FromStr for InlierBackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnn" => Ok(Self::Mnn),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::Unknown {
                kind: "inlier backend",
                value: other.to_string(),
            }),
        }
    }
}

impl InlierBackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Mnn => "mnn",
            Self::Mlp => "mlp",
        }
    }
}

/// A configured inlier classifier.
#[derive(Debug, Clone, Copy)]
pub enum InlierBackend<'a> {
    /// `score = exp(-d_nn^2 / tau^2)`.
    Mnn {
        tau: f64,
    },
    Mlp(&'a Mlp),
}

/// Inlier probabilities for the points of `own`, whose features are
/// `features`; `other` is the opposite cloud.
pub fn inlier_scores(
    features: &FeatureMatrix,
    backend: InlierBackend<'_>,
    own: &[Point3],
    other: &[Point3],
) -> Result<InlierScores> {
    if features.nrows() == 0 || own.is_empty() {
        return Err(Error::Empty("inlier features"));
    }
    if features.nrows() != own.len() {
        return Err(Error::DimensionMismatch {
            context: "inlier features",
            expected: own.len(),
            actual: features.nrows(),
        });
    }
    match backend {
        InlierBackend::Mnn { tau } => {
            if !(tau > 0.0) {
                return Err(Error::invalid("tau", "must be positive"));
            }
            let scores = nearest_distances(own, other)
                .into_iter()
                .map(|d| {
                    if d.is_finite() {
                        exp(-(d * d) / (tau * tau))
                    } else {
                        0.0
                    }
                })
                .collect();
            Ok(InlierScores(scores))
        }
        InlierBackend::Mlp(mlp) => {
            if mlp.output_dim() != 1 {
                return Err(Error::DimensionMismatch {
                    context: "inlier mlp output",
                    expected: 1,
                    actual: mlp.output_dim(),
                });
            }
            let logits = mlp.forward(features)?;
            Ok(InlierScores(logits.iter().map(|v| sigmoid(*v)).collect()))
        }
    }
}

/// Indices of the `ceil(fraction * n)` highest scores, ties broken by lower
/// index, returned in ascending index order.
pub fn select_topk(scores: &InlierScores, fraction: f64) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("fraction", "must lie in (0, 1]"));
    }
    let n = scores.len();
    let k = (ceil(fraction * n as f64) as usize).clamp(1, n);
    let s = scores.as_slice();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Indices whose score is at least `threshold`, ascending.
pub fn select_threshold(scores: &InlierScores, threshold: f64) -> Vec<usize> {
    scores
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, s)| **s >= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Soft correspondences `ŷ_i = sum_j M_ij y_j` with `M` the row softmax of
/// feature inner products. Returns the points and `M`.
pub fn soft_correspondence(
    fx: &FeatureMatrix,
    fy: &FeatureMatrix,
    y: &[Point3],
) -> Result<(Vec<Point3>, DMatrix<f64>)> {
    if fx.nrows() == 0 || fy.nrows() == 0 {
        return Err(Error::Empty("soft correspondence input"));
    }
    if fx.ncols() != fy.ncols() {
        return Err(Error::DimensionMismatch {
            context: "soft correspondence feature width",
            expected: fx.ncols(),
            actual: fy.ncols(),
        });
    }
    if fy.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "search features",
            expected: y.len(),
            actual: fy.nrows(),
        });
    }
    let mut m = fx * fy.transpose();
    for mut row in m.row_iter_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = exp(*v - max);
            sum += *v;
        }
        row /= sum;
    }
    let corr = m
        .row_iter()
        .map(|row| {
            let acc = row
                .iter()
                .zip(y)
                .fold(Vec3::zeros(), |acc, (w, p)| acc + p.coords * *w);
            Point3::from(acc)
        })
        .collect();
    Ok((corr, m))
}

/// Output of [`weighted_svd`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdFit {
    pub transform: RigidTransform,
    /// Set when the fit is under-determined; `transform` is then identity.
    pub degenerate: bool,
}

impl SvdFit {
    fn degenerate() -> Self {
        Self {
            transform: RigidTransform::identity(),
            degenerate: true,
        }
    }
}

/// Relative singular-value floor below which the cross-covariance is
/// considered rank deficient.
const RANK_TOLERANCE: f64 = 1e-12;

/// Weighted least-squares rigid fit minimising
/// `sum_i w_i |R src_i + t - dst_i|^2` (Kabsch with reflection fix).
///
/// Weights are normalised by their sum, so the result is invariant to a
/// positive rescaling of `w`.
pub fn weighted_svd(src: &[Point3], dst: &[Point3], w: &[f64]) -> Result<SvdFit> {
    if src.len() != dst.len() || src.len() != w.len() {
        return Err(Error::DimensionMismatch {
            context: "weighted svd inputs",
            expected: src.len(),
            actual: if dst.len() != src.len() {
                dst.len()
            } else {
                w.len()
            },
        });
    }
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("weights", "must be finite and non-negative"));
    }
    let total: f64 = w.iter().sum();
    let effective = w.iter().filter(|v| **v > 0.0).count();
    if effective < 3 || !(total > 0.0) {
        return Ok(SvdFit::degenerate());
    }
    let mut cs = Vec3::zeros();
    let mut cd = Vec3::zeros();
    for ((s, d), wi) in src.iter().zip(dst).zip(w) {
        let wn = wi / total;
        cs += s.coords * wn;
        cd += d.coords * wn;
    }
    let mut h = Matrix3::zeros();
    for ((s, d), wi) in src.iter().zip(dst).zip(w) {
        let wn = wi / total;
        h += (s.coords - cs) * (d.coords - cd).transpose() * wn;
    }
    let svd = h.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Ok(SvdFit::degenerate());
    };
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= RANK_TOLERANCE * sv[0] {
        return Ok(SvdFit::degenerate());
    }
    let v = v_t.transpose();
    let det = (v * u.transpose()).determinant();
    let fix = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, if det < 0.0 { -1.0 } else { 1.0 }));
    let rotation = v * fix * u.transpose();
    let translation = cd - rotation * cs;
    Ok(SvdFit {
        transform: RigidTransform {
            rotation,
            translation,
        },
        degenerate: false,
    })
}

/// How inliers are selected before correspondence search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InlierSelection {
    /// Keep the `fraction` of points with the highest scores.
    TopK { fraction: f64 },
    /// Keep points whose score reaches the per-cloud threshold.
    Threshold { template: f64, search: f64 },
}

impl Default for InlierSelection {
    fn default() -> Self {
        Self::TopK { fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    pub gate: GateConfig,
    pub selection: InlierSelection,
    pub backend: InlierBackendKind,
    /// Kernel width of the `mnn` backend (m).
    pub tau: f64,
    pub descriptor: DescriptorConfig,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            gate: GateConfig::default(),
            selection: InlierSelection::default(),
            backend: InlierBackendKind::Mnn,
            tau: 0.1,
            descriptor: DescriptorConfig::registration(),
        }
    }
}

/// Learned parameters used by [`register`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationWeights {
    pub features: FeatureWeights,
    /// `d -> d -> d -> 1` classifier for the `mlp` backend.
    pub inlier: Mlp,
}

impl RegistrationWeights {
    pub fn seeded(dim: usize, iterations: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let features = FeatureWeights::seeded(dim, iterations, seed);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x1d1e_5c0e);
        let inlier = Mlp::seeded(&[dim, dim, dim, 1], &mut rng);
        Self { features, inlier }
    }

    pub fn write_to(&self, prefix: &str, store: &mut WeightStore) {
        self.features
            .write_to(&alloc::format!("{prefix}.features"), store);
        store.insert_mlp(&alloc::format!("{prefix}.inlier"), &self.inlier);
    }

    pub fn read_from(prefix: &str, store: &WeightStore) -> Result<Self> {
        let features = FeatureWeights::read_from(&alloc::format!("{prefix}.features"), store)?;
        let inlier = store.mlp(&alloc::format!("{prefix}.inlier"))?;
        if inlier.input_dim() != features.dim() || inlier.output_dim() != 1 {
            return Err(Error::invalid(
                "inlier",
                "classifier must map d features to one score",
            ));
        }
        Ok(Self { features, inlier })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub template_scores: InlierScores,
    pub search_scores: InlierScores,
    pub kept_template_indices: Vec<usize>,
    pub kept_search_indices: Vec<usize>,
    /// One soft correspondence per kept template point.
    pub soft_correspondences: Vec<Point3>,
    pub degenerate_flag: bool,
}

impl RegistrationResult {
    fn degenerate(template_scores: InlierScores, search_scores: InlierScores) -> Self {
        Self {
            transform: RigidTransform::identity(),
            template_scores,
            search_scores,
            kept_template_indices: Vec::new(),
            kept_search_indices: Vec::new(),
            soft_correspondences: Vec::new(),
            degenerate_flag: true,
        }
    }
}

/// Full registration of `template` onto `search`; both must already be in
/// the shared canonical frame.
pub fn register(
    template: &PointCloud,
    search: &PointCloud,
    cfg: &RegistrationConfig,
    weights: &RegistrationWeights,
) -> Result<RegistrationResult> {
    if template.is_empty() || search.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (fx, fy) = tsnonlocal(
        template,
        search,
        &weights.features,
        &cfg.gate,
        &cfg.descriptor,
    )?;
    let backend = match cfg.backend {
        InlierBackendKind::Mnn => InlierBackend::Mnn { tau: cfg.tau },
        InlierBackendKind::Mlp => InlierBackend::Mlp(&weights.inlier),
    };
    let template_scores = inlier_scores(&fx, backend, &template.points, &search.points)?;
    let search_scores = inlier_scores(&fy, backend, &search.points, &template.points)?;
    let (kept_t, kept_s) = match cfg.selection {
        InlierSelection::TopK { fraction } => (
            select_topk(&template_scores, fraction)?,
            select_topk(&search_scores, fraction)?,
        ),
        InlierSelection::Threshold {
            template: tt,
            search: ts,
        } => (
            select_threshold(&template_scores, tt),
            select_threshold(&search_scores, ts),
        ),
    };
    if kept_t.is_empty() || kept_s.is_empty() {
        return Ok(RegistrationResult::degenerate(
            template_scores,
            search_scores,
        ));
    }
    let fx_kept = fx.select_rows(kept_t.iter());
    let fy_kept = fy.select_rows(kept_s.iter());
    let y_kept: Vec<Point3> = kept_s.iter().map(|&j| search.points[j]).collect();
    let x_kept: Vec<Point3> = kept_t.iter().map(|&i| template.points[i]).collect();
    let (corr, _) = soft_correspondence(&fx_kept, &fy_kept, &y_kept)?;
    let w: Vec<f64> = kept_t
        .iter()
        .map(|&i| template_scores.as_slice()[i])
        .collect();
    let fit = weighted_svd(&x_kept, &corr, &w)?;
    Ok(RegistrationResult {
        transform: fit.transform,
        template_scores,
        search_scores,
        kept_template_indices: kept_t,
        kept_search_indices: kept_s,
        soft_correspondences: corr,
        degenerate_flag: fit.degenerate,
    })
}
