//! Frame-by-frame single-object tracking over a sequence.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::agg::{localize, AggregationWeights, RegistrationEstimate};
use crate::error::{Error, Result};
use crate::feat::{handcrafted_descriptor, DescriptorConfig};
use crate::geom::{
    bbox_iou, box_to_canonical, canonicalize, center_distance, crop, resample, BBox3D, PointCloud,
    RigidTransform, Vec3,
};
use crate::loss::gt_transform;
use crate::matching::{distance_map, positivize, refine, sinkhorn_slack, SinkhornConfig};
use crate::nn::WeightStore;
use crate::reg::{register, RegistrationConfig, RegistrationWeights};
use crate::sim::metrics::{precision_metric, success_metric};
use crate::sim::synth::{derive_seed, SyntheticSequence};

const TAG_TEMPLATE: u32 = 11;
const TAG_SEARCH: u32 = 12;
const TAG_TRANSFORM_NOISE: u32 = 13;

/// Which parts of the pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TrackMode {
    /// Registration, matching with the distance map, residual correction.
    #[default]
    Full,
    /// Identity transform and no distance map.
    NoReg,
    /// The box follows the registration alone (no residual correction).
    RegOnly,
    /// Full pipeline without the distance-map refinement.
    NoRefine,
}

impl TrackMode {
    pub const ALL: [TrackMode; 4] = [
        TrackMode::Full,
        TrackMode::NoReg,
        TrackMode::RegOnly,
        TrackMode::NoRefine,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TrackMode::Full => "full",
            TrackMode::NoReg => "noreg",
            TrackMode::RegOnly => "regonly",
            TrackMode::NoRefine => "norefine",
        }
    }

    fn registers(&self) -> bool {
        !matches!(self, TrackMode::NoReg)
    }

    fn refines(&self) -> bool {
        matches!(self, TrackMode::Full | TrackMode::RegOnly)
    }
}

impl fmt::Display for TrackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrackMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "mode",
                value: s.into(),
            })
    }
}

/// Gaussian perturbation composed onto every registration estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformNoise {
    /// Yaw standard deviation (rad).
    pub sigma_rot: f64,
    /// Per-axis (x, y) translation standard deviation (m).
    pub sigma_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub registration: RegistrationConfig,
    /// Descriptor of the matching backbone `Φ`.
    pub backbone: DescriptorConfig,
    /// When set, context neighbourhoods ignore points lower than this
    /// distance below the previous box's bottom face (ground removal).
    pub ground_margin: Option<f64>,
    pub sinkhorn: SinkhornConfig,
    pub template_points: usize,
    pub search_points: usize,
    /// Search-area enlargement of the previous box (m).
    pub enlarge_m: f64,
    /// Distance-map radius (m).
    pub sigma: f64,
    pub mode: TrackMode,
    /// Fuse first-frame target points into every template.
    pub template_fusion: bool,
    pub transform_noise: Option<TransformNoise>,
    /// Seed for point resampling and injected noise.
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            registration: RegistrationConfig::default(),
            backbone: DescriptorConfig::backbone(),
            ground_margin: Some(0.025),
            sinkhorn: SinkhornConfig::default(),
            template_points: 512,
            search_points: 1024,
            enlarge_m: 2.0,
            sigma: 0.4,
            mode: TrackMode::Full,
            template_fusion: false,
            transform_noise: None,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.template_points == 0 || self.search_points == 0 {
            return Err(Error::invalid(
                "template_points",
                "point counts must be positive",
            ));
        }
        if !(self.enlarge_m >= 0.0) {
            return Err(Error::invalid("enlarge_m", "must be non-negative"));
        }
        if let Some(m) = self.ground_margin {
            if !(m >= 0.0) {
                return Err(Error::invalid("ground_margin", "must be non-negative"));
            }
        }
        self.registration.descriptor.validate()?;
        self.backbone.validate()?;
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("sigma", "must be positive"));
        }
        if let Some(n) = &self.transform_noise {
            if !(n.sigma_rot >= 0.0 && n.sigma_t >= 0.0) {
                return Err(Error::invalid("transform_noise", "must be non-negative"));
            }
        }
        self.sinkhorn.validate()
    }
}

/// All learned parameters of the tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerWeights {
    pub registration: RegistrationWeights,
    pub aggregation: AggregationWeights,
}

impl TrackerWeights {
    pub fn seeded(dim: usize, iterations: usize, seed: u64) -> Self {
        Self {
            registration: RegistrationWeights::seeded(dim, iterations, seed),
            aggregation: AggregationWeights::seeded(dim, derive_seed(seed, 0xa6, 0)),
        }
    }

    pub fn write_to(&self, store: &mut WeightStore) {
        self.registration.write_to("registration", store);
        self.aggregation.write_to("aggregation", store);
    }

    pub fn read_from(store: &WeightStore) -> Result<Self> {
        Ok(Self {
            registration: RegistrationWeights::read_from("registration", store)?,
            aggregation: AggregationWeights::read_from("aggregation", store)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameResult {
    pub predicted: BBox3D,
    pub ground_truth: BBox3D,
    pub iou: f64,
    pub center_error: f64,
    pub confidence: f64,
    /// No observation was available; the previous box was carried forward.
    pub coasted: bool,
    pub used_registration: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackReport {
    /// One entry per frame; frame 0 is the given initial box.
    pub frames: Vec<FrameResult>,
    pub success: f64,
    pub precision: f64,
}

impl TrackReport {
    pub fn from_frames(frames: Vec<FrameResult>) -> Self {
        let ious: Vec<f64> = frames.iter().map(|f| f.iou).collect();
        let dists: Vec<f64> = frames.iter().map(|f| f.center_error).collect();
        Self {
            success: success_metric(&ious),
            precision: precision_metric(&dists),
            frames,
        }
    }
}

/// Per-frame inputs built from the previous prediction, in its canonical
/// frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub template: PointCloud,
    pub search: PointCloud,
    /// Current ground-truth box in the previous box's canonical frame.
    pub gt_canonical: BBox3D,
}

/// Crops, canonicalises and resamples the template and search area for
/// frame `t` (`t >= 1`) given the previous prediction.
pub fn frame_pair(
    seq: &SyntheticSequence,
    t: usize,
    prev_box: &BBox3D,
    cfg: &TrackerConfig,
) -> Result<Option<FramePair>> {
    if t == 0 || t >= seq.frames.len() {
        return Err(Error::invalid("frame", "index out of range"));
    }
    let mut template = canonicalize(&crop(&seq.frames[t - 1], prev_box, 0.0)?, prev_box);
    if cfg.template_fusion {
        let first = &seq.gt_boxes[0];
        template = template.concat(&canonicalize(&crop(&seq.frames[0], first, 0.0)?, first));
    }
    let search = canonicalize(&crop(&seq.frames[t], prev_box, cfg.enlarge_m)?, prev_box);
    if template.is_empty() || search.is_empty() {
        return Ok(None);
    }
    let t32 = t as u32;
    Ok(Some(FramePair {
        template: resample(
            &template,
            cfg.template_points,
            derive_seed(cfg.seed, TAG_TEMPLATE, t32),
        )?,
        search: resample(
            &search,
            cfg.search_points,
            derive_seed(cfg.seed, TAG_SEARCH, t32),
        )?,
        gt_canonical: box_to_canonical(&seq.gt_boxes[t], prev_box),
    }))
}

/// Ground-truth template-to-search transform of a frame pair.
pub fn pair_gt_transform(pair: &FramePair) -> RigidTransform {
    let origin = BBox3D::new(Vec3::zeros(), pair.gt_canonical.size, 0.0).expect("finite box");
    gt_transform(&origin, &pair.gt_canonical)
}

fn perturb(
    t: RigidTransform,
    noise: &TransformNoise,
    rng: &mut ChaCha8Rng,
) -> Result<RigidTransform> {
    let unit = Normal::new(0.0, 1.0).map_err(|_| Error::invalid("transform_noise", "bad value"))?;
    let d = RigidTransform::from_yaw(
        noise.sigma_rot * unit.sample(rng),
        Vec3::new(
            noise.sigma_t * unit.sample(rng),
            noise.sigma_t * unit.sample(rng),
            0.0,
        ),
    );
    Ok(d.compose(&t))
}

/// One tracking step: returns the new box and its bookkeeping.
pub fn track_step(
    pair: &FramePair,
    prev_box: &BBox3D,
    cfg: &TrackerConfig,
    weights: &TrackerWeights,
    rng: &mut ChaCha8Rng,
) -> Result<(BBox3D, f64, bool)> {
    let (x, y) = (&pair.template, &pair.search);
    let floor = cfg.ground_margin.map(|m| -prev_box.size.h / 2.0 - m);
    let mut estimate = RegistrationEstimate::identity();
    if cfg.mode.registers() {
        let mut reg_cfg = cfg.registration.clone();
        reg_cfg.descriptor.context_floor = floor;
        let r = register(x, y, &reg_cfg, &weights.registration)?;
        estimate = RegistrationEstimate {
            transform: r.transform,
            degenerate: r.degenerate_flag,
        };
    }
    if let Some(noise) = &cfg.transform_noise {
        estimate.transform = perturb(estimate.transform, noise, rng)?;
    }
    let applied = if estimate.degenerate {
        RigidTransform::identity()
    } else {
        estimate.transform
    };
    let xbar: Vec<_> = x.points.iter().map(|p| applied.apply(p)).collect();
    let mut desc = cfg.backbone.clone();
    desc.context_floor = floor;
    let backbone = &weights.aggregation.backbone;
    let phi_x = handcrafted_descriptor(&PointCloud::new(xbar.clone()), &desc, backbone)?;
    let phi_y = handcrafted_descriptor(y, &desc, backbone)?;
    let a = positivize(&(phi_x * phi_y.transpose()));
    let mut a_reg = sinkhorn_slack(&a, &cfg.sinkhorn)?;
    if cfg.mode.refines() && cfg.mode.registers() {
        a_reg = refine(&a_reg, &distance_map(&xbar, &y.points, cfg.sigma)?)?;
    }
    let use_residual = !matches!(cfg.mode, TrackMode::RegOnly);
    let out = localize(&a_reg, &xbar, &y.points, prev_box, &estimate, use_residual)?;
    Ok((out.bbox, out.confidence, out.used_registration))
}

/// Tracks the object through `seq` starting from its first ground-truth
/// box.
pub fn run_tracker(
    seq: &SyntheticSequence,
    cfg: &TrackerConfig,
    weights: &TrackerWeights,
) -> Result<TrackReport> {
    cfg.validate()?;
    if seq.frames.len() < 2 || seq.frames.len() != seq.gt_boxes.len() {
        return Err(Error::invalid(
            "sequence",
            "needs at least two frames with one box each",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_TRANSFORM_NOISE, 0));
    let first = seq.gt_boxes[0];
    let mut frames = Vec::with_capacity(seq.frames.len());
    frames.push(FrameResult {
        predicted: first,
        ground_truth: first,
        iou: 1.0,
        center_error: 0.0,
        confidence: 1.0,
        coasted: false,
        used_registration: false,
    });
    let mut prev = first;
    for t in 1..seq.frames.len() {
        let gt = seq.gt_boxes[t];
        let (predicted, confidence, coasted, used_registration) =
            match frame_pair(seq, t, &prev, cfg)? {
                Some(pair) => {
                    let (b, c, used) = track_step(&pair, &prev, cfg, weights, &mut rng)?;
                    (b, c, false, used)
                }
                None => (prev, 0.0, true, false),
            };
        frames.push(FrameResult {
            predicted,
            ground_truth: gt,
            iou: bbox_iou(&predicted, &gt),
            center_error: center_distance(&predicted, &gt),
            confidence,
            coasted,
            used_registration,
        });
        prev = predicted;
    }
    Ok(TrackReport::from_frames(frames))
}
