//! Flat `key = value` run configuration.
//!
//! Defaults come from the core crate's `Default` impls. Values are resolved
//! in order: defaults, `REGTRACK_SEED`, config file, command-line flags.
//! Every key is printed back by [`RunConfig::pairs`] in a form that parses
//! to the identical value, which is what makes manifests replayable.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use regtrack_core::feat::GateConfig;
use regtrack_core::reg::InlierSelection;
use regtrack_core::sim::track::TransformNoise;
use regtrack_core::sim::{SequenceConfig, Shape, TrackMode, TrackerConfig};

use crate::error::{CliError, Result};

/// Environment variable consulted for `seed` when neither the file nor
/// the flags set it.
pub const SEED_ENV: &str = "REGTRACK_SEED";

pub struct KeySpec {
    pub name: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, help: &'static str) -> KeySpec {
    KeySpec { name, help }
}

/// Every accepted key, in manifest order.
pub const KEYS: &[KeySpec] = &[
    key(
        "seed",
        "global seed: sequence seed for synth, resampling/noise seed for track",
    ),
    key("weight_seed", "seed of the generated weights"),
    key(
        "weights",
        "weight file to load instead of seeded weights (empty: seeded)",
    ),
    key("iterations", "attention iterations T"),
    key("dim", "feature width d"),
    key("a", "gate semi-axis along y (m)"),
    key("b", "gate semi-axis along z (m)"),
    key("inlier_backend", "inlier scoring backend: mnn | mlp"),
    key("inlier_selection", "topk | threshold"),
    key("inlier_fraction", "fraction kept by topk selection"),
    key("inlier_threshold", "score threshold of threshold selection"),
    key("tau", "mnn kernel width (m)"),
    key("k_neighbors", "neighbourhood size of the eigen features"),
    key("context_radii", "four comma-separated context radii (m)"),
    key(
        "registration_kernel",
        "descriptor kernel width used by registration",
    ),
    key(
        "backbone_kernel",
        "descriptor kernel width of the matching backbone",
    ),
    key(
        "ground_margin",
        "ground removal margin below the box (m), or none",
    ),
    key("sinkhorn_iterations", "Sinkhorn iteration cap"),
    key("sinkhorn_tolerance", "Sinkhorn marginal tolerance"),
    key("slack_value", "slack row/column entry"),
    key("sigma", "distance-map radius (m)"),
    key("template_points", "template resample size"),
    key("search_points", "search-area resample size"),
    key("enlarge_m", "search-area enlargement of l, w, h (m)"),
    key(
        "mode",
        "comma-separated tracker modes: full, noreg, regonly, norefine",
    ),
    key(
        "template_fusion",
        "fuse first-frame target points into the template",
    ),
    key("noise_rot", "injected per-frame yaw noise std (rad)"),
    key("noise_t", "injected per-frame translation noise std (m)"),
    key("frames", "frames per synthetic sequence"),
    key(
        "shape",
        "synthetic object: car_like | cuboid_shell | cylinder",
    ),
    key("length", "object length (m)"),
    key("width", "object width (m)"),
    key("height", "object height (m)"),
    key("object_points", "points sampled on the object"),
    key(
        "scene_points",
        "target points per frame in the viewing window",
    ),
    key("speed", "mean displacement per frame (m)"),
    key("speed_jitter", "per-frame speed std (m)"),
    key("max_speed", "displacement bound per frame (m)"),
    key("yaw_rate", "mean yaw change per frame (rad)"),
    key("yaw_jitter", "per-frame yaw std (rad)"),
    key("yaw_rate_limit", "bound on the yaw change per frame (rad)"),
    key("noise_sigma", "per-point Gaussian noise (m)"),
    key("clutter_ratio", "clutter points relative to object points"),
    key("dropout", "range-dependent dropout strength"),
    key(
        "view_radius",
        "half-size of the window kept around the target (m)",
    ),
    key("ground_gap", "gap between box bottom and ground (m)"),
];

pub fn is_key(name: &str) -> bool {
    KEYS.iter().any(|k| k.name == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub weight_seed: u64,
    pub weights: Option<PathBuf>,
    pub iterations: usize,
    pub dim: usize,
    pub modes: Vec<TrackMode>,
    pub tracker: TrackerConfig,
    pub sequence: SequenceConfig,
    inlier_fraction: f64,
    inlier_threshold: f64,
    threshold_selection: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tracker = TrackerConfig::default();
        let (fraction, threshold) = match tracker.registration.selection {
            InlierSelection::TopK { fraction } => (fraction, 0.5),
            InlierSelection::Threshold { template, .. } => (0.5, template),
        };
        Self {
            seed: 0,
            weight_seed: 7,
            weights: None,
            iterations: 12,
            dim: 128,
            modes: vec![tracker.mode],
            threshold_selection: matches!(
                tracker.registration.selection,
                InlierSelection::Threshold { .. }
            ),
            tracker,
            sequence: SequenceConfig::default(),
            inlier_fraction: fraction,
            inlier_threshold: threshold,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(CliError::config(
            key,
            format!("expected true or false, got `{other}`"),
        )),
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Maps a core validation error onto the offending key.
pub fn config_error(e: regtrack_core::Error) -> CliError {
    match e {
        regtrack_core::Error::InvalidParameter { name, reason } => CliError::config(name, reason),
        regtrack_core::Error::Unknown { kind, value } => {
            CliError::config(kind, format!("unknown value `{value}`"))
        }
        other => CliError::config("config", other.to_string()),
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.tracker;
        let s = &mut self.sequence;
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "weight_seed" => self.weight_seed = parse(key, v)?,
            "weights" => self.weights = (!v.is_empty()).then(|| PathBuf::from(v)),
            "iterations" => self.iterations = parse(key, v)?,
            "dim" => self.dim = parse(key, v)?,
            "a" => t.registration.gate.a = parse(key, v)?,
            "b" => t.registration.gate.b = parse(key, v)?,
            "inlier_backend" => t.registration.backend = v.parse().map_err(config_error)?,
            "inlier_selection" => {
                self.threshold_selection = match v {
                    "topk" => false,
                    "threshold" => true,
                    other => {
                        return Err(CliError::config(
                            key,
                            format!("expected topk or threshold, got `{other}`"),
                        ))
                    }
                }
            }
            "inlier_fraction" => self.inlier_fraction = parse(key, v)?,
            "inlier_threshold" => self.inlier_threshold = parse(key, v)?,
            "tau" => t.registration.tau = parse(key, v)?,
            "k_neighbors" => {
                let k = parse(key, v)?;
                t.registration.descriptor.k_neighbors = k;
                t.backbone.k_neighbors = k;
            }
            "context_radii" => {
                let radii: Vec<f64> = v.split(',').map(|r| parse(key, r)).collect::<Result<_>>()?;
                let radii: [f64; 4] = radii
                    .try_into()
                    .map_err(|_| CliError::config(key, "expected four comma-separated radii"))?;
                t.registration.descriptor.context_radii = radii;
                t.backbone.context_radii = radii;
            }
            "registration_kernel" => t.registration.descriptor.kernel_width = parse(key, v)?,
            "backbone_kernel" => t.backbone.kernel_width = parse(key, v)?,
            "ground_margin" => {
                t.ground_margin = if v == "none" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "sinkhorn_iterations" => t.sinkhorn.max_iterations = parse(key, v)?,
            "sinkhorn_tolerance" => t.sinkhorn.tolerance = parse(key, v)?,
            "slack_value" => t.sinkhorn.slack_value = parse(key, v)?,
            "sigma" => t.sigma = parse(key, v)?,
            "template_points" => t.template_points = parse(key, v)?,
            "search_points" => t.search_points = parse(key, v)?,
            "enlarge_m" => t.enlarge_m = parse(key, v)?,
            "mode" => {
                self.modes = v
                    .split(',')
                    .map(|m| m.trim().parse::<TrackMode>().map_err(config_error))
                    .collect::<Result<_>>()?;
            }
            "template_fusion" => t.template_fusion = parse_bool(key, v)?,
            "noise_rot" => {
                t.transform_noise
                    .get_or_insert(TransformNoise {
                        sigma_rot: 0.0,
                        sigma_t: 0.0,
                    })
                    .sigma_rot = parse(key, v)?
            }
            "noise_t" => {
                t.transform_noise
                    .get_or_insert(TransformNoise {
                        sigma_rot: 0.0,
                        sigma_t: 0.0,
                    })
                    .sigma_t = parse(key, v)?
            }
            "frames" => s.frames = parse(key, v)?,
            "shape" => s.shape = v.parse::<Shape>().map_err(config_error)?,
            "length" => s.size.l = parse(key, v)?,
            "width" => s.size.w = parse(key, v)?,
            "height" => s.size.h = parse(key, v)?,
            "object_points" => s.object_points = parse(key, v)?,
            "scene_points" => s.scene_points = parse(key, v)?,
            "speed" => s.speed = parse(key, v)?,
            "speed_jitter" => s.speed_jitter = parse(key, v)?,
            "max_speed" => s.max_speed = parse(key, v)?,
            "yaw_rate" => s.yaw_rate = parse(key, v)?,
            "yaw_jitter" => s.yaw_jitter = parse(key, v)?,
            "yaw_rate_limit" => s.yaw_rate_limit = parse(key, v)?,
            "noise_sigma" => s.noise_sigma = parse(key, v)?,
            "clutter_ratio" => s.clutter_ratio = parse(key, v)?,
            "dropout" => s.dropout = parse(key, v)?,
            "view_radius" => s.view_radius = parse(key, v)?,
            "ground_gap" => s.ground_gap = parse(key, v)?,
            other => return Err(CliError::config(other, "unknown key")),
        }
        self.sync_selection();
        Ok(())
    }

    fn sync_selection(&mut self) {
        self.tracker.registration.selection = if self.threshold_selection {
            InlierSelection::Threshold {
                template: self.inlier_threshold,
                search: self.inlier_threshold,
            }
        } else {
            InlierSelection::TopK {
                fraction: self.inlier_fraction,
            }
        };
        if let Some(n) = self.tracker.transform_noise {
            if n.sigma_rot == 0.0 && n.sigma_t == 0.0 {
                self.tracker.transform_noise = None;
            }
        }
        self.tracker.mode = self.modes.first().copied().unwrap_or(TrackMode::Full);
        self.tracker.seed = self.seed;
    }

    /// Textual value of `key`, parseable back to the same value.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.tracker;
        let s = &self.sequence;
        let noise = t.transform_noise.unwrap_or(TransformNoise {
            sigma_rot: 0.0,
            sigma_t: 0.0,
        });
        Some(match key {
            "seed" => self.seed.to_string(),
            "weight_seed" => self.weight_seed.to_string(),
            "weights" => self
                .weights
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "iterations" => self.iterations.to_string(),
            "dim" => self.dim.to_string(),
            "a" => t.registration.gate.a.to_string(),
            "b" => t.registration.gate.b.to_string(),
            "inlier_backend" => t.registration.backend.as_str().to_string(),
            "inlier_selection" => if self.threshold_selection {
                "threshold"
            } else {
                "topk"
            }
            .to_string(),
            "inlier_fraction" => self.inlier_fraction.to_string(),
            "inlier_threshold" => self.inlier_threshold.to_string(),
            "tau" => t.registration.tau.to_string(),
            "k_neighbors" => t.registration.descriptor.k_neighbors.to_string(),
            "context_radii" => join(&t.registration.descriptor.context_radii),
            "registration_kernel" => t.registration.descriptor.kernel_width.to_string(),
            "backbone_kernel" => t.backbone.kernel_width.to_string(),
            "ground_margin" => t
                .ground_margin
                .map_or("none".to_string(), |m| m.to_string()),
            "sinkhorn_iterations" => t.sinkhorn.max_iterations.to_string(),
            "sinkhorn_tolerance" => t.sinkhorn.tolerance.to_string(),
            "slack_value" => t.sinkhorn.slack_value.to_string(),
            "sigma" => t.sigma.to_string(),
            "template_points" => t.template_points.to_string(),
            "search_points" => t.search_points.to_string(),
            "enlarge_m" => t.enlarge_m.to_string(),
            "mode" => self
                .modes
                .iter()
                .map(|m| m.as_str())
                .collect::<Vec<_>>()
                .join(","),
            "template_fusion" => t.template_fusion.to_string(),
            "noise_rot" => noise.sigma_rot.to_string(),
            "noise_t" => noise.sigma_t.to_string(),
            "frames" => s.frames.to_string(),
            "shape" => s.shape.as_str().to_string(),
            "length" => s.size.l.to_string(),
            "width" => s.size.w.to_string(),
            "height" => s.size.h.to_string(),
            "object_points" => s.object_points.to_string(),
            "scene_points" => s.scene_points.to_string(),
            "speed" => s.speed.to_string(),
            "speed_jitter" => s.speed_jitter.to_string(),
            "max_speed" => s.max_speed.to_string(),
            "yaw_rate" => s.yaw_rate.to_string(),
            "yaw_jitter" => s.yaw_jitter.to_string(),
            "yaw_rate_limit" => s.yaw_rate_limit.to_string(),
            "noise_sigma" => s.noise_sigma.to_string(),
            "clutter_ratio" => s.clutter_ratio.to_string(),
            "dropout" => s.dropout.to_string(),
            "view_radius" => s.view_radius.to_string(),
            "ground_gap" => s.ground_gap.to_string(),
            _ => return None,
        })
    }

    /// All keys with their resolved values, in [`KEYS`] order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .map(|k| {
                (
                    k.name,
                    self.get(k.name).expect("every listed key has a value"),
                )
            })
            .collect()
    }

    /// Applies a `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::config(
                    format!("line {}", n + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text)
    }

    /// Uses `REGTRACK_SEED` as the seed when set.
    pub fn apply_env(&mut self) -> Result<()> {
        match std::env::var(SEED_ENV) {
            Ok(v) => self
                .set("seed", &v)
                .map_err(|_| CliError::config(SEED_ENV, format!("cannot parse `{v}`"))),
            Err(_) => Ok(()),
        }
    }

    /// Resolves defaults, environment, optional file and overrides, then
    /// validates.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_env()?;
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every module precondition.
    pub fn validate(&self) -> Result<()> {
        let gate = &self.tracker.registration.gate;
        GateConfig::new(gate.a, gate.b).map_err(|_| {
            if gate.b > 0.0 && gate.a < gate.b {
                CliError::config("a", format!("must be at least b ({} < {})", gate.a, gate.b))
            } else {
                CliError::config("b", "semi-axes must be positive")
            }
        })?;
        if self.iterations == 0 {
            return Err(CliError::config("iterations", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(CliError::config("dim", "must be at least 1"));
        }
        if !(self.inlier_fraction > 0.0 && self.inlier_fraction <= 1.0) {
            return Err(CliError::config("inlier_fraction", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.inlier_threshold) {
            return Err(CliError::config("inlier_threshold", "must lie in [0, 1]"));
        }
        if self.tracker.registration.tau.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(CliError::config("tau", "must be positive"));
        }
        if self.modes.is_empty() {
            return Err(CliError::config("mode", "needs at least one mode"));
        }
        let size = &self.sequence.size;
        for (name, v) in [("length", size.l), ("width", size.w), ("height", size.h)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::config(name, "must be positive"));
            }
        }
        self.tracker.validate().map_err(config_error)?;
        self.sequence.validate().map_err(config_error)
    }

    /// Tracker configuration for one mode.
    pub fn tracker_for(&self, mode: TrackMode) -> TrackerConfig {
        TrackerConfig {
            mode,
            seed: self.seed,
            ..self.tracker.clone()
        }
    }

    /// Resolved configuration as `key = value` text.
    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
