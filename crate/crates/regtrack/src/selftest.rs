//! Quick invariant checks runnable from the command line.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regtrack_core::geom::{bbox_iou, BBox3D, BoxSize, Point3, RigidTransform, Vec3};
use regtrack_core::matching::{positivize, sinkhorn_slack, SinkhornConfig};
use regtrack_core::nn::WeightStore;
use regtrack_core::reg::{register, weighted_svd};
use regtrack_core::sim::metrics::{precision_step_area, success_step_area, PRECISION_RANGE};
use regtrack_core::sim::{synth_object, Shape};

use crate::commands::load_weights;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io::{format_weights, parse_weights};

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        name,
        passed,
        detail,
    }
}

fn svd_recovery(rng: &mut ChaCha8Rng) -> Result<Check> {
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let truth = RigidTransform::from_yaw(
            rng.random_range(-3.0..3.0),
            Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                0.0,
            ),
        );
        let src: Vec<Point3> = (0..30)
            .map(|_| {
                Point3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let dst: Vec<Point3> = src.iter().map(|p| truth.apply(p)).collect();
        let w: Vec<f64> = (0..30).map(|_| rng.random_range(0.1..1.0)).collect();
        let fit = weighted_svd(&src, &dst, &w)?.transform;
        worst = worst
            .max((fit.rotation - truth.rotation).amax())
            .max((fit.translation - truth.translation).amax());
    }
    Ok(check(
        "weighted SVD recovers planted transforms",
        worst < 1e-8,
        format!("max error {worst:.2e}"),
    ))
}

fn sinkhorn_bounds(rng: &mut ChaCha8Rng) -> Result<Check> {
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let a = DMatrix::from_fn(16, 24, |_, _| rng.random_range(-3.0..3.0));
        let out = sinkhorn_slack(&positivize(&a), &SinkhornConfig::default())?;
        let sums = (0..16)
            .map(|i| out.row(i).sum())
            .chain((0..24).map(|j| out.column(j).sum()));
        worst = sums.fold(worst, f64::max);
        if out.iter().any(|v| *v < 0.0) {
            return Ok(check(
                "slack Sinkhorn marginals stay within one",
                false,
                "negative entry".into(),
            ));
        }
    }
    Ok(check(
        "slack Sinkhorn marginals stay within one",
        worst <= 1.0 + 1e-9,
        format!("max marginal {worst:.6}"),
    ))
}

fn iou_example() -> Result<Check> {
    let size = BoxSize::new(2.0, 2.0, 2.0)?;
    let a = BBox3D::new(Vec3::zeros(), size, 0.0)?;
    let b = BBox3D::new(Vec3::new(1.0, 0.0, 0.0), size, 0.0)?;
    let iou = bbox_iou(&a, &b);
    Ok(check(
        "IoU of half-overlapping cubes is 1/3",
        (iou - 1.0 / 3.0).abs() < 1e-12,
        format!("{iou:.12}"),
    ))
}

fn self_registration(cfg: &RunConfig) -> Result<Check> {
    let cloud = synth_object(Shape::CarLike, &BoxSize::new(4.0, 1.8, 1.5)?, 256, 1)?;
    let weights = load_weights(cfg)?;
    let r = register(
        &cloud,
        &cloud,
        &cfg.tracker.registration,
        &weights.registration,
    )?;
    let err = (r.transform.rotation - nalgebra::Matrix3::identity())
        .amax()
        .max(r.transform.translation.amax());
    Ok(check(
        "self-registration returns the identity",
        !r.degenerate_flag && err < 1e-3,
        format!("max error {err:.2e}"),
    ))
}

fn metric_areas(rng: &mut ChaCha8Rng) -> Check {
    let ious: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
    let dists: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..3.0)).collect();
    let mean_iou = 100.0 * ious.iter().sum::<f64>() / 50.0;
    let mean_prec = dists
        .iter()
        .map(|d| 1.0 - d.min(PRECISION_RANGE) / PRECISION_RANGE)
        .sum::<f64>()
        / 50.0
        * 100.0;
    let err = (success_step_area(&ious) - mean_iou)
        .abs()
        .max((precision_step_area(&dists) - mean_prec).abs());
    check(
        "step-curve areas equal per-frame means (percent)",
        err < 1e-10,
        format!("max error {err:.2e}"),
    )
}

fn weight_round_trip(cfg: &RunConfig) -> Result<Check> {
    let mut store = WeightStore::new();
    load_weights(cfg)?.write_to(&mut store);
    let back = parse_weights(&format_weights(&store), Path::new("<memory>"))?;
    Ok(check(
        "weight file round trip is exact",
        back == store,
        format!("{} layers", store.len()),
    ))
}

fn config_round_trip(cfg: &RunConfig) -> Result<Check> {
    let mut back = RunConfig::default();
    back.apply_text(&cfg.to_text())?;
    Ok(check(
        "configuration text round trip is exact",
        &back == cfg,
        format!("{} keys", cfg.pairs().len()),
    ))
}

pub fn run_checks(cfg: &RunConfig) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(vec![
        svd_recovery(&mut rng)?,
        sinkhorn_bounds(&mut rng)?,
        iou_example()?,
        self_registration(cfg)?,
        metric_areas(&mut rng),
        weight_round_trip(cfg)?,
        config_round_trip(cfg)?,
    ])
}

/// Prints one `PASS`/`FAIL` line per check; fails if any check does.
pub fn selftest(cfg: &RunConfig) -> Result<String> {
    let checks = run_checks(cfg)?;
    let mut out = String::new();
    for c in &checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{tag} {} ({})\n", c.name, c.detail));
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        print!("{out}");
        return Err(CliError::Failed(format!(
            "{failed} self-test check(s) failed"
        )));
    }
    Ok(out)
}
