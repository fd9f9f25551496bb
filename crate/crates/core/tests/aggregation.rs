use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regtrack_core::agg::{
    best_template_index, global_embedding, localize, score_weighted_maxpool, target_features,
    AggregationWeights, RegistrationEstimate,
};
use regtrack_core::geom::{BBox3D, BoxSize, Point3, RigidTransform, Vec3};

fn prev_box() -> BBox3D {
    BBox3D::new(
        Vec3::new(5.0, -2.0, 0.3),
        BoxSize::new(4.0, 1.8, 1.5).unwrap(),
        0.6,
    )
    .unwrap()
}

fn scene(seed: u64, n: usize, m: usize) -> (DMatrix<f64>, Vec<Point3>, Vec<Point3>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = || {
        Point3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.7..0.7),
        )
    };
    let x: Vec<Point3> = (0..n).map(|_| p()).collect();
    let y: Vec<Point3> = (0..m).map(|_| p()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let a = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..1.0));
    (a, x, y)
}

#[test]
fn aligned_clouds_leave_registration_unchanged() {
    let (_, x, _) = scene(1, 10, 1);
    let reg = RigidTransform::from_yaw(0.05, Vec3::new(0.4, 0.1, 0.0));
    let xbar: Vec<Point3> = x.iter().map(|p| reg.apply(p)).collect();
    let a = DMatrix::from_fn(10, 10, |i, j| if i == j { 0.9 } else { 0.01 });
    let est = RegistrationEstimate {
        transform: reg,
        degenerate: false,
    };
    let out = localize(&a, &xbar, &xbar, &prev_box(), &est, true).unwrap();
    assert!(out.residual.norm() < 1e-6);
    let expect = prev_box().pose().apply(&Point3::from(reg.translation));
    assert!((out.bbox.center - expect.coords).norm() < 1e-6);
    assert!((out.bbox.heading() - (0.6 + 0.05)).abs() < 1e-12);
}

#[test]
fn uniform_shift_is_recovered() {
    let (_, x, _) = scene(2, 12, 1);
    let y: Vec<Point3> = x.iter().map(|p| p + Vec3::new(0.3, 0.0, 0.0)).collect();
    let a = DMatrix::from_fn(12, 12, |i, j| if i == j { 0.8 } else { 0.1 });
    let out = localize(
        &a,
        &x,
        &y,
        &prev_box(),
        &RegistrationEstimate::identity(),
        true,
    )
    .unwrap();
    assert!((out.residual - Vec3::new(0.3, 0.0, 0.0)).norm() < 1e-6);
}

#[test]
fn degenerate_registration_is_flagged() {
    let (a, x, y) = scene(3, 5, 7);
    let est = RegistrationEstimate {
        transform: RigidTransform::from_yaw(0.3, Vec3::new(1.0, 0.0, 0.0)),
        degenerate: true,
    };
    let out = localize(&a, &x, &y, &prev_box(), &est, true).unwrap();
    assert!(!out.used_registration);
    assert!((out.bbox.heading() - 0.6).abs() < 1e-12);
}

#[test]
fn zero_scores_keep_transformed_previous_box() {
    let (_, x, y) = scene(4, 5, 7);
    let est = RegistrationEstimate {
        transform: RigidTransform::from_yaw(0.0, Vec3::new(0.5, 0.0, 0.0)),
        degenerate: false,
    };
    let out = localize(&DMatrix::zeros(5, 7), &x, &y, &prev_box(), &est, true).unwrap();
    assert_eq!(out.confidence, 0.0);
    let expect = prev_box().pose().apply(&Point3::new(0.5, 0.0, 0.0));
    assert!((out.bbox.center - expect.coords).norm() < 1e-12);
}

#[test]
fn target_features_have_one_row_per_search_point() {
    let w = AggregationWeights::seeded(8, 3);
    let (a, x, y) = scene(5, 6, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let phi_x = DMatrix::from_fn(6, 8, |_, _| rng.random_range(-1.0..1.0));
    let phi_y = DMatrix::from_fn(9, 8, |_, _| rng.random_range(-1.0..1.0));
    let f = target_features(&a, &phi_x, &x, &phi_y, &w).unwrap();
    assert_eq!(f.shape(), (y.len(), 8));
    assert!(f.iter().all(|v| v.is_finite()));
    assert_eq!(f, target_features(&a, &phi_x, &x, &phi_y, &w).unwrap());
}

#[test]
fn ties_pick_the_lowest_template_index() {
    let a = DMatrix::from_column_slice(6, 1, &[0.1, 0.2, 0.7, 0.3, 0.1, 0.7]);
    assert_eq!(best_template_index(&a), vec![2]);
}

proptest! {
    #[test]
    fn localize_is_translation_equivariant(seed in any::<u64>(), v in prop::array::uniform3(-3.0f64..3.0), use_residual in any::<bool>()) {
        let (a, x, y) = scene(seed, 8, 11);
        let v = Vec3::from(v);
        let reg = RigidTransform::from_yaw(0.1, Vec3::new(0.2, -0.1, 0.0));
        let est = RegistrationEstimate { transform: reg, degenerate: false };
        let moved_est = RegistrationEstimate { transform: RigidTransform { translation: reg.translation + v, ..reg }, degenerate: false };
        // The registered template moves with the registration.
        let x2: Vec<Point3> = x.iter().map(|p| p + v).collect();
        let y2: Vec<Point3> = y.iter().map(|p| p + v).collect();
        let frame = BBox3D::new(Vec3::zeros(), BoxSize::new(4.0, 1.8, 1.5).unwrap(), 0.0).unwrap();
        let base = localize(&a, &x, &y, &frame, &est, use_residual).unwrap();
        let shifted = localize(&a, &x2, &y2, &frame, &moved_est, use_residual).unwrap();
        prop_assert!((shifted.bbox.center - base.bbox.center - v).norm() < 1e-9 * (1.0 + v.norm()));
    }

    #[test]
    fn localize_keeps_size_and_bounds_confidence(seed in any::<u64>()) {
        let (a, x, y) = scene(seed, 7, 9);
        let out = localize(&a, &x, &y, &prev_box(), &RegistrationEstimate::identity(), true).unwrap();
        prop_assert_eq!(out.bbox.size, prev_box().size);
        prop_assert!((0.0..=1.0).contains(&out.confidence));
    }

    #[test]
    fn global_embedding_ignores_template_order(seed in any::<u64>()) {
        let w = AggregationWeights::seeded(6, 1);
        let (a, _, _) = scene(seed, 7, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = DMatrix::from_fn(7, 6, |_, _| rng.random_range(-1.0..1.0));
        let order = [3usize, 0, 6, 2, 5, 1, 4];
        let g1 = global_embedding(&a, &phi, &w.global).unwrap();
        let g2 = global_embedding(&a.select_rows(order.iter()), &phi.select_rows(order.iter()), &w.global).unwrap();
        prop_assert_eq!(g1, g2);
        let pooled = score_weighted_maxpool(&a, &phi).unwrap();
        for i in 0..7 {
            for j in 0..5 {
                for k in 0..6 {
                    prop_assert!(pooled[(j, k)] >= a[(i, j)] * phi[(i, k)]);
                }
            }
        }
    }
}
