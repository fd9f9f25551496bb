use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regtrack_core::feat::{
    attention_weights, handcrafted_descriptor, spatial_gate, tsnonlocal, DescriptorConfig,
    FeatureWeights, GateConfig, GateMask,
};
use regtrack_core::geom::{Point3, PointCloud};

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.7..0.7),
                )
            })
            .collect(),
    )
}

fn point() -> impl Strategy<Value = Point3> {
    prop::array::uniform3(-3.0f64..3.0).prop_map(Point3::from)
}

#[test]
fn tsnonlocal_outputs_are_finite_on_random_instances() {
    let w = FeatureWeights::kaiming(16, 2, 5);
    let g = GateConfig::default();
    let cfg = DescriptorConfig::backbone();
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nx, ny) = (rng.random_range(1..24), rng.random_range(1..32));
        let (x, y) = (cloud(&mut rng, nx), cloud(&mut rng, ny));
        let (fx, fy) = tsnonlocal(&x, &y, &w, &g, &cfg).unwrap();
        assert_eq!((fx.nrows(), fy.nrows()), (nx, ny));
        assert!(
            fx.iter().chain(fy.iter()).all(|v| v.is_finite()),
            "seed {seed}"
        );
    }
}

#[test]
fn features_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (x, y) = (cloud(&mut rng, 40), cloud(&mut rng, 60));
    let g = GateConfig::default();
    let cfg = DescriptorConfig::default();
    let a = tsnonlocal(&x, &y, &FeatureWeights::kaiming(16, 3, 2), &g, &cfg).unwrap();
    let b = tsnonlocal(&x, &y, &FeatureWeights::kaiming(16, 3, 2), &g, &cfg).unwrap();
    assert_eq!(a, b);
    let w = FeatureWeights::seeded(16, 1, 2);
    assert_eq!(
        handcrafted_descriptor(&x, &cfg, &w.projection).unwrap(),
        handcrafted_descriptor(&x, &cfg, &w.projection).unwrap()
    );
}

proptest! {
    #[test]
    fn gate_is_symmetric(p in point(), q in point(), b in 0.1f64..1.0, extra in 0.0f64..2.0) {
        let g = GateConfig::new(b + extra, b).unwrap();
        prop_assert_eq!(spatial_gate(&p, &q, &g), spatial_gate(&q, &p, &g));
    }

    #[test]
    fn enlarging_the_gate_never_closes_it(p in point(), q in point(), b in 0.1f64..1.0, extra in 0.0f64..2.0, grow in 0.0f64..1.0) {
        let small = GateConfig::new(b + extra, b).unwrap();
        let large = GateConfig::new(b + extra + grow, b + grow).unwrap();
        prop_assert!(!spatial_gate(&p, &q, &small) || spatial_gate(&p, &q, &large));
    }

    #[test]
    fn post_gate_attention_mass_is_a_fraction(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = FeatureWeights::kaiming(8, 1, seed);
        let (x, y) = (cloud(&mut rng, 9), cloud(&mut rng, 14));
        let fx = DMatrix::from_fn(9, 8, |_, _| rng.random_range(-4.0..4.0));
        let fy = DMatrix::from_fn(14, 8, |_, _| rng.random_range(-4.0..4.0));
        let alpha = attention_weights(&fx, &fy, &w.iterations[0]).unwrap();
        let mask = GateMask::build(&x.points, &y.points, &GateConfig::default());
        for i in 0..9 {
            let mass: f64 = (0..14).filter(|&j| mask.get(i, j)).map(|j| alpha[(i, j)]).sum();
            prop_assert!((-1e-12..=1.0 + 1e-9).contains(&mass));
        }
    }
}
