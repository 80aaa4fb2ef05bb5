use graspkg_core::encoder::{encode, EncoderConfig};
use graspkg_core::pointcloud::{gripper_control_points, random_rotation, FusedCloud, GraspPose, Point3};
use graspkg_core::rng;

fn random_fused(seed: u64) -> FusedCloud {
    let mut r = rng::seeded(seed);
    let n = 40 + rng::index(&mut r, 160);
    let object: Vec<Point3> = (0..n)
        .map(|_| [rng::normal(&mut r) * 0.3, rng::normal(&mut r) * 0.3, rng::normal(&mut r) * 0.3])
        .collect();
    let pose = GraspPose::new(random_rotation(&mut r), [0.1, -0.2, 0.05]).unwrap();
    FusedCloud::from_parts(&object, gripper_control_points(&pose)).unwrap()
}

#[test]
fn embedding_ignores_point_order() {
    let cfg = EncoderConfig::desk();
    for cloud in 0..20u64 {
        let fused = random_fused(cloud);
        let weights = cfg.init_weights(cloud + 100).unwrap();
        let base = encode(&fused, &cfg, &weights).unwrap();
        assert_eq!(base.len(), 32);
        assert_eq!(base, encode(&fused, &cfg, &weights).unwrap());
        for p in 0..20u64 {
            let mut perm: Vec<usize> = (0..fused.len()).collect();
            rng::shuffle(&mut rng::seeded(cloud * 1000 + p), &mut perm);
            let e = encode(&fused.permuted(&perm), &cfg, &weights).unwrap();
            let dev = base.iter().zip(&e).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dev < 1e-9, "cloud {cloud} permutation {p}: deviation {dev}");
        }
    }
}
