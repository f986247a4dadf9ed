//! Seeded fixtures shared by the benchmarks.

use headpose_core::eval::Detection;
use headpose_core::labelgen::ReferenceHead;
use headpose_core::net::{GridSet, StrideGrid, STRIDES};
use headpose_core::synthgen::{sample_scene, scene_rng, Scene, SceneSpec};
use headpose_core::EulerPose;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Clustered random detections, as produced before NMS.
pub fn random_detections(n: usize, seed: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<(f64, f64)> = (0..8)
        .map(|_| (rng.random_range(40.0..280.0), rng.random_range(40.0..280.0)))
        .collect();
    (0..n)
        .map(|_| {
            let (cx, cy) = centers[rng.random_range(0..centers.len())];
            let w = rng.random_range(30.0..90.0);
            Detection {
                bbox: [
                    cx + rng.random_range(-10.0..10.0) - w / 2.0,
                    cy + rng.random_range(-10.0..10.0) - w / 2.0,
                    w,
                    w * rng.random_range(0.9..1.3),
                ],
                confidence: rng.random_range(0.001..1.0),
                pose: EulerPose::new(
                    rng.random_range(-60.0..60.0),
                    rng.random_range(-179.0..180.0),
                    rng.random_range(-45.0..45.0),
                ),
            }
        })
        .collect()
}

/// Random raw network outputs for a batch at the given input size.
pub fn random_grids(batch: usize, input_size: usize, num_anchors: usize, seed: u64) -> GridSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GridSet {
        grids: STRIDES
            .iter()
            .map(|&s| {
                let n = input_size / s;
                let mut g = StrideGrid::zeros(s, num_anchors, batch, n, n);
                for v in g.data.data_mut() {
                    *v = rng.random_range(-3.0..3.0);
                }
                g
            })
            .collect(),
    }
}


/// A default synthetic scene.
pub fn scene(seed: u64) -> (Scene, ReferenceHead) {
    let reference = ReferenceHead::default();
    let spec = SceneSpec::default();
    let scene = sample_scene(&spec, &reference, &mut scene_rng(seed, 1, 0)).expect("default scene");
    (scene, reference)
}
