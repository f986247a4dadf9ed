//! Oracle checks shared by the integration tests and the acceptance runner.
//! Each check returns a one-line summary on success and a reason on failure.

#![allow(dead_code)]

use std::time::Instant;

use headpose_core::eval::{
    average_precision, iou, mae, nms, ApImage, Detection, PosePair,
};
use headpose_core::geometry::{
    angular_abs_diff, euler_to_matrix, horn_align, matrix_to_euler, project_points, wrap_angle, CameraModel,
    LandmarkSet, RotationMatrix, SimilarityTransform,
};
use headpose_core::labelgen::{head_pose_from_landmarks, label_variance_study, ReferenceHead, DEFAULT_CORNER_COUNT};
use headpose_core::losses::{
    box_loss, compute_loss, obj_loss, pose_loss, pose_wrapped_loss, total_loss, LossComponents, LossWeights,
};
use headpose_core::net::{
    box_offsets, decode_box, decode_pose, encode_pose, logit, sigmoid, AnchorConfig, GridSet, Positive, StrideGrid,
    StrideTargets, TargetGrids, CH_BOX, CH_OBJ, CH_POSE,
};
use headpose_core::synthgen::PlacedHead;
use headpose_core::EulerPose;
use nalgebra::{Matrix3, Matrix3x4, Rotation3, UnitQuaternion, Vector3, Vector4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

pub type Check = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniformly distributed rotation from a normalized Gaussian quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    loop {
        let q = Vector4::from_fn(|_, _| gaussian(rng));
        if q.norm() > 1e-3 {
            let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(q));
            return uq.to_rotation_matrix().into_inner();
        }
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller.
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Points spread in a box, rejecting nearly collinear sets.
pub fn random_cloud(rng: &mut impl Rng, n: usize) -> LandmarkSet {
    loop {
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-100.0..100.0)))
            .collect();
        let c: Vector3<f64> = pts.iter().sum::<Vector3<f64>>() / n as f64;
        let spread: Matrix3<f64> = pts.iter().map(|p| (p - c) * (p - c).transpose()).sum();
        let mut ev: Vec<f64> = spread.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        if ev[1] > 1e-2 * ev[0] {
            return LandmarkSet::new(pts);
        }
    }
}

/// `Rx(p)·Ry(y)·Rz(r)` built from axis-angle rotations.
pub fn euler_oracle(p: EulerPose) -> Matrix3<f64> {
    let ax = |axis: Vector3<f64>, deg: f64| Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), deg.to_radians());
    (ax(Vector3::x(), p.pitch) * ax(Vector3::y(), p.yaw) * ax(Vector3::z(), p.roll)).into_inner()
}

pub fn horn_recovery(cases: usize, seed: u64) -> Result<f64, String> {
    let mut rng = rng(seed);
    let sizes = [3, 9, 11, 13, 15, 17];
    let mut worst = 0.0f64;
    for i in 0..cases {
        let n = sizes[i % sizes.len()];
        let src = random_cloud(&mut rng, n);
        let truth = SimilarityTransform {
            scale: rng.random_range(0.2..5.0),
            rotation: RotationMatrix::new(random_rotation(&mut rng)).map_err(|e| e.to_string())?,
            translation: Vector3::from_fn(|_, _| rng.random_range(-500.0..500.0)),
        };
        let dst = src.transformed(&truth);
        let est = horn_align(&src, &dst).map_err(|e| format!("case {i} (N' = {n}): {e}"))?;
        let rot_err = (est.rotation.matrix() - truth.rotation.matrix()).abs().max();
        let scale_err = (est.scale - truth.scale).abs() / truth.scale;
        let t_err = (est.translation - truth.translation).abs().max() / (1.0 + truth.translation.norm());
        worst = worst.max(rot_err).max(scale_err).max(t_err);
    }
    Ok(worst)
}

pub fn euler_round_trip(cases: usize, seed: u64) -> Result<(f64, f64), String> {
    let mut rng = rng(seed);
    let (mut worst_rt, mut worst_oracle) = (0.0f64, 0.0f64);
    let mut done = 0;
    while done < cases {
        let yaw: f64 = rng.random_range(-180.0..180.0);
        if (yaw.abs() - 90.0).abs() <= 1.0 {
            continue;
        }
        let p = EulerPose::new(rng.random_range(-89.0..89.0), yaw, rng.random_range(-89.0..89.0));
        let r = euler_to_matrix(p);
        worst_oracle = worst_oracle.max((r.matrix() - euler_oracle(p)).abs().max());
        let d = matrix_to_euler(&r).map_err(|e| e.to_string())?;
        if d.gimbal {
            return Err(format!("{p:?} flagged as gimbal lock"));
        }
        let err = (d.pose.pitch - p.pitch)
            .abs()
            .max((d.pose.roll - p.roll).abs())
            .max(angular_abs_diff(d.pose.yaw, p.yaw));
        worst_rt = worst_rt.max(err);
        done += 1;
    }
    Ok((worst_rt, worst_oracle))
}

/// Circular-difference identities on every pair of a 1° grid over two turns.
pub fn wrap_identities() -> Result<usize, String> {
    let grid: Vec<f64> = (-360..=360).map(f64::from).collect();
    for &a in &grid {
        let w = wrap_angle(a).map_err(|e| e.to_string())?;
        ensure(w > -180.0 && w <= 180.0, || format!("wrap({a}) = {w}"))?;
        ensure(((a - w) / 360.0).fract() == 0.0, || format!("wrap({a}) = {w} not congruent"))?;
        ensure(wrap_angle(w).unwrap() == w, || format!("wrap not idempotent at {a}"))?;
    }
    let mut pairs = 0;
    for &a in &grid {
        for &b in &grid {
            let d = angular_abs_diff(a, b);
            let oracle = (-3..=3).map(|k| (a - b + 360.0 * k as f64).abs()).fold(f64::INFINITY, f64::min);
            ensure(d == oracle, || format!("d({a}, {b}) = {d}, expected {oracle}"))?;
            ensure(d == angular_abs_diff(b, a), || format!("d not symmetric at ({a}, {b})"))?;
            ensure(d == angular_abs_diff(a + 360.0, b), || format!("d not periodic at ({a}, {b})"))?;
            ensure(d == wrap_angle(a - b).unwrap().abs(), || format!("d ≠ |wrap(a − b)| at ({a}, {b})"))?;
            ensure((0.0..=180.0).contains(&d), || format!("d({a}, {b}) = {d} out of range"))?;
            pairs += 1;
        }
    }
    Ok(pairs)
}

pub fn projection_oracle(cases: usize, seed: u64) -> Result<f64, String> {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let rot = random_rotation(&mut rng);
        let t = Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(800.0..1500.0));
        let cam = CameraModel::new(
            rng.random_range(200.0..900.0),
            rng.random_range(200.0..900.0),
            rng.random_range(100.0..400.0),
            rng.random_range(100.0..400.0),
        )
        .with_extrinsics(RotationMatrix::new(rot).unwrap(), t);
        let pts = LandmarkSet::new((0..20).map(|_| Vector3::from_fn(|_, _| rng.random_range(-200.0..200.0))).collect());
        let got = project_points(&cam, &pts).map_err(|e| e.to_string())?;
        let k = Matrix3::new(cam.fx, 0.0, cam.cx, 0.0, cam.fy, cam.cy, 0.0, 0.0, 1.0);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        let p = k * rt;
        for (q, x) in got.iter().zip(pts.points()) {
            let h = p * x.push(1.0);
            worst = worst.max((q.x - h.x / h.z).abs()).max((q.y - h.y / h.z).abs());
        }
    }
    Ok(worst)
}

pub fn geometry_suite() -> Check {
    let start = Instant::now();
    let horn = horn_recovery(1000, 11)?;
    ensure(horn <= 1e-6, || format!("Horn recovery error {horn:.3e} > 1e-6"))?;
    let (rt, oracle) = euler_round_trip(10_000, 12)?;
    ensure(rt <= 1e-8, || format!("Euler round trip error {rt:.3e} > 1e-8"))?;
    ensure(oracle <= 1e-12, || format!("Euler matrix differs from axis-angle oracle by {oracle:.3e}"))?;
    let pairs = wrap_identities()?;
    let proj = projection_oracle(200, 13)?;
    ensure(proj <= 1e-9, || format!("projection differs from K[R|t] oracle by {proj:.3e} px"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("geometry suite took {secs:.1} s"))?;
    Ok(format!(
        "Horn max err {horn:.1e} over 1000 transforms; Euler round trip {rt:.1e} over 1e4 poses; \
         {pairs} wrap pairs; projection {proj:.1e} px; {secs:.1} s"
    ))
}

/// A frontal-ish camera with random tilt and offset, and a head placed in
/// front of it.
pub fn random_head(rng: &mut impl Rng, reference: &ReferenceHead, pose: EulerPose) -> (LandmarkSet, CameraModel) {
    let cam_rot = RotationMatrix::new(euler_oracle(EulerPose::new(
        rng.random_range(-10.0..10.0),
        rng.random_range(-10.0..10.0),
        rng.random_range(-10.0..10.0),
    )))
    .unwrap();
    let cam = CameraModel::new(600.0, 600.0, 320.0, 240.0)
        .with_extrinsics(cam_rot, Vector3::from_fn(|_, _| rng.random_range(-300.0..300.0)));
    let head = PlacedHead {
        pose,
        center: [rng.random_range(-200.0..200.0), rng.random_range(-150.0..150.0), rng.random_range(700.0..2500.0)],
        scale: rng.random_range(0.8..1.2),
    };
    (head.world_landmarks(reference, &cam), cam)
}

pub fn random_pose(rng: &mut impl Rng, yaw_limit: f64) -> EulerPose {
    EulerPose::new(
        rng.random_range(-60.0..60.0),
        rng.random_range(-yaw_limit..yaw_limit),
        rng.random_range(-60.0..60.0),
    )
}

pub fn label_suite() -> Check {
    let start = Instant::now();
    let reference = ReferenceHead::default();
    let mut rng = rng(21);
    let mut heads = Vec::with_capacity(500);
    let mut worst = 0.0f64;
    for i in 0..500 {
        let pose = random_pose(&mut rng, 89.0);
        let (lm, cam) = random_head(&mut rng, &reference, pose);
        let est = head_pose_from_landmarks(&lm, &cam, &reference, DEFAULT_CORNER_COUNT).map_err(|e| format!("head {i}: {e}"))?;
        let err = (est.pose.pitch - pose.pitch)
            .abs()
            .max(angular_abs_diff(est.pose.yaw, pose.yaw))
            .max((est.pose.roll - pose.roll).abs());
        worst = worst.max(err);
        heads.push((lm, cam));
    }
    ensure(worst <= 1e-5, || format!("recovered pose off by {worst:.3e}°"))?;
    let v = label_variance_study(&heads, &reference).map_err(|e| e.to_string())?;
    ensure(v.std == [0.0; 3] && v.avg == 0.0, || format!("noise-free variance study gave {:?}", v.std))?;
    ensure(v.heads_used == 500, || format!("{} heads skipped", v.heads_skipped))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("label suite took {secs:.1} s"))?;
    Ok(format!("500 heads, max error {worst:.1e}°, variance std exactly 0; {secs:.1} s"))
}

pub fn decode_suite() -> Check {
    // φ(0) = 1/2: offsets land mid-cell and sizes equal the anchor.
    ensure(sigmoid(0.0) == 0.5, || "φ(0) ≠ 0.5".into())?;
    let o = box_offsets([0.0; 4], (16.0, 24.0), 8);
    ensure(o == [0.5, 0.5, 2.0, 3.0], || format!("zero raw box offsets {o:?}"))?;
    let b = decode_box([0.0; 4], (16.0, 24.0), 8, (3, 5));
    ensure(b.pixels == [28.0, 44.0, 16.0, 24.0], || format!("zero raw decoded box {:?}", b.pixels))?;
    // Hand-computed from φ(1) = 0.7310585786300049, φ(−1), φ(0.5) = 0.6224593312018546, φ(−0.5).
    let o = box_offsets([1.0, -1.0, 0.5, -0.5], (16.0, 24.0), 8);
    let expect = [0.9621171572600098, 0.03788284273999021, 3.099644952002081, 1.710443479158611];
    for k in 0..4 {
        ensure((o[k] - expect[k]).abs() < 1e-12, || format!("box offset {k}: {} vs {}", o[k], expect[k]))?;
    }
    let p = decode_pose([logit(0.75), logit(0.75), logit(0.25)]);
    ensure(
        (p.pitch - 45.0).abs() < 1e-12 && (p.yaw - 90.0).abs() < 1e-12 && (p.roll + 45.0).abs() < 1e-12,
        || format!("logit(0.75) decoded to {p:?}"),
    )?;
    let z = decode_pose([0.0; 3]);
    ensure(z == EulerPose::ZERO, || format!("zero raw pose decoded to {z:?}"))?;
    let e = encode_pose(EulerPose::new(-90.0, 180.0, 45.0)).map_err(|e| e.to_string())?;
    ensure(e == [0.0, 1.0, 0.75], || format!("encode of extremes gave {e:?}"))?;
    let mut rng = rng(31);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let p = EulerPose::new(rng.random_range(-89.0..89.0), rng.random_range(-179.0..179.0), rng.random_range(-89.0..89.0));
        let raw = encode_pose(p).map_err(|e| e.to_string())?.map(logit);
        let q = decode_pose(raw);
        worst = worst
            .max((q.pitch - p.pitch).abs())
            .max((q.yaw - p.yaw).abs())
            .max((q.roll - p.roll).abs());
    }
    ensure(worst <= 1e-9, || format!("pose encode/decode error {worst:.3e}"))?;
    Ok(format!("scalar oracles exact; encode/decode max error {worst:.1e} over 1e4 poses"))
}

/// A frozen two-stride toy problem: batch of two, two anchors, random raw
/// outputs, open and closed pose gates kept well away from `tau`.
pub struct ToyProblem {
    pub grid: GridSet,
    pub targets: TargetGrids,
    pub anchors: AnchorConfig,
    pub weights: LossWeights,
}

pub fn toy_problem(seed: u64) -> ToyProblem {
    let mut rng = rng(seed);
    let shapes = [(8usize, 4usize, 4usize), (16, 2, 2)];
    let mut grid = GridSet {
        grids: shapes.iter().map(|&(s, h, w)| StrideGrid::zeros(s, 2, 2, h, w)).collect(),
    };
    for g in &mut grid.grids {
        g.data.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
    }
    let weights = LossWeights {
        stride_weights: vec![4.0, 1.0],
        ..LossWeights::default()
    };
    let mut strides = Vec::new();
    for (si, &(s, h, w)) in shapes.iter().enumerate() {
        let mut positives = Vec::new();
        for k in 0..5 {
            let (image, anchor, cell_x, cell_y) = (k % 2, (k / 2) % 2, rng.random_range(0..w), rng.random_range(0..h));
            if positives.iter().any(|p: &Positive| (p.image, p.anchor, p.cell_x, p.cell_y) == (image, anchor, cell_x, cell_y)) {
                continue;
            }
            // Gates: open on most, closed on one, both far from tau.
            let gate = if k == 3 { logit(weights.tau) - 2.0 } else { logit(weights.tau) + 1.0 + rng.random_range(0.0..1.0) };
            grid.grids[si].set(image, anchor, CH_OBJ, cell_y, cell_x, gate as f32);
            // Yaw differences stay clear of the wrap kink at 0.5.
            let mut pose_target = [rng.random_range(0.1..0.9), rng.random_range(0.0..1.0), rng.random_range(0.1..0.9)];
            let yaw_pred = sigmoid(grid.grids[si].get(image, anchor, CH_POSE + 1, cell_y, cell_x) as f64);
            if ((pose_target[1] - yaw_pred).abs() - 0.5).abs() < 0.05 {
                pose_target[1] = (yaw_pred + 0.3).fract();
            }
            positives.push(Positive {
                image,
                anchor,
                cell_x,
                cell_y,
                box_target: [
                    rng.random_range(-0.3..1.3),
                    rng.random_range(-0.3..1.3),
                    rng.random_range(0.5..4.0),
                    rng.random_range(0.5..4.0),
                ],
                pose_target,
                gt_index: k,
            });
        }
        strides.push(StrideTargets {
            stride: s,
            height: h,
            width: w,
            positives,
        });
    }
    ToyProblem {
        grid,
        targets: TargetGrids {
            strides,
            uncovered: vec![],
        },
        anchors: AnchorConfig {
            strides: vec![8, 16],
            anchors: vec![vec![(10.0, 14.0), (20.0, 16.0)], vec![(30.0, 40.0), (50.0, 44.0)]],
        },
        weights,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Component {
    Box,
    Objectness,
    Pose,
    PoseWrapped,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::Box, Component::Objectness, Component::Pose, Component::PoseWrapped];

    fn value(self, p: &ToyProblem, grid: &GridSet) -> f64 {
        match self {
            Component::Box => box_loss(grid, &p.targets, &p.anchors).unwrap(),
            Component::Objectness => obj_loss(grid, &p.targets, &p.anchors, &p.weights).unwrap(),
            Component::Pose => pose_loss(grid, &p.targets, p.weights.tau).unwrap(),
            Component::PoseWrapped => pose_wrapped_loss(grid, &p.targets, p.weights.tau).unwrap(),
        }
    }

    /// Channels the component is differentiated against. Objectness targets
    /// are detached, so its gradient is taken w.r.t. the objectness logits.
    fn channels(self) -> std::ops::Range<usize> {
        match self {
            Component::Box => CH_BOX..CH_BOX + 4,
            Component::Objectness => CH_OBJ..CH_OBJ + 1,
            Component::Pose | Component::PoseWrapped => CH_POSE..CH_POSE + 3,
        }
    }

    /// Analytic gradient of the component alone.
    fn gradient(self, p: &ToyProblem) -> GridSet {
        let w = LossWeights {
            alpha: (self == Component::Box) as u8 as f64,
            beta: (self == Component::Objectness) as u8 as f64,
            gamma: matches!(self, Component::Pose | Component::PoseWrapped) as u8 as f64,
            ..p.weights.clone()
        };
        let mut out = compute_loss(&p.grid, &p.targets, &p.anchors, &w, self == Component::PoseWrapped).unwrap();
        // compute_loss scales by the batch size.
        let nbs = p.grid.batch() as f32;
        for g in &mut out.grad.grids {
            g.data.data_mut().iter_mut().for_each(|v| *v /= nbs);
        }
        out.grad
    }
}

/// Worst relative error between analytic and central-difference gradients
/// over every relevant channel of every cell.
pub fn gradient_error(p: &ToyProblem, c: Component, step: f64) -> (f64, usize) {
    let analytic = c.gradient(p);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for si in 0..p.grid.grids.len() {
        let g = &p.grid.grids[si];
        let (n, a_count, h, w) = (g.batch(), g.num_anchors, g.height(), g.width());
        for img in 0..n {
            for a in 0..a_count {
                for ch in c.channels() {
                    for y in 0..h {
                        for x in 0..w {
                            let v = g.get(img, a, ch, y, x);
                            let mut plus = p.grid.clone();
                            let mut minus = p.grid.clone();
                            let (vp, vm) = ((v as f64 + step) as f32, (v as f64 - step) as f32);
                            plus.grids[si].set(img, a, ch, y, x, vp);
                            minus.grids[si].set(img, a, ch, y, x, vm);
                            let fd = (c.value(p, &plus) - c.value(p, &minus)) / (vp as f64 - vm as f64);
                            let an = analytic.grids[si].get(img, a, ch, y, x) as f64;
                            let scale = fd.abs().max(an.abs());
                            let err = if scale < 1e-7 { 0.0 } else { (fd - an).abs() / scale };
                            worst = worst.max(err);
                            checked += 1;
                        }
                    }
                }
            }
        }
    }
    (worst, checked)
}

/// Single gated cell with random pose outputs and targets.
pub fn single_cell(pred: [f64; 3], target: [f64; 3], gate_logit: f64) -> (GridSet, TargetGrids) {
    let mut g = StrideGrid::zeros(8, 1, 1, 1, 1);
    g.set(0, 0, CH_OBJ, 0, 0, gate_logit as f32);
    for k in 0..3 {
        g.set(0, 0, CH_POSE + k, 0, 0, logit(pred[k]) as f32);
    }
    let targets = TargetGrids {
        strides: vec![StrideTargets {
            stride: 8,
            height: 1,
            width: 1,
            positives: vec![Positive {
                image: 0,
                anchor: 0,
                cell_x: 0,
                cell_y: 0,
                box_target: [0.5, 0.5, 2.0, 2.0],
                pose_target: target,
                gt_index: 0,
            }],
        }],
        uncovered: vec![],
    };
    (GridSet { grids: vec![g] }, targets)
}

pub fn wrapped_not_above_plain(cells: usize, seed: u64) -> Result<usize, String> {
    let mut rng = rng(seed);
    for i in 0..cells {
        let pred: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.001..0.999));
        let target: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..=1.0));
        let (g, t) = single_cell(pred, target, 3.0);
        let plain = pose_loss(&g, &t, 0.4).unwrap();
        let wrapped = pose_wrapped_loss(&g, &t, 0.4).unwrap();
        ensure(plain > 0.0 || target == pred, || format!("cell {i}: gate should be open"))?;
        ensure(wrapped <= plain, || format!("cell {i}: wrapped {wrapped} > plain {plain}"))?;
    }
    Ok(cells)
}

pub fn loss_suite() -> Check {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in [41, 42, 43] {
        let p = toy_problem(seed);
        for c in Component::ALL {
            let (e, n) = gradient_error(&p, c, 1e-4);
            ensure(e <= 1e-3, || format!("{c:?} gradient relative error {e:.3e} (seed {seed})"))?;
            worst = worst.max(e);
            checked += n;
        }
    }
    // One negative cell at φ = 0.5 with unit stride weight.
    let (g, t) = single_cell([0.5; 3], [0.5; 3], 0.0);
    let t = TargetGrids {
        strides: vec![StrideTargets {
            positives: vec![],
            ..t.strides[0].clone()
        }],
        uncovered: vec![],
    };
    let w = LossWeights {
        stride_weights: vec![1.0],
        ..LossWeights::default()
    };
    let anchors = AnchorConfig {
        strides: vec![8],
        anchors: vec![vec![(16.0, 16.0)]],
    };
    let bce = obj_loss(&g, &t, &anchors, &w).map_err(|e| e.to_string())?;
    ensure((bce - std::f64::consts::LN_2).abs() <= 1e-9, || format!("BCE case gave {bce}, expected ln 2"))?;
    let unit = LossComponents {
        box_loss: 1.0,
        obj_loss: 1.0,
        pose_loss: 1.0,
    };
    let weights = LossWeights {
        alpha: 0.05,
        beta: 0.7,
        gamma: 0.1,
        ..LossWeights::default()
    };
    let total = total_loss(&unit, &weights, 4).map_err(|e| e.to_string())?;
    ensure((total - 3.4).abs() <= 1e-9, || format!("total loss {total}, expected 3.4"))?;
    let cells = wrapped_not_above_plain(10_000, 44)?;
    Ok(format!(
        "4 components vs finite differences, worst rel err {worst:.1e} over {checked} partials; \
         BCE = ln 2; total = 3.4; wrapped ≤ plain on {cells} cells"
    ))
}

/// Unique set satisfying the greedy-suppression fixed point, found by
/// enumerating every subset of the candidates.
pub fn nms_oracle(dets: &[Detection], conf_thr: f64, iou_thr: f64) -> Vec<Detection> {
    let cand: Vec<&Detection> = dets.iter().filter(|d| d.confidence >= conf_thr).collect();
    let overlap = |a: &Detection, b: &Detection| {
        let ix = ((a.bbox[0] + a.bbox[2]).min(b.bbox[0] + b.bbox[2]) - a.bbox[0].max(b.bbox[0])).max(0.0);
        let iy = ((a.bbox[1] + a.bbox[3]).min(b.bbox[1] + b.bbox[3]) - a.bbox[1].max(b.bbox[1])).max(0.0);
        let inter = ix * iy;
        inter / (a.bbox[2] * a.bbox[3] + b.bbox[2] * b.bbox[3] - inter)
    };
    let n = cand.len();
    let mut found: Option<Vec<Detection>> = None;
    for mask in 0u32..(1 << n) {
        let inside = |i: usize| mask & (1 << i) != 0;
        let consistent = (0..n).all(|i| {
            let suppressed = (0..n).any(|j| inside(j) && cand[j].confidence > cand[i].confidence && overlap(cand[j], cand[i]) > iou_thr);
            inside(i) == !suppressed
        });
        if consistent {
            assert!(found.is_none(), "fixed point is not unique");
            let mut kept: Vec<Detection> = (0..n).filter(|&i| inside(i)).map(|i| *cand[i]).collect();
            kept.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
            found = Some(kept);
        }
    }
    found.expect("a fixed point exists")
}

pub fn random_detections(rng: &mut impl Rng, n: usize) -> Vec<Detection> {
    // Clustered boxes so that suppression happens; distinct confidences.
    let centers: Vec<(f64, f64)> = (0..3).map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))).collect();
    let mut confs: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random_range(0.05..0.95)) / n as f64).collect();
    confs.shuffle(rng);
    (0..n)
        .map(|i| {
            let (cx, cy) = centers[rng.random_range(0..centers.len())];
            let (w, h) = (rng.random_range(10.0..40.0), rng.random_range(10.0..40.0));
            Detection {
                bbox: [cx + rng.random_range(-8.0..8.0), cy + rng.random_range(-8.0..8.0), w, h],
                confidence: confs[i],
                pose: EulerPose::ZERO,
            }
        })
        .collect()
}

pub fn nms_matches_oracle(cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = rng(seed);
    let mut suppressed = 0;
    for case in 0..cases {
        let n = rng.random_range(0..=10);
        let dets = random_detections(&mut rng, n);
        let conf_thr = if case % 2 == 0 { 0.0 } else { 0.3 };
        let iou_thr = rng.random_range(0.2..0.7);
        let got = nms(&dets, conf_thr, iou_thr);
        let want = nms_oracle(&dets, conf_thr, iou_thr);
        ensure(got == want, || format!("case {case}: nms kept {} boxes, oracle {}", got.len(), want.len()))?;
        let mut shuffled = dets.clone();
        shuffled.shuffle(&mut rng);
        ensure(nms(&shuffled, conf_thr, iou_thr) == got, || format!("case {case}: nms depends on input order"))?;
        suppressed += dets.iter().filter(|d| d.confidence >= conf_thr).count() - got.len();
    }
    ensure(2 * suppressed >= cases, || format!("only {suppressed} suppressions; cases too easy"))?;
    Ok(suppressed)
}

#[derive(Deserialize)]
struct FixtureImage {
    id: u64,
}

#[derive(Deserialize)]
struct FixtureBox {
    image_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    score: f64,
}

#[derive(Deserialize)]
struct FixtureExpected {
    ap: f64,
    ap50: f64,
    ap75: f64,
}

#[derive(Deserialize)]
struct Fixture {
    images: Vec<FixtureImage>,
    gts: Vec<FixtureBox>,
    dets: Vec<FixtureBox>,
    expected: FixtureExpected,
}

/// Five images with reference AP computed by the COCO evaluator.
pub fn coco_fixture() -> Result<(Vec<ApImage>, [f64; 3]), String> {
    let f: Fixture = serde_json::from_str(include_str!("../fixtures/ap_fixture.json")).map_err(|e| e.to_string())?;
    let images = f
        .images
        .iter()
        .map(|im| {
            let gts: Vec<[f64; 4]> = f.gts.iter().filter(|g| g.image_id == im.id).map(|g| g.bbox).collect();
            ApImage {
                dets: f
                    .dets
                    .iter()
                    .filter(|d| d.image_id == im.id)
                    .map(|d| Detection {
                        bbox: d.bbox,
                        confidence: d.score,
                        pose: EulerPose::ZERO,
                    })
                    .collect(),
                ignore: vec![false; gts.len()],
                gts,
            }
        })
        .collect();
    Ok((images, [f.expected.ap, f.expected.ap50, f.expected.ap75]))
}

pub fn random_yaw_baseline(pairs: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let pairs: Vec<PosePair> = (0..pairs)
        .map(|_| PosePair {
            pred: EulerPose::new(0.0, rng.random_range(-180.0..180.0), 0.0),
            gt: EulerPose::new(0.0, rng.random_range(-180.0..180.0), 0.0),
            iou: 1.0,
            confidence: 1.0,
        })
        .collect();
    mae(&pairs).expect("pairs").yaw
}

pub fn eval_suite() -> Check {
    let suppressed = nms_matches_oracle(200, 51)?;
    let (images, expected) = coco_fixture()?;
    let r = average_precision(&images);
    let got = [r.ap, r.ap50, r.ap75];
    for (name, g, e) in [("AP", got[0], expected[0]), ("AP50", got[1], expected[1]), ("AP75", got[2], expected[2])] {
        ensure((g - e).abs() <= 1e-4, || format!("{name} {g:.6} vs reference {e:.6}"))?;
    }
    let base = random_yaw_baseline(10_000, 52);
    ensure((base - 90.0).abs() <= 2.0, || format!("random yaw MAE {base:.2}°"))?;
    Ok(format!(
        "NMS = exhaustive oracle on 200 cases ({suppressed} suppressions); AP {:.4}/{:.4}/{:.4} = reference; \
         random yaw MAE {base:.2}°",
        got[0], got[1], got[2]
    ))
}

/// Corner-format IoU written independently of the library.
pub fn iou_oracle(a: [f64; 4], b: [f64; 4]) -> f64 {
    let x0 = a[0].max(b[0]);
    let y0 = a[1].max(b[1]);
    let x1 = (a[0] + a[2]).min(b[0] + b[2]);
    let y1 = (a[1] + a[3]).min(b[1] + b[3]);
    let inter = (x1 - x0).max(0.0) * (y1 - y0).max(0.0);
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

pub fn iou_agrees(a: [f64; 4], b: [f64; 4]) -> bool {
    (iou(a, b) - iou_oracle(a, b)).abs() < 1e-12
}
