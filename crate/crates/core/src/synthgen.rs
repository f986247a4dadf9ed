//! Synthetic multi-head images with exact labels.
//!
//! Each head is the reference landmark set posed in the camera frame plus a
//! flat-colored polyhedral proxy whose colors identify its orientation:
//! skin face, dark back, distinct left/right/top/bottom sides and a
//! two-tone nose. Labels are recomputed from the world-space landmarks and
//! the camera through [`crate::labelgen`], never copied from the sampler.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Annotation, DatasetFile, ImageRecord, Meta};
use crate::error::{Error, Result};
use crate::geometry::{euler_to_matrix, wrap_angle, CameraModel, EulerPose, LandmarkSet};
use crate::labelgen::{icosphere, label_head, HeadLabel, HemisphereConfig, ReferenceHead, SceneCamera, SceneHead, SceneImage};

/// Closed angle interval in degrees, sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleRange {
    pub min: f64,
    pub max: f64,
}

impl AngleRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..self.max)
        } else {
            self.min
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub heads_min: usize,
    pub heads_max: usize,
    pub yaw: AngleRange,
    pub pitch: AngleRange,
    pub roll: AngleRange,
    /// Head distance from the camera in millimetres.
    pub depth_min: f64,
    pub depth_max: f64,
    /// Focal length as a multiple of the image width.
    pub focal_scale: f64,
    /// Per-head size factor range.
    pub head_scale_min: f64,
    pub head_scale_max: f64,
    /// Maximum camera tilt per axis in degrees.
    pub camera_tilt: f64,
    /// Placements whose boxes overlap an earlier head above this IoU are
    /// rejected.
    pub max_overlap_iou: f64,
    /// Placement attempts per head.
    pub max_attempts: usize,
    pub corner_count: usize,
    pub hemisphere: HemisphereConfig,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 320,
            height: 320,
            heads_min: 1,
            heads_max: 4,
            yaw: AngleRange::new(-180.0, 180.0),
            pitch: AngleRange::new(-60.0, 60.0),
            roll: AngleRange::new(-60.0, 60.0),
            depth_min: 600.0,
            depth_max: 1200.0,
            focal_scale: 0.9,
            head_scale_min: 0.9,
            head_scale_max: 1.1,
            camera_tilt: 8.0,
            max_overlap_iou: 0.6,
            max_attempts: 200,
            corner_count: crate::labelgen::DEFAULT_CORNER_COUNT,
            hemisphere: HemisphereConfig::default(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if self.heads_min < 1 || self.heads_max < self.heads_min {
            return bad(format!("heads range ({}, {}) invalid", self.heads_min, self.heads_max));
        }
        for (name, r, lim) in [("pitch", self.pitch, 90.0), ("roll", self.roll, 90.0)] {
            if !(r.min > -lim && r.max < lim && r.min <= r.max) {
                return bad(format!("{name} range [{}, {}] must lie inside (-{lim}, {lim})", r.min, r.max));
            }
        }
        if !(self.yaw.min >= -180.0 && self.yaw.max <= 180.0 && self.yaw.min <= self.yaw.max) {
            return bad(format!("yaw range [{}, {}] must lie inside [-180, 180]", self.yaw.min, self.yaw.max));
        }
        if !(self.depth_min > 0.0 && self.depth_max >= self.depth_min) {
            return bad("depth range invalid".into());
        }
        if !(self.focal_scale > 0.0 && self.head_scale_min > 0.0 && self.head_scale_max >= self.head_scale_min) {
            return bad("focal or head scale invalid".into());
        }
        if !(0.0..=1.0).contains(&self.max_overlap_iou) || self.max_attempts == 0 {
            return bad("overlap threshold or attempt budget invalid".into());
        }
        if !(self.hemisphere.kappa > 0.0) {
            return bad("hemisphere kappa must be positive".into());
        }
        Ok(())
    }

    fn intrinsics(&self) -> CameraModel {
        let f = self.focal_scale * self.width as f64;
        CameraModel::new(f, f, self.width as f64 / 2.0, self.height as f64 / 2.0)
    }
}

/// One sampled head: pose in the camera frame, landmark centroid position
/// in camera coordinates (mm) and a size factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedHead {
    pub pose: EulerPose,
    pub center: [f64; 3],
    pub scale: f64,
}

impl PlacedHead {
    /// Maps a reference-frame point into camera coordinates.
    fn to_camera(&self, reference: &ReferenceHead, p: &Vector3<f64>) -> Vector3<f64> {
        let r = euler_to_matrix(self.pose);
        r.matrix() * (self.scale * (p - reference.landmarks.centroid())) + Vector3::from(self.center)
    }

    /// Landmarks in world coordinates.
    pub fn world_landmarks(&self, reference: &ReferenceHead, camera: &CameraModel) -> LandmarkSet {
        LandmarkSet::new(
            reference
                .landmarks
                .points()
                .iter()
                .map(|p| camera.to_world(&self.to_camera(reference, p)))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub camera: CameraModel,
    pub heads: Vec<PlacedHead>,
    pub background_seed: u64,
}

impl Scene {
    /// The scene as a landmark-scene record for [`crate::labelgen::build_labels`].
    pub fn to_scene_image(&self, image_id: u64, file_name: Option<String>, reference: &ReferenceHead) -> SceneImage {
        SceneImage {
            image_id,
            file_name,
            width: self.width,
            height: self.height,
            camera: SceneCamera::from_model(&self.camera),
            heads: self
                .heads
                .iter()
                .enumerate()
                .map(|(i, h)| SceneHead {
                    head_id: i as u64 + 1,
                    landmarks: h
                        .world_landmarks(reference, &self.camera)
                        .points()
                        .iter()
                        .map(|p| [p.x, p.y, p.z])
                        .collect(),
                })
                .collect(),
        }
    }
}

fn box_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = ((a[0] + a[2] / 2.0).min(b[0] + b[2] / 2.0) - (a[0] - a[2] / 2.0).max(b[0] - b[2] / 2.0)).max(0.0);
    let iy = ((a[1] + a[3] / 2.0).min(b[1] + b[3] / 2.0) - (a[1] - a[3] / 2.0).max(b[1] - b[3] / 2.0)).max(0.0);
    let inter = ix * iy;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

/// Samples a camera and a set of non-overlapping, fully visible heads.
pub fn sample_scene<R: Rng>(spec: &SceneSpec, reference: &ReferenceHead, rng: &mut R) -> Result<Scene> {
    spec.validate()?;
    let tilt = |rng: &mut R| {
        if spec.camera_tilt > 0.0 {
            rng.random_range(-spec.camera_tilt..spec.camera_tilt)
        } else {
            0.0
        }
    };
    let cam_rot = euler_to_matrix(EulerPose::new(tilt(rng), tilt(rng), tilt(rng)));
    let cam_t = Vector3::new(rng.random_range(-500.0..500.0), rng.random_range(-200.0..200.0), rng.random_range(-500.0..500.0));
    let camera = spec.intrinsics().with_extrinsics(cam_rot, cam_t);
    let wanted = rng.random_range(spec.heads_min..=spec.heads_max);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let radius = spec.hemisphere.kappa * reference.extent;
    let mut heads: Vec<PlacedHead> = Vec::new();
    let mut boxes: Vec<[f64; 4]> = Vec::new();
    for _ in 0..wanted {
        let mut placed = false;
        for _ in 0..spec.max_attempts {
            let scale = rng.random_range(spec.head_scale_min..=spec.head_scale_max);
            let z = rng.random_range(spec.depth_min..=spec.depth_max);
            // Projected sphere radius, padded for perspective bulge.
            let r_px = 1.15 * camera.fx * scale * radius / z;
            if 2.0 * r_px >= w.min(h) {
                continue;
            }
            let u = rng.random_range(r_px..w - r_px);
            let v = rng.random_range(r_px..h - r_px);
            let center = [(u - camera.cx) * z / camera.fx, (v - camera.cy) * z / camera.fy, z];
            let pose = EulerPose::new(
                spec.pitch.sample(rng),
                wrap_angle(spec.yaw.sample(rng))?,
                spec.roll.sample(rng),
            );
            let head = PlacedHead { pose, center, scale };
            let lm = head.world_landmarks(reference, &camera);
            let Ok(label) = label_head(&lm, &camera, reference, spec.corner_count, &spec.hemisphere, (spec.width, spec.height)) else {
                continue;
            };
            if label.visibility < 1.0 || boxes.iter().any(|b| box_iou(*b, label.bbox) > spec.max_overlap_iou) {
                continue;
            }
            heads.push(head);
            boxes.push(label.bbox);
            placed = true;
            break;
        }
        if !placed && heads.len() < spec.heads_min {
            return Err(Error::Placement {
                wanted: spec.heads_min,
                attempts: spec.max_attempts,
            });
        }
    }
    Ok(Scene {
        width: spec.width,
        height: spec.height,
        camera,
        heads,
        background_seed: rng.random(),
    })
}

/// Proxy head surface colors by orientation sector.
pub mod palette {
    pub const FACE: [u8; 3] = [236, 196, 160];
    pub const BACK: [u8; 3] = [52, 36, 28];
    /// The subject's right side (−x in the head frame).
    pub const RIGHT: [u8; 3] = [40, 90, 220];
    pub const LEFT: [u8; 3] = [40, 190, 80];
    pub const TOP: [u8; 3] = [210, 40, 40];
    pub const BOTTOM: [u8; 3] = [235, 215, 40];
    pub const NOSE_RIGHT: [u8; 3] = [255, 255, 255];
    pub const NOSE_LEFT: [u8; 3] = [150, 0, 170];
}

/// Flat-colored proxy mesh in the reference head frame.
pub struct ProxyMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub colors: Vec<[u8; 3]>,
}

impl ProxyMesh {
    /// Ellipsoid skull behind the reference face with a nose protrusion.
    pub fn new(reference: &ReferenceHead) -> Self {
        let (unit, faces) = icosphere(3);
        let c = reference.landmarks.centroid();
        let center = Vector3::new(c.x, c.y - 15.0, c.z + 50.0);
        let axes = Vector3::new(85.0, 105.0, 92.0);
        let nose_dir = Vector3::new(0.0, 0.25, -1.0).normalize();
        let mut nose_weight = Vec::with_capacity(unit.len());
        let vertices: Vec<Vector3<f64>> = unit
            .iter()
            .map(|u| {
                let bump = u.dot(&nose_dir).max(0.0).powi(40);
                nose_weight.push(bump);
                center + u.component_mul(&axes) + nose_dir * (45.0 * bump)
            })
            .collect();
        let colors = faces
            .iter()
            .map(|f| {
                let dir: Vector3<f64> = f.iter().map(|&i| unit[i]).sum::<Vector3<f64>>() / 3.0;
                let nose = f.iter().map(|&i| nose_weight[i]).sum::<f64>() / 3.0;
                if nose > 0.2 {
                    return if dir.x < 0.0 { palette::NOSE_RIGHT } else { palette::NOSE_LEFT };
                }
                let (ax, ay, az) = (dir.x.abs(), dir.y.abs(), dir.z.abs());
                if az >= ax && az >= ay {
                    if dir.z < 0.0 {
                        palette::FACE
                    } else {
                        palette::BACK
                    }
                } else if ax >= ay {
                    if dir.x < 0.0 {
                        palette::RIGHT
                    } else {
                        palette::LEFT
                    }
                } else if dir.y < 0.0 {
                    palette::TOP
                } else {
                    palette::BOTTOM
                }
            })
            .collect();
        Self { vertices, faces, colors }
    }
}

/// Smooth, muted random color field with light grain.
fn background(width: u32, height: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const G: usize = 6;
    let grid: Vec<[f64; 3]> = (0..G * G)
        .map(|_| {
            let gray: f64 = rng.random_range(40.0..215.0);
            std::array::from_fn(|_| gray + rng.random_range(-40.0..40.0))
        })
        .collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut img = RgbImage::new(width, height);
    for y in 0..height {
        let gy = y as f64 / height.max(2) as f64 * (G - 1) as f64;
        let (y0, ty) = ((gy.floor() as usize).min(G - 2), smooth(gy - gy.floor().min((G - 2) as f64)));
        for x in 0..width {
            let gx = x as f64 / width.max(2) as f64 * (G - 1) as f64;
            let (x0, tx) = ((gx.floor() as usize).min(G - 2), smooth(gx - gx.floor().min((G - 2) as f64)));
            let grain: f64 = rng.random_range(-6.0..6.0);
            let px: [u8; 3] = std::array::from_fn(|k| {
                let a = grid[y0 * G + x0][k] * (1.0 - tx) + grid[y0 * G + x0 + 1][k] * tx;
                let b = grid[(y0 + 1) * G + x0][k] * (1.0 - tx) + grid[(y0 + 1) * G + x0 + 1][k] * tx;
                (a * (1.0 - ty) + b * ty + grain).clamp(0.0, 255.0) as u8
            });
            img.put_pixel(x, y, Rgb(px));
        }
    }
    img
}

fn fill_triangle(img: &mut RgbImage, p: [Vector2<f64>; 3], color: [u8; 3]) {
    let edge = |a: Vector2<f64>, b: Vector2<f64>, x: f64, y: f64| (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x);
    let area = edge(p[0], p[1], p[2].x, p[2].y);
    if area.abs() < 1e-12 {
        return;
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x0 = p.iter().map(|v| v.x).fold(f64::INFINITY, f64::min).floor().max(0.0);
    let x1 = p.iter().map(|v| v.x).fold(f64::NEG_INFINITY, f64::max).ceil().min(w - 1.0);
    let y0 = p.iter().map(|v| v.y).fold(f64::INFINITY, f64::min).floor().max(0.0);
    let y1 = p.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max).ceil().min(h - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    for yi in y0 as u32..=y1 as u32 {
        let y = yi as f64 + 0.5;
        for xi in x0 as u32..=x1 as u32 {
            let x = xi as f64 + 0.5;
            let e0 = edge(p[1], p[2], x, y) / area;
            let e1 = edge(p[2], p[0], x, y) / area;
            let e2 = edge(p[0], p[1], x, y) / area;
            if e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0 {
                img.put_pixel(xi, yi, Rgb(color));
            }
        }
    }
}

/// Renders the scene far-to-near and labels every head through the
/// landmark pipeline.
pub fn render_scene(
    scene: &Scene,
    reference: &ReferenceHead,
    mesh: &ProxyMesh,
    corner_count: usize,
    hemisphere: &HemisphereConfig,
) -> Result<(RgbImage, Vec<HeadLabel>)> {
    let mut img = background(scene.width, scene.height, scene.background_seed);
    let mut order: Vec<usize> = (0..scene.heads.len()).collect();
    order.sort_by(|&a, &b| scene.heads[b].center[2].total_cmp(&scene.heads[a].center[2]));
    for &hi in &order {
        let head = &scene.heads[hi];
        let cam_pts: Vec<Vector3<f64>> = mesh.vertices.iter().map(|v| head.to_camera(reference, v)).collect();
        if cam_pts.iter().any(|p| p.z <= crate::geometry::MIN_DEPTH) {
            return Err(Error::BehindCamera { index: hi, depth: head.center[2] });
        }
        let mut tris: Vec<(f64, usize)> = mesh
            .faces
            .iter()
            .enumerate()
            .filter_map(|(fi, f)| {
                let [a, b, c] = f.map(|i| cam_pts[i]);
                let normal = (b - a).cross(&(c - a));
                // Keep faces whose outward normal points at the camera.
                (normal.dot(&a) < 0.0).then(|| (-(a.z + b.z + c.z), fi))
            })
            .collect();
        tris.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for (_, fi) in tris {
            let p = mesh.faces[fi].map(|i| scene.camera.project_camera_point(&cam_pts[i]));
            fill_triangle(&mut img, p, mesh.colors[fi]);
        }
    }
    let labels = scene
        .heads
        .iter()
        .map(|h| {
            let lm = h.world_landmarks(reference, &scene.camera);
            label_head(&lm, &scene.camera, reference, corner_count, hemisphere, (scene.width, scene.height))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((img, labels))
}

/// Scene rng for one image of one split, independent of generation order.
pub fn scene_rng(seed: u64, split: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 40) | index);
    rng
}

pub const SPLIT_TRAIN: u64 = 1;
pub const SPLIT_VAL: u64 = 2;

/// Paths and datasets written by [`generate_benchmark`].
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: DatasetFile,
    pub val: DatasetFile,
    pub train_path: PathBuf,
    pub val_path: PathBuf,
}

/// Generates `train` and `val` splits under `out`: PNGs in
/// `images/{train,val}/`, datasets in `{train,val}.json` and the underlying
/// landmark scenes in `{train,val}_scenes.json`.
pub fn generate_benchmark(spec: &SceneSpec, train: usize, val: usize, out: &Path) -> Result<Benchmark> {
    spec.validate()?;
    if train == 0 || val == 0 {
        return Err(Error::Config("split counts must be at least 1".into()));
    }
    let reference = ReferenceHead::default();
    let mesh = ProxyMesh::new(&reference);
    let mut made = Vec::new();
    for (name, split, count) in [("train", SPLIT_TRAIN, train), ("val", SPLIT_VAL, val)] {
        let dir = out.join("images").join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut ds = DatasetFile::new(Meta {
            generator: format!("synthgen/{name}"),
            seed: Some(spec.seed),
            ..Meta::default()
        });
        let mut scenes = Vec::with_capacity(count);
        let mut next_ann = 1u64;
        for i in 0..count {
            let id = i as u64 + 1;
            let mut rng = scene_rng(spec.seed, split, id);
            let scene = sample_scene(spec, &reference, &mut rng)?;
            let (img, labels) = render_scene(&scene, &reference, &mesh, spec.corner_count, &spec.hemisphere)?;
            let file_name = format!("images/{name}/{id:06}.png");
            let path = out.join(&file_name);
            img.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
            ds.images.push(ImageRecord {
                id,
                file_name: file_name.clone(),
                width: spec.width,
                height: spec.height,
            });
            for l in labels {
                let [cx, cy, w, h] = l.bbox;
                ds.annotations.push(Annotation::new(next_ann, id, [cx - w / 2.0, cy - h / 2.0, w, h], l.pose));
                next_ann += 1;
            }
            scenes.push(scene.to_scene_image(id, Some(file_name), &reference));
        }
        let path = out.join(format!("{name}.json"));
        ds.save(&path)?;
        let scene_path = out.join(format!("{name}_scenes.json"));
        let text = serde_json::to_string(&scenes).map_err(|source| Error::Json {
            path: scene_path.clone(),
            source,
        })?;
        fs::write(&scene_path, text).map_err(|e| Error::io(&scene_path, e))?;
        made.push((ds, path));
    }
    let (val, val_path) = made.pop().expect("two splits");
    let (train, train_path) = made.pop().expect("two splits");
    Ok(Benchmark {
        train,
        val,
        train_path,
        val_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn frontal_scene(pose: EulerPose) -> (Scene, ReferenceHead) {
        let reference = ReferenceHead::default();
        let spec = SceneSpec::default();
        let scene = Scene {
            width: 320,
            height: 320,
            camera: spec.intrinsics(),
            heads: vec![PlacedHead {
                pose,
                center: [0.0, 0.0, 1200.0],
                scale: 1.0,
            }],
            background_seed: 1,
        };
        (scene, reference)
    }

    #[test]
    fn single_head_scene_has_one_head() {
        let spec = SceneSpec {
            heads_min: 1,
            heads_max: 1,
            ..SceneSpec::default()
        };
        let r = ReferenceHead::default();
        for i in 0..5 {
            let s = sample_scene(&spec, &r, &mut scene_rng(3, 1, i)).unwrap();
            assert_eq!(s.heads.len(), 1);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = SceneSpec::default();
        let r = ReferenceHead::default();
        let a = sample_scene(&spec, &r, &mut scene_rng(9, 1, 4)).unwrap();
        let b = sample_scene(&spec, &r, &mut scene_rng(9, 1, 4)).unwrap();
        assert_eq!(a, b);
        let c = sample_scene(&spec, &r, &mut scene_rng(9, 1, 5)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn impossible_placement_errors() {
        let spec = SceneSpec {
            depth_min: 100.0,
            depth_max: 100.0,
            max_attempts: 5,
            ..SceneSpec::default()
        };
        let r = ReferenceHead::default();
        assert!(matches!(sample_scene(&spec, &r, &mut scene_rng(0, 1, 1)), Err(Error::Placement { .. })));
    }

    #[test]
    fn frontal_head_label_is_zero_and_centered() {
        let (scene, r) = frontal_scene(EulerPose::ZERO);
        let mesh = ProxyMesh::new(&r);
        let (img, labels) = render_scene(&scene, &r, &mesh, 13, &HemisphereConfig::default()).unwrap();
        assert_eq!(labels.len(), 1);
        for v in labels[0].pose.as_array() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-6);
        }
        assert!((labels[0].bbox[0] - 160.0).abs() < 1.0 && (labels[0].bbox[1] - 160.0).abs() < 1.0);
        assert_eq!(img.dimensions(), (320, 320));
    }

    fn count_in_box(img: &RgbImage, bbox: [f64; 4], colors: &[[u8; 3]]) -> usize {
        let [cx, cy, w, h] = bbox;
        let mut n = 0;
        for y in (cy - h / 2.0).max(0.0) as u32..((cy + h / 2.0) as u32).min(img.height()) {
            for x in (cx - w / 2.0).max(0.0) as u32..((cx + w / 2.0) as u32).min(img.width()) {
                if colors.contains(&img.get_pixel(x, y).0) {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn orientation_is_visible_in_colors() {
        let all = [
            palette::FACE,
            palette::BACK,
            palette::LEFT,
            palette::RIGHT,
            palette::TOP,
            palette::BOTTOM,
            palette::NOSE_LEFT,
            palette::NOSE_RIGHT,
        ];
        for (yaw, dominant) in [(180.0, palette::BACK), (0.0, palette::FACE)] {
            let (scene, r) = frontal_scene(EulerPose::new(0.0, yaw, 0.0));
            let mesh = ProxyMesh::new(&r);
            let (img, labels) = render_scene(&scene, &r, &mesh, 13, &HemisphereConfig::default()).unwrap();
            let head_px = count_in_box(&img, labels[0].bbox, &all);
            let dom = count_in_box(&img, labels[0].bbox, &[dominant]);
            assert!(dom * 2 > head_px, "yaw {yaw}: {dom} of {head_px}");
        }
    }

    #[test]
    fn nearer_head_occludes_farther() {
        let r = ReferenceHead::default();
        let mesh = ProxyMesh::new(&r);
        let spec = SceneSpec::default();
        let far = PlacedHead {
            pose: EulerPose::new(0.0, 180.0, 0.0),
            center: [0.0, 0.0, 2400.0],
            scale: 1.0,
        };
        let near = PlacedHead {
            pose: EulerPose::ZERO,
            center: [0.0, 0.0, 1200.0],
            scale: 1.0,
        };
        for heads in [vec![far, near], vec![near, far]] {
            let scene = Scene {
                width: 320,
                height: 320,
                camera: spec.intrinsics(),
                heads,
                background_seed: 2,
            };
            let (img, _) = render_scene(&scene, &r, &mesh, 13, &HemisphereConfig::default()).unwrap();
            // Image center: the near face covers the far head's back.
            assert_ne!(img.get_pixel(160, 150).0, palette::BACK);
        }
    }
}
