//! Head pose and head box labels from 3D face landmarks and camera
//! parameters.
//!
//! A generic frontal reference head is aligned to each observed landmark set
//! with a similarity transform `M_c`. The head rotation in the observing
//! camera is the rotation part of `C_real · M_c · C_ref⁻¹`, and the head box
//! is the projection of a loose sphere around the aligned reference head.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::datamodel::{Annotation, DatasetFile, ImageRecord, Meta};
use crate::error::{Error, Result};
use crate::geometry::{
    matrix_to_euler, CameraModel, EulerPose, LandmarkSet, RotationMatrix, SimilarityTransform, MIN_DEPTH,
};

/// Supported corner-landmark counts.
pub const CORNER_COUNTS: [usize; 5] = [9, 11, 13, 15, 17];
pub const DEFAULT_CORNER_COUNT: usize = 13;
pub const NUM_LANDMARKS: usize = 68;

/// Nested corner subsets of the 68-point layout: eye corners, nose tip,
/// mouth corners, chin and nose bridge first, then nostrils, outer brow
/// ends, jaw ends and inner brow ends.
const CORNERS_9: [usize; 9] = [36, 39, 42, 45, 30, 48, 54, 8, 27];
const CORNERS_EXTRA: [[usize; 2]; 4] = [[31, 35], [17, 26], [0, 16], [21, 22]];

/// The generic head: 68 landmarks in millimetres, seen exactly frontally by
/// its own camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceHead {
    pub landmarks: LandmarkSet,
    pub camera: CameraModel,
    corners: Vec<(usize, Vec<usize>)>,
    /// Largest landmark-to-landmark distance, the hemisphere base radius.
    pub extent: f64,
}

impl Default for ReferenceHead {
    fn default() -> Self {
        let landmarks = LandmarkSet::from_rows(&reference_landmarks());
        let extent = landmarks.max_pairwise_distance();
        // Frontal camera 600 mm in front of the face. The head frame is
        // x right, y down, z away from the viewer, matching the camera.
        let camera = CameraModel::new(1000.0, 1000.0, 0.0, 0.0)
            .with_extrinsics(RotationMatrix::identity(), Vector3::new(0.0, 0.0, 600.0));
        let mut corners = Vec::new();
        let mut list = CORNERS_9.to_vec();
        corners.push((9, list.clone()));
        for extra in CORNERS_EXTRA {
            list.extend(extra);
            corners.push((list.len(), list.clone()));
        }
        Self {
            landmarks,
            camera,
            corners,
            extent,
        }
    }
}

impl ReferenceHead {
    pub fn corner_indices(&self, n: usize) -> Result<&[usize]> {
        self.corners
            .iter()
            .find(|(k, _)| *k == n)
            .map(|(_, v)| v.as_slice())
            .ok_or(Error::UnsupportedCount(n))
    }
}

/// Built-in 68-point head (iBUG ordering) in millimetres, centred roughly on
/// the face, nose pointing towards −z.
fn reference_landmarks() -> Vec<[f64; 3]> {
    let mut p = Vec::with_capacity(NUM_LANDMARKS);
    // 0–16 jaw line, right ear round the chin to the left ear.
    for i in 0..17 {
        let t = std::f64::consts::PI * i as f64 / 16.0;
        p.push([-70.0 * t.cos(), -5.0 + 70.0 * t.sin(), 35.0 - 95.0 * t.sin()]);
    }
    // 17–21 right brow, 22–26 left brow.
    for side in [-1.0, 1.0] {
        for k in 0..5 {
            let x = if side < 0.0 { -58.0 + 11.0 * k as f64 } else { 14.0 + 11.0 * k as f64 };
            let arch = 1.0 - ((x.abs() - 36.0) / 22.0).powi(2);
            p.push([x, -44.0 - 6.0 * arch, -68.0 - 6.0 * arch]);
        }
    }
    // 27–30 nose bridge down to the tip.
    for k in 0..4 {
        p.push([0.0, -32.0 + 13.0 * k as f64, -78.0 - 9.0 * k as f64]);
    }
    // 31–35 nostrils and columella.
    for (x, dz) in [(-17.0, 0.0), (-9.0, -5.0), (0.0, -8.0), (9.0, -5.0), (17.0, 0.0)] {
        p.push([x, 15.0, -84.0 + dz]);
    }
    // 36–41 right eye, 42–47 left eye: outer/inner corners, upper then lower lid.
    for c in [-32.0, 32.0] {
        let s: f64 = if c < 0.0 { 1.0 } else { -1.0 };
        let outer = c - 13.0 * s;
        let inner = c + 13.0 * s;
        let (first, last) = if c < 0.0 { (outer, inner) } else { (inner, outer) };
        let lerp = |t: f64| first + (last - first) * t;
        p.push([first, -26.0, -66.0]);
        p.push([lerp(1.0 / 3.0), -31.0, -70.0]);
        p.push([lerp(2.0 / 3.0), -31.0, -70.0]);
        p.push([last, -26.0, -66.0]);
        p.push([lerp(2.0 / 3.0), -22.0, -69.0]);
        p.push([lerp(1.0 / 3.0), -22.0, -69.0]);
    }
    // 48–59 outer lip contour, 60–67 inner.
    let outer = [
        (-26.0, 38.0, -74.0),
        (-16.0, 32.0, -81.0),
        (-6.0, 30.0, -85.0),
        (0.0, 31.0, -86.0),
        (6.0, 30.0, -85.0),
        (16.0, 32.0, -81.0),
        (26.0, 38.0, -74.0),
        (16.0, 46.0, -80.0),
        (6.0, 49.0, -83.0),
        (0.0, 49.5, -84.0),
        (-6.0, 49.0, -83.0),
        (-16.0, 46.0, -80.0),
    ];
    let inner = [
        (-20.0, 38.0, -77.0),
        (-7.0, 36.0, -82.0),
        (0.0, 36.5, -83.0),
        (7.0, 36.0, -82.0),
        (20.0, 38.0, -77.0),
        (7.0, 41.0, -82.0),
        (0.0, 41.5, -83.0),
        (-7.0, 41.0, -82.0),
    ];
    p.extend(outer.iter().chain(&inner).map(|&(x, y, z)| [x, y, z]));
    p
}

/// The configured corner subset of a full 68-point landmark set.
pub fn select_corner_landmarks(head: &LandmarkSet, n: usize, reference: &ReferenceHead) -> Result<LandmarkSet> {
    let idx = reference.corner_indices(n)?;
    if head.len() != reference.landmarks.len() {
        return Err(Error::CountMismatch(head.len(), reference.landmarks.len()));
    }
    Ok(head.select(idx))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub pose: EulerPose,
    /// The decomposition hit the gimbal singularity (|yaw| = 90).
    pub gimbal: bool,
    /// Reference-to-observed similarity `M_c`.
    pub transform: SimilarityTransform,
}

/// Head pose of an observed landmark set as seen by `cam_real`.
pub fn head_pose_from_landmarks(
    real: &LandmarkSet,
    cam_real: &CameraModel,
    reference: &ReferenceHead,
    n: usize,
) -> Result<PoseEstimate> {
    let src = select_corner_landmarks(&reference.landmarks, n, reference)?;
    let dst = select_corner_landmarks(real, n, reference)?;
    let m_c = crate::geometry::horn_align(&src, &dst)?;
    let ref_inv = reference
        .camera
        .extrinsic()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("reference camera extrinsic is singular".into()))?;
    let m_r = cam_real.extrinsic() * m_c.to_homogeneous() * ref_inv;
    let rot: Matrix3<f64> = m_r.fixed_view::<3, 3>(0, 0).into_owned() / m_c.scale;
    let d = matrix_to_euler(&RotationMatrix::new(rot)?)?;
    Ok(PoseEstimate {
        pose: d.pose,
        gimbal: d.gimbal,
        transform: m_c,
    })
}

/// Loose sphere sampled around the aligned reference head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HemisphereConfig {
    /// Radius as a multiple of the reference head's landmark extent.
    pub kappa: f64,
    /// Icosphere subdivision level; 3 gives 642 vertices.
    pub subdivisions: usize,
}

impl Default for HemisphereConfig {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            subdivisions: 3,
        }
    }
}

/// A head box in pixels, center format, plus the fraction of sphere samples
/// projecting inside the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadBox {
    pub bbox: [f64; 4],
    pub visibility: f64,
}

/// Box enclosing the projected sphere around the head, clipped to the
/// image.
pub fn head_box_from_hemisphere(
    m_c: &SimilarityTransform,
    cam_real: &CameraModel,
    reference: &ReferenceHead,
    cfg: &HemisphereConfig,
    image_size: (u32, u32),
) -> Result<HeadBox> {
    let (verts, _) = icosphere(cfg.subdivisions);
    let center = reference.landmarks.centroid();
    let radius = cfg.kappa * reference.extent;
    let (iw, ih) = (image_size.0 as f64, image_size.1 as f64);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut inside = 0usize;
    let mut in_front = 0usize;
    for v in &verts {
        let pc = cam_real.to_camera(&m_c.apply(&(center + radius * v)));
        if !(pc.z > MIN_DEPTH) {
            continue;
        }
        in_front += 1;
        let q = cam_real.project_camera_point(&pc);
        x0 = x0.min(q.x);
        y0 = y0.min(q.y);
        x1 = x1.max(q.x);
        y1 = y1.max(q.y);
        if (0.0..=iw).contains(&q.x) && (0.0..=ih).contains(&q.y) {
            inside += 1;
        }
    }
    if in_front == 0 {
        return Err(Error::OffScreen);
    }
    let (x0, y0, x1, y1) = (x0.clamp(0.0, iw), y0.clamp(0.0, ih), x1.clamp(0.0, iw), y1.clamp(0.0, ih));
    if !(x1 > x0 && y1 > y0) {
        return Err(Error::OffScreen);
    }
    Ok(HeadBox {
        bbox: [(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0],
        visibility: inside as f64 / verts.len() as f64,
    })
}

/// Unit icosphere: vertices and outward-facing triangles.
pub fn icosphere(subdivisions: usize) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache = std::collections::HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

/// Result of [`label_variance_study`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// Mean over heads of the per-angle std across corner counts.
    pub std: [f64; 3],
    /// Mean of the three entries of `std`.
    pub avg: f64,
    pub heads_used: usize,
    pub heads_skipped: usize,
}

/// Sensitivity of labels to the number of corner landmarks.
///
/// Each head is labeled with every supported count; poses are taken at the
/// six-decimal precision labels are stored with, and yaw deviations are
/// measured around the circle.
pub fn label_variance_study(heads: &[(LandmarkSet, CameraModel)], reference: &ReferenceHead) -> Result<VarianceReport> {
    if heads.is_empty() {
        return Err(Error::Validation("label variance study needs at least one head".into()));
    }
    let mut sum = [0.0; 3];
    let (mut used, mut skipped) = (0usize, 0usize);
    'heads: for (lm, cam) in heads {
        let mut poses = Vec::with_capacity(CORNER_COUNTS.len());
        for n in CORNER_COUNTS {
            match head_pose_from_landmarks(lm, cam, reference, n) {
                Ok(p) => poses.push(p.pose.as_array().map(quantize)),
                Err(_) => {
                    skipped += 1;
                    continue 'heads;
                }
            }
        }
        for (k, s) in sum.iter_mut().enumerate() {
            let base = poses[0][k];
            let devs: Vec<f64> = poses
                .iter()
                .map(|p| {
                    let d = p[k] - base;
                    d - 360.0 * (d / 360.0).round()
                })
                .collect();
            let mean = devs.iter().sum::<f64>() / devs.len() as f64;
            let var = devs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / devs.len() as f64;
            *s += var.sqrt();
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate(format!("all {skipped} heads failed alignment")));
    }
    let std = sum.map(|s| s / used as f64);
    Ok(VarianceReport {
        std,
        avg: std.iter().sum::<f64>() / 3.0,
        heads_used: used,
        heads_skipped: skipped,
    })
}

fn quantize(v: f64) -> f64 {
    let q = (v * 1e6).round() / 1e6;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

/// One head label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadLabel {
    /// Center format, pixels.
    pub bbox: [f64; 4],
    pub pose: EulerPose,
    pub gimbal: bool,
    pub visibility: f64,
}

/// Full label for one head: pose via the corner subset, box via the sphere.
pub fn label_head(
    real: &LandmarkSet,
    cam_real: &CameraModel,
    reference: &ReferenceHead,
    n: usize,
    hemisphere: &HemisphereConfig,
    image_size: (u32, u32),
) -> Result<HeadLabel> {
    let est = head_pose_from_landmarks(real, cam_real, reference, n)?;
    let hb = head_box_from_hemisphere(&est.transform, cam_real, reference, hemisphere, image_size)?;
    Ok(HeadLabel {
        bbox: hb.bbox,
        pose: est.pose,
        gimbal: est.gimbal,
        visibility: hb.visibility,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "R")]
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

impl SceneCamera {
    pub fn to_model(&self) -> Result<CameraModel> {
        let m = Matrix3::from_fn(|i, j| self.r[i][j]);
        let cam = CameraModel::new(self.fx, self.fy, self.cx, self.cy)
            .with_extrinsics(RotationMatrix::new(m)?, Vector3::from(self.t));
        cam.validate()?;
        Ok(cam)
    }

    pub fn from_model(cam: &CameraModel) -> Self {
        let m = cam.rotation.matrix();
        Self {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            r: std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])),
            t: [cam.translation.x, cam.translation.y, cam.translation.z],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneHead {
    pub head_id: u64,
    pub landmarks: Vec<[f64; 3]>,
}

/// One image of a landmark-scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneImage {
    pub image_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
    pub width: u32,
    pub height: u32,
    pub camera: SceneCamera,
    pub heads: Vec<SceneHead>,
}

/// Reads and validates a landmark-scene file (a JSON list of images).
pub fn load_scene_file(path: &Path) -> Result<Vec<SceneImage>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: Vec<serde_json::Value> = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    raw.into_iter()
        .enumerate()
        .map(|(index, v)| {
            let img: SceneImage = serde_json::from_value(v).map_err(|e| Error::Schema {
                index,
                message: e.to_string(),
            })?;
            validate_scene_image(&img).map_err(|e| Error::Schema {
                index,
                message: e.to_string(),
            })?;
            Ok(img)
        })
        .collect()
}

fn validate_scene_image(img: &SceneImage) -> Result<()> {
    if img.width == 0 || img.height == 0 {
        return Err(Error::Validation("zero image size".into()));
    }
    img.camera.to_model()?;
    for h in &img.heads {
        if h.landmarks.len() != NUM_LANDMARKS {
            return Err(Error::Validation(format!(
                "head {}: {} landmarks, expected {NUM_LANDMARKS}",
                h.head_id,
                h.landmarks.len()
            )));
        }
        if h.landmarks.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("head {}: non-finite landmark", h.head_id)));
        }
    }
    Ok(())
}

/// Options for [`build_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelOptions {
    pub corner_count: usize,
    pub hemisphere: HemisphereConfig,
    pub meta: Meta,
}

impl Default for LabelOptions {
    fn default() -> Self {
        Self {
            corner_count: DEFAULT_CORNER_COUNT,
            hemisphere: HemisphereConfig::default(),
            meta: Meta {
                generator: "labelgen".into(),
                ..Meta::default()
            },
        }
    }
}

/// Labels every head of every scene. Heads that fail alignment or project
/// entirely off-screen are dropped, as are images left without heads.
/// Output is ordered by image id, then head id.
pub fn build_labels(scenes: &[SceneImage], reference: &ReferenceHead, opts: &LabelOptions) -> Result<DatasetFile> {
    reference.corner_indices(opts.corner_count)?;
    let mut ds = DatasetFile::new(opts.meta.clone());
    let mut order: Vec<&SceneImage> = scenes.iter().collect();
    order.sort_by_key(|s| s.image_id);
    let mut next_ann = 1u64;
    for (index, img) in order.into_iter().enumerate() {
        let cam = img.camera.to_model().map_err(|e| Error::Schema {
            index,
            message: e.to_string(),
        })?;
        let mut heads: Vec<&SceneHead> = img.heads.iter().collect();
        heads.sort_by_key(|h| h.head_id);
        let mut anns = Vec::new();
        for h in heads {
            let lm = LandmarkSet::from_rows(&h.landmarks);
            let label = match label_head(&lm, &cam, reference, opts.corner_count, &opts.hemisphere, (img.width, img.height)) {
                Ok(l) => l,
                Err(Error::OffScreen | Error::Degenerate(_) | Error::BehindCamera { .. }) => continue,
                Err(e) => return Err(e),
            };
            if label.pose.validate().is_err() {
                continue;
            }
            let [cx, cy, w, h] = label.bbox;
            anns.push(Annotation::new(0, img.image_id, [cx - w / 2.0, cy - h / 2.0, w, h], label.pose));
        }
        if anns.is_empty() {
            continue;
        }
        for mut a in anns {
            a.id = next_ann;
            next_ann += 1;
            ds.annotations.push(a);
        }
        ds.images.push(ImageRecord {
            id: img.image_id,
            file_name: img.file_name.clone().unwrap_or_else(|| format!("{:06}.png", img.image_id)),
            width: img.width,
            height: img.height,
        });
    }
    Ok(ds)
}
