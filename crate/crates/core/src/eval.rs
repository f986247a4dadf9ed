//! Post-processing and evaluation: decoding raw grids into detections, NMS,
//! IoU matching, wrapped MAE, COCO-style AP and per-yaw-bin breakdowns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Annotation, DatasetFile};
use crate::error::{Error, Result};
use crate::geometry::{angular_abs_diff, EulerPose};
use crate::net::{decode_box, decode_pose, sigmoid, AnchorConfig, GridSet, CH_BOX, CH_CLS, CH_OBJ, CH_POSE};

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.7;
pub const DEFAULT_NMS_IOU: f64 = 0.65;
pub const DEFAULT_MATCH_IOU: f64 = 0.5;
/// Confidence floor for writing predictions; low enough for AP.
pub const PREDICTION_FLOOR: f64 = 0.001;
pub const YAW_BIN_WIDTH: f64 = 30.0;
pub const MAX_DETS_PER_IMAGE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Corner format `[x, y, w, h]`, pixels.
    pub bbox: [f64; 4],
    pub confidence: f64,
    pub pose: EulerPose,
}

/// Corner-format IoU.
pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = ((a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0])).max(0.0);
    let iy = ((a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Mapping between network-input pixels and original-image pixels:
/// `input = original · scale + pad`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Letterbox {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
    pub orig_width: u32,
    pub orig_height: u32,
}

impl Letterbox {
    /// Fit an image into a `size × size` square keeping aspect, centred.
    pub fn fit(orig_width: u32, orig_height: u32, size: usize) -> Self {
        let scale = (size as f64 / orig_width as f64).min(size as f64 / orig_height as f64);
        let nw = (orig_width as f64 * scale).round();
        let nh = (orig_height as f64 * scale).round();
        Self {
            scale,
            pad_x: ((size as f64 - nw) / 2.0).floor(),
            pad_y: ((size as f64 - nh) / 2.0).floor(),
            orig_width,
            orig_height,
        }
    }

    pub fn identity(width: u32, height: u32) -> Self {
        Self {
            scale: 1.0,
            pad_x: 0.0,
            pad_y: 0.0,
            orig_width: width,
            orig_height: height,
        }
    }

    /// Center-format input box to a clipped corner-format original box.
    pub fn to_original(&self, c: [f64; 4]) -> [f64; 4] {
        let (w, h) = (self.orig_width as f64, self.orig_height as f64);
        let x0 = ((c[0] - c[2] / 2.0 - self.pad_x) / self.scale).clamp(0.0, w);
        let y0 = ((c[1] - c[3] / 2.0 - self.pad_y) / self.scale).clamp(0.0, h);
        let x1 = ((c[0] + c[2] / 2.0 - self.pad_x) / self.scale).clamp(0.0, w);
        let y1 = ((c[1] + c[3] / 2.0 - self.pad_y) / self.scale).clamp(0.0, h);
        [x0, y0, x1 - x0, y1 - y0]
    }

    /// Corner-format original box to a center-format input box.
    pub fn to_input(&self, b: [f64; 4]) -> [f64; 4] {
        [
            (b[0] + b[2] / 2.0) * self.scale + self.pad_x,
            (b[1] + b[3] / 2.0) * self.scale + self.pad_y,
            b[2] * self.scale,
            b[3] * self.scale,
        ]
    }
}

/// All anchor cells of image `image` whose confidence `φ(ô′)·φ(ĉ′)` reaches
/// `floor`, in original-image pixels. Boxes clipped to nothing are dropped.
pub fn decode_detections(
    grids: &GridSet,
    image: usize,
    anchors: &AnchorConfig,
    letterbox: &Letterbox,
    floor: f64,
) -> Result<Vec<Detection>> {
    if grids.grids.len() != anchors.strides.len()
        || grids
            .grids
            .iter()
            .zip(&anchors.strides)
            .any(|(g, &s)| g.stride != s || g.num_anchors != anchors.num_anchors())
    {
        return Err(Error::Config("anchor configuration does not match prediction grids".into()));
    }
    let mut out = Vec::new();
    for (si, g) in grids.grids.iter().enumerate() {
        for a in 0..g.num_anchors {
            for y in 0..g.height() {
                for x in 0..g.width() {
                    let o = g.outputs(image, a, y, x);
                    let conf = sigmoid(o[CH_OBJ]) * sigmoid(o[CH_CLS]);
                    if conf < floor {
                        continue;
                    }
                    let raw = [o[CH_BOX], o[CH_BOX + 1], o[CH_BOX + 2], o[CH_BOX + 3]];
                    let b = decode_box(raw, anchors.anchors[si][a], g.stride, (x, y));
                    let bbox = letterbox.to_original(b.pixels);
                    if !(bbox[2] > 0.0 && bbox[3] > 0.0) {
                        continue;
                    }
                    out.push(Detection {
                        bbox,
                        confidence: conf,
                        pose: decode_pose([o[CH_POSE], o[CH_POSE + 1], o[CH_POSE + 2]]),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Descending confidence with a total tie-break, so results do not depend on
/// input order.
fn by_confidence(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| {
            a.bbox
                .iter()
                .zip(&b.bbox)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .then_with(|| {
            a.pose
                .as_array()
                .iter()
                .zip(&b.pose.as_array())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
}

/// Drops detections below `conf_threshold`, then greedily keeps the most
/// confident box and suppresses others overlapping it with IoU above
/// `iou_threshold`.
pub fn nms(dets: &[Detection], conf_threshold: f64, iou_threshold: f64) -> Vec<Detection> {
    let mut cand: Vec<Detection> = dets.iter().filter(|d| d.confidence >= conf_threshold).copied().collect();
    cand.sort_by(by_confidence);
    let mut keep: Vec<Detection> = Vec::new();
    for d in cand {
        if keep.iter().all(|k| iou(k.bbox, d.bbox) <= iou_threshold) {
            keep.push(d);
        }
    }
    keep
}

/// A ground-truth head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtHead {
    pub bbox: [f64; 4],
    pub pose: EulerPose,
}

impl From<&Annotation> for GtHead {
    fn from(a: &Annotation) -> Self {
        Self {
            bbox: a.bbox,
            pose: a.euler(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosePair {
    pub pred: EulerPose,
    pub gt: EulerPose,
    pub iou: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(detection index, gt index, pair)`.
    pub pairs: Vec<(usize, usize, PosePair)>,
    pub n: usize,
    pub n_hat: usize,
    pub p_m: f64,
}

/// Greedy confidence-descending matching; each detection takes the unused
/// ground truth of highest IoU, provided it reaches `iou_threshold`.
pub fn match_detections(dets: &[Detection], gts: &[GtHead], iou_threshold: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| by_confidence(&dets[a], &dets[b]).then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for di in order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if used[gi] {
                continue;
            }
            let v = iou(dets[di].bbox, g.bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, v)) = best {
            used[gi] = true;
            pairs.push((
                di,
                gi,
                PosePair {
                    pred: dets[di].pose,
                    gt: gts[gi].pose,
                    iou: v,
                    confidence: dets[di].confidence,
                },
            ));
        }
    }
    let n = gts.len();
    let n_hat = pairs.len();
    MatchResult {
        pairs,
        n,
        n_hat,
        p_m: if n == 0 { 0.0 } else { n_hat as f64 / n as f64 },
    }
}

/// Wrapped mean absolute errors in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mae {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
    pub mean: f64,
    pub count: usize,
}

/// Per-angle wrapped MAE; `None` when there are no pairs.
pub fn mae(pairs: &[PosePair]) -> Option<Mae> {
    if pairs.is_empty() {
        return None;
    }
    let mut s = [0.0; 3];
    for p in pairs {
        let (a, b) = (p.pred.as_array(), p.gt.as_array());
        for k in 0..3 {
            s[k] += angular_abs_diff(a[k], b[k]);
        }
    }
    let n = pairs.len() as f64;
    let [pitch, yaw, roll] = s.map(|v| v / n);
    Some(Mae {
        pitch,
        yaw,
        roll,
        mean: (pitch + yaw + roll) / 3.0,
        count: pairs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeMode {
    /// Only heads with `|yaw| < 90`.
    Narrow,
    #[default]
    Full,
}

impl RangeMode {
    pub fn contains(self, gt_yaw: f64) -> bool {
        match self {
            RangeMode::Narrow => gt_yaw.abs() < 90.0,
            RangeMode::Full => true,
        }
    }
}

impl std::str::FromStr for RangeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "narrow" => Ok(RangeMode::Narrow),
            "full" => Ok(RangeMode::Full),
            other => Err(Error::Validation(format!("unknown range mode {other:?}; expected narrow or full"))),
        }
    }
}

/// Pairs whose ground-truth yaw falls inside `mode`.
pub fn filter_range(pairs: &[PosePair], mode: RangeMode) -> Vec<PosePair> {
    pairs.iter().filter(|p| mode.contains(p.gt.yaw)).copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YawBin {
    /// Exclusive lower edge.
    pub lo: f64,
    /// Inclusive upper edge.
    pub hi: f64,
    pub count: usize,
    pub mae: Option<Mae>,
}

/// Index of the right-closed bin `(−180 + w·k, −180 + w·(k+1)]` holding `yaw`.
pub fn yaw_bin_index(yaw: f64, width: f64) -> usize {
    let nbins = (360.0 / width).round() as usize;
    let k = ((yaw + 180.0) / width).ceil() as i64 - 1;
    // −180 is the same direction as 180.
    if k < 0 {
        nbins - 1
    } else {
        (k as usize).min(nbins - 1)
    }
}

/// MAE per ground-truth yaw bin.
pub fn mae_by_yaw_bin(pairs: &[PosePair], width: f64) -> Vec<YawBin> {
    let nbins = (360.0 / width).round() as usize;
    let mut groups: Vec<Vec<PosePair>> = vec![Vec::new(); nbins];
    for p in pairs {
        groups[yaw_bin_index(p.gt.yaw, width)].push(*p);
    }
    groups
        .iter()
        .enumerate()
        .map(|(k, g)| YawBin {
            lo: -180.0 + width * k as f64,
            hi: -180.0 + width * (k + 1) as f64,
            count: g.len(),
            mae: mae(g),
        })
        .collect()
}

/// COCO-style average precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    /// Mean over IoU thresholds 0.50:0.05:0.95.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

/// Per-image detections and ground truths; ignored ground truths neither
/// count as positives nor turn their matches into false positives.
#[derive(Debug, Clone, Default)]
pub struct ApImage {
    pub dets: Vec<Detection>,
    pub gts: Vec<[f64; 4]>,
    pub ignore: Vec<bool>,
}

fn ap_at(images: &[ApImage], t: f64) -> f64 {
    // Per-image matching: (score, is_tp, ignored) per kept detection.
    let mut scored: Vec<(f64, bool, bool)> = Vec::new();
    let mut npos = 0usize;
    for im in images {
        npos += im.ignore.iter().filter(|&&ig| !ig).count();
        let mut dets: Vec<&Detection> = im.dets.iter().collect();
        dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        dets.truncate(MAX_DETS_PER_IMAGE);
        // Non-ignored ground truths first.
        let mut gorder: Vec<usize> = (0..im.gts.len()).collect();
        gorder.sort_by_key(|&g| im.ignore[g]);
        let mut matched = vec![false; im.gts.len()];
        for d in dets {
            let mut best_iou = t.min(1.0 - 1e-10);
            let mut m: Option<usize> = None;
            for &g in &gorder {
                if matched[g] {
                    continue;
                }
                // Once matched to a regular gt, ignored ones cannot win.
                if let Some(mg) = m {
                    if !im.ignore[mg] && im.ignore[g] {
                        break;
                    }
                }
                let v = iou(d.bbox, im.gts[g]);
                if v < best_iou {
                    continue;
                }
                best_iou = v;
                m = Some(g);
            }
            match m {
                Some(g) => {
                    matched[g] = true;
                    scored.push((d.confidence, !im.ignore[g], im.ignore[g]));
                }
                None => scored.push((d.confidence, false, false)),
            }
        }
    }
    if npos == 0 {
        return 0.0;
    }
    // Stable: equal scores keep image order, as in the reference evaluator.
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    for i in order {
        let (_, is_tp, ignored) = scored[i];
        if ignored {
            continue;
        }
        if is_tp {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        recall.push(tp / npos as f64);
        precision.push(tp / (tp + fp + f64::EPSILON));
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for k in 0..101 {
        // Same floating-point grid as the reference evaluator.
        let r = if k == 100 { 1.0 } else { k as f64 * 0.01 };
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

/// AP averaged over IoU thresholds 0.50, 0.55, …, 0.95 with 101-point
/// interpolated precision.
pub fn average_precision(images: &[ApImage]) -> ApReport {
    let step = (0.95 - 0.5) / 9.0;
    let thresholds: Vec<f64> = (0..10).map(|i| if i == 9 { 0.95 } else { 0.5 + step * i as f64 }).collect();
    let per: Vec<f64> = thresholds.iter().map(|&t| ap_at(images, t)).collect();
    ApReport {
        ap: per.iter().sum::<f64>() / per.len() as f64,
        ap50: per[0],
        ap75: per[5],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub range: RangeMode,
    /// Detections below this confidence are ignored for matching and MAE.
    pub conf_threshold: f64,
    pub match_iou: f64,
    pub yaw_bin_width: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            range: RangeMode::Full,
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            match_iou: DEFAULT_MATCH_IOU,
            yaw_bin_width: YAW_BIN_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub range: RangeMode,
    pub conf_threshold: f64,
    pub match_iou: f64,
    /// Ground-truth heads in range.
    pub n: usize,
    /// Of those, heads matched by a detection.
    pub n_hat: usize,
    pub p_m: f64,
    /// `None` when nothing matched.
    pub mae: Option<Mae>,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub yaw_bins: Vec<YawBin>,
    /// Expected yaw MAE of uniformly random predictions.
    pub random_yaw_mae: f64,
}

/// Evaluates detections per image against ground truths.
///
/// AP uses every detection; matching, P_M and MAE use those at or above the
/// confidence threshold. In narrow mode out-of-range ground truths are
/// still matched (so their detections are not counted as misses) but are
/// excluded from every statistic.
pub fn evaluate_images(images: &[(Vec<Detection>, Vec<GtHead>)], opts: &EvalOptions) -> EvalReport {
    let mut pairs = Vec::new();
    let (mut n, mut n_hat) = (0, 0);
    let mut ap_images = Vec::with_capacity(images.len());
    for (dets, gts) in images {
        let confident: Vec<Detection> = dets.iter().filter(|d| d.confidence >= opts.conf_threshold).copied().collect();
        let m = match_detections(&confident, gts, opts.match_iou);
        n += gts.iter().filter(|g| opts.range.contains(g.pose.yaw)).count();
        for (_, gi, p) in &m.pairs {
            if opts.range.contains(gts[*gi].pose.yaw) {
                n_hat += 1;
                pairs.push(*p);
            }
        }
        ap_images.push(ApImage {
            dets: dets.clone(),
            gts: gts.iter().map(|g| g.bbox).collect(),
            ignore: gts.iter().map(|g| !opts.range.contains(g.pose.yaw)).collect(),
        });
    }
    let ap = average_precision(&ap_images);
    EvalReport {
        range: opts.range,
        conf_threshold: opts.conf_threshold,
        match_iou: opts.match_iou,
        n,
        n_hat,
        p_m: if n == 0 { 0.0 } else { n_hat as f64 / n as f64 },
        mae: mae(&pairs),
        ap: ap.ap,
        ap50: ap.ap50,
        ap75: ap.ap75,
        yaw_bins: mae_by_yaw_bin(&pairs, opts.yaw_bin_width),
        random_yaw_mae: 90.0,
    }
}

/// Detections stored as annotations with a confidence.
pub fn detections_from_annotations(anns: &[&Annotation]) -> Vec<Detection> {
    anns.iter()
        .map(|a| Detection {
            bbox: a.bbox,
            confidence: a.confidence.unwrap_or(1.0),
            pose: a.euler(),
        })
        .collect()
}

/// Evaluates a prediction file against a ground-truth file. Predictions
/// for images absent from the ground truth are an error.
pub fn evaluate_files(preds: &DatasetFile, gts: &DatasetFile, opts: &EvalOptions) -> Result<EvalReport> {
    let gt_by_image = gts.annotations_by_image();
    let mut pred_by_image: BTreeMap<u64, Vec<&Annotation>> = BTreeMap::new();
    for a in &preds.annotations {
        if !gt_by_image.contains_key(&a.image_id) {
            return Err(Error::Validation(format!(
                "prediction {} refers to image {} not in the ground truth",
                a.id, a.image_id
            )));
        }
        pred_by_image.entry(a.image_id).or_default().push(a);
    }
    let images: Vec<(Vec<Detection>, Vec<GtHead>)> = gt_by_image
        .iter()
        .map(|(id, g)| {
            let dets = pred_by_image.get(id).map(|p| detections_from_annotations(p)).unwrap_or_default();
            (dets, g.iter().map(|a| GtHead::from(*a)).collect())
        })
        .collect();
    Ok(evaluate_images(&images, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::StrideGrid;
    use approx::assert_abs_diff_eq;

    fn det(bbox: [f64; 4], confidence: f64) -> Detection {
        Detection {
            bbox,
            confidence,
            pose: EulerPose::ZERO,
        }
    }

    fn single_stride(anchor: (f64, f64)) -> (GridSet, AnchorConfig) {
        let mut g = StrideGrid::zeros(8, 1, 1, 4, 4);
        g.data.data_mut().fill(0.0);
        for y in 0..4 {
            for x in 0..4 {
                g.set(0, 0, CH_OBJ, y, x, -50.0);
                g.set(0, 0, CH_CLS, y, x, 50.0);
            }
        }
        (
            GridSet { grids: vec![g] },
            AnchorConfig {
                strides: vec![8],
                anchors: vec![vec![anchor]],
            },
        )
    }

    #[test]
    fn one_hot_cell_decodes_to_one_detection() {
        let (mut grids, anchors) = single_stride((16.0, 16.0));
        let g = &mut grids.grids[0];
        g.set(0, 0, CH_OBJ, 2, 1, 50.0);
        g.set(0, 0, CH_BOX, 2, 1, 0.5);
        g.set(0, 0, CH_POSE + 1, 2, 1, 3f32.ln());
        let lb = Letterbox::identity(32, 32);
        let dets = decode_detections(&grids, 0, &anchors, &lb, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        let d = dets[0];
        // x: 2φ(0.5) − 0.5 + 1 cells; φ(0.5) = 0.622459331201855.
        let cx = (2.0 * 0.622459331201855 - 0.5 + 1.0) * 8.0;
        let cy = (0.5 + 2.0) * 8.0;
        assert_abs_diff_eq!(d.bbox[0], cx - 8.0, epsilon = 1e-5);
        assert_abs_diff_eq!(d.bbox[1], cy - 8.0, epsilon = 1e-5);
        assert_abs_diff_eq!(d.bbox[2], 16.0, epsilon = 1e-5);
        assert_abs_diff_eq!(d.pose.yaw, 90.0, epsilon = 1e-4);
        assert!(d.confidence > 0.999);
    }

    #[test]
    fn suppressed_objectness_yields_nothing() {
        let (grids, anchors) = single_stride((16.0, 16.0));
        assert!(decode_detections(&grids, 0, &anchors, &Letterbox::identity(32, 32), PREDICTION_FLOOR).unwrap().is_empty());
        let wrong = AnchorConfig {
            strides: vec![16],
            anchors: vec![vec![(16.0, 16.0)]],
        };
        assert!(matches!(decode_detections(&grids, 0, &wrong, &Letterbox::identity(32, 32), 0.5), Err(Error::Config(_))));
    }

    #[test]
    fn letterbox_round_trip() {
        let lb = Letterbox::fit(640, 480, 320);
        assert_eq!(lb.scale, 0.5);
        assert_eq!((lb.pad_x, lb.pad_y), (0.0, 40.0));
        let b = [100.0, 50.0, 60.0, 80.0];
        let back = lb.to_original(lb.to_input(b));
        for k in 0..4 {
            assert_abs_diff_eq!(back[k], b[k], epsilon = 1e-9);
        }
    }

    #[test]
    fn nms_examples() {
        let a = det([0.0, 0.0, 10.0, 10.0], 0.9);
        assert_eq!(nms(&[a], 0.7, 0.65), vec![a]);
        let b = det([0.0, 0.0, 10.0, 10.0], 0.8);
        assert_eq!(nms(&[b, a], 0.7, 0.65), vec![a]);
        let low = det([50.0, 50.0, 10.0, 10.0], 0.5);
        assert_eq!(nms(&[low, a], 0.7, 0.65), vec![a]);
    }

    #[test]
    fn matching_examples() {
        let gts = [
            GtHead {
                bbox: [0.0, 0.0, 10.0, 10.0],
                pose: EulerPose::new(0.0, -179.0, 0.0),
            },
            GtHead {
                bbox: [20.0, 0.0, 10.0, 10.0],
                pose: EulerPose::ZERO,
            },
        ];
        let dets: Vec<Detection> = gts
            .iter()
            .map(|g| Detection {
                bbox: g.bbox,
                confidence: 0.9,
                pose: EulerPose::new(0.0, 179.0, 0.0),
            })
            .collect();
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!(m.p_m, 1.0);
        assert_eq!(m.n_hat, 2);
        let pairs: Vec<PosePair> = m.pairs.iter().map(|p| p.2).collect();
        let e = mae(&pairs[..1]).unwrap();
        assert_abs_diff_eq!(e.yaw, 2.0, epsilon = 1e-12);
        let none = match_detections(&[], &gts, 0.5);
        assert_eq!(none.p_m, 0.0);
        assert!(none.pairs.is_empty());
        assert!(mae(&[]).is_none());
    }

    #[test]
    fn greedy_takes_highest_confidence_first() {
        // The confident detection overlaps both; it takes the better one and
        // leaves the weaker detection without a partner.
        let gts = [
            GtHead {
                bbox: [0.0, 0.0, 10.0, 10.0],
                pose: EulerPose::ZERO,
            },
            GtHead {
                bbox: [3.0, 0.0, 10.0, 10.0],
                pose: EulerPose::ZERO,
            },
        ];
        let dets = [det([1.0, 0.0, 10.0, 10.0], 0.9), det([0.0, 0.0, 10.0, 10.0], 0.8)];
        let m = match_detections(&dets, &gts, 0.5);
        let got: Vec<(usize, usize)> = m.pairs.iter().map(|p| (p.0, p.1)).collect();
        assert_eq!(got, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn yaw_bins_are_right_closed() {
        assert_eq!(yaw_bin_index(-180.0, 30.0), 11);
        assert_eq!(yaw_bin_index(-179.0, 30.0), 0);
        assert_eq!(yaw_bin_index(-150.0, 30.0), 0);
        assert_eq!(yaw_bin_index(-149.9, 30.0), 1);
        assert_eq!(yaw_bin_index(0.0, 30.0), 5);
        assert_eq!(yaw_bin_index(0.1, 30.0), 6);
        assert_eq!(yaw_bin_index(180.0, 30.0), 11);
        let pairs = vec![
            PosePair {
                pred: EulerPose::ZERO,
                gt: EulerPose::ZERO,
                iou: 1.0,
                confidence: 1.0,
            };
            3
        ];
        let bins = mae_by_yaw_bin(&pairs, 30.0);
        assert_eq!(bins.len(), 12);
        assert_eq!(bins.iter().filter(|b| b.count > 0).count(), 1);
        assert_eq!((bins[5].lo, bins[5].hi), (-30.0, 0.0));
        assert!(bins[0].mae.is_none());
    }

    #[test]
    fn range_filter_examples() {
        let pair = |yaw: f64| PosePair {
            pred: EulerPose::ZERO,
            gt: EulerPose::new(0.0, yaw, 0.0),
            iou: 1.0,
            confidence: 1.0,
        };
        assert_eq!(filter_range(&[pair(89.9)], RangeMode::Narrow).len(), 1);
        assert_eq!(filter_range(&[pair(89.9)], RangeMode::Full).len(), 1);
        assert_eq!(filter_range(&[pair(135.0)], RangeMode::Narrow).len(), 0);
        assert_eq!(filter_range(&[pair(-90.0)], RangeMode::Narrow).len(), 0);
        assert_eq!(filter_range(&[pair(135.0)], RangeMode::Full).len(), 1);
        assert!("sideways".parse::<RangeMode>().is_err());
    }

    #[test]
    fn ap_examples() {
        let gts = vec![[0.0, 0.0, 10.0, 10.0], [30.0, 30.0, 20.0, 10.0]];
        let perfect = ApImage {
            dets: gts.iter().map(|&b| det(b, 1.0)).collect(),
            gts: gts.clone(),
            ignore: vec![false; 2],
        };
        let r = average_precision(&[perfect]);
        assert_abs_diff_eq!(r.ap, 1.0, epsilon = 1e-12);
        let empty = ApImage {
            dets: vec![],
            gts,
            ignore: vec![false; 2],
        };
        assert_eq!(average_precision(&[empty]).ap, 0.0);
    }
}
