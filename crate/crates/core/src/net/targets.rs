//! Assignment of ground-truth heads to anchor cells.

use serde::{Deserialize, Serialize};

use super::{AnchorConfig, POSE_RANGE};
use crate::geometry::EulerPose;

/// Which neighbouring cells besides the centre cell become positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborMode {
    /// The nearer horizontal and the nearer vertical neighbour.
    #[default]
    TwoNearest,
    /// All four axis neighbours.
    AllFour,
}

/// A ground-truth head in input-image pixels, center format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub image: usize,
    pub bbox: [f64; 4],
    pub pose: EulerPose,
}

/// One positive anchor cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Positive {
    pub image: usize,
    pub anchor: usize,
    pub cell_x: usize,
    pub cell_y: usize,
    /// Target box relative to the cell origin, grid units, center format.
    pub box_target: [f64; 4],
    /// Normalized pose target in `[0, 1]³`.
    pub pose_target: [f64; 3],
    pub gt_index: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StrideTargets {
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    pub positives: Vec<Positive>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetGrids {
    pub strides: Vec<StrideTargets>,
    /// Ground truths that matched no anchor at any stride.
    pub uncovered: Vec<usize>,
}

impl TargetGrids {
    /// Dense positive mask `[batch][anchor][y][x]` for one stride.
    pub fn positive_mask(&self, stride_index: usize, batch: usize, num_anchors: usize) -> Vec<bool> {
        let st = &self.strides[stride_index];
        let mut mask = vec![false; batch * num_anchors * st.height * st.width];
        for p in &st.positives {
            mask[((p.image * num_anchors + p.anchor) * st.height + p.cell_y) * st.width + p.cell_x] = true;
        }
        mask
    }

    pub fn num_positives(&self) -> usize {
        self.strides.iter().map(|s| s.positives.len()).sum()
    }
}

/// Normalized pose, clamped into `[0, 1]`.
fn pose_target(pose: EulerPose) -> [f64; 3] {
    let p = pose.as_array();
    std::array::from_fn(|k| (p[k] / POSE_RANGE[k] + 0.5).clamp(0.0, 1.0))
}

/// Builds training targets for a batch.
///
/// For every ground truth and stride, anchor `i` is eligible when
/// `max(w/Bw, Bw/w, h/Bh, Bh/h) < ratio_threshold`. Each eligible anchor is
/// positive at the cell containing the box center plus neighbours chosen by
/// `mode`; a fractional offset `<= 0.5` picks the left/up neighbour,
/// otherwise the right/down one. The pose target is replicated on every
/// positive cell.
pub fn build_targets(
    gts: &[GroundTruth],
    anchors: &AnchorConfig,
    shapes: &[(usize, usize)],
    ratio_threshold: f64,
    mode: NeighborMode,
) -> TargetGrids {
    let mut covered = vec![false; gts.len()];
    let strides = anchors
        .strides
        .iter()
        .zip(&anchors.anchors)
        .zip(shapes)
        .map(|((&stride, level), &(height, width))| {
            let s = stride as f64;
            let mut positives = Vec::new();
            for (gi, gt) in gts.iter().enumerate() {
                let [cx, cy, w, h] = gt.bbox;
                let (gx, gy) = (cx / s, cy / s);
                if !(gx >= 0.0 && gy >= 0.0) {
                    continue;
                }
                let (cell_x, cell_y) = (gx.floor() as usize, gy.floor() as usize);
                if cell_x >= width || cell_y >= height {
                    continue;
                }
                let (fx, fy) = (gx - cell_x as f64, gy - cell_y as f64);
                let cells = candidate_cells(cell_x, cell_y, fx, fy, width, height, mode);
                let pose = pose_target(gt.pose);
                for (ai, &(aw, ah)) in level.iter().enumerate() {
                    let ratio = (w / aw).max(aw / w).max(h / ah).max(ah / h);
                    if !(ratio < ratio_threshold) {
                        continue;
                    }
                    covered[gi] = true;
                    for &(x, y) in &cells {
                        positives.push(Positive {
                            image: gt.image,
                            anchor: ai,
                            cell_x: x,
                            cell_y: y,
                            box_target: [gx - x as f64, gy - y as f64, w / s, h / s],
                            pose_target: pose,
                            gt_index: gi,
                        });
                    }
                }
            }
            StrideTargets {
                stride,
                height,
                width,
                positives,
            }
        })
        .collect();
    TargetGrids {
        strides,
        uncovered: covered
            .iter()
            .enumerate()
            .filter(|(_, &c)| !c)
            .map(|(i, _)| i)
            .collect(),
    }
}

fn candidate_cells(
    x: usize,
    y: usize,
    fx: f64,
    fy: f64,
    width: usize,
    height: usize,
    mode: NeighborMode,
) -> Vec<(usize, usize)> {
    let mut cells = vec![(x, y)];
    let left = x >= 1;
    let right = x + 1 < width;
    let up = y >= 1;
    let down = y + 1 < height;
    match mode {
        NeighborMode::TwoNearest => {
            if fx <= 0.5 {
                if left {
                    cells.push((x - 1, y));
                }
            } else if right {
                cells.push((x + 1, y));
            }
            if fy <= 0.5 {
                if up {
                    cells.push((x, y - 1));
                }
            } else if down {
                cells.push((x, y + 1));
            }
        }
        NeighborMode::AllFour => {
            if left {
                cells.push((x - 1, y));
            }
            if right {
                cells.push((x + 1, y));
            }
            if up {
                cells.push((x, y - 1));
            }
            if down {
                cells.push((x, y + 1));
            }
        }
    }
    cells
}
