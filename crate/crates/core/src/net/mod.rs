//! Prediction-grid layout, raw↔real decoding, anchors, target assignment
//! and the convolutional network itself.
//!
//! Each stride emits `C_a` anchor channels of `C_o = 9` raw outputs in the
//! order: objectness, box (x, y, w, h), class score, pose (pitch, yaw, roll).

pub mod anchors;
pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod targets;
pub mod tensor;

pub use anchors::AnchorConfig;
pub use model::{ModelConfig, Network};
pub use checkpoint::{Checkpoint, CheckpointHeader, Normalization};
pub use targets::{build_targets, GroundTruth, NeighborMode, Positive, StrideTargets, TargetGrids};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use crate::geometry::EulerPose;

pub const STRIDES: [usize; 4] = [8, 16, 32, 64];
pub const NUM_OUTPUTS: usize = 9;
pub const CH_OBJ: usize = 0;
pub const CH_BOX: usize = 1;
pub const CH_CLS: usize = 5;
pub const CH_POSE: usize = 6;
/// Angular range per pose channel (pitch, yaw, roll).
pub const POSE_RANGE: [f64; 3] = [180.0, 360.0, 180.0];

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Raw outputs of one stride for a batch: shape `[N, C_a·9, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrideGrid {
    pub stride: usize,
    pub num_anchors: usize,
    pub data: Tensor,
}

impl StrideGrid {
    pub fn zeros(stride: usize, num_anchors: usize, batch: usize, h: usize, w: usize) -> Self {
        Self {
            stride,
            num_anchors,
            data: Tensor::zeros([batch, num_anchors * NUM_OUTPUTS, h, w]),
        }
    }

    pub fn batch(&self) -> usize {
        self.data.n()
    }

    pub fn height(&self) -> usize {
        self.data.h()
    }

    pub fn width(&self) -> usize {
        self.data.w()
    }

    /// Cells per image and anchor.
    pub fn cells(&self) -> usize {
        self.data.plane_len()
    }

    pub fn index(&self, image: usize, anchor: usize, channel: usize, y: usize, x: usize) -> usize {
        let (h, w) = (self.height(), self.width());
        (((image * self.num_anchors + anchor) * NUM_OUTPUTS + channel) * h + y) * w + x
    }

    pub fn get(&self, image: usize, anchor: usize, channel: usize, y: usize, x: usize) -> f32 {
        self.data.data()[self.index(image, anchor, channel, y, x)]
    }

    pub fn set(&mut self, image: usize, anchor: usize, channel: usize, y: usize, x: usize, v: f32) {
        let i = self.index(image, anchor, channel, y, x);
        self.data.data_mut()[i] = v;
    }

    /// All nine raw outputs of one anchor cell.
    pub fn outputs(&self, image: usize, anchor: usize, y: usize, x: usize) -> [f64; NUM_OUTPUTS] {
        std::array::from_fn(|c| self.get(image, anchor, c, y, x) as f64)
    }
}

/// Multi-scale raw predictions, one [`StrideGrid`] per stride.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSet {
    pub grids: Vec<StrideGrid>,
}

impl GridSet {
    /// Zero-filled grids with the same shapes as `self`.
    pub fn zeros_like(&self) -> GridSet {
        GridSet {
            grids: self
                .grids
                .iter()
                .map(|g| StrideGrid {
                    stride: g.stride,
                    num_anchors: g.num_anchors,
                    data: Tensor::zeros(g.data.shape()),
                })
                .collect(),
        }
    }

    /// Spatial `(h, w)` of each stride.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.grids.iter().map(|g| (g.height(), g.width())).collect()
    }

    pub fn batch(&self) -> usize {
        self.grids.first().map_or(0, StrideGrid::batch)
    }

    /// Extracts one image of a batched grid set.
    pub fn image(&self, i: usize) -> GridSet {
        GridSet {
            grids: self
                .grids
                .iter()
                .map(|g| {
                    let [_, c, h, w] = g.data.shape();
                    StrideGrid {
                        stride: g.stride,
                        num_anchors: g.num_anchors,
                        data: Tensor::from_vec([1, c, h, w], g.data.image(i).to_vec()),
                    }
                })
                .collect(),
        }
    }
}

/// A decoded box in both grid units and pixels, center format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedBox {
    pub grid: [f64; 4],
    pub pixels: [f64; 4],
}

/// Box offset relative to its emitting cell, in grid units:
/// `(2φ(x)−0.5, 2φ(y)−0.5, (Bw/s)(2φ(w))², (Bh/s)(2φ(h))²)`.
pub fn box_offsets(raw: [f64; 4], anchor: (f64, f64), stride: usize) -> [f64; 4] {
    let s = stride as f64;
    [
        2.0 * sigmoid(raw[0]) - 0.5,
        2.0 * sigmoid(raw[1]) - 0.5,
        anchor.0 / s * (2.0 * sigmoid(raw[2])).powi(2),
        anchor.1 / s * (2.0 * sigmoid(raw[3])).powi(2),
    ]
}

pub fn decode_box(raw: [f64; 4], anchor: (f64, f64), stride: usize, cell: (usize, usize)) -> DecodedBox {
    let o = box_offsets(raw, anchor, stride);
    let grid = [o[0] + cell.0 as f64, o[1] + cell.1 as f64, o[2], o[3]];
    let s = stride as f64;
    DecodedBox {
        grid,
        pixels: grid.map(|v| v * s),
    }
}

/// Normalized pose `φ(raw)` in `(0, 1)³`.
pub fn pose_unit(raw: [f64; 3]) -> [f64; 3] {
    raw.map(sigmoid)
}

/// Rescales normalized pose outputs to degrees: `(p − 0.5)·L`.
pub fn unit_to_pose(unit: [f64; 3]) -> EulerPose {
    EulerPose::from_array(std::array::from_fn(|k| (unit[k] - 0.5) * POSE_RANGE[k]))
}

pub fn decode_pose(raw: [f64; 3]) -> EulerPose {
    unit_to_pose(pose_unit(raw))
}

/// Normalized regression target in `[0, 1]³` for a pose.
pub fn encode_pose(pose: EulerPose) -> Result<[f64; 3]> {
    pose.validate()?;
    let p = pose.as_array();
    let unit: [f64; 3] = std::array::from_fn(|k| p[k] / POSE_RANGE[k] + 0.5);
    if unit.iter().any(|u| !(0.0..=1.0).contains(u)) {
        return Err(Error::OutOfRange(format!("encoded pose {unit:?}")));
    }
    Ok(unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_raw_box_decodes_to_cell_center_and_anchor() {
        let d = decode_box([0.0; 4], (32.0, 32.0), 8, (0, 0));
        assert_eq!(d.grid, [0.5, 0.5, 4.0, 4.0]);
        assert_eq!(d.pixels, [4.0, 4.0, 32.0, 32.0]);
    }

    #[test]
    fn box_width_saturates_at_four_anchors() {
        let d = decode_box([0.0, 0.0, 50.0, -50.0], (32.0, 16.0), 8, (3, 2));
        assert_abs_diff_eq!(d.grid[2], 16.0, epsilon = 1e-12);
        assert!(d.grid[3] > 0.0 && d.grid[3] < 1e-12);
    }

    #[test]
    fn box_matches_scalar_oracle() {
        // φ(0.5) = 0.622459331201855, φ(−0.5) = 0.377540668798145,
        // φ(0.2) = 0.549833997312478, φ(−0.2) = 0.450166002687522.
        let d = decode_box([0.5, -0.5, 0.2, -0.2], (20.0, 40.0), 16, (2, 5));
        let expect = [
            2.0 * 0.622459331201855 - 0.5 + 2.0,
            2.0 * 0.377540668798145 - 0.5 + 5.0,
            20.0 / 16.0 * (2.0f64 * 0.549833997312478).powi(2),
            40.0 / 16.0 * (2.0f64 * 0.450166002687522).powi(2),
        ];
        for k in 0..4 {
            assert_abs_diff_eq!(d.grid[k], expect[k], epsilon = 1e-12);
            assert_abs_diff_eq!(d.pixels[k], 16.0 * expect[k], epsilon = 1e-10);
        }
    }

    #[test]
    fn pose_decode_examples() {
        assert_eq!(decode_pose([0.0; 3]), EulerPose::ZERO);
        let p = decode_pose([0.0, 3f64.ln(), 0.0]);
        assert_abs_diff_eq!(p.yaw, 90.0, epsilon = 1e-12);
        let p = decode_pose([0.0, 1e3, 0.0]);
        assert!(p.yaw <= 180.0);
        assert_abs_diff_eq!(p.yaw, 180.0, epsilon = 1e-9);
    }

    #[test]
    fn pose_encode_examples() {
        assert_eq!(encode_pose(EulerPose::ZERO).unwrap(), [0.5; 3]);
        assert_eq!(encode_pose(EulerPose::new(0.0, 180.0, 0.0)).unwrap()[1], 1.0);
        assert_eq!(encode_pose(EulerPose::new(-45.0, 90.0, 45.0)).unwrap(), [0.25, 0.75, 0.75]);
        assert!(encode_pose(EulerPose::new(0.0, 200.0, 0.0)).is_err());
        assert!(encode_pose(EulerPose::new(95.0, 0.0, 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_are_inverse(p in -89.9f64..89.9, y in -179.9f64..179.9, r in -89.9f64..89.9) {
            let pose = EulerPose::new(p, y, r);
            let raw = encode_pose(pose).unwrap().map(logit);
            let back = decode_pose(raw);
            prop_assert!((back.pitch - p).abs() < 1e-9);
            prop_assert!((back.yaw - y).abs() < 1e-9);
            prop_assert!((back.roll - r).abs() < 1e-9);
        }

        #[test]
        fn decoded_box_stays_within_bounds(raw in prop::array::uniform4(-30f64..30.0), aw in 1f64..200.0, ah in 1f64..200.0) {
            let s = 16;
            let d = decode_box(raw, (aw, ah), s, (4, 7));
            prop_assert!(d.grid[0] >= 4.0 - 0.5 && d.grid[0] <= 4.0 + 1.5);
            prop_assert!(d.grid[1] >= 7.0 - 0.5 && d.grid[1] <= 7.0 + 1.5);
            prop_assert!(d.grid[2] >= 0.0 && d.grid[2] <= 4.0 * aw / s as f64 + 1e-12);
            prop_assert!(d.grid[3] >= 0.0 && d.grid[3] <= 4.0 * ah / s as f64 + 1e-12);
        }
    }
}
