use serde::{Deserialize, Serialize};

use super::STRIDES;
use crate::error::{Error, Result};

/// Anchor box sizes in pixels, `num_anchors` per stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub strides: Vec<usize>,
    pub anchors: Vec<Vec<(f64, f64)>>,
}

/// Four-level detector anchors tuned for 1280-pixel inputs.
const BASE_ANCHORS_1280: [[(f64, f64); 3]; 4] = [
    [(19.0, 27.0), (44.0, 40.0), (38.0, 94.0)],
    [(96.0, 68.0), (86.0, 152.0), (180.0, 137.0)],
    [(140.0, 301.0), (303.0, 264.0), (238.0, 542.0)],
    [(436.0, 615.0), (739.0, 380.0), (925.0, 792.0)],
];

impl AnchorConfig {
    /// Fallback anchors: the 1280-pixel defaults scaled to `input_size`.
    pub fn default_for(input_size: usize) -> Self {
        let k = input_size as f64 / 1280.0;
        let mut anchors: Vec<Vec<(f64, f64)>> = BASE_ANCHORS_1280
            .iter()
            .map(|level| level.iter().map(|&(w, h)| (w * k, h * k)).collect())
            .collect();
        for level in &mut anchors {
            level.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
        }
        Self {
            strides: STRIDES.to_vec(),
            anchors,
        }
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strides.len() != self.anchors.len() || self.anchors.is_empty() {
            return Err(Error::Config(format!(
                "{} strides but {} anchor levels",
                self.strides.len(),
                self.anchors.len()
            )));
        }
        let ca = self.num_anchors();
        for (level, s) in self.anchors.iter().zip(&self.strides) {
            if level.len() != ca || ca == 0 {
                return Err(Error::Config(format!(
                    "stride {s} has {} anchors, expected {ca}",
                    level.len()
                )));
            }
            if level.iter().any(|&(w, h)| !(w > 0.0 && h > 0.0)) {
                return Err(Error::Config(format!("stride {s} has a non-positive anchor")));
            }
            if level.windows(2).any(|p| p[0].0 * p[0].1 > p[1].0 * p[1].1) {
                return Err(Error::Config(format!(
                    "stride {s} anchors not sorted by ascending area"
                )));
            }
        }
        Ok(())
    }

    /// K-means anchors over `(w, h)` box sizes in pixels, sorted by area and
    /// dealt out `num_anchors` per stride from the finest level up. Falls
    /// back to [`AnchorConfig::default_for`] (three per stride) when there
    /// are fewer distinct boxes than anchors.
    pub fn fit(boxes: &[(f64, f64)], num_anchors: usize, input_size: usize) -> Self {
        let k = num_anchors * STRIDES.len();
        let mut distinct: Vec<(f64, f64)> = boxes
            .iter()
            .copied()
            .filter(|&(w, h)| w > 0.0 && h > 0.0)
            .collect();
        distinct.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        distinct.dedup();
        if num_anchors == 0 || distinct.len() < k {
            return Self::default_for(input_size);
        }
        let centers = kmeans_wh(boxes, k);
        let anchors = centers
            .chunks(num_anchors)
            .map(|c| c.to_vec())
            .collect::<Vec<_>>();
        Self {
            strides: STRIDES.to_vec(),
            anchors,
        }
    }
}

/// Lloyd's k-means on box sizes with `1 − IoU` distance (boxes aligned at a
/// common corner), initialized at area quantiles. Output sorted by area.
fn kmeans_wh(boxes: &[(f64, f64)], k: usize) -> Vec<(f64, f64)> {
    let mut sorted: Vec<(f64, f64)> = boxes.to_vec();
    sorted.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
    let n = sorted.len();
    let mut centers: Vec<(f64, f64)> = (0..k)
        .map(|i| sorted[((2 * i + 1) * n / (2 * k)).min(n - 1)])
        .collect();
    let iou = |a: (f64, f64), b: (f64, f64)| {
        let inter = a.0.min(b.0) * a.1.min(b.1);
        inter / (a.0 * a.1 + b.0 * b.1 - inter)
    };
    for _ in 0..100 {
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for &b in &sorted {
            let best = (0..k)
                .max_by(|&i, &j| iou(b, centers[i]).total_cmp(&iou(b, centers[j])))
                .unwrap_or(0);
            sums[best].0 += b.0;
            sums[best].1 += b.1;
            sums[best].2 += 1;
        }
        let next: Vec<(f64, f64)> = sums
            .iter()
            .zip(&centers)
            .map(|(&(sw, sh, c), &old)| if c == 0 { old } else { (sw / c as f64, sh / c as f64) })
            .collect();
        let moved = next
            .iter()
            .zip(&centers)
            .map(|(a, b)| (a.0 - b.0).abs() + (a.1 - b.1).abs())
            .fold(0.0, f64::max);
        centers = next;
        if moved < 1e-9 {
            break;
        }
    }
    centers.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
    centers
}
