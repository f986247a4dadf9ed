//! Multi-part training loss: CIoU box regression, CIoU-scaled objectness
//! BCE, objectness-gated pose MSE (plain or wrapped), and their weighted
//! total.
//!
//! Every component can also accumulate its gradient with respect to the raw
//! grid outputs. Box gradients go through CIoU with forward-mode dual
//! numbers; the others are closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{
    box_offsets, sigmoid, AnchorConfig, GridSet, TargetGrids, CH_BOX, CH_OBJ, CH_POSE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub stride_weights: Vec<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 0.7,
            gamma: 0.1,
            tau: 0.4,
            stride_weights: vec![4.0, 1.0, 0.4, 0.1],
        }
    }
}

impl LossWeights {
    pub fn validate(&self, num_strides: usize) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if ![self.alpha, self.beta, self.gamma].into_iter().all(finite_nonneg)
            || !self.stride_weights.iter().copied().all(finite_nonneg)
        {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau {} outside (0, 1)", self.tau)));
        }
        if self.stride_weights.len() != num_strides {
            return Err(Error::Config(format!(
                "{} stride weights for {num_strides} strides",
                self.stride_weights.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub box_loss: f64,
    pub obj_loss: f64,
    pub pose_loss: f64,
}

/// Loss value, its parts, and the gradient of `total` w.r.t. raw outputs.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub components: LossComponents,
    pub total: f64,
    pub grad: GridSet,
}

mod dual {
    use std::ops::{Add, Div, Mul, Neg, Sub};

    /// Forward-mode dual number with four tangent directions.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Dual {
        pub v: f64,
        pub d: [f64; 4],
    }

    pub trait Scalar:
        Copy
        + Add<Output = Self>
        + Sub<Output = Self>
        + Mul<Output = Self>
        + Div<Output = Self>
        + Neg<Output = Self>
    {
        fn cst(v: f64) -> Self;
        fn val(self) -> f64;
        fn atan(self) -> Self;
        fn max(self, o: Self) -> Self {
            if self.val() >= o.val() {
                self
            } else {
                o
            }
        }
        fn min(self, o: Self) -> Self {
            if self.val() <= o.val() {
                self
            } else {
                o
            }
        }
    }

    impl Scalar for f64 {
        fn cst(v: f64) -> Self {
            v
        }
        fn val(self) -> f64 {
            self
        }
        fn atan(self) -> Self {
            f64::atan(self)
        }
    }

    impl Dual {
        pub fn var(v: f64, i: usize) -> Self {
            let mut d = [0.0; 4];
            d[i] = 1.0;
            Self { v, d }
        }

        fn map(self, v: f64, dv: f64) -> Self {
            Self {
                v,
                d: self.d.map(|x| x * dv),
            }
        }
    }

    impl Add for Dual {
        type Output = Dual;
        fn add(self, o: Dual) -> Dual {
            Dual {
                v: self.v + o.v,
                d: std::array::from_fn(|i| self.d[i] + o.d[i]),
            }
        }
    }

    impl Sub for Dual {
        type Output = Dual;
        fn sub(self, o: Dual) -> Dual {
            Dual {
                v: self.v - o.v,
                d: std::array::from_fn(|i| self.d[i] - o.d[i]),
            }
        }
    }

    impl Mul for Dual {
        type Output = Dual;
        fn mul(self, o: Dual) -> Dual {
            Dual {
                v: self.v * o.v,
                d: std::array::from_fn(|i| self.d[i] * o.v + self.v * o.d[i]),
            }
        }
    }

    impl Div for Dual {
        type Output = Dual;
        fn div(self, o: Dual) -> Dual {
            let inv = 1.0 / o.v;
            Dual {
                v: self.v * inv,
                d: std::array::from_fn(|i| (self.d[i] - self.v * inv * o.d[i]) * inv),
            }
        }
    }

    impl Neg for Dual {
        type Output = Dual;
        fn neg(self) -> Dual {
            Dual {
                v: -self.v,
                d: self.d.map(|x| -x),
            }
        }
    }

    impl Scalar for Dual {
        fn cst(v: f64) -> Self {
            Dual { v, d: [0.0; 4] }
        }
        fn val(self) -> f64 {
            self.v
        }
        fn atan(self) -> Self {
            self.map(self.v.atan(), 1.0 / (1.0 + self.v * self.v))
        }
    }
}

use dual::{Dual, Scalar};

/// CIoU of two center-format boxes: IoU minus the normalized center distance
/// and the aspect-ratio consistency term.
fn ciou_generic<T: Scalar>(a: [T; 4], b: [T; 4]) -> T {
    let half = T::cst(0.5);
    let zero = T::cst(0.0);
    let (ax1, ax2) = (a[0] - a[2] * half, a[0] + a[2] * half);
    let (ay1, ay2) = (a[1] - a[3] * half, a[1] + a[3] * half);
    let (bx1, bx2) = (b[0] - b[2] * half, b[0] + b[2] * half);
    let (by1, by2) = (b[1] - b[3] * half, b[1] + b[3] * half);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(zero);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(zero);
    let inter = iw * ih;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    let iou = inter / union;
    let cw = ax2.max(bx2) - ax1.min(bx1);
    let ch = ay2.max(by2) - ay1.min(by1);
    let c2 = cw * cw + ch * ch;
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let rho2 = dx * dx + dy * dy;
    let k = T::cst(4.0 / (std::f64::consts::PI * std::f64::consts::PI));
    let da = b[2].div(b[3]).atan() - a[2].div(a[3]).atan();
    let v = k * da * da;
    // α·v with α = v / (1 − IoU + v); vanishes together with v.
    let denom = v - iou + T::cst(1.0);
    let aspect = if denom.val() > 0.0 { v * v / denom } else { zero };
    iou - rho2 / c2 - aspect
}

/// Complete IoU of two center-format boxes `(cx, cy, w, h)`, in `(-1, 1]`.
pub fn ciou(a: [f64; 4], b: [f64; 4]) -> Result<f64> {
    for bx in [a, b] {
        if !(bx[2] > 0.0 && bx[3] > 0.0) || bx.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("degenerate box {bx:?}")));
        }
    }
    Ok(ciou_generic(a, b))
}

/// CIoU between the decoded prediction of a positive and its target, with
/// the gradient w.r.t. the four raw box outputs.
fn positive_ciou(raw: [f64; 4], anchor: (f64, f64), stride: usize, target: [f64; 4]) -> (f64, [f64; 4]) {
    let s = stride as f64;
    let sig: [f64; 4] = raw.map(sigmoid);
    let x: [Dual; 4] = std::array::from_fn(|i| Dual::var(sig[i], i));
    let two = Dual::cst(2.0);
    let pred = [
        two * x[0] - Dual::cst(0.5),
        two * x[1] - Dual::cst(0.5),
        Dual::cst(anchor.0 / s) * (two * x[2]) * (two * x[2]),
        Dual::cst(anchor.1 / s) * (two * x[3]) * (two * x[3]),
    ];
    debug_assert!({
        let o = box_offsets(raw, anchor, stride);
        (0..4).all(|i| (o[i] - pred[i].v).abs() < 1e-9)
    });
    let c = ciou_generic(pred, target.map(Dual::cst));
    // Chain through the sigmoid.
    let grad = std::array::from_fn(|i| c.d[i] * sig[i] * (1.0 - sig[i]));
    (c.v, grad)
}

/// `(value, scale)` gradient sink: gradients are multiplied by `scale`.
type GradSink<'a> = Option<(&'a mut GridSet, f64)>;

fn add_grad(sink: &mut GradSink<'_>, stride_idx: usize, image: usize, anchor: usize, ch: usize, y: usize, x: usize, g: f64) {
    if let Some((grid, scale)) = sink {
        let sg = &mut grid.grids[stride_idx];
        let i = sg.index(image, anchor, ch, y, x);
        sg.data.data_mut()[i] += (g * *scale) as f32;
    }
}

fn check_shapes(pred: &GridSet, targets: &TargetGrids) -> Result<()> {
    if pred.grids.len() != targets.strides.len()
        || pred
            .grids
            .iter()
            .zip(&targets.strides)
            .any(|(g, t)| g.height() != t.height || g.width() != t.width || g.stride != t.stride)
    {
        return Err(Error::Shape("prediction and target grids disagree".into()));
    }
    Ok(())
}

fn box_term(pred: &GridSet, targets: &TargetGrids, anchors: &AnchorConfig, mut sink: GradSink<'_>) -> f64 {
    let mut total = 0.0;
    for (si, (g, t)) in pred.grids.iter().zip(&targets.strides).enumerate() {
        if t.positives.is_empty() {
            continue;
        }
        let n = t.positives.len() as f64;
        let mut sum = 0.0;
        for p in &t.positives {
            let o = g.outputs(p.image, p.anchor, p.cell_y, p.cell_x);
            let raw = [o[CH_BOX], o[CH_BOX + 1], o[CH_BOX + 2], o[CH_BOX + 3]];
            let (c, dc) = positive_ciou(raw, anchors.anchors[si][p.anchor], g.stride, p.box_target);
            sum += 1.0 - c;
            for k in 0..4 {
                add_grad(&mut sink, si, p.image, p.anchor, CH_BOX + k, p.cell_y, p.cell_x, -dc[k] / n);
            }
        }
        total += sum / n;
    }
    total
}

/// Objectness targets per stride: zero except at positives, where the
/// detached CIoU clamped to `[0, 1]` is used (largest wins on collisions).
fn objectness_targets(pred: &GridSet, targets: &TargetGrids, anchors: &AnchorConfig) -> Vec<Vec<f64>> {
    pred.grids
        .iter()
        .zip(&targets.strides)
        .enumerate()
        .map(|(si, (g, t))| {
            let mut tobj = vec![0.0; g.data.n() * g.num_anchors * g.cells()];
            for p in &t.positives {
                let o = g.outputs(p.image, p.anchor, p.cell_y, p.cell_x);
                let raw = [o[CH_BOX], o[CH_BOX + 1], o[CH_BOX + 2], o[CH_BOX + 3]];
                let pb = box_offsets(raw, anchors.anchors[si][p.anchor], g.stride);
                let c = ciou_generic(pb, p.box_target).clamp(0.0, 1.0);
                let idx = ((p.image * g.num_anchors + p.anchor) * g.height() + p.cell_y) * g.width() + p.cell_x;
                tobj[idx] = tobj[idx].max(c);
            }
            tobj
        })
        .collect()
}

/// Numerically stable BCE on a logit.
fn bce_logit(x: f64, t: f64) -> f64 {
    x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
}

fn obj_term_with_targets(pred: &GridSet, tobj: &[Vec<f64>], weights: &[f64], mut sink: GradSink<'_>) -> f64 {
    let mut total = 0.0;
    for (si, (g, tg)) in pred.grids.iter().zip(tobj).enumerate() {
        let (h, w) = (g.height(), g.width());
        let count = tg.len() as f64;
        if count == 0.0 {
            continue;
        }
        let ws = weights[si];
        let mut sum = 0.0;
        for img in 0..g.data.n() {
            for a in 0..g.num_anchors {
                for y in 0..h {
                    for x in 0..w {
                        let t = tg[((img * g.num_anchors + a) * h + y) * w + x];
                        let logit = g.get(img, a, CH_OBJ, y, x) as f64;
                        sum += bce_logit(logit, t);
                        add_grad(&mut sink, si, img, a, CH_OBJ, y, x, ws * (sigmoid(logit) - t) / count);
                    }
                }
            }
        }
        total += ws * sum / count;
    }
    total
}

fn pose_term(pred: &GridSet, targets: &TargetGrids, tau: f64, wrapped: bool, mut sink: GradSink<'_>) -> f64 {
    let mut total = 0.0;
    for (si, (g, t)) in pred.grids.iter().zip(&targets.strides).enumerate() {
        if t.positives.is_empty() {
            continue;
        }
        let n = t.positives.len() as f64;
        let mut sum = 0.0;
        for p in &t.positives {
            let o = g.outputs(p.image, p.anchor, p.cell_y, p.cell_x);
            if !(sigmoid(o[CH_OBJ]) > tau) {
                continue;
            }
            for k in 0..3 {
                let s = sigmoid(o[CH_POSE + k]);
                let d = s - p.pose_target[k];
                // Only the circular yaw channel wraps.
                let (e, de) = if wrapped && k == 1 && d.abs() > 0.5 {
                    (1.0 - d.abs(), -d.signum())
                } else {
                    (d, 1.0)
                };
                sum += e * e;
                add_grad(&mut sink, si, p.image, p.anchor, CH_POSE + k, p.cell_y, p.cell_x, 2.0 * e * de * s * (1.0 - s) / n);
            }
        }
        total += sum / n;
    }
    total
}

/// Σ over strides of the mean `1 − CIoU` across positives.
pub fn box_loss(pred: &GridSet, targets: &TargetGrids, anchors: &AnchorConfig) -> Result<f64> {
    check_shapes(pred, targets)?;
    Ok(box_term(pred, targets, anchors, None))
}

/// Σ over strides of `w_s` times the mean BCE over all cells.
pub fn obj_loss(pred: &GridSet, targets: &TargetGrids, anchors: &AnchorConfig, weights: &LossWeights) -> Result<f64> {
    check_shapes(pred, targets)?;
    let tobj = objectness_targets(pred, targets, anchors);
    Ok(obj_term_with_targets(pred, &tobj, &weights.stride_weights, None))
}

/// Σ over strides of the squared pose error of positives whose objectness
/// exceeds `tau`, divided by the stride's positive count.
pub fn pose_loss(pred: &GridSet, targets: &TargetGrids, tau: f64) -> Result<f64> {
    check_shapes(pred, targets)?;
    Ok(pose_term(pred, targets, tau, false, None))
}

/// As [`pose_loss`], with the yaw error replaced by `min(|d|, 1 − |d|)`.
pub fn pose_wrapped_loss(pred: &GridSet, targets: &TargetGrids, tau: f64) -> Result<f64> {
    check_shapes(pred, targets)?;
    Ok(pose_term(pred, targets, tau, true, None))
}

/// `N_bs · (α·L_box + β·L_obj + γ·L_pose)`.
pub fn total_loss(c: &LossComponents, weights: &LossWeights, batch_size: usize) -> Result<f64> {
    for (name, v) in [("box", c.box_loss), ("objectness", c.obj_loss), ("pose", c.pose_loss)] {
        if !v.is_finite() {
            return Err(Error::Divergence {
                epoch: 0,
                message: format!("{name} loss is {v}"),
            });
        }
    }
    Ok(batch_size as f64 * (weights.alpha * c.box_loss + weights.beta * c.obj_loss + weights.gamma * c.pose_loss))
}

/// All components, the total, and the gradient of the total.
pub fn compute_loss(
    pred: &GridSet,
    targets: &TargetGrids,
    anchors: &AnchorConfig,
    weights: &LossWeights,
    wrapped: bool,
) -> Result<LossOutput> {
    check_shapes(pred, targets)?;
    let nbs = pred.batch() as f64;
    let mut grad = pred.zeros_like();
    let box_loss = box_term(pred, targets, anchors, Some((&mut grad, nbs * weights.alpha)));
    let tobj = objectness_targets(pred, targets, anchors);
    let obj_loss = obj_term_with_targets(pred, &tobj, &weights.stride_weights, Some((&mut grad, nbs * weights.beta)));
    let pose_loss = pose_term(pred, targets, weights.tau, wrapped, Some((&mut grad, nbs * weights.gamma)));
    let components = LossComponents {
        box_loss,
        obj_loss,
        pose_loss,
    };
    let total = total_loss(&components, weights, pred.batch())?;
    Ok(LossOutput {
        components,
        total,
        grad,
    })
}
