//! Small CSP-style convolutional pyramid with four prediction heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv2d, ConvBnAct, CspBlock, Module, Param};
use super::tensor::Tensor;
use super::{GridSet, StrideGrid, NUM_OUTPUTS, STRIDES};
use crate::error::{Error, Result};

/// Width and depth of the backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Output channels of the stem and the five downsampling stages.
    pub widths: [usize; 6],
    /// Bottlenecks per CSP block.
    pub depth: usize,
    /// Channels of the top-down feature pyramid feeding the heads.
    pub neck_width: usize,
    pub num_anchors: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            widths: [8, 16, 48, 96, 160, 192],
            depth: 1,
            neck_width: 64,
            num_anchors: 3,
        }
    }
}

struct Stage {
    down: ConvBnAct,
    csp: Option<CspBlock>,
}

impl Stage {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let y = self.down.forward(x, train);
        match &mut self.csp {
            Some(c) => c.forward(&y, train),
            None => y,
        }
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d = match &mut self.csp {
            Some(c) => c.backward(dy),
            None => dy.clone(),
        };
        self.down.backward(&d)
    }
}

/// One pyramid level: a pointwise lateral projection of the backbone
/// feature, summed with the upsampled coarser level, then a 3×3 smoothing
/// convolution.
struct PyramidLevel {
    lateral: ConvBnAct,
    smooth: ConvBnAct,
}

/// The detection network. Backbone features at strides 8, 16, 32 and 64
/// pass through a top-down pyramid so every level sees whole-head context;
/// each level gets a pointwise head emitting `num_anchors × 9` raw channels.
pub struct Network {
    config: ModelConfig,
    stem: ConvBnAct,
    stages: Vec<Stage>,
    neck: Vec<PyramidLevel>,
    heads: Vec<Conv2d>,
}

impl Network {
    pub fn new(config: &ModelConfig, input_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.widths;
        let stem = ConvBnAct::new(3, w[0], 3, 2, &mut rng);
        let stages: Vec<Stage> = (1..6)
            .map(|i| Stage {
                down: ConvBnAct::new(w[i - 1], w[i], 3, 2, &mut rng),
                csp: (i < 5).then(|| CspBlock::new(w[i], w[i], config.depth, &mut rng)),
            })
            .collect();
        let c = config.neck_width;
        let neck = (2..6)
            .map(|i| PyramidLevel {
                lateral: ConvBnAct::new(w[i], c, 1, 1, &mut rng),
                smooth: ConvBnAct::new(c, c, 3, 1, &mut rng),
            })
            .collect();
        let mut heads: Vec<Conv2d> = (0..4)
            .map(|_| Conv2d::new(c, config.num_anchors * NUM_OUTPUTS, 1, 1, true, &mut rng))
            .collect();
        for (head, &s) in heads.iter_mut().zip(STRIDES.iter()) {
            init_head_bias(head, config.num_anchors, s, input_size);
        }
        Self {
            config: config.clone(),
            stem,
            stages,
            neck,
            heads,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn forward(&mut self, images: &Tensor, train: bool) -> Result<GridSet> {
        let (h, w) = (images.h(), images.w());
        if images.c() != 3 || h % 64 != 0 || w % 64 != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "network input must be N×3×H×W with H, W multiples of 64, got {:?}",
                images.shape()
            )));
        }
        let mut x = self.stem.forward(images, train);
        let mut features = Vec::with_capacity(4);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            x = stage.forward(&x, train);
            if i >= 1 {
                features.push(x.clone());
            }
        }
        // Top-down: the coarsest level first.
        let mut pyramid: Vec<Tensor> = Vec::with_capacity(4);
        let mut coarser: Option<Tensor> = None;
        for (f, level) in features.iter().zip(self.neck.iter_mut()).rev() {
            let mut m = level.lateral.forward(f, train);
            if let Some(up) = &coarser {
                m.add_assign(&up.upsample2x());
            }
            pyramid.push(level.smooth.forward(&m, train));
            coarser = Some(m);
        }
        pyramid.reverse();
        let grids = pyramid
            .iter()
            .zip(self.heads.iter_mut())
            .zip(STRIDES.iter())
            .map(|((f, head), &stride)| StrideGrid {
                stride,
                num_anchors: self.config.num_anchors,
                data: head.forward(f, train),
            })
            .collect();
        Ok(GridSet { grids })
    }

    /// Back-propagates gradients with respect to the raw grid outputs of the
    /// last training-mode forward call.
    pub fn backward(&mut self, grad: &GridSet) {
        let dpyr: Vec<Tensor> = grad
            .grids
            .iter()
            .zip(self.heads.iter_mut())
            .map(|(g, head)| head.backward(&g.data))
            .collect();
        // Finest level first; each level's merged map also fed the next finer one.
        let mut dfeat: Vec<Option<Tensor>> = Vec::with_capacity(4);
        let mut finer: Option<Tensor> = None;
        for (dp, level) in dpyr.iter().zip(self.neck.iter_mut()) {
            let mut dm = level.smooth.backward(dp);
            if let Some(d) = &finer {
                dm.add_assign(&d.sum_pool2x());
            }
            dfeat.push(Some(level.lateral.backward(&dm)));
            finer = Some(dm);
        }
        // Stage i feeds head i - 1 for i >= 1.
        let mut upstream: Option<Tensor> = None;
        for i in (0..self.stages.len()).rev() {
            let local = if i >= 1 { dfeat[i - 1].take() } else { None };
            let dy = match (local, upstream.take()) {
                (Some(mut a), Some(b)) => {
                    a.add_assign(&b);
                    a
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => unreachable!("last stage always feeds a head"),
            };
            upstream = Some(self.stages[i].backward(&dy));
        }
        if let Some(d) = upstream {
            self.stem.backward(&d);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        self.collect_params(&mut out);
        out
    }

    pub fn num_trainable(&mut self) -> usize {
        self.params_mut()
            .iter()
            .filter(|p| p.kind != super::layers::ParamKind::Buffer)
            .map(|p| p.value.len())
            .sum()
    }
}

impl Module for Network {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.stem.collect_params(out);
        for s in &mut self.stages {
            s.down.collect_params(out);
            if let Some(c) = &mut s.csp {
                c.collect_params(out);
            }
        }
        for level in &mut self.neck {
            level.lateral.collect_params(out);
            level.smooth.collect_params(out);
        }
        for h in &mut self.heads {
            h.collect_params(out);
        }
    }
}

/// Objectness starts near the expected positive rate, the class score near
/// certainty (it receives no loss), and pose outputs at the neutral 0.5.
fn init_head_bias(head: &mut Conv2d, num_anchors: usize, stride: usize, input_size: usize) {
    let Some(bias) = head.bias.as_mut() else {
        return;
    };
    let cells = (input_size as f32 / stride as f32).powi(2);
    for a in 0..num_anchors {
        let base = a * NUM_OUTPUTS;
        bias.value[base] = (8.0 / cells).ln();
        bias.value[base + 5] = (0.995f32 / 0.005).ln();
        for k in 6..9 {
            bias.value[base + k] = 0.0;
        }
    }
}
