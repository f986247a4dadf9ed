//! Convolutional building blocks with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during a training-mode
//! forward call. `backward` consumes that cache, accumulates parameter
//! gradients and returns the gradient with respect to the layer input.

use matrixmultiply::sgemm;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution kernels; subject to weight decay.
    Weight,
    /// Biases and normalization affine parameters; no decay.
    Bias,
    /// Running statistics; not optimized.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub kind: ParamKind,
}

impl Param {
    fn new(value: Vec<f32>, kind: ParamKind) -> Self {
        let grad = if kind == ParamKind::Buffer {
            Vec::new()
        } else {
            vec![0.0; value.len()]
        };
        Self { value, grad, kind }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything owning parameters. Collection order is stable and defines the
/// checkpoint layout.
pub trait Module {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param>);
}

pub struct Conv2d {
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng>(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_c * k * k) as f32;
        // Kaiming-uniform bound, matching the usual framework default.
        let bound = 1.0 / fan_in.sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = (0..out_c * in_c * k * k).map(|_| dist.sample(rng)).collect();
        let bias = with_bias.then(|| {
            Param::new(
                (0..out_c).map(|_| dist.sample(rng)).collect(),
                ParamKind::Bias,
            )
        });
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad: k / 2,
            weight: Param::new(weight, ParamKind::Weight),
            bias,
            input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_c
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.c(), self.in_c, "conv input channel mismatch");
        let (oh, ow) = self.out_hw(x.h(), x.w());
        let hw = oh * ow;
        let kk = self.in_c * self.k * self.k;
        let mut out = Tensor::zeros([x.n(), self.out_c, oh, ow]);
        let mut col = if self.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; kk * hw]
        };
        for i in 0..x.n() {
            let src: &[f32] = if self.is_pointwise() {
                x.image(i)
            } else {
                im2col(x.image(i), self.geometry(x.h(), x.w()), &mut col);
                &col
            };
            let dst = out.image_mut(i);
            unsafe {
                sgemm(
                    self.out_c,
                    kk,
                    hw,
                    1.0,
                    self.weight.value.as_ptr(),
                    kk as isize,
                    1,
                    src.as_ptr(),
                    hw as isize,
                    1,
                    0.0,
                    dst.as_mut_ptr(),
                    hw as isize,
                    1,
                );
            }
            if let Some(b) = &self.bias {
                for (o, plane) in dst.chunks_exact_mut(hw).enumerate() {
                    let bo = b.value[o];
                    plane.iter_mut().for_each(|v| *v += bo);
                }
            }
        }
        if train {
            self.input = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self
            .input
            .take()
            .expect("conv backward called without a training forward");
        let geom = self.geometry(x.h(), x.w());
        let (oh, ow) = self.out_hw(x.h(), x.w());
        let hw = oh * ow;
        let kk = self.in_c * self.k * self.k;
        assert_eq!(dy.shape(), [x.n(), self.out_c, oh, ow]);
        let mut dx = Tensor::zeros(x.shape());
        let pointwise = self.is_pointwise();
        let mut col = if pointwise { Vec::new() } else { vec![0.0; kk * hw] };
        let mut dcol = if pointwise { Vec::new() } else { vec![0.0; kk * hw] };
        for i in 0..x.n() {
            let dyi = dy.image(i);
            let src: &[f32] = if pointwise {
                x.image(i)
            } else {
                im2col(x.image(i), geom, &mut col);
                &col
            };
            unsafe {
                // dW += dY · colᵀ
                sgemm(
                    self.out_c,
                    hw,
                    kk,
                    1.0,
                    dyi.as_ptr(),
                    hw as isize,
                    1,
                    src.as_ptr(),
                    1,
                    hw as isize,
                    1.0,
                    self.weight.grad.as_mut_ptr(),
                    kk as isize,
                    1,
                );
            }
            if let Some(b) = &mut self.bias {
                for (o, plane) in dyi.chunks_exact(hw).enumerate() {
                    b.grad[o] += plane.iter().sum::<f32>();
                }
            }
            let dst: &mut [f32] = if pointwise { dx.image_mut(i) } else { &mut dcol };
            unsafe {
                // dcol = Wᵀ · dY
                sgemm(
                    kk,
                    self.out_c,
                    hw,
                    1.0,
                    self.weight.value.as_ptr(),
                    1,
                    kk as isize,
                    dyi.as_ptr(),
                    hw as isize,
                    1,
                    0.0,
                    dst.as_mut_ptr(),
                    hw as isize,
                    1,
                );
            }
            if !pointwise {
                col2im(&dcol, geom, dx.image_mut(i));
            }
        }
        dx
    }

    fn geometry(&self, h: usize, w: usize) -> ConvGeometry {
        let (oh, ow) = self.out_hw(h, w);
        ConvGeometry {
            c: self.in_c,
            h,
            w,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
            oh,
            ow,
        }
    }
}

impl Module for Conv2d {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.weight);
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn im2col(src: &[f32], g: ConvGeometry, col: &mut [f32]) {
    let hw = g.oh * g.ow;
    for c in 0..g.c {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let srow = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], g: ConvGeometry, dst: &mut [f32]) {
    let hw = g.oh * g.ow;
    dst.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..g.c {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub struct BatchNorm2d {
    c: usize,
    momentum: f32,
    eps: f32,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl BatchNorm2d {
    pub fn new(c: usize) -> Self {
        Self {
            c,
            momentum: 0.03,
            eps: 1e-3,
            gamma: Param::new(vec![1.0; c], ParamKind::Bias),
            beta: Param::new(vec![0.0; c], ParamKind::Bias),
            running_mean: Param::new(vec![0.0; c], ParamKind::Buffer),
            running_var: Param::new(vec![1.0; c], ParamKind::Buffer),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.c(), self.c);
        let plane = x.plane_len();
        let mut y = x.clone();
        if !train {
            for i in 0..x.n() {
                for (c, p) in y.image_mut(i).chunks_exact_mut(plane).enumerate() {
                    let inv = 1.0 / (self.running_var.value[c] + self.eps).sqrt();
                    let scale = self.gamma.value[c] * inv;
                    let shift = self.beta.value[c] - self.running_mean.value[c] * scale;
                    p.iter_mut().for_each(|v| *v = *v * scale + shift);
                }
            }
            return y;
        }
        let count = (x.n() * plane) as f64;
        let mut mean = vec![0f64; self.c];
        let mut var = vec![0f64; self.c];
        for i in 0..x.n() {
            for (c, p) in x.image(i).chunks_exact(plane).enumerate() {
                mean[c] += p.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for i in 0..x.n() {
            for (c, p) in x.image(i).chunks_exact(plane).enumerate() {
                let m = mean[c];
                var[c] += p.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv_std: Vec<f32> = var
            .iter()
            .map(|&v| (1.0 / (v + self.eps as f64).sqrt()) as f32)
            .collect();
        let mut xhat = x.clone();
        for i in 0..x.n() {
            let yi = y.image_mut(i);
            let xi = xhat.image_mut(i);
            for c in 0..self.c {
                let (m, s) = (mean[c] as f32, inv_std[c]);
                let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                let xs = &mut xi[c * plane..(c + 1) * plane];
                let ys = &mut yi[c * plane..(c + 1) * plane];
                for (xv, yv) in xs.iter_mut().zip(ys.iter_mut()) {
                    *xv = (*xv - m) * s;
                    *yv = g * *xv + b;
                }
            }
        }
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        for c in 0..self.c {
            let mo = self.momentum;
            self.running_mean.value[c] = (1.0 - mo) * self.running_mean.value[c] + mo * mean[c] as f32;
            self.running_var.value[c] =
                (1.0 - mo) * self.running_var.value[c] + mo * (var[c] * unbias) as f32;
        }
        self.cache = Some((xhat, inv_std));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, inv_std) = self
            .cache
            .take()
            .expect("batchnorm backward called without a training forward");
        let plane = dy.plane_len();
        let m = (dy.n() * plane) as f32;
        let mut sum_dy = vec![0f32; self.c];
        let mut sum_dy_xhat = vec![0f32; self.c];
        for i in 0..dy.n() {
            let (d, xh) = (dy.image(i), xhat.image(i));
            for c in 0..self.c {
                let r = c * plane..(c + 1) * plane;
                sum_dy[c] += d[r.clone()].iter().sum::<f32>();
                sum_dy_xhat[c] += d[r.clone()]
                    .iter()
                    .zip(&xh[r])
                    .map(|(a, b)| a * b)
                    .sum::<f32>();
            }
        }
        for c in 0..self.c {
            self.gamma.grad[c] += sum_dy_xhat[c];
            self.beta.grad[c] += sum_dy[c];
        }
        let mut dx = dy.clone();
        for i in 0..dy.n() {
            let xh = xhat.image(i);
            let di = dx.image_mut(i);
            for c in 0..self.c {
                let k = self.gamma.value[c] * inv_std[c] / m;
                let (sd, sdx) = (sum_dy[c], sum_dy_xhat[c]);
                let r = c * plane..(c + 1) * plane;
                for (d, x) in di[r.clone()].iter_mut().zip(&xh[r]) {
                    *d = k * (m * *d - sd - x * sdx);
                }
            }
        }
        dx
    }
}

impl Module for BatchNorm2d {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
        out.push(&mut self.running_mean);
        out.push(&mut self.running_var);
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU activation, `x·σ(x)`.
#[derive(Default)]
pub struct Silu {
    input: Option<Tensor>,
}

impl Silu {
    pub fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v *= sigmoid(*v));
        if train {
            self.input = Some(x);
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self
            .input
            .take()
            .expect("silu backward called without a training forward");
        let mut dx = dy.clone();
        for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
            let s = sigmoid(xv);
            *d *= s * (1.0 + xv * (1.0 - s));
        }
        dx
    }
}

/// Convolution, batch normalization and SiLU.
pub struct ConvBnAct {
    conv: Conv2d,
    bn: BatchNorm2d,
    act: Silu,
}

impl ConvBnAct {
    pub fn new<R: Rng>(in_c: usize, out_c: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(in_c, out_c, k, stride, false, rng),
            bn: BatchNorm2d::new(out_c),
            act: Silu::default(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let y = self.conv.forward(x, train);
        let y = self.bn.forward(&y, train);
        self.act.forward(y, train)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d = self.act.backward(dy);
        let d = self.bn.backward(&d);
        self.conv.backward(&d)
    }
}

impl Module for ConvBnAct {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.conv.collect_params(out);
        self.bn.collect_params(out);
    }
}

/// Residual bottleneck: `x + conv3x3(conv1x1(x))`.
pub struct Bottleneck {
    cv1: ConvBnAct,
    cv2: ConvBnAct,
}

impl Bottleneck {
    pub fn new<R: Rng>(c: usize, rng: &mut R) -> Self {
        Self {
            cv1: ConvBnAct::new(c, c, 1, 1, rng),
            cv2: ConvBnAct::new(c, c, 3, 1, rng),
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut y = self.cv2.forward(&self.cv1.forward(x, train), train);
        y.add_assign(x);
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx = self.cv1.backward(&self.cv2.backward(dy));
        dx.add_assign(dy);
        dx
    }
}

impl Module for Bottleneck {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.cv1.collect_params(out);
        self.cv2.collect_params(out);
    }
}

/// Cross-stage partial block: one branch runs the bottleneck stack, the
/// other is a plain projection, and a pointwise convolution fuses both.
pub struct CspBlock {
    hidden: usize,
    cv1: ConvBnAct,
    cv2: ConvBnAct,
    cv3: ConvBnAct,
    blocks: Vec<Bottleneck>,
}

impl CspBlock {
    pub fn new<R: Rng>(in_c: usize, out_c: usize, depth: usize, rng: &mut R) -> Self {
        let hidden = (out_c / 2).max(1);
        Self {
            hidden,
            cv1: ConvBnAct::new(in_c, hidden, 1, 1, rng),
            cv2: ConvBnAct::new(in_c, hidden, 1, 1, rng),
            cv3: ConvBnAct::new(2 * hidden, out_c, 1, 1, rng),
            blocks: (0..depth).map(|_| Bottleneck::new(hidden, rng)).collect(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut a = self.cv1.forward(x, train);
        for b in &mut self.blocks {
            a = b.forward(&a, train);
        }
        let b = self.cv2.forward(x, train);
        self.cv3.forward(&Tensor::concat_channels(&a, &b), train)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let dcat = self.cv3.backward(dy);
        let (mut da, db) = dcat.split_channels(self.hidden);
        for b in self.blocks.iter_mut().rev() {
            da = b.backward(&da);
        }
        let mut dx = self.cv1.backward(&da);
        dx.add_assign(&self.cv2.backward(&db));
        dx
    }
}

impl Module for CspBlock {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.cv1.collect_params(out);
        self.cv2.collect_params(out);
        self.cv3.collect_params(out);
        for b in &mut self.blocks {
            b.collect_params(out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let d = Uniform::new(-1.0f32, 1.0).unwrap();
        Tensor::from_vec(shape, (0..shape.iter().product()).map(|_| d.sample(rng)).collect())
    }

    fn naive_conv(x: &Tensor, conv: &Conv2d) -> Tensor {
        let (oh, ow) = conv.out_hw(x.h(), x.w());
        let mut out = Tensor::zeros([x.n(), conv.out_c, oh, ow]);
        let k = conv.k;
        for n in 0..x.n() {
            for o in 0..conv.out_c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[o]) as f64;
                        for c in 0..conv.in_c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h() as isize || ix >= x.w() as isize {
                                        continue;
                                    }
                                    let xv = x.image(n)[(c * x.h() + iy as usize) * x.w() + ix as usize];
                                    let wv = conv.weight.value[((o * conv.in_c + c) * k + ky) * k + kx];
                                    acc += (xv * wv) as f64;
                                }
                            }
                        }
                        out.image_mut(n)[(o * oh + oy) * ow + ox] = acc as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s) in &[(3, 1), (3, 2), (1, 1)] {
            let mut conv = Conv2d::new(3, 5, k, s, true, &mut rng);
            let x = random_tensor([2, 3, 7, 6], &mut rng);
            let fast = conv.forward(&x, false);
            let slow = naive_conv(&x, &conv);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    /// Central-difference check of `d(sum(w ⊙ f(x)))/dx` for a block.
    fn check_input_grad<F, B>(x: &Tensor, mut fwd: F, mut bwd: B)
    where
        F: FnMut(&Tensor, bool) -> Tensor,
        B: FnMut(&Tensor) -> Tensor,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = fwd(x, true);
        let w = random_tensor(y.shape(), &mut rng);
        let dx = bwd(&w);
        let objective = |y: &Tensor| -> f64 {
            y.data().iter().zip(w.data()).map(|(a, b)| (a * b) as f64).sum()
        };
        let h = 1e-2f32;
        for idx in (0..x.data().len()).step_by(7) {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (objective(&fwd(&xp, true)) - objective(&fwd(&xm, true))) / (2.0 * h as f64);
            let an = dx.data()[idx] as f64;
            assert!(
                (fd - an).abs() <= 2e-2 * fd.abs().max(an.abs()).max(1.0),
                "index {idx}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn conv_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor([2, 3, 6, 5], &mut rng);
        let conv = std::cell::RefCell::new(Conv2d::new(3, 4, 3, 2, true, &mut rng));
        check_input_grad(
            &x,
            |x, t| conv.borrow_mut().forward(x, t),
            |d| conv.borrow_mut().backward(d),
        );
    }

    #[test]
    fn csp_block_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor([2, 4, 5, 5], &mut rng);
        let block = std::cell::RefCell::new(CspBlock::new(4, 6, 1, &mut rng));
        check_input_grad(
            &x,
            |x, t| block.borrow_mut().forward(x, t),
            |d| block.borrow_mut().backward(d),
        );
    }

    #[test]
    fn conv_weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor([2, 2, 5, 4], &mut rng);
        let mut conv = Conv2d::new(2, 3, 3, 1, true, &mut rng);
        let y = conv.forward(&x, true);
        let w = random_tensor(y.shape(), &mut rng);
        conv.backward(&w);
        let grads = conv.weight.grad.clone();
        let objective = |conv: &mut Conv2d| -> f64 {
            let y = conv.forward(&x, false);
            y.data().iter().zip(w.data()).map(|(a, b)| (a * b) as f64).sum()
        };
        for idx in 0..grads.len() {
            let orig = conv.weight.value[idx];
            conv.weight.value[idx] = orig + 1e-2;
            let fp = objective(&mut conv);
            conv.weight.value[idx] = orig - 1e-2;
            let fm = objective(&mut conv);
            conv.weight.value[idx] = orig;
            let fd = (fp - fm) / 2e-2;
            assert!((fd - grads[idx] as f64).abs() < 1e-2 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn batchnorm_eval_uses_running_statistics() {
        let mut bn = BatchNorm2d::new(2);
        bn.running_mean.value = vec![1.0, -1.0];
        bn.running_var.value = vec![4.0 - 1e-3, 1.0 - 1e-3];
        let x = Tensor::from_vec([1, 2, 1, 2], vec![3.0, 5.0, 0.0, -1.0]);
        let y = bn.forward(&x, false);
        let expect = [1.0, 2.0, 1.0, 0.0];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
