/// Dense NCHW `f32` tensor used by the network layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn image_len(&self) -> usize {
        self.shape[1] * self.plane_len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.image_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.image_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Concatenates two tensors along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.n(), b.n());
        assert_eq!((a.h(), a.w()), (b.h(), b.w()));
        let mut out = Tensor::zeros([a.n(), a.c() + b.c(), a.h(), a.w()]);
        let (la, lb) = (a.image_len(), b.image_len());
        for i in 0..a.n() {
            let dst = out.image_mut(i);
            dst[..la].copy_from_slice(a.image(i));
            dst[la..la + lb].copy_from_slice(b.image(i));
        }
        out
    }

    /// Inverse of [`Tensor::concat_channels`]: splits off the first `c_first` channels.
    pub fn split_channels(&self, c_first: usize) -> (Tensor, Tensor) {
        assert!(c_first <= self.c());
        let plane = self.plane_len();
        let mut a = Tensor::zeros([self.n(), c_first, self.h(), self.w()]);
        let mut b = Tensor::zeros([self.n(), self.c() - c_first, self.h(), self.w()]);
        let la = c_first * plane;
        for i in 0..self.n() {
            let src = self.image(i);
            a.image_mut(i).copy_from_slice(&src[..la]);
            b.image_mut(i).copy_from_slice(&src[la..]);
        }
        (a, b)
    }

    /// Nearest-neighbour 2× spatial upsampling.
    pub fn upsample2x(&self) -> Tensor {
        let [n, c, h, w] = self.shape;
        let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
        for (src, dst) in self.data.chunks(h * w).zip(out.data.chunks_mut(4 * h * w)) {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    dst[y * 2 * w + x] = src[(y / 2) * w + x / 2];
                }
            }
        }
        out
    }

    /// Adjoint of [`Tensor::upsample2x`]: sums each 2×2 block.
    pub fn sum_pool2x(&self) -> Tensor {
        let [n, c, h2, w2] = self.shape;
        assert!(h2 % 2 == 0 && w2 % 2 == 0);
        let (h, w) = (h2 / 2, w2 / 2);
        let mut out = Tensor::zeros([n, c, h, w]);
        for (src, dst) in self.data.chunks(h2 * w2).zip(out.data.chunks_mut(h * w)) {
            for y in 0..h2 {
                for x in 0..w2 {
                    dst[(y / 2) * w + x / 2] += src[y * w2 + x];
                }
            }
        }
        out
    }

    /// Stacks single-image tensors into one batch.
    pub fn stack(images: &[Tensor]) -> Tensor {
        assert!(!images.is_empty());
        let [_, c, h, w] = images[0].shape;
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for t in images {
            assert_eq!(t.shape, [1, c, h, w]);
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec([images.len(), c, h, w], data)
    }
}
