use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::tensor::{Element, Shape4, Tensor4};

// Upper bound on im2col buffer size, in elements.
const COLS_BUDGET: usize = 1 << 22;

/// Stride-1, zero-padded ("same") convolution followed by a leaky ReLU.
///
/// Weights are laid out `(kh, kw, c_in, c_out)`, which read row-major is
/// exactly the `(kh·kw·c_in) x c_out` matrix the im2col product needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub weights: Tensor4<T>,
    /// `(1, 1, 1, c_out)`
    pub bias: Tensor4<T>,
    pub leak: T,
}

impl<T: Element> ConvLayer<T> {
    pub fn new(weights: Tensor4<T>, bias: Tensor4<T>, leak: T) -> Result<Self> {
        let [kh, kw, _, c_out] = weights.dims();
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(format!("kernel {kh}x{kw} must have odd extents")));
        }
        if bias.dims() != [1, 1, 1, c_out] {
            return Err(Error::shape(format!(
                "bias shape {} does not match {c_out} output channels",
                bias.shape()
            )));
        }
        if !(T::zero()..=T::one()).contains(&leak) {
            return Err(Error::config(format!("leak {leak:?} outside [0, 1]")));
        }
        Ok(Self { weights, bias, leak })
    }

    pub fn kernel(&self) -> (usize, usize) {
        let [kh, kw, _, _] = self.weights.dims();
        (kh, kw)
    }

    pub fn c_in(&self) -> usize {
        self.weights.dims()[2]
    }

    pub fn c_out(&self) -> usize {
        self.weights.dims()[3]
    }
}

pub struct ConvGrads<T> {
    pub weights: Tensor4<T>,
    pub bias: Tensor4<T>,
    pub input: Option<Tensor4<T>>,
}

struct Geometry {
    h: usize,
    w: usize,
    c_in: usize,
    kh: usize,
    kw: usize,
}

impl Geometry {
    fn of<T: Element>(x: &Tensor4<T>, layer: &ConvLayer<T>) -> Result<Self> {
        let s = x.shape();
        if s.c != layer.c_in() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                layer.c_in(),
                s.c
            )));
        }
        let (kh, kw) = layer.kernel();
        Ok(Self { h: s.h, w: s.w, c_in: s.c, kh, kw })
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.c_in
    }

    fn pixels(&self) -> usize {
        self.h * self.w
    }

    fn chunk(&self) -> usize {
        (COLS_BUDGET / (self.pixels() * self.patch())).max(1)
    }
}

fn im2col<T: Element>(x: &Tensor4<T>, g: &Geometry, first: usize, count: usize, cols: &mut [T]) {
    let (ph, pw) = ((g.kh - 1) / 2, (g.kw - 1) / 2);
    let patch = g.patch();
    let sample_len = g.pixels() * g.c_in;
    let src = x.data();
    for s in 0..count {
        let base = (first + s) * sample_len;
        for i in 0..g.h {
            for j in 0..g.w {
                let row = &mut cols[((s * g.h + i) * g.w + j) * patch..][..patch];
                for di in 0..g.kh {
                    let si = i + di;
                    for dj in 0..g.kw {
                        let sj = j + dj;
                        let dst = &mut row[(di * g.kw + dj) * g.c_in..][..g.c_in];
                        if si < ph || si - ph >= g.h || sj < pw || sj - pw >= g.w {
                            dst.fill(T::zero());
                        } else {
                            let off = base + ((si - ph) * g.w + (sj - pw)) * g.c_in;
                            dst.copy_from_slice(&src[off..off + g.c_in]);
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: &Geometry, first: usize, count: usize, dx: &mut Tensor4<T>) {
    let (ph, pw) = ((g.kh - 1) / 2, (g.kw - 1) / 2);
    let patch = g.patch();
    let sample_len = g.pixels() * g.c_in;
    let dst = dx.data_mut();
    for s in 0..count {
        let base = (first + s) * sample_len;
        for i in 0..g.h {
            for j in 0..g.w {
                let row = &cols[((s * g.h + i) * g.w + j) * patch..][..patch];
                for di in 0..g.kh {
                    let si = i + di;
                    if si < ph || si - ph >= g.h {
                        continue;
                    }
                    for dj in 0..g.kw {
                        let sj = j + dj;
                        if sj < pw || sj - pw >= g.w {
                            continue;
                        }
                        let off = base + ((si - ph) * g.w + (sj - pw)) * g.c_in;
                        let src = &row[(di * g.kw + dj) * g.c_in..][..g.c_in];
                        for (d, &v) in dst[off..off + g.c_in].iter_mut().zip(src) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// Convolution plus bias (no activation):
/// `out[n,i,j,o] = bias[o] + Σ x_pad[n,i+di,j+dj,ci]·w[di,dj,ci,o]`.
pub fn conv2d_forward<T: Element>(x: &Tensor4<T>, layer: &ConvLayer<T>) -> Result<Tensor4<T>> {
    let g = Geometry::of(x, layer)?;
    let c_out = layer.c_out();
    let n = x.shape().n;
    let out_shape = Shape4 { c: c_out, ..x.shape() };
    let mut out = Tensor4::zeros_like_shape(out_shape);
    let bias = layer.bias.data();
    for row in out.data_mut().chunks_exact_mut(c_out) {
        row.copy_from_slice(bias);
    }
    let chunk = g.chunk();
    let rows_per_sample = g.pixels();
    let mut cols = vec![T::zero(); chunk.min(n) * rows_per_sample * g.patch()];
    let mut first = 0;
    while first < n {
        let count = chunk.min(n - first);
        let rows = count * rows_per_sample;
        let cols = &mut cols[..rows * g.patch()];
        im2col(x, &g, first, count, cols);
        let dst = &mut out.data_mut()[first * rows_per_sample * c_out..][..rows * c_out];
        gemm(false, false, rows, c_out, g.patch(), T::one(), cols, layer.weights.data(), T::one(), dst);
        first += count;
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] given the upstream gradient `dy` with
/// respect to its (pre-activation) output.
pub fn conv2d_backward<T: Element>(
    x: &Tensor4<T>,
    layer: &ConvLayer<T>,
    dy: &Tensor4<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let g = Geometry::of(x, layer)?;
    let c_out = layer.c_out();
    let expected = Shape4 { c: c_out, ..x.shape() };
    if dy.shape() != expected {
        return Err(Error::shape(format!(
            "conv upstream gradient has shape {}, expected {expected}",
            dy.shape()
        )));
    }
    let n = x.shape().n;
    let mut dw = Tensor4::zeros_like_shape(layer.weights.shape());
    let mut db = Tensor4::zeros_like_shape(layer.bias.shape());
    let mut dx = need_input.then(|| Tensor4::zeros_like_shape(x.shape()));

    for row in dy.data().chunks_exact(c_out) {
        for (b, &v) in db.data_mut().iter_mut().zip(row) {
            *b = *b + v;
        }
    }

    let chunk = g.chunk();
    let rows_per_sample = g.pixels();
    let patch = g.patch();
    let mut cols = vec![T::zero(); chunk.min(n) * rows_per_sample * patch];
    let mut first = 0;
    while first < n {
        let count = chunk.min(n - first);
        let rows = count * rows_per_sample;
        let cols = &mut cols[..rows * patch];
        let dy_chunk = &dy.data()[first * rows_per_sample * c_out..][..rows * c_out];
        im2col(x, &g, first, count, cols);
        gemm(true, false, patch, c_out, rows, T::one(), cols, dy_chunk, T::one(), dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            gemm(false, true, rows, patch, c_out, T::one(), dy_chunk, layer.weights.data(), T::zero(), cols);
            col2im(cols, &g, first, count, dx);
        }
        first += count;
    }
    Ok(ConvGrads { weights: dw, bias: db, input: dx })
}
