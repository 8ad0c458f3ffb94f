//! Dense rank-4 tensors in `(n, h, w, c)` order.
//!
//! Every activation, subband, and parameter in the crate lives in a
//! [`Tensor4`]. Convolution weights reuse the same container with the axes
//! reinterpreted as `(kh, kw, c_in, c_out)`, and dense layers store their
//! matrices as `(1, 1, d_in, d_out)`, so a single binary format covers
//! fixtures, subband dumps, and checkpoints.

use std::fmt::Debug;
use std::fs;
use std::io::{Read, Write};
use std::iter::Sum;
use std::path::Path;

use num_traits::Float;

use crate::error::{Error, Result};

/// Storage precision of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn code(self) -> u8 {
        match self {
            Precision::F32 => 0,
            Precision::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Precision::F32),
            1 => Some(Precision::F64),
            _ => None,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Scalar types a [`Tensor4`] can hold.
pub trait Element: Float + Default + Debug + Send + Sync + Sum + 'static {
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// `C = alpha * A * B + beta * C` on strided row/column storage.
    ///
    /// # Safety
    /// The pointers and strides must describe valid `m x k`, `k x n` and
    /// `m x n` matrices inside live allocations, and `c` must not alias.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Element for f32 {
    const PRECISION: Precision = Precision::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Element for f64 {
    const PRECISION: Precision = Precision::F64;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(buf)
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Extent of a [`Tensor4`]; all four dimensions are at least one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape4 {
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::shape(format!(
                "every dimension must be >= 1, got ({n}, {h}, {w}, {c})"
            )));
        }
        Ok(Self { n, h, w, c })
    }

    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    /// Element count of one sample.
    pub fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..*self }
    }
}

impl std::fmt::Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Element> Tensor4<T> {
    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3])?;
        Ok(Self::zeros_like_shape(shape))
    }

    pub(crate) fn zeros_like_shape(shape: Shape4) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn full(dims: [usize; 4], value: T) -> Result<Self> {
        let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3])?;
        Ok(Self {
            shape,
            data: vec![value; shape.len()],
        })
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3])?;
        Self::from_shape_vec(shape, data)
    }

    pub fn from_shape_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "shape {shape} needs {} elements, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn dims(&self) -> [usize; 4] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, h: usize, w: usize, c: usize) -> usize {
        debug_assert!(n < self.shape.n && h < self.shape.h && w < self.shape.w && c < self.shape.c);
        ((n * self.shape.h + h) * self.shape.w + w) * self.shape.c + c
    }

    pub fn get(&self, n: usize, h: usize, w: usize, c: usize) -> Result<T> {
        self.check_index(n, h, w, c)?;
        Ok(self.data[self.offset(n, h, w, c)])
    }

    pub fn set(&mut self, n: usize, h: usize, w: usize, c: usize, value: T) -> Result<()> {
        self.check_index(n, h, w, c)?;
        let i = self.offset(n, h, w, c);
        self.data[i] = value;
        Ok(())
    }

    fn check_index(&self, n: usize, h: usize, w: usize, c: usize) -> Result<()> {
        let s = self.shape;
        if n >= s.n || h >= s.h || w >= s.w || c >= s.c {
            return Err(Error::Index(format!(
                "index ({n}, {h}, {w}, {c}) out of bounds for shape {s}"
            )));
        }
        Ok(())
    }

    /// Contiguous slice holding sample `i`.
    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.shape.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    /// Gathers the listed samples into a new batch.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let len = self.shape.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            if i >= self.shape.n {
                return Err(Error::Index(format!(
                    "sample {i} out of range for batch of {}",
                    self.shape.n
                )));
            }
            data.extend_from_slice(self.sample(i));
        }
        let shape = Shape4::new(indices.len(), self.shape.h, self.shape.w, self.shape.c)?;
        Self::from_shape_vec(shape, data)
    }

    pub fn reshape(self, dims: [usize; 4]) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }

    fn zip_with(&self, other: &Self, op: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: shapes {} and {} differ",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// Sum of squares, accumulated front to back.
    pub fn sum_sq(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "max_abs_diff: shapes {} and {} differ",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Serializes in the `TNS4` fixture format.
    ///
    /// Layout: magic `TNS4`, precision code, three reserved zero bytes, four
    /// little-endian `u32` dimensions `(n, h, w, c)`, then the elements in
    /// little-endian order. The header is 24 bytes.
    pub fn write_to(&self, out: &mut Vec<u8>) -> Result<()> {
        out.extend_from_slice(TNS4_MAGIC);
        out.push(T::PRECISION.code());
        out.extend_from_slice(&[0, 0, 0]);
        for d in self.dims() {
            let d = u32::try_from(d)
                .map_err(|_| Error::shape(format!("dimension {d} does not fit in u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.reserve(self.data.len() * T::PRECISION.bytes());
        for &v in &self.data {
            v.write_le(out);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    /// Parses one tensor from the front of `bytes`, returning it together with
    /// the number of bytes consumed. `base` is the absolute offset of
    /// `bytes[0]` and is only used for error reporting.
    pub fn read_from(bytes: &[u8], base: u64) -> Result<(Self, usize)> {
        if bytes.len() < TNS4_HEADER_LEN {
            return Err(Error::corrupt(base, "truncated tensor header"));
        }
        if &bytes[..4] != TNS4_MAGIC {
            return Err(Error::corrupt(base, "bad tensor magic"));
        }
        let precision = Precision::from_code(bytes[4])
            .ok_or_else(|| Error::corrupt(base + 4, format!("unknown precision code {}", bytes[4])))?;
        if precision != T::PRECISION {
            return Err(Error::corrupt(
                base + 4,
                format!("tensor stored as {precision:?}, expected {:?}", T::PRECISION),
            ));
        }
        let mut dims = [0usize; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            let at = 8 + 4 * i;
            *d = u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize;
        }
        let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3])
            .map_err(|e| Error::corrupt(base + 8, e.to_string()))?;
        let width = precision.bytes();
        let body = shape
            .len()
            .checked_mul(width)
            .ok_or_else(|| Error::corrupt(base + 8, "tensor size overflows"))?;
        let end = TNS4_HEADER_LEN + body;
        if bytes.len() < end {
            return Err(Error::corrupt(
                base + bytes.len() as u64,
                format!("truncated tensor body: need {body} bytes"),
            ));
        }
        let data = bytes[TNS4_HEADER_LEN..end]
            .chunks_exact(width)
            .map(T::read_le)
            .collect();
        Ok((Self { shape, data }, end))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let (t, used) = Self::read_from(&bytes, 0)?;
        if used != bytes.len() {
            return Err(Error::corrupt(used as u64, "trailing bytes after tensor"));
        }
        Ok(t)
    }
}

pub const TNS4_MAGIC: &[u8; 4] = b"TNS4";
pub const TNS4_HEADER_LEN: usize = 24;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_counts() {
        assert_eq!(Tensor4::<f32>::zeros([1, 2, 2, 1]).unwrap().len(), 4);
        assert_eq!(Tensor4::<f32>::zeros([2, 3, 3, 4]).unwrap().len(), 72);
        let one = Tensor4::<f64>::zeros([1, 1, 1, 1]).unwrap();
        assert_eq!(one.data(), &[0.0]);
        assert!(Tensor4::<f32>::zeros([2, 3, 3, 4]).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(matches!(Tensor4::<f32>::zeros([1, 0, 1, 1]), Err(Error::Shape(_))));
        assert!(matches!(Tensor4::<f32>::zeros([0, 1, 1, 1]), Err(Error::Shape(_))));
    }

    #[test]
    fn elementwise_examples() {
        let a = Tensor4::from_vec([1, 1, 2, 1], vec![1.0f32, 2.0]).unwrap();
        let b = Tensor4::from_vec([1, 1, 2, 1], vec![3.0f32, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(a.scale(0.5).data(), &[0.5, 1.0]);
        let z = Tensor4::zeros([1, 1, 2, 1]).unwrap();
        assert_eq!(a.mul(&z).unwrap(), z);
        assert_eq!(b.sub(&a).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let a = Tensor4::<f32>::zeros([1, 1, 2, 1]).unwrap();
        let b = Tensor4::<f32>::zeros([1, 2, 1, 1]).unwrap();
        assert!(matches!(a.add(&b), Err(Error::Shape(_))));
        assert!(matches!(a.mul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn sum_sq_examples() {
        let a = Tensor4::from_vec([1, 1, 2, 1], vec![3.0f32, 4.0]).unwrap();
        assert_eq!(a.sum_sq(), 25.0);
        assert_eq!(Tensor4::<f32>::zeros([2, 2, 2, 2]).unwrap().sum_sq(), 0.0);
    }

    #[test]
    fn sum_sq_matches_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = Tensor4::from_vec([1, 4, 4, 1], data.clone()).unwrap();
        let mut acc = 0.0f32;
        for i in 0..data.len() {
            acc += data[i] * data[i];
        }
        assert_eq!(t.sum_sq().to_bits(), acc.to_bits());
    }

    #[test]
    fn out_of_bounds_index() {
        let t = Tensor4::<f32>::zeros([1, 2, 2, 1]).unwrap();
        assert!(matches!(t.get(0, 2, 0, 0), Err(Error::Index(_))));
    }

    #[test]
    fn tns4_header_layout() {
        let t = Tensor4::from_vec([1, 1, 2, 1], vec![1.5f32, -2.0]).unwrap();
        let bytes = t.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"TNS4");
        assert_eq!(bytes[4], 0);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), TNS4_HEADER_LEN + 8);
        assert_eq!(&bytes[24..28], &1.5f32.to_le_bytes());
    }

    #[test]
    fn tns4_rejects_truncation_and_precision() {
        let t = Tensor4::from_vec([1, 1, 2, 1], vec![1.5f64, -2.0]).unwrap();
        let bytes = t.to_bytes().unwrap();
        assert!(matches!(
            Tensor4::<f64>::read_from(&bytes[..bytes.len() - 1], 0),
            Err(Error::CorruptData { .. })
        ));
        assert!(matches!(Tensor4::<f32>::read_from(&bytes, 0), Err(Error::CorruptData { .. })));
    }

    proptest! {
        #[test]
        fn write_then_read_index(n in 1usize..3, h in 1usize..5, w in 1usize..5, c in 1usize..4, v in -1e6f32..1e6) {
            let mut t = Tensor4::<f32>::zeros([n, h, w, c]).unwrap();
            let (i, j, k, l) = (n - 1, h / 2, w - 1, c / 2);
            t.set(i, j, k, l, v).unwrap();
            prop_assert_eq!(t.get(i, j, k, l).unwrap(), v);
            prop_assert_eq!(t.sum_sq(), v * v);
        }

        #[test]
        fn add_commutes_and_associates(xs in prop::collection::vec(-1e3f32..1e3, 12)) {
            let a = Tensor4::from_vec([1, 2, 2, 3], xs.clone()).unwrap();
            let b = a.map(|v| v * 0.37 - 1.0);
            let c = a.map(|v| 2.0 - v * 1.3);
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
            let l = a.add(&b).unwrap().add(&c).unwrap();
            let r = a.add(&b.add(&c).unwrap()).unwrap();
            for (i, (x, y)) in l.data().iter().zip(r.data()).enumerate() {
                let scale = a.data()[i].abs() + b.data()[i].abs() + c.data()[i].abs();
                prop_assert!((x - y).abs() <= 1e-6 * (1.0 + scale));
            }
        }

        #[test]
        fn tns4_roundtrip(xs in prop::collection::vec(any::<f64>(), 6)) {
            let t = Tensor4::from_vec([1, 2, 3, 1], xs).unwrap();
            let bytes = t.to_bytes().unwrap();
            let (back, used) = Tensor4::<f64>::read_from(&bytes, 0).unwrap();
            prop_assert_eq!(used, bytes.len());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
