//! 2D discrete wavelet packet analysis and synthesis.
//!
//! One analysis level filters every row along the width axis and keeps the
//! even-phase outputs, then does the same along the height axis, producing the
//! four children `LL, LH, HL, HH` (`LH` = high-pass along width, `HL` =
//! high-pass along height). A packet decomposition re-splits every child, so
//! `m` levels yield `4^m` equally sized subbands ordered depth first.
//!
//! Filters longer than two taps wrap around periodically; with the default
//! 2-tap pair no sample ever crosses a boundary.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape4, Tensor4};

const FILTER_TOL: f64 = 1e-9;

/// An orthonormal two-channel analysis filter pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPair {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl FilterPair {
    /// Validates a user-supplied pair: equal even length, unit energy,
    /// orthogonality to even shifts, and the quadrature-mirror relation
    /// `high[i] = (-1)^i * low[len - 1 - i]`.
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        let len = low.len();
        if len < 2 || len % 2 != 0 || high.len() != len {
            return Err(Error::config(format!(
                "filter pair needs equal even lengths >= 2, got {} and {}",
                low.len(),
                high.len()
            )));
        }
        for (i, &h) in high.iter().enumerate() {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            if (h - sign * low[len - 1 - i]).abs() > FILTER_TOL {
                return Err(Error::config(format!(
                    "high-pass tap {i} violates the quadrature-mirror relation"
                )));
            }
        }
        for shift in (0..len).step_by(2) {
            let want = if shift == 0 { 1.0 } else { 0.0 };
            for f in [&low, &high] {
                let dot: f64 = (0..len - shift).map(|i| f[i] * f[i + shift]).sum();
                if (dot - want).abs() > FILTER_TOL {
                    return Err(Error::config(format!(
                        "filter is not orthonormal under a shift of {shift}"
                    )));
                }
            }
        }
        Ok(Self { low, high })
    }

    /// Builds the pair from its low-pass half.
    pub fn from_lowpass(low: Vec<f64>) -> Result<Self> {
        let len = low.len();
        let high = (0..len)
            .map(|i| if i % 2 == 0 { low[len - 1 - i] } else { -low[len - 1 - i] })
            .collect();
        Self::new(low, high)
    }

    /// The 2-tap basis `low = [1/√2, 1/√2]`, `high = [1/√2, -1/√2]`.
    pub fn haar() -> Self {
        Self {
            low: vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2],
            high: vec![FRAC_1_SQRT_2, -FRAC_1_SQRT_2],
        }
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }
}

impl Default for FilterPair {
    fn default() -> Self {
        Self::haar()
    }
}

/// Index of each child within one analysis level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Child {
    LL = 0,
    LH = 1,
    HL = 2,
    HH = 3,
}

#[derive(Debug, Clone, Copy)]
enum Axis {
    Height,
    Width,
}

/// `4^levels` critically sampled subbands of one input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet<T> {
    levels: usize,
    subbands: Vec<Tensor4<T>>,
}

impl<T: Element> SubbandSet<T> {
    pub fn new(levels: usize, subbands: Vec<Tensor4<T>>) -> Result<Self> {
        let expected = subband_count(levels);
        if subbands.len() != expected {
            return Err(Error::shape(format!(
                "{levels} packet levels need {expected} subbands, got {}",
                subbands.len()
            )));
        }
        let shape = subbands[0].shape();
        if let Some(bad) = subbands.iter().position(|s| s.shape() != shape) {
            return Err(Error::shape(format!(
                "subband {bad} has shape {}, expected {shape}",
                subbands[bad].shape()
            )));
        }
        Ok(Self { levels, subbands })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.subbands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subbands.is_empty()
    }

    pub fn subbands(&self) -> &[Tensor4<T>] {
        &self.subbands
    }

    pub fn subband(&self, k: usize) -> &Tensor4<T> {
        &self.subbands[k]
    }

    pub fn subband_mut(&mut self, k: usize) -> &mut Tensor4<T> {
        &mut self.subbands[k]
    }

    pub fn into_subbands(self) -> Vec<Tensor4<T>> {
        self.subbands
    }

    /// Shape shared by every subband.
    pub fn subband_shape(&self) -> Shape4 {
        self.subbands[0].shape()
    }

    pub fn total_len(&self) -> usize {
        self.subbands.iter().map(Tensor4::len).sum()
    }

    pub fn energy(&self) -> T {
        self.subbands.iter().fold(T::zero(), |acc, s| acc + s.sum_sq())
    }

    /// Stacks the subbands along the channel axis: output channel
    /// `k * c + ci` holds channel `ci` of subband `k`.
    pub fn stack_channels(&self) -> Tensor4<T> {
        let s = self.subband_shape();
        let k_count = self.subbands.len();
        let out_shape = Shape4 {
            c: s.c * k_count,
            ..s
        };
        let pixels = s.n * s.h * s.w;
        let mut data = Vec::with_capacity(out_shape.len());
        for p in 0..pixels {
            for sub in &self.subbands {
                data.extend_from_slice(&sub.data()[p * s.c..(p + 1) * s.c]);
            }
        }
        Tensor4::from_shape_vec(out_shape, data).expect("stacked shape is consistent")
    }
}

pub fn subband_count(levels: usize) -> usize {
    1usize << (2 * levels)
}

fn check_axis_even(shape: Shape4, axis: Axis) -> Result<usize> {
    let len = match axis {
        Axis::Height => shape.h,
        Axis::Width => shape.w,
    };
    if len % 2 != 0 {
        return Err(Error::shape(format!(
            "{axis:?} extent {len} is odd; wavelet analysis needs even dimensions"
        )));
    }
    Ok(len)
}

// (outer count, axis length, inner stride) for walking one axis.
fn axis_layout(shape: Shape4, axis: Axis) -> (usize, usize, usize) {
    match axis {
        Axis::Height => (shape.n, shape.h, shape.w * shape.c),
        Axis::Width => (shape.n * shape.h, shape.w, shape.c),
    }
}

fn halved(shape: Shape4, axis: Axis) -> Shape4 {
    match axis {
        Axis::Height => Shape4 { h: shape.h / 2, ..shape },
        Axis::Width => Shape4 { w: shape.w / 2, ..shape },
    }
}

fn doubled(shape: Shape4, axis: Axis) -> Shape4 {
    match axis {
        Axis::Height => Shape4 { h: shape.h * 2, ..shape },
        Axis::Width => Shape4 { w: shape.w * 2, ..shape },
    }
}

fn analyze_axis<T: Element>(
    x: &Tensor4<T>,
    axis: Axis,
    filters: &FilterPair,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let len = check_axis_even(x.shape(), axis)?;
    let (outer, _, inner) = axis_layout(x.shape(), axis);
    let half = len / 2;
    let out_shape = halved(x.shape(), axis);
    let low: Vec<T> = filters.low.iter().map(|&v| T::from_f64(v)).collect();
    let high: Vec<T> = filters.high.iter().map(|&v| T::from_f64(v)).collect();
    let mut lo = Tensor4::zeros_like_shape(out_shape);
    let mut hi = Tensor4::zeros_like_shape(out_shape);
    let src = x.data();
    for o in 0..outer {
        let src_base = o * len * inner;
        let dst_base = o * half * inner;
        for k in 0..half {
            let dst = dst_base + k * inner;
            let lo_row = &mut lo.data_mut()[dst..dst + inner];
            for (i, &f) in low.iter().enumerate() {
                let s = src_base + ((2 * k + i) % len) * inner;
                for (d, &v) in lo_row.iter_mut().zip(&src[s..s + inner]) {
                    *d = *d + f * v;
                }
            }
            let hi_row = &mut hi.data_mut()[dst..dst + inner];
            for (i, &f) in high.iter().enumerate() {
                let s = src_base + ((2 * k + i) % len) * inner;
                for (d, &v) in hi_row.iter_mut().zip(&src[s..s + inner]) {
                    *d = *d + f * v;
                }
            }
        }
    }
    Ok((lo, hi))
}

fn synthesize_axis<T: Element>(
    lo: &Tensor4<T>,
    hi: &Tensor4<T>,
    axis: Axis,
    filters: &FilterPair,
) -> Result<Tensor4<T>> {
    if lo.shape() != hi.shape() {
        return Err(Error::shape(format!(
            "synthesis halves differ: {} vs {}",
            lo.shape(),
            hi.shape()
        )));
    }
    let out_shape = doubled(lo.shape(), axis);
    let (outer, len, inner) = axis_layout(out_shape, axis);
    let half = len / 2;
    let low: Vec<T> = filters.low.iter().map(|&v| T::from_f64(v)).collect();
    let high: Vec<T> = filters.high.iter().map(|&v| T::from_f64(v)).collect();
    let mut out = Tensor4::zeros_like_shape(out_shape);
    for o in 0..outer {
        let dst_base = o * len * inner;
        let src_base = o * half * inner;
        for k in 0..half {
            let s = src_base + k * inner;
            let lo_row = &lo.data()[s..s + inner];
            let hi_row = &hi.data()[s..s + inner];
            for i in 0..low.len() {
                let d = dst_base + ((2 * k + i) % len) * inner;
                let dst = &mut out.data_mut()[d..d + inner];
                for ((y, &a), &b) in dst.iter_mut().zip(lo_row).zip(hi_row) {
                    *y = *y + low[i] * a + high[i] * b;
                }
            }
        }
    }
    Ok(out)
}

/// One separable analysis level, returning `(ll, lh, hl, hh)`.
pub fn dwt2d_level<T: Element>(
    x: &Tensor4<T>,
    filters: &FilterPair,
) -> Result<(Tensor4<T>, Tensor4<T>, Tensor4<T>, Tensor4<T>)> {
    check_axis_even(x.shape(), Axis::Height)?;
    let (low_w, high_w) = analyze_axis(x, Axis::Width, filters)?;
    let (ll, hl) = analyze_axis(&low_w, Axis::Height, filters)?;
    let (lh, hh) = analyze_axis(&high_w, Axis::Height, filters)?;
    Ok((ll, lh, hl, hh))
}

/// Inverse of [`dwt2d_level`].
pub fn idwt2d_level<T: Element>(
    ll: &Tensor4<T>,
    lh: &Tensor4<T>,
    hl: &Tensor4<T>,
    hh: &Tensor4<T>,
    filters: &FilterPair,
) -> Result<Tensor4<T>> {
    let low_w = synthesize_axis(ll, hl, Axis::Height, filters)?;
    let high_w = synthesize_axis(lh, hh, Axis::Height, filters)?;
    synthesize_axis(&low_w, &high_w, Axis::Width, filters)
}

/// Full `m`-level packet decomposition; `m = 0` returns the input unchanged.
pub fn packet_decompose<T: Element>(
    x: &Tensor4<T>,
    m: usize,
    filters: &FilterPair,
) -> Result<SubbandSet<T>> {
    let s = x.shape();
    let block = 1usize
        .checked_shl(m as u32)
        .ok_or_else(|| Error::shape(format!("{m} levels is too deep")))?;
    if s.h % block != 0 || s.w % block != 0 {
        return Err(Error::shape(format!(
            "{}x{} input is not divisible by 2^{m}",
            s.h, s.w
        )));
    }
    let mut bands = vec![x.clone()];
    for _ in 0..m {
        let mut next = Vec::with_capacity(bands.len() * 4);
        for band in &bands {
            let (ll, lh, hl, hh) = dwt2d_level(band, filters)?;
            next.extend([ll, lh, hl, hh]);
        }
        bands = next;
    }
    SubbandSet::new(m, bands)
}

/// Synthesis inverse of [`packet_decompose`].
pub fn packet_reconstruct<T: Element>(s: &SubbandSet<T>, filters: &FilterPair) -> Result<Tensor4<T>> {
    // Revalidate: the set may have been mutated through `subband_mut`.
    let mut bands = SubbandSet::new(s.levels, s.subbands.clone())?.subbands;
    for _ in 0..s.levels {
        bands = bands
            .chunks_exact(4)
            .map(|c| idwt2d_level(&c[0], &c[1], &c[2], &c[3], filters))
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(bands.pop().expect("one band remains"))
}

/// Per-subband fraction of coefficients with magnitude below `eps`.
pub fn subband_sparsity<T: Element>(s: &SubbandSet<T>, eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("sparsity threshold must be > 0, got {eps}")));
    }
    Ok(s.subbands
        .iter()
        .map(|band| {
            let small = band.data().iter().filter(|v| (**v).as_f64().abs() < eps).count();
            small as f64 / band.len() as f64
        })
        .collect())
}
