//! Input bit-depth reduction and simulated low-precision weights.

use std::fmt;
use std::str::FromStr;

use crate::data::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Element, Tensor4};
use crate::train::{evaluate, EvalReport};

/// `round(x·(2^b − 1)) / (2^b − 1)` with halves rounded away from zero.
/// Every value must lie in `[0, 1]`.
pub fn quantize_input<T: Element>(x: &Tensor4<T>, bits: u32) -> Result<Tensor4<T>> {
    if !(1..=24).contains(&bits) {
        return Err(Error::Domain(format!("input bit depth must be in 1..=24, got {bits}")));
    }
    if let Some(v) = x.data().iter().map(|v| v.as_f64()).find(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain(format!("input value {v} outside [0, 1]")));
    }
    let levels = ((1u32 << bits) - 1) as f64;
    Ok(x.map(|v| T::from_f64(quantize_level(v.as_f64(), levels))))
}

fn quantize_level(v: f64, levels: f64) -> f64 {
    (v * levels).round() / levels
}

/// Binary floating-point format with a sign bit, `exp_bits` exponent bits and
/// `man_bits` stored mantissa bits. The all-ones exponent is reserved for
/// infinities and NaN, as in IEEE 754.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Minifloat {
    pub exp_bits: u32,
    pub man_bits: u32,
    /// Out-of-range values clamp to the largest finite value instead of
    /// becoming infinite.
    pub saturate: bool,
}

impl Minifloat {
    /// 1-4-3 layout, bias 7, largest finite value 240, saturating.
    pub const E4M3: Self = Self {
        exp_bits: 4,
        man_bits: 3,
        saturate: true,
    };
    /// 1-5-2 layout, bias 15, saturating.
    pub const E5M2: Self = Self {
        exp_bits: 5,
        man_bits: 2,
        saturate: true,
    };
    /// IEEE binary16.
    pub const F16: Self = Self {
        exp_bits: 5,
        man_bits: 10,
        saturate: false,
    };

    pub fn bias(&self) -> i32 {
        (1 << (self.exp_bits - 1)) - 1
    }

    pub fn min_normal_exp(&self) -> i32 {
        1 - self.bias()
    }

    pub fn max_finite(&self) -> f64 {
        let emax = (1 << self.exp_bits) - 2 - self.bias();
        (2.0 - 2f64.powi(-(self.man_bits as i32))) * 2f64.powi(emax)
    }

    pub fn min_subnormal(&self) -> f64 {
        2f64.powi(self.min_normal_exp() - self.man_bits as i32)
    }

    /// Nearest representable value, ties to even mantissa.
    pub fn quantize(&self, x: f64) -> f64 {
        if x.is_nan() || x == 0.0 {
            return x;
        }
        let max = self.max_finite();
        let a = x.abs();
        let q = if a.is_infinite() {
            f64::INFINITY
        } else {
            let e = exponent_of(a).max(self.min_normal_exp());
            let ulp = 2f64.powi(e - self.man_bits as i32);
            (a / ulp).round_ties_even() * ulp
        };
        let q = if q > max {
            if self.saturate {
                max
            } else {
                f64::INFINITY
            }
        } else {
            q
        };
        q.copysign(x)
    }
}

/// `floor(log2(a))` for finite positive `a`, exact.
fn exponent_of(a: f64) -> i32 {
    let bits = a.to_bits();
    let raw = ((bits >> 52) & 0x7ff) as i32;
    if raw == 0 {
        let man = bits & ((1u64 << 52) - 1);
        -1074 + (63 - man.leading_zeros() as i32)
    } else {
        raw - 1023
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightFormat {
    F8,
    F16,
    F32,
}

impl WeightFormat {
    pub const ALL: [WeightFormat; 3] = [WeightFormat::F8, WeightFormat::F16, WeightFormat::F32];

    pub fn quantize(self, x: f64) -> f64 {
        match self {
            WeightFormat::F8 => Minifloat::E4M3.quantize(x),
            WeightFormat::F16 => Minifloat::F16.quantize(x),
            WeightFormat::F32 => x as f32 as f64,
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            WeightFormat::F8 => 8,
            WeightFormat::F16 => 16,
            WeightFormat::F32 => 32,
        }
    }
}

impl fmt::Display for WeightFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightFormat::F8 => "f8",
            WeightFormat::F16 => "f16",
            WeightFormat::F32 => "f32",
        })
    }
}

impl FromStr for WeightFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f8" | "float8" => Ok(WeightFormat::F8),
            "f16" | "float16" => Ok(WeightFormat::F16),
            "f32" | "float32" => Ok(WeightFormat::F32),
            _ => Err(Error::config(format!("unknown weight format {s:?} (expected f8, f16 or f32)"))),
        }
    }
}

/// Copy of `model` with every weight and bias rounded to `format`; compute
/// stays in the model's own precision.
pub fn quantize_params<T: Element>(model: &Model<T>, format: WeightFormat) -> Model<T> {
    model.map_params(|v| T::from_f64(format.quantize(v.as_f64())))
}

/// Test-split accuracy with optional input and weight quantization. `test`
/// holds raw `[0, 1]` pixels; inputs are quantized first and normalized
/// afterwards.
pub fn quant_eval<T: Element>(
    model: &Model<T>,
    test: &Dataset<T>,
    norm: &Normalization,
    input_bits: Option<u32>,
    weights: Option<WeightFormat>,
    batch_size: usize,
) -> Result<EvalReport> {
    let images = match input_bits {
        Some(b) => quantize_input(&test.images, b)?,
        None => test.images.clone(),
    };
    let images = norm.apply(&images)?;
    match weights {
        Some(f) => evaluate(&quantize_params(model, f), &images, &test.labels, batch_size),
        None => evaluate(model, &images, &test.labels, batch_size),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use half::f16;
    use proptest::prelude::*;

    fn decode_e4m3(byte: u8) -> Option<f64> {
        let sign = if byte & 0x80 != 0 { -1.0 } else { 1.0 };
        let e = ((byte >> 3) & 0xf) as i32;
        let m = (byte & 0x7) as f64;
        match e {
            15 => None,
            0 => Some(sign * m / 8.0 * 2f64.powi(-6)),
            _ => Some(sign * (1.0 + m / 8.0) * 2f64.powi(e - 7)),
        }
    }

    // Brute force over all finite codes; ties go to the even code.
    fn e4m3_oracle(x: f64) -> f64 {
        let mut best: Option<(f64, u8)> = None;
        for b in 0..=255u8 {
            if let Some(v) = decode_e4m3(b) {
                let d = (v - x).abs();
                best = match best {
                    None => Some((v, b)),
                    Some((bv, bb)) => {
                        let bd = (bv - x).abs();
                        if d < bd || (d == bd && b & 1 == 0 && bb & 1 == 1) {
                            Some((v, b))
                        } else {
                            Some((bv, bb))
                        }
                    }
                };
            }
        }
        let v = best.unwrap().0;
        if v == 0.0 {
            0.0f64.copysign(x)
        } else {
            v
        }
    }

    #[test]
    fn input_examples() {
        let x = Tensor4::from_vec([1, 1, 3, 1], vec![0.4f64, 0.6, 0.5]).unwrap();
        let q1 = quantize_input(&x, 1).unwrap();
        assert_eq!(&q1.data()[..2], &[0.0, 1.0]);
        let q2 = quantize_input(&x, 2).unwrap();
        assert_eq!(q2.data()[2], 2.0 / 3.0);
        let bad = Tensor4::from_vec([1, 1, 1, 1], vec![1.5f32]).unwrap();
        assert!(matches!(quantize_input(&bad, 4), Err(Error::Domain(_))));
        assert!(quantize_input(&x, 0).is_err());
    }

    #[test]
    fn eight_bit_data_is_fixed() {
        let data: Vec<f32> = (0..=255u32).map(|b| (b as f64 / 255.0) as f32).collect();
        let x = Tensor4::from_vec([1, 1, 256, 1], data).unwrap();
        assert_eq!(quantize_input(&x, 8).unwrap(), x);
    }

    #[test]
    fn e4m3_constants() {
        let f = Minifloat::E4M3;
        assert_eq!(f.bias(), 7);
        assert_eq!(f.max_finite(), 240.0);
        assert_eq!(f.min_subnormal(), 2f64.powi(-9));
        assert_eq!(f.quantize(0.5), 0.5);
        assert_eq!(f.quantize(1e6), 240.0);
        assert_eq!(f.quantize(-1e6), -240.0);
        assert_eq!(f.quantize(f64::INFINITY), 240.0);
        assert_eq!(f.quantize(248.0), 240.0);
        // 1.0625 sits halfway between 1.0 (even) and 1.125
        assert_eq!(f.quantize(1.0625), 1.0);
        assert_eq!(f.quantize(1.1875), 1.25);
        assert!(f.quantize(f64::NAN).is_nan());
    }

    #[test]
    fn e4m3_matches_brute_force() {
        let mut x = -300.0;
        while x <= 300.0 {
            assert_eq!(Minifloat::E4M3.quantize(x), e4m3_oracle(x), "x = {x}");
            x += 0.013;
        }
        for b in 0..=255u8 {
            if let Some(v) = decode_e4m3(b) {
                assert_eq!(Minifloat::E4M3.quantize(v), v);
                let next = decode_e4m3(b.wrapping_add(1)).filter(|_| b & 0x7f < 0x77);
                if let Some(n) = next {
                    let mid = (v + n) / 2.0;
                    assert_eq!(Minifloat::E4M3.quantize(mid), e4m3_oracle(mid), "tie {mid}");
                }
            }
        }
    }

    #[test]
    fn f16_third() {
        let q = Minifloat::F16.quantize(1.0 / 3.0);
        assert!(((q - 1.0 / 3.0) / (1.0 / 3.0)).abs() <= 2f64.powi(-11));
        assert_eq!(q, f16::from_f64(1.0 / 3.0).to_f64());
        assert_eq!(Minifloat::F16.quantize(0.5), 0.5);
        assert_eq!(Minifloat::F16.max_finite(), 65504.0);
        assert_eq!(Minifloat::F16.quantize(1e6), f64::INFINITY);
    }

    #[test]
    fn format_parsing() {
        assert_eq!("f8".parse::<WeightFormat>().unwrap(), WeightFormat::F8);
        assert_eq!("FLOAT16".parse::<WeightFormat>().unwrap(), WeightFormat::F16);
        assert!("f4".parse::<WeightFormat>().is_err());
        assert_eq!(WeightFormat::F32.to_string(), "f32");
    }

    proptest! {
        #[test]
        fn f16_matches_reference(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let want = f16::from_f64(x).to_f64();
            let got = Minifloat::F16.quantize(x);
            prop_assert!(got == want || (got.is_nan() && want.is_nan()), "{x}: {got} vs {want}");
        }

        #[test]
        fn f16_matches_reference_in_range(x in -70000.0f64..70000.0) {
            prop_assert_eq!(Minifloat::F16.quantize(x), f16::from_f64(x).to_f64());
        }

        #[test]
        fn f16_subnormals(x in -1e-4f64..1e-4) {
            prop_assert_eq!(Minifloat::F16.quantize(x), f16::from_f64(x).to_f64());
        }

        #[test]
        fn formats_idempotent(x in -1e5f64..1e5) {
            for f in WeightFormat::ALL {
                let q = f.quantize(x);
                prop_assert_eq!(f.quantize(q), q);
            }
            let h = WeightFormat::F16.quantize(x);
            prop_assert_eq!(WeightFormat::F16.quantize(WeightFormat::F32.quantize(x)), h);
        }

        #[test]
        fn input_bound_and_idempotence(v in 0.0f64..=1.0, b in 1u32..=8) {
            let x = Tensor4::from_vec([1, 1, 1, 1], vec![v]).unwrap();
            let q = quantize_input(&x, b).unwrap();
            let levels = ((1u32 << b) - 1) as f64;
            prop_assert!((q.data()[0] - v).abs() <= 1.0 / (2.0 * levels) + 1e-15);
            prop_assert_eq!(quantize_input(&q, b).unwrap(), q);
        }
    }
}
