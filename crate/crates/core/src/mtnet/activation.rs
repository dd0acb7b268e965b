//! Vectorizable hyperbolic tangent.
//!
//! The hidden activation dominates the non-GEMM cost of a gradient
//! evaluation, and the platform `tanh` does not vectorize. This version
//! goes through `expm1` on a reduced argument and stays within a few ulp of
//! the platform result. It uses only IEEE add/mul/div (no fused ops), so the
//! wide and scalar code paths give identical bits.

/// ln 2 split so that k·LN2_HI is exact for the k that occur here.
const LN2_HI: f64 = f64::from_bits(0x3fe6_2e42_fee0_0000);
const LN2_LO: f64 = f64::from_bits(0x3dea_39ef_3579_3c76);

/// Beyond this |x|, tanh(x) rounds to ±1.
const SATURATION: f64 = 20.0;

/// 1/n! for n = 13 down to 2, for the expm1 Taylor series.
const INV_FACTORIALS: [f64; 12] = [
    1.0 / 6_227_020_800.0,
    1.0 / 479_001_600.0,
    1.0 / 39_916_800.0,
    1.0 / 3_628_800.0,
    1.0 / 362_880.0,
    1.0 / 40_320.0,
    1.0 / 5_040.0,
    1.0 / 720.0,
    1.0 / 120.0,
    1.0 / 24.0,
    1.0 / 6.0,
    0.5,
];

#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    // Work on |x| so the result is exactly odd and expm1 never cancels.
    // Written as a select (not `min`) so NaN propagates.
    let a = x.abs();
    let y = 2.0 * if a > SATURATION { SATURATION } else { a };
    // y = k·ln 2 + r with |r| ≤ ln2/2 and k ≥ 0.
    let k = (y * std::f64::consts::LOG2_E).round();
    let r = (y - k * LN2_HI) - k * LN2_LO;
    let mut p = INV_FACTORIALS[0];
    for &c in &INV_FACTORIALS[1..] {
        p = p * r + c;
    }
    let expm1_r = r + r * r * p;
    let scale = f64::from_bits(((k as i64 + 1023) as u64) << 52);
    let expm1_y = if k == 0.0 { expm1_r } else { scale * (1.0 + expm1_r) - 1.0 };
    (expm1_y / (expm1_y + 2.0)).copysign(x)
}

#[inline(always)]
fn tanh_in_place_generic(values: &mut [f64]) {
    for v in values {
        *v = tanh(*v);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn tanh_in_place_avx2(values: &mut [f64]) {
    tanh_in_place_generic(values)
}

/// Applies [`tanh`] to every element, using wide vectors when available.
pub fn tanh_in_place(values: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the required CPU feature was detected at runtime.
            unsafe { tanh_in_place_avx2(values) };
            return;
        }
    }
    tanh_in_place_generic(values)
}
