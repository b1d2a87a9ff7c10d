//! bfloat16 rounding emulation.
//!
//! Values stay f64 in memory; `bf16_round` snaps a value to the nearest
//! bfloat16-representable number (8 exponent bits, 7 explicit mantissa bits,
//! round-to-nearest-even). Matrix-multiply kernels round their inputs with
//! this before multiplying while accumulating in full precision.

use crate::tensor::Tensor;

/// Rounds an f32 to the nearest bfloat16-representable f32.
///
/// Round-to-nearest-even on the low 16 bits of the f32 encoding; NaN is
/// passed through unchanged, +/-0 and +/-inf are exactly representable.
pub fn bf16_round_f32(x: f32) -> f32 {
    if x.is_nan() {
        return x;
    }
    let bits = x.to_bits();
    let rounded = bits.wrapping_add(0x7FFF + ((bits >> 16) & 1)) & 0xFFFF_0000;
    f32::from_bits(rounded)
}

/// Rounds an f64 through f32 to the nearest bfloat16-representable value.
pub fn bf16_round(x: f64) -> f64 {
    bf16_round_f32(x as f32) as f64
}

/// Element-wise [`bf16_round`] over a tensor.
pub fn round_to_bfloat16(t: &Tensor) -> Tensor {
    t.map(bf16_round)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_values_pass_through() {
        assert_eq!(bf16_round(1.0), 1.0);
        assert_eq!(bf16_round(-2.5), -2.5);
        assert_eq!(bf16_round(0.0), 0.0);
    }

    #[test]
    fn specials_are_preserved() {
        let neg_zero = bf16_round(-0.0);
        assert_eq!(neg_zero, 0.0);
        assert!(neg_zero.is_sign_negative());
        assert_eq!(bf16_round(f64::INFINITY), f64::INFINITY);
        assert_eq!(bf16_round(f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert!(bf16_round(f64::NAN).is_nan());
    }

    #[test]
    fn known_rounding() {
        // 0.3 is not representable; nearest bfloat16 value is 0.30078125.
        assert_eq!(bf16_round(0.3), 0.30078125);
    }

    #[test]
    fn max_finite_f32_overflows_to_inf() {
        assert_eq!(bf16_round_f32(f32::MAX), f32::INFINITY);
        assert_eq!(bf16_round_f32(-f32::MAX), f32::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn idempotent(bits in any::<u32>()) {
            let x = f32::from_bits(bits);
            let once = bf16_round_f32(x);
            let twice = bf16_round_f32(once);
            if once.is_nan() {
                prop_assert!(twice.is_nan());
            } else {
                prop_assert_eq!(once.to_bits(), twice.to_bits());
            }
        }

        #[test]
        fn low_sixteen_bits_are_zero(bits in any::<u32>()) {
            let x = f32::from_bits(bits);
            let r = bf16_round_f32(x);
            if !r.is_nan() {
                prop_assert_eq!(r.to_bits() & 0xFFFF, 0);
            }
        }
    }
}
