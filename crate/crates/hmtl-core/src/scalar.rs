use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Floating-point scalar every numeric routine in this crate is generic over:
/// `f32` or `f64` in practice.
pub trait Scalar: RealField + ToPrimitive + Copy {}

impl<T> Scalar for T where T: RealField + ToPrimitive + Copy {}

/// Embeds an `f64` constant into the working scalar type.
#[inline]
pub fn real<T: Scalar>(x: f64) -> T {
    nalgebra::convert(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_round_trips_f64() {
        let x: f64 = real(0.625);
        assert_eq!(x, 0.625);
        let y: f32 = real(0.25);
        assert_eq!(y, 0.25f32);
    }

    #[test]
    fn scalar_methods_resolve() {
        fn probe<T: Scalar>(x: T) -> T {
            (x.sqrt() + x.ln().abs()).max(T::zero())
        }
        assert!(probe(2.0f64).is_finite());
        assert!(probe(2.0f32).is_finite());
    }
}
