//! Extended-precision reals for translations and orbit arithmetic.
//!
//! Nested domains shrink like `e^{-rate * t}`; after a few dozen rounds their
//! widths are far below what an `f64` can resolve around an O(1) center.
//! Translations and lattice orbits are therefore carried in MPFR floats,
//! while everything expressed in a domain's own renormalized frame stays `f64`.

use rug::Float;

pub use rug::Integer;

/// Working real type for positions in `H`.
pub type Real = Float;

const GUARD_BITS: u32 = 128;

/// Bits needed to resolve a domain of scale `horizon` for a semigroup whose
/// fastest contraction rate is `max_rate`.
pub fn precision_for(max_rate: f64, horizon: f64) -> u32 {
    let extra = (max_rate.max(0.0) * horizon.max(0.0) * std::f64::consts::LOG2_E).ceil();
    GUARD_BITS + extra as u32
}

pub fn real(prec: u32, x: f64) -> Real {
    Float::with_val(prec, x)
}

pub fn zeros(prec: u32, n: usize) -> Vec<Real> {
    (0..n).map(|_| Float::new(prec)).collect()
}

pub fn from_f64s(prec: u32, xs: &[f64]) -> Vec<Real> {
    xs.iter().map(|&x| real(prec, x)).collect()
}

pub fn to_f64s(xs: &[Real]) -> Vec<f64> {
    xs.iter().map(|x| x.to_f64()).collect()
}

/// `e^{x}` with the exponent itself formed at working precision.
pub fn exp_of_product(prec: u32, a: f64, b: f64) -> Real {
    let mut e = Float::with_val(prec, a);
    e *= b;
    e.exp_mut();
    e
}

/// Decimal string that parses back to the identical value at `x.prec()`.
pub fn to_decimal(x: &Real) -> String {
    let digits = (x.prec() as f64 * std::f64::consts::LOG10_2).ceil() as usize + 2;
    x.to_string_radix(10, Some(digits))
}

pub fn parse_decimal(s: &str, prec: u32) -> Option<Real> {
    Float::parse(s).ok().map(|p| Float::with_val(prec, p))
}

/// Plain copy raised (or lowered) to another precision.
pub fn with_prec(x: &Real, prec: u32) -> Real {
    Float::with_val(prec, x)
}
