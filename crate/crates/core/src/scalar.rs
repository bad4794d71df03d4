//! Scalar abstraction: the library is generic over the underlying real field.
//!
//! Every numeric routine works over any [`Real`] (in practice `f64` or `f32`);
//! complex arithmetic is layered on top via `num_complex::Complex`.

use std::fmt;

use num_complex::Complex;
use num_traits::{Float, FromPrimitive, NumAssign};

/// Real scalar the whole crate is generic over.
pub trait Real:
    Float + NumAssign + FromPrimitive + fmt::Debug + fmt::Display + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float + NumAssign + FromPrimitive + fmt::Debug + fmt::Display + Send + Sync + 'static
{
}

/// Complex scalar over a real field.
pub type C<R> = Complex<R>;

/// Complex vector.
pub type CVec<R> = Vec<C<R>>;

/// Converts an `f64` constant into the generic real type.
#[inline]
pub fn rc<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("constant representable in the real type")
}

/// Complex constant from real/imaginary `f64` parts.
#[inline]
pub fn cc<R: Real>(re: f64, im: f64) -> C<R> {
    Complex::new(rc(re), rc(im))
}

/// Whether the scalars are complex or constrained to the real locus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarMode {
    Complex,
    Real,
}

impl ScalarMode {
    pub fn is_real(self) -> bool {
        matches!(self, ScalarMode::Real)
    }
}

/// Euclidean norm of a complex vector.
pub fn vec_norm<R: Real>(v: &[C<R>]) -> R {
    v.iter()
        .map(|z| z.norm_sqr())
        .fold(R::zero(), |a, b| a + b)
        .sqrt()
}

/// Squared Euclidean norm.
pub fn vec_norm_sqr<R: Real>(v: &[C<R>]) -> R {
    v.iter().map(|z| z.norm_sqr()).fold(R::zero(), |a, b| a + b)
}

/// Hermitian inner product `u^H v` (conjugate-linear in the first slot).
pub fn vec_dot<R: Real>(u: &[C<R>], v: &[C<R>]) -> C<R> {
    debug_assert_eq!(u.len(), v.len());
    u.iter()
        .zip(v)
        .map(|(a, b)| a.conj() * b)
        .fold(C::new(R::zero(), R::zero()), |a, b| a + b)
}

/// `u - v` elementwise.
pub fn vec_sub<R: Real>(u: &[C<R>], v: &[C<R>]) -> CVec<R> {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a - b).collect()
}

/// `u + v` elementwise.
pub fn vec_add<R: Real>(u: &[C<R>], v: &[C<R>]) -> CVec<R> {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a + b).collect()
}

/// Largest absolute entry.
pub fn vec_max_abs<R: Real>(v: &[C<R>]) -> R {
    v.iter().map(|z| z.norm()).fold(R::zero(), R::max)
}
