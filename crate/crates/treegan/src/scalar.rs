//! Scalar abstraction over the two supported precisions.
//!
//! Everything numeric in this crate is generic over [`Scalar`]. Tests and
//! anything that feeds a finite-difference oracle run at `f64`; training
//! defaults to `f32` for speed.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

/// Element type tag used by the binary file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }
}

/// Floating-point scalar the numeric core is generic over.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssignOps
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Little-endian encoding used by the checkpoint and stats formats.
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// One standard-normal draw. Consumption from the RNG stream depends on
    /// the precision, so determinism is per precision mode.
    fn sample_normal<R: Rng>(rng: &mut R) -> Self;

    /// One draw uniform in `[lo, hi)`.
    fn sample_uniform<R: Rng>(rng: &mut R, lo: Self, hi: Self) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn of_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }

    fn sample_normal<R: Rng>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn sample_uniform<R: Rng>(rng: &mut R, lo: Self, hi: Self) -> Self {
        Uniform::new(lo, hi).expect("uniform bounds").sample(rng)
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn of_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }

    fn sample_normal<R: Rng>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn sample_uniform<R: Rng>(rng: &mut R, lo: Self, hi: Self) -> Self {
        Uniform::new(lo, hi).expect("uniform bounds").sample(rng)
    }
}
