//! Fixed-point encoding of real weights into `Z_{2^64}` and elementwise ring
//! arithmetic.
//!
//! Encoded values use two's complement: a real `x` maps to
//! `round(x * 2^scale_bits) mod 2^64`, and elements at or above `2^63` decode
//! as negative numbers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Q-format codec between `f64` weights and ring elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointCodec {
    pub scale_bits: u32,
    /// Largest magnitude `encode_vector` accepts.
    pub w_max: f64,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        Self { scale_bits: 32, w_max: (1u64 << 20) as f64 }
    }
}

impl FixedPointCodec {
    pub fn new(scale_bits: u32, w_max: f64) -> Result<Self> {
        if scale_bits == 0 || scale_bits > 62 {
            return Err(Error::InvalidParameter("scale_bits must be in 1..=62"));
        }
        if !(w_max.is_finite() && w_max > 0.0) {
            return Err(Error::InvalidParameter("w_max must be positive and finite"));
        }
        if w_max * libm::ldexp(1.0, scale_bits as i32) >= libm::ldexp(1.0, 63) {
            return Err(Error::InvalidParameter("w_max * 2^scale_bits must stay below 2^63"));
        }
        Ok(Self { scale_bits, w_max })
    }

    #[inline]
    fn scale(&self) -> f64 {
        libm::ldexp(1.0, self.scale_bits as i32)
    }

    /// True when the sum of `n` maximal-magnitude weights cannot wrap.
    pub fn supports_clients(&self, n: usize) -> bool {
        (n as f64) * self.w_max * self.scale() < libm::ldexp(1.0, 63)
    }

    /// Largest client count for which aggregation cannot wrap.
    pub fn max_clients(&self) -> usize {
        let bound = libm::ldexp(1.0, 63) / (self.w_max * self.scale());
        let n = libm::floor(bound) as usize;
        if (n as f64) == bound { n.saturating_sub(1) } else { n }
    }

    /// Worst-case absolute error of one encode/decode round trip.
    pub fn resolution(&self) -> f64 {
        libm::ldexp(1.0, -(self.scale_bits as i32 + 1))
    }

    #[inline]
    pub fn encode_scalar(&self, x: f64) -> u64 {
        (libm::round(x * self.scale()) as i64) as u64
    }

    #[inline]
    pub fn decode_scalar(&self, e: u64) -> f64 {
        (e as i64) as f64 / self.scale()
    }

    pub fn encode_vector(&self, weights: &[f64]) -> Result<RingVector> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("cannot encode an empty vector"));
        }
        let mut elems = Vec::with_capacity(weights.len());
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteWeight(index));
            }
            if libm::fabs(value) > self.w_max {
                return Err(Error::MagnitudeExceeded { index, value, w_max: self.w_max });
            }
            elems.push(self.encode_scalar(value));
        }
        Ok(RingVector { elems })
    }

    pub fn decode_vector(&self, rv: &RingVector) -> Vec<f64> {
        rv.elems.iter().map(|&e| self.decode_scalar(e)).collect()
    }
}

/// A vector of `Z_{2^64}` elements.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RingVector {
    elems: Vec<u64>,
}

impl RingVector {
    pub fn from_elems(elems: Vec<u64>) -> Self {
        Self { elems }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { elems: vec![0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.elems.len()
    }

    pub fn elems(&self) -> &[u64] {
        &self.elems
    }

    pub fn into_elems(self) -> Vec<u64> {
        self.elems
    }

    fn check_dim(&self, other: &RingVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &RingVector) -> Result<()> {
        self.check_dim(other)?;
        for (a, b) in self.elems.iter_mut().zip(&other.elems) {
            *a = a.wrapping_add(*b);
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &RingVector) -> Result<()> {
        self.check_dim(other)?;
        for (a, b) in self.elems.iter_mut().zip(&other.elems) {
            *a = a.wrapping_sub(*b);
        }
        Ok(())
    }

    pub fn neg(&self) -> RingVector {
        RingVector { elems: self.elems.iter().map(|e| e.wrapping_neg()).collect() }
    }
}

/// Elementwise sum modulo `2^64`.
pub fn ring_add(a: &RingVector, b: &RingVector) -> Result<RingVector> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

/// Ring sum of any number of equal-dimension vectors.
pub fn ring_sum<'a, I>(dim: usize, vectors: I) -> Result<RingVector>
where
    I: IntoIterator<Item = &'a RingVector>,
{
    let mut acc = RingVector::zeros(dim);
    for v in vectors {
        acc.add_assign(v)?;
    }
    Ok(acc)
}
