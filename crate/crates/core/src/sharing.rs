//! K-way additive secret sharing over `Z_{2^64}`.

use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::ring::RingVector;
use crate::ClientId;

/// One additive share of a sender's encoded vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretShare {
    pub sender_id: ClientId,
    pub share_index: u16,
    pub share_count: u16,
    pub payload: RingVector,
}

/// Splits `rv` into `k` shares whose ring sum is `rv`.
///
/// Shares `0..k-1` are fresh uniform vectors; the last share absorbs the
/// difference.
pub fn partition<R: RngCore + ?Sized>(
    rv: &RingVector,
    k: usize,
    sender_id: ClientId,
    rng: &mut R,
) -> Result<Vec<SecretShare>> {
    if k < 2 {
        return Err(Error::InvalidShareCount(k));
    }
    if k > u16::MAX as usize {
        return Err(Error::InvalidParameter("share count exceeds 65535"));
    }
    let dim = rv.dim();
    let mut last = rv.clone();
    let mut shares = Vec::with_capacity(k);
    for index in 0..k - 1 {
        let mask: Vec<u64> = (0..dim).map(|_| rng.next_u64()).collect();
        let mask = RingVector::from_elems(mask);
        last.sub_assign(&mask)?;
        shares.push(SecretShare {
            sender_id,
            share_index: index as u16,
            share_count: k as u16,
            payload: mask,
        });
    }
    shares.push(SecretShare {
        sender_id,
        share_index: (k - 1) as u16,
        share_count: k as u16,
        payload: last,
    });
    Ok(shares)
}

/// Ring-sums a complete share set. Refuses anything short of all `K` indices.
pub fn reconstruct(shares: &[SecretShare]) -> Result<RingVector> {
    let first = shares.first().ok_or(Error::IncompleteShareSet { expected: 2, present: 0 })?;
    let k = first.share_count as usize;
    let dim = first.payload.dim();
    let mut seen = alloc::vec![false; k.max(1)];
    let mut present = 0;
    for s in shares {
        if s.share_count as usize != k {
            return Err(Error::InvalidParameter("shares disagree on share_count"));
        }
        if s.sender_id != first.sender_id {
            return Err(Error::InvalidParameter("shares come from different senders"));
        }
        if s.payload.dim() != dim {
            return Err(Error::DimMismatch { expected: dim, found: s.payload.dim() });
        }
        let idx = s.share_index as usize;
        if idx >= k || seen[idx] {
            return Err(Error::InvalidParameter("duplicate or out-of-range share index"));
        }
        seen[idx] = true;
        present += 1;
    }
    if k < 2 || present != k {
        return Err(Error::IncompleteShareSet { expected: k, present });
    }
    let mut acc = RingVector::zeros(dim);
    for s in shares {
        acc.add_assign(&s.payload)?;
    }
    Ok(acc)
}
