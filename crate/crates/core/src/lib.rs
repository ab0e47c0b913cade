//! Protocol core for hierarchical federated learning across electric
//! vehicles, community aggregators and an energy provider.
//!
//! Everything here is deterministic given a seed and needs only `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod datagen;
pub mod derms;
pub mod error;
pub mod p2p;
pub mod ring;
pub mod rng;
pub mod scheduler;
pub mod sharing;
pub mod trainer;
pub mod wire;

pub use error::{Error, Result};
pub use ring::{FixedPointCodec, RingVector};
pub use sharing::{partition, reconstruct, SecretShare};

pub type ClientId = u32;
pub type CommunityId = u32;
/// Community area index in `0..77`.
pub type Area = u8;
/// Unix seconds.
pub type Timestamp = i64;

pub const N_AREAS: usize = 77;
/// 2023-01-01T00:00:00Z, start of the synthetic trip window.
pub const DATASET_EPOCH: Timestamp = 1_672_531_200;
