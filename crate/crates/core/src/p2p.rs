//! Peer selection, share distribution and aggregate-preserving augmentation
//! for resident (non-transitory) EVs.
//!
//! An owner keeps share `K-1` of its own partition and hands shares
//! `0..K-1` to its peers, one each. Every EV then contributes its retained
//! share plus everything it received. Summed over a community this equals the
//! sum of the original encoded weights, while each individual contribution is
//! masked by peers' randomness.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ring::{FixedPointCodec, RingVector};
use crate::sharing::SecretShare;
use crate::{ClientId, CommunityId};

pub const MIN_PEERS: usize = 2;
pub const MAX_PEERS: usize = 10;

/// One row of a community roster snapshot for the current round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RosterEntry {
    pub id: ClientId,
    pub community: CommunityId,
    pub transitory: bool,
    /// Active in this round and finished local training.
    pub available: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerGroup {
    pub owner_id: ClientId,
    /// Selection order; member `j` receives share index `j`.
    pub members: Vec<ClientId>,
    pub formed_at_round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PeerSelection {
    Group(PeerGroup),
    /// Fewer than two eligible peers; shares go straight to the DERMS.
    Fallback,
}

/// Remembers the last round each (owner, peer) pair was grouped.
#[derive(Debug, Clone, Default)]
pub struct PairingLedger {
    last: BTreeMap<(ClientId, ClientId), u32>,
}

impl PairingLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_paired(&self, owner: ClientId, peer: ClientId) -> Option<u32> {
        self.last.get(&(owner, peer)).copied()
    }

    pub fn record(&mut self, group: &PeerGroup) {
        for &m in &group.members {
            self.last.insert((group.owner_id, m), group.formed_at_round);
        }
    }
}

/// Picks up to [`MAX_PEERS`] peers for `owner`.
///
/// Eligible peers are available, non-transitory members of the owner's
/// community. They are ranked least-recently-paired first (never paired
/// before anything else), ties broken by ascending id.
pub fn select_peers(
    owner: &RosterEntry,
    roster: &[RosterEntry],
    round: u32,
    ledger: &PairingLedger,
    max_group: usize,
) -> PeerSelection {
    let max_group = max_group.clamp(MIN_PEERS, MAX_PEERS);
    let mut eligible: Vec<(Option<u32>, ClientId)> = roster
        .iter()
        .filter(|e| e.id != owner.id && e.community == owner.community && !e.transitory && e.available)
        .map(|e| (ledger.last_paired(owner.id, e.id), e.id))
        .collect();
    if eligible.len() < MIN_PEERS {
        return PeerSelection::Fallback;
    }
    // None sorts before Some(_), so never-paired peers come first.
    eligible.sort_unstable();
    eligible.dedup_by_key(|e| e.1);
    let members = eligible.into_iter().take(max_group).map(|(_, id)| id).collect();
    PeerSelection::Group(PeerGroup { owner_id: owner.id, members, formed_at_round: round })
}

/// Result of handing a partition to a peer group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Distribution {
    pub outgoing: Vec<(ClientId, SecretShare)>,
    pub retained: SecretShare,
}

pub fn distribute_shares(shares: Vec<SecretShare>, group: &PeerGroup) -> Result<Distribution> {
    let k = shares.len();
    if k != group.members.len() + 1 {
        return Err(Error::ShareCountMismatch { shares: k, members: group.members.len() });
    }
    let mut shares = shares;
    shares.sort_by_key(|s| s.share_index);
    for (i, s) in shares.iter().enumerate() {
        if s.share_index as usize != i || s.share_count as usize != k {
            return Err(Error::IncompleteShareSet { expected: k, present: i });
        }
    }
    let retained = shares.pop().expect("k >= 1");
    let outgoing = group.members.iter().copied().zip(shares).collect();
    Ok(Distribution { outgoing, retained })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContributionPath {
    P2pAugmented,
    DirectFallback,
    TransitoryDirect,
    /// Ablation only: unshared encoded weights.
    Plaintext,
}

impl ContributionPath {
    pub fn as_str(self) -> &'static str {
        match self {
            ContributionPath::P2pAugmented => "p2p_augmented",
            ContributionPath::DirectFallback => "direct_fallback",
            ContributionPath::TransitoryDirect => "transitory_direct",
            ContributionPath::Plaintext => "plaintext",
        }
    }
}

/// What one EV hands to its DERMS in a round.
///
/// Augmented contributions are a single vector. Direct paths send each share
/// as its own message, so the DERMS never holds them as one vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contribution {
    pub contributor_id: ClientId,
    pub parts: Vec<RingVector>,
    pub path: ContributionPath,
}

impl Contribution {
    pub fn dim(&self) -> Option<usize> {
        self.parts.first().map(RingVector::dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationConfig {
    pub alpha: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

impl AugmentationConfig {
    pub fn is_exact(&self) -> bool {
        self.alpha == 1.0
    }
}

/// Multiplies a ring vector by a real factor through the codec. Wraps instead
/// of failing because shares decode to arbitrary magnitudes.
fn scale_ring(v: &RingVector, alpha: f64, codec: &FixedPointCodec) -> RingVector {
    RingVector::from_elems(
        v.elems().iter().map(|&e| codec.encode_scalar(codec.decode_scalar(e) * alpha)).collect(),
    )
}

/// Combines the retained share with every share received from peers.
pub fn augment(
    owner: ClientId,
    retained: &SecretShare,
    received: &[SecretShare],
    cfg: &AugmentationConfig,
    codec: &FixedPointCodec,
) -> Result<Contribution> {
    let mut acc = retained.payload.clone();
    for s in received {
        if cfg.is_exact() {
            acc.add_assign(&s.payload)?;
        } else {
            if s.payload.dim() != acc.dim() {
                return Err(Error::DimMismatch { expected: acc.dim(), found: s.payload.dim() });
            }
            acc.add_assign(&scale_ring(&s.payload, cfg.alpha, codec))?;
        }
    }
    Ok(Contribution { contributor_id: owner, parts: alloc::vec![acc], path: ContributionPath::P2pAugmented })
}

/// Sends a full share set directly. Shares received from peers, if any, are
/// folded into the last part so the community sum stays intact.
pub fn direct_contribution(
    owner: ClientId,
    shares: Vec<SecretShare>,
    received: &[SecretShare],
    path: ContributionPath,
) -> Result<Contribution> {
    let mut parts: Vec<RingVector> = shares.into_iter().map(|s| s.payload).collect();
    if let Some(last) = parts.last_mut() {
        for s in received {
            last.add_assign(&s.payload)?;
        }
    } else {
        return Err(Error::InvalidShareCount(0));
    }
    Ok(Contribution { contributor_id: owner, parts, path })
}
