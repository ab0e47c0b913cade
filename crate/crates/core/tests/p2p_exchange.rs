use std::collections::{BTreeMap, BTreeSet};

use hfltn_core::p2p::*;
use hfltn_core::ring::ring_sum;
use hfltn_core::rng::seeded;
use hfltn_core::{partition, ClientId, Error, FixedPointCodec, RingVector, SecretShare};
use proptest::prelude::*;
use rand::RngCore;

fn entry(id: ClientId) -> RosterEntry {
    RosterEntry { id, community: 0, transitory: false, available: true }
}

fn group_of(sel: PeerSelection) -> PeerGroup {
    match sel {
        PeerSelection::Group(g) => g,
        PeerSelection::Fallback => panic!("unexpected fallback"),
    }
}

#[test]
fn five_available_peers_form_one_group() {
    let roster: Vec<_> = (0..6).map(entry).collect();
    let g = group_of(select_peers(&roster[0], &roster, 0, &PairingLedger::new(), MAX_PEERS));
    assert_eq!(g.members.len(), 5);
}

#[test]
fn single_peer_means_fallback() {
    let roster = vec![entry(0), entry(1)];
    assert_eq!(select_peers(&roster[0], &roster, 0, &PairingLedger::new(), MAX_PEERS), PeerSelection::Fallback);
}

/// Brute-force oracle: score every eligible peer and pick the ten smallest
/// (never-paired first, then oldest pairing round, then id).
#[test]
fn twelve_peers_least_recently_paired() {
    let roster: Vec<_> = (0..13).map(entry).collect();
    let mut ledger = PairingLedger::new();
    let history: [(u32, &[ClientId]); 3] = [(0, &[1, 2, 3, 4]), (1, &[5, 6, 7]), (2, &[2, 8, 12])];
    for (round, members) in history {
        ledger.record(&PeerGroup { owner_id: 0, members: members.to_vec(), formed_at_round: round });
    }
    let g = group_of(select_peers(&roster[0], &roster, 3, &ledger, MAX_PEERS));
    assert_eq!(g.members.len(), 10);

    let mut last: BTreeMap<ClientId, i64> = (1..13).map(|p| (p, -1)).collect();
    for (round, members) in history {
        for &m in members {
            last.insert(m, round as i64);
        }
    }
    let mut scored: Vec<(i64, ClientId)> = last.iter().map(|(&p, &r)| (r, p)).collect();
    scored.sort();
    let expected: BTreeSet<ClientId> = scored[..10].iter().map(|&(_, p)| p).collect();
    let got: BTreeSet<ClientId> = g.members.iter().copied().collect();
    assert_eq!(got, expected);
    assert!(!got.contains(&8) && !got.contains(&12));
}

#[test]
fn distribute_examples() {
    let mut rng = seeded(2);
    let rv = RingVector::from_elems(vec![1, 2, 3]);
    let g = PeerGroup { owner_id: 0, members: vec![7, 8], formed_at_round: 0 };
    let d = distribute_shares(partition(&rv, 3, 0, &mut rng).unwrap(), &g).unwrap();
    let idx: Vec<_> = d.outgoing.iter().map(|(p, s)| (*p, s.share_index)).collect();
    assert_eq!(idx, vec![(7, 0), (8, 1)]);
    assert_eq!(d.retained.share_index, 2);

    let g = PeerGroup { owner_id: 0, members: (1..=10).collect(), formed_at_round: 0 };
    let d = distribute_shares(partition(&rv, 11, 0, &mut rng).unwrap(), &g).unwrap();
    let peers: BTreeSet<_> = d.outgoing.iter().map(|(p, _)| *p).collect();
    let indices: BTreeSet<_> = d.outgoing.iter().map(|(_, s)| s.share_index).collect();
    assert_eq!(peers, (1..=10).collect());
    assert_eq!(indices, (0..10).collect());

    let g = PeerGroup { owner_id: 0, members: vec![1, 2, 3], formed_at_round: 0 };
    assert_eq!(
        distribute_shares(partition(&rv, 3, 0, &mut rng).unwrap(), &g).unwrap_err(),
        Error::ShareCountMismatch { shares: 3, members: 3 }
    );
}

fn share(x: u64) -> SecretShare {
    SecretShare { sender_id: 0, share_index: 0, share_count: 2, payload: RingVector::from_elems(vec![x]) }
}

#[test]
fn augment_examples() {
    let codec = FixedPointCodec::default();
    let cfg = AugmentationConfig::default();
    let (r, a, b) = (u64::MAX - 1, u64::MAX, 7);
    let c = augment(3, &share(r), &[share(a), share(b)], &cfg, &codec).unwrap();
    assert_eq!(c.parts[0].elems(), &[r.wrapping_add(a).wrapping_add(b)]);
    assert_eq!(c.path, ContributionPath::P2pAugmented);
    assert_eq!(augment(3, &share(r), &[], &cfg, &codec).unwrap().parts[0].elems(), &[r]);
}

struct Round {
    encoded: Vec<RingVector>,
    contributions: Vec<Contribution>,
    /// receiver -> every share it observed
    inbox: BTreeMap<ClientId, Vec<SecretShare>>,
    ks: BTreeMap<ClientId, usize>,
}

/// Runs partition/distribute/augment for a whole community, with some members
/// transitory, and collects every peer message.
fn community_round(n: u32, transitory: &[ClientId], dim: usize, seed: u64) -> Round {
    let mut rng = seeded(seed);
    let roster: Vec<RosterEntry> =
        (0..n).map(|id| RosterEntry { transitory: transitory.contains(&id), ..entry(id) }).collect();
    let encoded: Vec<RingVector> =
        (0..n).map(|_| RingVector::from_elems((0..dim).map(|_| rng.next_u64()).collect())).collect();
    let ledger = PairingLedger::new();
    let mut inbox: BTreeMap<ClientId, Vec<SecretShare>> = BTreeMap::new();
    let mut plans = Vec::new();
    let mut ks = BTreeMap::new();
    for e in &roster {
        let sel = if e.transitory { PeerSelection::Fallback } else { select_peers(e, &roster, 0, &ledger, MAX_PEERS) };
        match sel {
            PeerSelection::Group(g) => {
                let k = g.members.len() + 1;
                ks.insert(e.id, k);
                let d = distribute_shares(partition(&encoded[e.id as usize], k, e.id, &mut rng).unwrap(), &g).unwrap();
                for (to, s) in d.outgoing {
                    inbox.entry(to).or_default().push(s);
                }
                plans.push((e.id, Some(d.retained), None));
            }
            PeerSelection::Fallback => {
                ks.insert(e.id, 3);
                let shares = partition(&encoded[e.id as usize], 3, e.id, &mut rng).unwrap();
                plans.push((e.id, None, Some(shares)));
            }
        }
    }
    let codec = FixedPointCodec::default();
    let contributions = plans
        .into_iter()
        .map(|(id, retained, direct)| {
            let recv = inbox.get(&id).cloned().unwrap_or_default();
            match (retained, direct) {
                (Some(r), _) => augment(id, &r, &recv, &AugmentationConfig::default(), &codec).unwrap(),
                (None, Some(s)) => direct_contribution(id, s, &recv, ContributionPath::TransitoryDirect).unwrap(),
                _ => unreachable!(),
            }
        })
        .collect();
    Round { encoded, contributions, inbox, ks }
}

#[test]
fn three_ev_exactness() {
    let r = community_round(3, &[], 16, 9);
    let total = ring_sum(16, r.contributions.iter().flat_map(|c| c.parts.iter())).unwrap();
    assert_eq!(total, ring_sum(16, r.encoded.iter()).unwrap());
}

#[test]
fn every_active_ev_contributes_once() {
    let r = community_round(7, &[2, 5], 4, 1);
    let ids: Vec<_> = r.contributions.iter().map(|c| c.contributor_id).collect();
    assert_eq!(ids, (0..7).collect::<Vec<_>>());
}

#[test]
fn peers_never_hold_a_full_partition() {
    let r = community_round(12, &[0, 11], 4, 3);
    for (receiver, shares) in &r.inbox {
        let mut per_owner: BTreeMap<ClientId, usize> = BTreeMap::new();
        for s in shares {
            assert_ne!(s.sender_id, *receiver);
            *per_owner.entry(s.sender_id).or_default() += 1;
        }
        for (owner, count) in per_owner {
            assert_eq!(count, 1);
            assert!(count < r.ks[&owner]);
        }
    }
}

#[test]
fn pairings_rotate_through_every_peer() {
    let n_peers = 23u32;
    let roster: Vec<_> = (0..=n_peers).map(entry).collect();
    let mut ledger = PairingLedger::new();
    let mut seen = BTreeSet::new();
    let rounds = n_peers.div_ceil(MAX_PEERS as u32);
    for t in 0..rounds {
        let g = group_of(select_peers(&roster[0], &roster, t, &ledger, MAX_PEERS));
        ledger.record(&g);
        seen.extend(g.members);
    }
    assert_eq!(seen, (1..=n_peers).collect());
}

proptest! {
    #[test]
    fn aggregate_is_preserved(n in 1u32..25, seed: u64, transitory_mask: u32) {
        let transitory: Vec<ClientId> = (0..n).filter(|i| transitory_mask >> i & 1 == 1).collect();
        let r = community_round(n, &transitory, 3, seed);
        let total = ring_sum(3, r.contributions.iter().flat_map(|c| c.parts.iter())).unwrap();
        prop_assert_eq!(total, ring_sum(3, r.encoded.iter()).unwrap());
    }
}
