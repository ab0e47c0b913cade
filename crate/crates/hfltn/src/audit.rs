//! Privacy checks run alongside the simulation.
//!
//! (a) nothing the aggregator holds equals a client's encoded weights,
//! (b) no peer collects a full share set of someone else's partition,
//! (c) share bytes seen by peers look uniform.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use hfltn_core::derms::AggregationObserver;
use hfltn_core::{ClientId, CommunityId, RingVector, SecretShare};

/// Share bytes sampled for the uniformity test per run.
pub const BYTE_SAMPLE_LIMIT: u64 = 1_000_000;
pub const UNIFORMITY_ALPHA: f64 = 0.001;

#[derive(Debug, Default)]
pub struct PrivacyAuditor {
    encoded: HashMap<RingVector, (ClientId, CommunityId)>,
    contributors: BTreeMap<CommunityId, usize>,
    peer_counts: BTreeMap<(ClientId, ClientId), usize>,
    pub derms_observations: u64,
    pub reconstruction_hits: u64,
    pub peer_observations: u64,
    pub threshold_hits: u64,
    byte_hist: Vec<u64>,
    bytes_sampled: u64,
    pub rounds_audited: u64,
}

impl PrivacyAuditor {
    pub fn new() -> Self {
        Self { byte_hist: vec![0; 256], ..Self::default() }
    }

    pub fn begin_round(&mut self) {
        self.encoded.clear();
        self.contributors.clear();
        self.peer_counts.clear();
        self.rounds_audited += 1;
    }

    /// Records a client's encoded local weights before they leave the client.
    pub fn register_client(&mut self, id: ClientId, community: CommunityId, encoded: &RingVector) {
        self.encoded.insert(encoded.clone(), (id, community));
        *self.contributors.entry(community).or_default() += 1;
    }

    /// Peer `receiver` deserialized `share`.
    pub fn peer_received(&mut self, receiver: ClientId, share: &SecretShare) {
        self.peer_observations += 1;
        let n = self.peer_counts.entry((receiver, share.sender_id)).or_default();
        *n += 1;
        if *n >= share.share_count as usize {
            self.threshold_hits += 1;
        }
        for e in share.payload.elems() {
            if self.bytes_sampled >= BYTE_SAMPLE_LIMIT {
                break;
            }
            for b in e.to_le_bytes() {
                self.byte_hist[b as usize] += 1;
            }
            self.bytes_sampled += 8;
        }
    }

    /// Observer for one community's aggregator.
    pub fn derms_view(&mut self, community: CommunityId) -> DermsView<'_> {
        DermsView { auditor: self, community }
    }

    pub fn report(&self) -> PrivacyReport {
        let (chi2, p_value) = if self.bytes_sampled == 0 {
            (f64::NAN, f64::NAN)
        } else {
            chi_square_uniform(&self.byte_hist)
        };
        PrivacyReport {
            rounds_audited: self.rounds_audited,
            derms_observations: self.derms_observations,
            reconstruction_hits: self.reconstruction_hits,
            peer_observations: self.peer_observations,
            threshold_hits: self.threshold_hits,
            bytes_sampled: self.bytes_sampled,
            chi2,
            p_value,
        }
    }
}

pub struct DermsView<'a> {
    auditor: &'a mut PrivacyAuditor,
    community: CommunityId,
}

impl AggregationObserver for DermsView<'_> {
    fn observe(&mut self, v: &RingVector) {
        let a = &mut *self.auditor;
        a.derms_observations += 1;
        // with a single contributor the aggregate is that client's weights
        if a.contributors.get(&self.community).copied().unwrap_or(0) < 2 {
            return;
        }
        if a.encoded.contains_key(v) {
            a.reconstruction_hits += 1;
        }
    }
}

/// Pearson statistic and upper-tail p-value against a uniform histogram.
pub fn chi_square_uniform(hist: &[u64]) -> (f64, f64) {
    let total: u64 = hist.iter().sum();
    let expected = total as f64 / hist.len() as f64;
    let stat: f64 = hist.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((hist.len() - 1) as f64).expect("positive degrees of freedom");
    (stat, 1.0 - dist.cdf(stat))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyReport {
    pub rounds_audited: u64,
    pub derms_observations: u64,
    pub reconstruction_hits: u64,
    pub peer_observations: u64,
    pub threshold_hits: u64,
    pub bytes_sampled: u64,
    pub chi2: f64,
    pub p_value: f64,
}

impl PrivacyReport {
    pub fn non_reconstruction(&self) -> bool {
        self.reconstruction_hits == 0
    }

    pub fn below_threshold(&self) -> bool {
        self.threshold_hits == 0
    }

    pub fn uniform_shares(&self) -> bool {
        self.bytes_sampled >= 100_000 && self.p_value > UNIFORMITY_ALPHA
    }

    pub fn all_pass(&self) -> bool {
        self.non_reconstruction() && self.below_threshold() && self.uniform_shares()
    }

    pub fn render(&self) -> String {
        let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
        let mut s = String::new();
        let _ = writeln!(s, "rounds_audited = {}", self.rounds_audited);
        let _ = writeln!(
            s,
            "non_reconstruction = {} ({} hits over {} aggregator observations)",
            verdict(self.non_reconstruction()),
            self.reconstruction_hits,
            self.derms_observations
        );
        let _ = writeln!(
            s,
            "peer_threshold = {} ({} full share sets over {} peer observations)",
            verdict(self.below_threshold()),
            self.threshold_hits,
            self.peer_observations
        );
        let _ = writeln!(
            s,
            "share_uniformity = {} (chi2 {:.3}, p {:.4}, {} bytes)",
            verdict(self.uniform_shares()),
            self.chi2,
            self.p_value,
            self.bytes_sampled
        );
        s
    }
}
