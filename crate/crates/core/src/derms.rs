//! Community aggregator: secure aggregation, norm clipping, broadcast and
//! prediction records for the energy provider.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::p2p::Contribution;
use crate::ring::{FixedPointCodec, RingVector};
use crate::trainer::{Features, LocalModel, TimeScaler, FEATURE_DIM};
use crate::{Area, ClientId, CommunityId, Timestamp, DATASET_EPOCH};

pub const DEFAULT_TAU: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub theta: Vec<f64>,
    /// Number of completed aggregation rounds.
    pub round: u32,
    pub community_id: CommunityId,
}

impl GlobalModel {
    pub fn new(community_id: CommunityId, theta: Vec<f64>) -> Self {
        Self { theta, round: 0, community_id }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpdcRecord {
    pub community_id: u32,
    pub round: u32,
    pub predicted_location: u16,
    pub predicted_time: Timestamp,
}

/// Sees every vector the aggregator holds: each received message payload and
/// each intermediate accumulator.
pub trait AggregationObserver {
    fn observe(&mut self, v: &RingVector);
}

impl AggregationObserver for () {
    fn observe(&mut self, _: &RingVector) {}
}

impl AggregationObserver for Vec<RingVector> {
    fn observe(&mut self, v: &RingVector) {
        self.push(v.clone());
    }
}

fn check_contributions(contributions: &[Contribution]) -> Result<usize> {
    let first = contributions.first().ok_or(Error::EmptyRound)?;
    let dim = first.dim().ok_or(Error::EmptyRound)?;
    let mut seen = BTreeSet::new();
    for c in contributions {
        if !seen.insert(c.contributor_id) {
            return Err(Error::DuplicateContributor(c.contributor_id));
        }
        if c.parts.is_empty() {
            return Err(Error::InvalidShareCount(0));
        }
        for p in &c.parts {
            if p.dim() != dim {
                return Err(Error::DimMismatch { expected: dim, found: p.dim() });
            }
        }
    }
    Ok(dim)
}

/// Averages contributions without forming any single client's vector.
///
/// Parts are accumulated index-major: part 0 of every contribution, then
/// part 1, and so on. Multi-part contributions therefore never sit together
/// in the accumulator on their own.
pub fn secure_aggregate<O: AggregationObserver>(
    contributions: &[Contribution],
    codec: &FixedPointCodec,
    observer: &mut O,
) -> Result<Vec<f64>> {
    let dim = check_contributions(contributions)?;
    let max_parts = contributions.iter().map(|c| c.parts.len()).max().unwrap_or(0);
    let mut acc = RingVector::zeros(dim);
    for p in 0..max_parts {
        for c in contributions {
            if let Some(part) = c.parts.get(p) {
                observer.observe(part);
                acc.add_assign(part)?;
                observer.observe(&acc);
            }
        }
    }
    let n = contributions.len() as f64;
    Ok(codec.decode_vector(&acc).into_iter().map(|x| x / n).collect())
}

/// Plain FedAvg over share sets: rebuilds each client's encoded weights,
/// decodes them and averages. Used when secure aggregation is switched off.
pub fn reconstructing_aggregate<O: AggregationObserver>(
    contributions: &[Contribution],
    codec: &FixedPointCodec,
    observer: &mut O,
) -> Result<Vec<f64>> {
    let dim = check_contributions(contributions)?;
    let mut acc = RingVector::zeros(dim);
    for c in contributions {
        for part in &c.parts {
            observer.observe(part);
        }
        let own = crate::ring::ring_sum(dim, c.parts.iter())?;
        observer.observe(&own);
        acc.add_assign(&own)?;
    }
    let n = contributions.len() as f64;
    Ok(codec.decode_vector(&acc).into_iter().map(|x| x / n).collect())
}

fn l2(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum::<f64>())
}

/// Clips `theta` into the L2 ball of radius `tau`.
pub fn normalize(theta: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau.is_nan() || tau <= 0.0 || tau.is_infinite() {
        return Err(Error::InvalidParameter("tau must be positive and finite"));
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let norm = l2(theta);
    if norm <= tau {
        return Ok(theta.to_vec());
    }
    let mut s = tau / norm;
    loop {
        let out: Vec<f64> = theta.iter().map(|x| x * s).collect();
        // rounding can leave the result a hair outside the ball
        if l2(&out) <= tau {
            return Ok(out);
        }
        s *= 1.0 - f64::EPSILON;
    }
}

/// Installs the new global weights and returns one copy per active client.
pub fn update_and_broadcast(model: &mut GlobalModel, theta_norm: Vec<f64>, active: &[ClientId]) -> Result<Vec<(ClientId, Vec<f64>)>> {
    if theta_norm.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    model.theta = theta_norm;
    model.round += 1;
    Ok(active.iter().map(|&c| (c, model.theta.clone())).collect())
}

/// Mean dense feature vector of a community's recent trips.
pub fn community_summary(features: &[Features]) -> Result<[f64; FEATURE_DIM]> {
    if features.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = [0.0; FEATURE_DIM];
    for f in features {
        for (s, x) in sum.iter_mut().zip(f.to_dense()) {
            *s += x;
        }
    }
    let n = features.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

/// Forward pass of the community model on its feature summary.
pub fn emit_prediction<M: LocalModel>(
    model: &GlobalModel,
    layout: &M,
    summary: &[f64; FEATURE_DIM],
    scaler: &TimeScaler,
) -> Result<EpdcRecord> {
    if model.round == 0 {
        return Err(Error::UntrainedModel);
    }
    let (loc, t) = layout.unflatten(&model.theta)?.forward_dense(summary);
    Ok(EpdcRecord {
        community_id: model.community_id,
        round: model.round,
        predicted_location: loc as u16,
        predicted_time: scaler.unscale(t).max(DATASET_EPOCH),
    })
}

/// Demand picture of one community as seen by the energy provider.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DemandProfile {
    pub locations: BTreeMap<Area, u64>,
    /// Keyed by UTC hour of day.
    pub hours: BTreeMap<u8, u64>,
}

impl DemandProfile {
    pub fn total(&self) -> u64 {
        self.locations.values().sum()
    }
}

pub fn epdc_ingest(records: &[EpdcRecord]) -> BTreeMap<CommunityId, DemandProfile> {
    let mut map: BTreeMap<CommunityId, DemandProfile> = BTreeMap::new();
    for r in records {
        let p = map.entry(r.community_id).or_default();
        *p.locations.entry(r.predicted_location as Area).or_default() += 1;
        let hour = r.predicted_time.rem_euclid(86_400) / 3600;
        *p.hours.entry(hour as u8).or_default() += 1;
    }
    map
}
