//! Round-by-round simulation of EVs, community aggregators and the energy
//! provider over the in-memory network.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use log::{debug, warn};
use rayon::prelude::*;

use hfltn_core::derms::{self, EpdcRecord, GlobalModel};
use hfltn_core::p2p::{
    self, AugmentationConfig, Contribution, ContributionPath, PairingLedger, PeerSelection, RosterEntry,
};
use hfltn_core::rng::{domain, stream};
use hfltn_core::scheduler::{per_epoch_diversity, Scheduler, SchedulerConfig};
use hfltn_core::trainer::{DualTaskModel, Evaluation, LocalModel, TrainConfig, FEATURE_DIM};
use hfltn_core::wire::{self, WireMessage};
use hfltn_core::{partition, ClientId, CommunityId, FixedPointCodec, RingVector, SecretShare};

use crate::audit::PrivacyAuditor;
use crate::config::{Ablation, ExperimentConfig};
use crate::dataset::Dataset;
use crate::metrics::{generalization_gap_pct, RoundMetrics};
use crate::net::{Census, NetError, Network, NodeId};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Core(#[from] hfltn_core::Error),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("unexpected {0} message")]
    UnexpectedMessage(&'static str),
}

/// Population-level evaluation of the current community models.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationEval {
    pub train: Evaluation,
    pub val: Evaluation,
    pub test: Evaluation,
    /// Training-split loss over clients that have participated so far.
    pub seen_train: Evaluation,
}

/// What happened in one round beyond the metrics row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundTrace {
    pub active: Vec<ClientId>,
    pub trained: Vec<ClientId>,
    pub skipped: Vec<ClientId>,
    pub paths: BTreeMap<ContributionPath, u64>,
    /// Theta each community installed this round, after normalisation.
    pub installed: BTreeMap<CommunityId, Vec<f64>>,
}

pub struct World {
    cfg: ExperimentConfig,
    data: Arc<Dataset>,
    codec: FixedPointCodec,
    layout: DualTaskModel,
    train_cfg: TrainConfig,
    scheduler: Scheduler,
    ledgers: Vec<PairingLedger>,
    models: Vec<GlobalModel>,
    summaries: Vec<Option<[f64; FEATURE_DIM]>>,
    net: Network,
    pub auditor: PrivacyAuditor,
    epdc_records: Vec<EpdcRecord>,
    census: Census,
    paths: BTreeMap<ContributionPath, u64>,
    clock_ms: f64,
    round: u64,
    last_trace: RoundTrace,
}

impl World {
    pub fn new(cfg: ExperimentConfig, data: Arc<Dataset>) -> Result<Self, RuntimeError> {
        let codec = FixedPointCodec::default();
        let layout = DualTaskModel::zeros();
        let roster: Vec<ClientId> = data.clients.iter().map(|c| c.ev.id).collect();
        let scheduler = Scheduler::new(
            roster,
            SchedulerConfig { cap: cfg.cap, capping: cfg.capping(), rotation: cfg.rotation() },
        )?;
        let communities = data.communities;
        let models = (0..communities).map(|c| GlobalModel::new(c as CommunityId, layout.flatten())).collect();
        let summaries = (0..communities)
            .map(|c| {
                let feats: Vec<_> = data
                    .clients
                    .iter()
                    .filter(|d| d.community == c as CommunityId)
                    .flat_map(|d| d.recent.iter().copied())
                    .collect();
                derms::community_summary(&feats).ok()
            })
            .collect();
        let train_cfg = TrainConfig {
            epochs: cfg.local_epochs,
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            lambda: cfg.lambda,
            w_max: codec.w_max,
        };
        Ok(Self {
            ledgers: vec![PairingLedger::new(); communities],
            cfg,
            data,
            codec,
            layout,
            train_cfg,
            scheduler,
            models,
            summaries,
            net: Network::new(),
            auditor: PrivacyAuditor::new(),
            epdc_records: Vec::new(),
            census: Census::default(),
            paths: BTreeMap::new(),
            clock_ms: 0.0,
            round: 0,
            last_trace: RoundTrace::default(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn models(&self) -> &[GlobalModel] {
        &self.models
    }

    pub fn epdc_records(&self) -> &[EpdcRecord] {
        &self.epdc_records
    }

    pub fn census(&self) -> &Census {
        &self.census
    }

    pub fn path_counts(&self) -> &BTreeMap<ContributionPath, u64> {
        &self.paths
    }

    pub fn last_trace(&self) -> &RoundTrace {
        &self.last_trace
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn community_of(&self, id: ClientId) -> CommunityId {
        self.data.clients[id as usize].community
    }

    fn is_poisoned(&self, id: ClientId) -> bool {
        (id as usize) < self.cfg.poisoned_clients
    }

    /// Evaluates every client's splits under its community's current model.
    pub fn evaluate(&self) -> Result<PopulationEval, RuntimeError> {
        let models: Vec<DualTaskModel> =
            self.models.iter().map(|m| self.layout.unflatten(&m.theta)).collect::<Result<_, _>>()?;
        let lambda = self.cfg.lambda;
        let per_client: Vec<[Evaluation; 3]> = self
            .data
            .clients
            .par_iter()
            .map(|c| {
                let m = &models[c.community as usize];
                [m.evaluate(&c.split.train, lambda), m.evaluate(&c.split.val, lambda), m.evaluate(&c.split.test, lambda)]
            })
            .collect();
        let pick = |i: usize| Evaluation::merge(&per_client.iter().map(|e| e[i]).collect::<Vec<_>>());
        let history = self.scheduler.history();
        let seen: Vec<Evaluation> =
            history.iter().map(|&id| per_client[id as usize][0]).collect();
        Ok(PopulationEval { train: pick(0), val: pick(1), test: pick(2), seen_train: Evaluation::merge(&seen) })
    }

    fn send(&mut self, from: NodeId, to: NodeId, bytes: Vec<u8>) -> Result<(), RuntimeError> {
        Ok(self.net.send(from, to, bytes)?)
    }

    pub fn run_round(&mut self) -> Result<RoundMetrics, RuntimeError> {
        let t = self.round;
        let seed = self.cfg.seed;
        let schedule = self.scheduler.schedule(t);
        let mut active = schedule.active_set.clone();
        active.sort_unstable();
        self.net.set_time(self.clock_ms as u64);
        self.auditor.begin_round();
        let mut trace = RoundTrace { active: active.clone(), ..RoundTrace::default() };

        // global weights out to the active clients of each community
        for c in 0..self.models.len() {
            let rv = self.codec.encode_vector(&self.models[c].theta)?;
            let bytes = wire::serialize_weights(c as u32, &rv);
            let members: Vec<ClientId> =
                active.iter().copied().filter(|&id| self.community_of(id) == c as CommunityId).collect();
            for id in members {
                self.send(NodeId::Derms(c as CommunityId), NodeId::Ev(id), bytes.clone())?;
            }
        }
        let mut starting: Vec<(ClientId, Vec<f64>)> = Vec::with_capacity(active.len());
        for &id in &active {
            for env in self.net.drain(NodeId::Ev(id)) {
                match wire::deserialize(&env.payload)? {
                    WireMessage::Weights { vector, .. } => starting.push((id, self.codec.decode_vector(&vector))),
                    _ => return Err(RuntimeError::UnexpectedMessage("non-weights broadcast")),
                }
            }
        }

        // local training; results come back in client-id order
        let layout = &self.layout;
        let data = &self.data;
        let train_cfg = &self.train_cfg;
        let trained: Vec<(ClientId, Result<Vec<f64>, hfltn_core::Error>)> = starting
            .par_iter()
            .map(|(id, w)| {
                let res = layout.unflatten(w).and_then(|m| {
                    let mut rng = stream(seed, &[domain::TRAIN, t, *id as u64]);
                    m.train_local(&data.clients[*id as usize].split.train, train_cfg, &mut rng)
                });
                (*id, res.map(|o| o.model.flatten()))
            })
            .collect();

        let mut encoded: BTreeMap<ClientId, RingVector> = BTreeMap::new();
        for (id, res) in trained {
            let w = match res {
                Ok(w) => w,
                Err(e) => {
                    debug!("round {t}: client {id} skipped: {e}");
                    trace.skipped.push(id);
                    continue;
                }
            };
            let w: Vec<f64> = if self.is_poisoned(id) {
                let lim = self.codec.w_max;
                w.iter().map(|x| (x * self.cfg.poison_factor).clamp(-lim, lim)).collect()
            } else {
                w
            };
            match self.codec.encode_vector(&w) {
                Ok(rv) => {
                    self.auditor.register_client(id, self.community_of(id), &rv);
                    encoded.insert(id, rv);
                    trace.trained.push(id);
                }
                Err(e) => {
                    warn!("round {t}: client {id} weights not encodable: {e}");
                    trace.skipped.push(id);
                }
            }
        }

        self.exchange_and_contribute(t, &encoded, &mut trace)?;
        self.aggregate(t, &active, &mut trace)?;

        let (sent, recv, census) = self.net.take_accounting();
        let sim_ms = self.round_time(&active, &sent, &recv);
        self.census.merge(&census);
        for (p, n) in &trace.paths {
            *self.paths.entry(*p).or_default() += n;
        }
        self.clock_ms += sim_ms;
        self.round += 1;

        let eval = self.evaluate()?;
        let n = self.scheduler.n_total();
        let metrics = RoundMetrics {
            epoch: t + 1,
            active_clients: active.len() as u64,
            total_flops: hfltn_core::scheduler::flops_for_round(active.len() as u64, self.cfg.per_client_flops),
            sim_time_ms: sim_ms,
            per_epoch_diversity: per_epoch_diversity(active.len(), n),
            cumulative_diversity: self.scheduler.cumulative_diversity(),
            train_loss: eval.train.loss,
            val_loss: eval.val.loss,
            test_location_accuracy: eval.test.accuracy(),
            test_time_mse: eval.test.time_mse,
            generalization_gap_pct: generalization_gap_pct(eval.seen_train.loss, eval.test.loss),
        };
        self.last_trace = trace;
        Ok(metrics)
    }

    /// Every trained client picks its path and sends its shares or weights.
    fn exchange_and_contribute(
        &mut self,
        t: u64,
        encoded: &BTreeMap<ClientId, RingVector>,
        trace: &mut RoundTrace,
    ) -> Result<(), RuntimeError> {
        let seed = self.cfg.seed;
        let k_direct = self.cfg.k_transitory;
        let roster: Vec<RosterEntry> = encoded
            .keys()
            .map(|&id| {
                let c = &self.data.clients[id as usize];
                RosterEntry { id, community: c.community, transitory: c.ev.transitory, available: true }
            })
            .collect();

        enum Pending {
            Augment(SecretShare),
            Direct(Vec<SecretShare>, ContributionPath),
            Plain(RingVector),
        }
        let mut pending: BTreeMap<ClientId, Pending> = BTreeMap::new();
        for entry in &roster {
            let id = entry.id;
            let rv = &encoded[&id];
            let mut rng = stream(seed, &[domain::SHARES, t, id as u64]);
            let p = if self.cfg.ablated(Ablation::SecretSharing) {
                Pending::Plain(rv.clone())
            } else if self.cfg.ablated(Ablation::SecureAggregation) || entry.transitory {
                let path = if entry.transitory {
                    ContributionPath::TransitoryDirect
                } else {
                    ContributionPath::DirectFallback
                };
                Pending::Direct(partition(rv, k_direct, id, &mut rng)?, path)
            } else {
                let c = entry.community as usize;
                let community_roster: Vec<RosterEntry> =
                    roster.iter().filter(|e| e.community == entry.community).copied().collect();
                match p2p::select_peers(entry, &community_roster, t as u32, &self.ledgers[c], p2p::MAX_PEERS) {
                    PeerSelection::Group(group) => {
                        self.ledgers[c].record(&group);
                        let shares = partition(rv, group.members.len() + 1, id, &mut rng)?;
                        let dist = p2p::distribute_shares(shares, &group)?;
                        for (peer, share) in &dist.outgoing {
                            self.send(NodeId::Ev(id), NodeId::Ev(*peer), wire::serialize_share(share))?;
                        }
                        Pending::Augment(dist.retained)
                    }
                    PeerSelection::Fallback => {
                        Pending::Direct(partition(rv, k_direct, id, &mut rng)?, ContributionPath::DirectFallback)
                    }
                }
            };
            pending.insert(id, p);
        }

        let aug = AugmentationConfig { alpha: self.cfg.alpha };
        for (id, p) in pending {
            let mut received = Vec::new();
            for env in self.net.drain(NodeId::Ev(id)) {
                let share = wire::deserialize_share(&env.payload)?;
                self.auditor.peer_received(id, &share);
                received.push(share);
            }
            let derms = NodeId::Derms(self.community_of(id));
            let contribution = match p {
                Pending::Augment(retained) => p2p::augment(id, &retained, &received, &aug, &self.codec)?,
                Pending::Direct(shares, path) => p2p::direct_contribution(id, shares, &received, path)?,
                Pending::Plain(rv) => {
                    Contribution { contributor_id: id, parts: vec![rv], path: ContributionPath::Plaintext }
                }
            };
            *trace.paths.entry(contribution.path).or_default() += 1;
            let k = contribution.parts.len();
            if k == 1 {
                let bytes = wire::serialize_weights(id, &contribution.parts[0]);
                self.send(NodeId::Ev(id), derms, bytes)?;
            } else {
                for (j, part) in contribution.parts.into_iter().enumerate() {
                    let share =
                        SecretShare { sender_id: id, share_index: j as u16, share_count: k as u16, payload: part };
                    self.send(NodeId::Ev(id), derms, wire::serialize_share(&share))?;
                }
            }
        }
        Ok(())
    }

    /// Aggregation, normalisation, broadcast and prediction per community.
    fn aggregate(&mut self, t: u64, active: &[ClientId], trace: &mut RoundTrace) -> Result<(), RuntimeError> {
        let reconstructing =
            self.cfg.ablated(Ablation::SecretSharing) || self.cfg.ablated(Ablation::SecureAggregation);
        for c in 0..self.models.len() {
            let cid = c as CommunityId;
            let mut parts: BTreeMap<ClientId, Vec<(u16, RingVector)>> = BTreeMap::new();
            for env in self.net.drain(NodeId::Derms(cid)) {
                match wire::deserialize(&env.payload)? {
                    WireMessage::Share(s) => parts.entry(s.sender_id).or_default().push((s.share_index, s.payload)),
                    WireMessage::Weights { sender, vector } => parts.entry(sender).or_default().push((0, vector)),
                    WireMessage::Prediction(_) => return Err(RuntimeError::UnexpectedMessage("prediction")),
                }
            }
            if parts.is_empty() {
                debug!("round {t}: community {c} received no contributions");
                continue;
            }
            let contributions: Vec<Contribution> = parts
                .into_iter()
                .map(|(id, mut p)| {
                    p.sort_by_key(|(i, _)| *i);
                    let path = if p.len() == 1 { ContributionPath::P2pAugmented } else { ContributionPath::DirectFallback };
                    Contribution { contributor_id: id, parts: p.into_iter().map(|(_, v)| v).collect(), path }
                })
                .collect();
            if contributions.len() == 1 {
                warn!("round {t}: community {c} has a single contributor; its aggregate is that client's model");
            }
            let mut view = self.auditor.derms_view(cid);
            let theta = if reconstructing {
                derms::reconstructing_aggregate(&contributions, &self.codec, &mut view)?
            } else {
                derms::secure_aggregate(&contributions, &self.codec, &mut view)?
            };
            let theta = if self.cfg.ablated(Ablation::Normalisation) {
                theta
            } else {
                derms::normalize(&theta, self.cfg.tau)?
            };
            // keep the model encodable for the next broadcast
            let lim = self.codec.w_max;
            let theta: Vec<f64> = theta.into_iter().map(|x| x.clamp(-lim, lim)).collect();
            trace.installed.insert(cid, theta.clone());
            let recipients: Vec<ClientId> =
                active.iter().copied().filter(|&id| self.community_of(id) == cid).collect();
            let copies = derms::update_and_broadcast(&mut self.models[c], theta, &recipients)?;
            for (id, w) in copies {
                let bytes = wire::serialize_weights(cid, &self.codec.encode_vector(&w)?);
                self.send(NodeId::Derms(cid), NodeId::Ev(id), bytes)?;
            }
            if let Some(summary) = &self.summaries[c] {
                let record = derms::emit_prediction(&self.models[c], &self.layout, summary, &self.data.scaler)?;
                self.send(NodeId::Derms(cid), NodeId::Epdc, wire::serialize_prediction(&record))?;
            }
        }
        for &id in active {
            for env in self.net.drain(NodeId::Ev(id)) {
                wire::deserialize_weights(&env.payload)?;
            }
        }
        for env in self.net.drain(NodeId::Epdc) {
            self.epdc_records.push(wire::deserialize_prediction(&env.payload)?);
        }
        Ok(())
    }

    /// Clients work in parallel; each aggregator handles its traffic serially.
    fn round_time(&self, active: &[ClientId], sent: &BTreeMap<NodeId, u64>, recv: &BTreeMap<NodeId, u64>) -> f64 {
        let link = self.cfg.link_bytes_per_ms;
        let train_ms = self.cfg.per_client_flops as f64 / self.cfg.client_flops_per_ms;
        let bytes = |n: NodeId| (sent.get(&n).copied().unwrap_or(0) + recv.get(&n).copied().unwrap_or(0)) as f64;
        let client = active.iter().map(|&id| train_ms + bytes(NodeId::Ev(id)) / link).fold(0.0, f64::max);
        let aggregator =
            (0..self.models.len()).map(|c| bytes(NodeId::Derms(c as CommunityId)) / link).fold(0.0, f64::max);
        client + aggregator
    }

    /// Runs `epochs` rounds and returns the rows.
    pub fn run(&mut self, epochs: usize) -> Result<Vec<RoundMetrics>, RuntimeError> {
        (0..epochs).map(|_| self.run_round()).collect()
    }

    /// Ids of clients that have ever been active.
    pub fn participation(&self) -> &BTreeSet<ClientId> {
        self.scheduler.history()
    }
}
