//! Client capping (at most `C` active clients per round) and rotation over a
//! fixed ring of ascending client ids.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ClientId;

/// Per-client FLOPs per global epoch: 249,600,000 FLOPs over 500 clients.
pub const DEFAULT_PER_CLIENT_FLOPS: u64 = 499_200;
pub const DEFAULT_CAP: usize = 150;

/// `C_t = { roster[(t*C + j) mod N] : j < min(C, N) }`.
///
/// `roster` must be sorted by id. Consecutive windows are disjoint until the
/// ring wraps; with `C >= N` every round is the full roster.
pub fn rotate(roster: &[ClientId], round: u64, cap: usize) -> Result<Vec<ClientId>> {
    let n = roster.len();
    if n == 0 {
        return Err(Error::EmptyRoster);
    }
    if cap == 0 {
        return Err(Error::InvalidParameter("cap must be at least 1"));
    }
    if cap >= n {
        return Ok(roster.to_vec());
    }
    let start = ((round as u128 * cap as u128) % n as u128) as usize;
    Ok((0..cap).map(|j| roster[(start + j) % n]).collect())
}

pub fn per_epoch_diversity(active: usize, n: usize) -> f64 {
    active as f64 / n as f64
}

pub fn cumulative_diversity(history: usize, n: usize) -> f64 {
    history as f64 / n as f64
}

pub fn flops_for_round(active_count: u64, per_client_flops: u64) -> u64 {
    active_count * per_client_flops
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedulerConfig {
    pub cap: usize,
    /// Dynamic client capping; when off every enrolled client is active.
    pub capping: bool,
    /// Client rotation; when off round 0's window repeats forever.
    pub rotation: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { cap: DEFAULT_CAP, capping: true, rotation: true }
    }
}

/// The active set of one round plus participation bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSchedule {
    pub n_total: usize,
    pub cap: usize,
    pub round: u64,
    pub active_set: Vec<ClientId>,
}

/// Stateful scheduler that accumulates the set of clients ever activated.
#[derive(Debug, Clone)]
pub struct Scheduler {
    roster: Vec<ClientId>,
    cfg: SchedulerConfig,
    history: BTreeSet<ClientId>,
}

impl Scheduler {
    pub fn new(mut roster: Vec<ClientId>, cfg: SchedulerConfig) -> Result<Self> {
        if roster.is_empty() {
            return Err(Error::EmptyRoster);
        }
        if cfg.cap == 0 {
            return Err(Error::InvalidParameter("cap must be at least 1"));
        }
        roster.sort_unstable();
        roster.dedup();
        Ok(Self { roster, cfg, history: BTreeSet::new() })
    }

    pub fn n_total(&self) -> usize {
        self.roster.len()
    }

    pub fn effective_cap(&self) -> usize {
        if self.cfg.capping { self.cfg.cap.min(self.roster.len()) } else { self.roster.len() }
    }

    /// Computes `C_t` without touching the history.
    pub fn active_set(&self, round: u64) -> Vec<ClientId> {
        let r = if self.cfg.rotation { round } else { 0 };
        rotate(&self.roster, r, self.effective_cap()).expect("roster and cap validated")
    }

    /// Computes `C_t` and records it in the participation history.
    pub fn schedule(&mut self, round: u64) -> RoundSchedule {
        let active_set = self.active_set(round);
        self.history.extend(active_set.iter().copied());
        RoundSchedule { n_total: self.roster.len(), cap: self.effective_cap(), round, active_set }
    }

    pub fn history(&self) -> &BTreeSet<ClientId> {
        &self.history
    }

    pub fn cumulative_diversity(&self) -> f64 {
        cumulative_diversity(self.history.len(), self.roster.len())
    }
}
