//! Synthetic EV fleet and trip generator.
//!
//! Nine EV models with ranges evenly spaced over 143..=416 km, 77 community
//! areas laid out on a 7x11 grid, one year of trips per EV. Battery drains by
//! `distance / range * 100` per trip; whenever the next trip would leave less
//! than 20 %, the EV drives to a charging area drawn from its own preference
//! distribution (centred on its home area) and charges to 100 %.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Dirichlet, Exp};

use crate::error::{Error, Result};
use crate::rng::{domain, stream, SimRng};
use crate::{Area, ClientId, CommunityId, Timestamp, DATASET_EPOCH, N_AREAS};

pub const N_EV_MODELS: usize = 9;
pub const MIN_RANGE_KM: f64 = 143.0;
pub const MAX_RANGE_KM: f64 = 416.0;
pub const CHARGE_THRESHOLD_PCT: f64 = 20.0;
pub const SECONDS_PER_DAY: i64 = 86_400;
const GRID_COLS: usize = 11;
/// km per grid step including a road detour factor. Chosen so the longest
/// possible trip drains less than 20 % of the shortest range.
const KM_PER_GRID_STEP: f64 = 2.16;
const MIN_TRIP_KM: f64 = 0.5;
const SPEED_KMH: f64 = 30.0;
const CHARGE_SECONDS: i64 = 3_600;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvModelSpec {
    pub model_id: u8,
    pub range_km: f64,
}

pub fn ev_models() -> [EvModelSpec; N_EV_MODELS] {
    let step = (MAX_RANGE_KM - MIN_RANGE_KM) / (N_EV_MODELS - 1) as f64;
    core::array::from_fn(|i| EvModelSpec { model_id: i as u8, range_km: MIN_RANGE_KM + step * i as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub ev_id: ClientId,
    pub pickup: Area,
    pub dropoff: Area,
    pub distance_km: f64,
    pub start_time: Timestamp,
    pub battery_pct_after: f64,
    pub charge_event: bool,
    /// Set when `charge_event` is true.
    pub charge_time: Option<Timestamp>,
}

impl TripRecord {
    pub fn end_time(&self) -> Timestamp {
        self.start_time + trip_seconds(self.distance_km)
    }
}

pub fn trip_seconds(distance_km: f64) -> i64 {
    libm::round(distance_km / SPEED_KMH * 3600.0) as i64
}

/// One EV of the fleet.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetEv {
    pub id: ClientId,
    pub model: EvModelSpec,
    pub home_area: Area,
    pub transitory: bool,
}

impl FleetEv {
    pub fn community(&self, communities: usize) -> CommunityId {
        community_of(self.home_area, communities)
    }
}

/// Contiguous blocks of areas per DERMS community.
pub fn community_of(area: Area, communities: usize) -> CommunityId {
    let c = communities.max(1);
    ((area as usize * c) / N_AREAS) as CommunityId
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub days: u32,
    pub transitory_fraction: f64,
    /// Mean hours between the end of one trip and the start of the next.
    pub mean_gap_hours: f64,
    /// Dirichlet concentration of the per-EV charging preference.
    pub preference_concentration: f64,
    pub epoch_start: Timestamp,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            days: 365,
            transitory_fraction: 0.2,
            mean_gap_hours: 20.0,
            preference_concentration: 1.0,
            epoch_start: DATASET_EPOCH,
        }
    }
}

impl GeneratorConfig {
    pub fn epoch_end(&self) -> Timestamp {
        self.epoch_start + self.days as i64 * SECONDS_PER_DAY
    }
}

pub fn generate_fleet(n_evs: usize, seed: u64, cfg: &GeneratorConfig) -> Result<Vec<FleetEv>> {
    if n_evs == 0 {
        return Err(Error::InvalidParameter("n_evs must be at least 1"));
    }
    if !(0.0..=1.0).contains(&cfg.transitory_fraction) {
        return Err(Error::InvalidParameter("transitory_fraction must be in [0, 1]"));
    }
    let models = ev_models();
    let mut rng = stream(seed, &[domain::FLEET]);
    Ok((0..n_evs)
        .map(|i| FleetEv {
            id: i as ClientId,
            model: models[rng.random_range(0..N_EV_MODELS)],
            home_area: rng.random_range(0..N_AREAS) as Area,
            transitory: rng.random_bool(cfg.transitory_fraction),
        })
        .collect())
}

fn grid(a: Area) -> (f64, f64) {
    ((a as usize / GRID_COLS) as f64, (a as usize % GRID_COLS) as f64)
}

pub fn grid_distance(a: Area, b: Area) -> f64 {
    let (ra, ca) = grid(a);
    let (rb, cb) = grid(b);
    libm::sqrt((ra - rb) * (ra - rb) + (ca - cb) * (ca - cb))
}

/// Nominal road distance between two areas.
pub fn area_distance_km(a: Area, b: Area) -> f64 {
    MIN_TRIP_KM + KM_PER_GRID_STEP * grid_distance(a, b)
}

/// Areas sharing a border with `a` on the grid (4-neighbourhood).
pub fn neighbors(a: Area) -> Vec<Area> {
    let (r, c) = (a as usize / GRID_COLS, a as usize % GRID_COLS);
    let rows = N_AREAS / GRID_COLS;
    let mut out = Vec::with_capacity(4);
    if r > 0 {
        out.push(((r - 1) * GRID_COLS + c) as Area);
    }
    if c > 0 {
        out.push((r * GRID_COLS + c - 1) as Area);
    }
    if c + 1 < GRID_COLS {
        out.push((r * GRID_COLS + c + 1) as Area);
    }
    if r + 1 < rows {
        out.push(((r + 1) * GRID_COLS + c) as Area);
    }
    out
}

/// Battery state of one EV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Battery {
    pub range_km: f64,
    pub pct: f64,
}

impl Battery {
    pub fn full(range_km: f64) -> Self {
        Self { range_km, pct: 100.0 }
    }

    pub fn drain_pct(&self, distance_km: f64) -> f64 {
        distance_km / self.range_km * 100.0
    }

    pub fn would_need_charge(&self, distance_km: f64) -> bool {
        self.pct - self.drain_pct(distance_km) < CHARGE_THRESHOLD_PCT
    }

    /// Drives `distance_km`; returns the level on arrival and whether the EV
    /// charges right after (level below the threshold or `force_charge`).
    pub fn drive(&mut self, distance_km: f64, force_charge: bool) -> (f64, bool) {
        let after = self.pct - self.drain_pct(distance_km);
        let charge = force_charge || after < CHARGE_THRESHOLD_PCT;
        self.pct = if charge { 100.0 } else { after };
        (after, charge)
    }
}

/// Per-EV behaviour drawn once from the EV's seed.
struct Habits {
    mobility: WeightedIndex<f64>,
    charging: WeightedIndex<f64>,
    charge_weights: [f64; N_AREAS],
}

fn centred_weights(home: Area, width: f64, floor: f64) -> [f64; N_AREAS] {
    core::array::from_fn(|a| {
        let d = grid_distance(a as Area, home);
        floor + libm::exp(-d * d / (2.0 * width * width))
    })
}

fn dirichlet(base: [f64; N_AREAS], scale: f64, rng: &mut SimRng) -> [f64; N_AREAS] {
    let alpha = base.map(|b| b * scale);
    let d = Dirichlet::new(alpha).expect("positive concentrations");
    let mut w = d.sample(rng);
    // keep every area reachable
    for x in w.iter_mut() {
        *x = x.max(1e-9);
    }
    w
}

fn habits(ev: &FleetEv, cfg: &GeneratorConfig, rng: &mut SimRng) -> Habits {
    let (width, floor) = if ev.transitory { (4.0, 0.2) } else { (1.5, 0.02) };
    let mobility = dirichlet(centred_weights(ev.home_area, width, floor), 4.0, rng);
    let charge_weights = dirichlet(centred_weights(ev.home_area, 1.0, 0.01), cfg.preference_concentration, rng);
    Habits {
        mobility: WeightedIndex::new(mobility).expect("positive weights"),
        charging: WeightedIndex::new(charge_weights).expect("positive weights"),
        charge_weights,
    }
}

/// Charging-area distribution of `ev` (normalised).
pub fn charge_preference(ev: &FleetEv, seed: u64, cfg: &GeneratorConfig) -> [f64; N_AREAS] {
    let mut rng = stream(seed, &[domain::TRIPS, ev.id as u64]);
    let w = habits(ev, cfg, &mut rng).charge_weights;
    let total: f64 = w.iter().sum();
    w.map(|x| x / total)
}

/// Generates one EV's trips over `cfg.days` days, strictly time-ordered.
pub fn generate_trips(ev: &FleetEv, seed: u64, cfg: &GeneratorConfig) -> Result<Vec<TripRecord>> {
    if cfg.days == 0 {
        return Err(Error::InvalidParameter("days must be at least 1"));
    }
    let mut rng = stream(seed, &[domain::TRIPS, ev.id as u64]);
    let h = habits(ev, cfg, &mut rng);
    let gap = Exp::new(1.0 / (cfg.mean_gap_hours * 3600.0)).expect("positive mean gap");
    let end = cfg.epoch_end();
    let mut battery = Battery::full(ev.model.range_km);
    // 20..=100 % start level
    battery.pct = rng.random_range(CHARGE_THRESHOLD_PCT + 10.0..=100.0);
    let mut here = ev.home_area;
    let mut t = cfg.epoch_start + (rng.random::<f64>() * 12.0 * 3600.0) as i64;
    let mut trips = Vec::new();
    loop {
        t += libm::round(gap.sample(&mut rng)) as i64 + 1;
        if t >= end {
            break;
        }
        let mut dest = h.mobility.sample(&mut rng) as Area;
        let jitter = rng.random_range(0.9..1.1);
        let mut distance = area_distance_km(here, dest) * jitter;
        let charge_trip = battery.would_need_charge(distance);
        if charge_trip {
            dest = h.charging.sample(&mut rng) as Area;
            distance = area_distance_km(here, dest) * jitter;
        }
        let start = t;
        if start + trip_seconds(distance) >= end {
            break;
        }
        let (after, charged) = battery.drive(distance, charge_trip);
        let arrive = start + trip_seconds(distance);
        trips.push(TripRecord {
            ev_id: ev.id,
            pickup: here,
            dropoff: dest,
            distance_km: distance,
            start_time: start,
            battery_pct_after: after,
            charge_event: charged,
            charge_time: charged.then_some(arrive),
        });
        here = dest;
        t = arrive + if charged { CHARGE_SECONDS } else { 0 };
    }
    Ok(trips)
}

/// Chronological train / validation / test partition of one EV's records.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Boundaries `(train_end, val_end)` of an 85/15 then 85/15 prefix split.
pub fn split_points(n: usize) -> Result<(usize, usize)> {
    if n < 3 {
        return Err(Error::TooFewRecords { needed: 3, found: n });
    }
    let train_val = ((n * 85) / 100).clamp(2, n - 1);
    let train = ((train_val * 85) / 100).clamp(1, train_val - 1);
    Ok((train, train_val))
}

pub fn split_dataset<T: Clone>(records: &[T]) -> Result<DatasetSplit<T>> {
    let (a, b) = split_points(records.len())?;
    Ok(DatasetSplit { train: records[..a].to_vec(), val: records[a..b].to_vec(), test: records[b..].to_vec() })
}

pub const EXPORT_HEADER: &str =
    "ev_id,pickup,dropoff,distance_km,start_time,battery_pct_after,charge_event,charge_time";

/// One export line (no terminator). Reals use 4 decimals; `charge_time` is
/// empty when there is no charge event.
pub fn export_line(t: &TripRecord) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{},{},{},{:.4},{},{:.4},{},",
        t.ev_id, t.pickup, t.dropoff, t.distance_km, t.start_time, t.battery_pct_after, t.charge_event as u8
    );
    if let Some(ct) = t.charge_time {
        let _ = write!(s, "{ct}");
    }
    s
}
