//! Dual-task local model: next charging area (softmax over 77 areas) and next
//! charging time (linear regression on a min-max scaled timestamp).
//!
//! Feature layout, `F = 82`:
//!
//! | index  | feature                                              |
//! |--------|------------------------------------------------------|
//! | 0      | battery level / 100                                  |
//! | 1..=77 | one-hot current area                                 |
//! | 78     | scaled current timestamp                             |
//! | 79     | mean distance of the last 10 trips / 100 km          |
//! | 80     | trips ending in the last 24 h / 10                   |
//! | 81     | mean gap between the last 5 charge events / 60 days  |

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::datagen::{TripRecord, CHARGE_THRESHOLD_PCT, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::{Area, Timestamp, N_AREAS};

pub const FEATURE_DIM: usize = 1 + N_AREAS + 1 + 3;
pub const N_DENSE: usize = 5;
/// Positions of the non-one-hot features inside the full feature vector.
pub const DENSE_INDEX: [usize; N_DENSE] = [0, 78, 79, 80, 81];
const ONE_HOT_OFFSET: usize = 1;
const TRAILING_TRIPS: usize = 10;
const TRAILING_CHARGES: usize = 5;

/// Min-max scaling of Unix timestamps onto `[0, 1]` over a dataset window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeScaler {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeScaler {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self> {
        if end <= start {
            return Err(Error::InvalidParameter("time window must have positive length"));
        }
        Ok(Self { start, end })
    }

    fn span(&self) -> f64 {
        (self.end - self.start) as f64
    }

    pub fn scale(&self, t: Timestamp) -> f64 {
        (t - self.start) as f64 / self.span()
    }

    pub fn unscale(&self, x: f64) -> Timestamp {
        let secs = libm::round(x * self.span());
        // keep the cast in range for wild model outputs
        let secs = secs.clamp(-(1i64 << 52) as f64, (1i64 << 52) as f64);
        self.start + secs as i64
    }
}

/// Sparse feature vector: one-hot area plus the dense block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Features {
    pub location: Area,
    pub dense: [f64; N_DENSE],
}

impl Features {
    pub fn to_dense(&self) -> [f64; FEATURE_DIM] {
        let mut x = [0.0; FEATURE_DIM];
        x[ONE_HOT_OFFSET + self.location as usize] = 1.0;
        for (i, &v) in DENSE_INDEX.iter().zip(&self.dense) {
            x[*i] = v;
        }
        x
    }
}

/// Trailing statistics over a trip history ending at `now`.
pub fn trailing_stats(history: &[TripRecord], now: Timestamp) -> [f64; 3] {
    let recent = &history[history.len().saturating_sub(TRAILING_TRIPS)..];
    let mean_distance = if recent.is_empty() {
        0.0
    } else {
        recent.iter().map(|t| t.distance_km).sum::<f64>() / recent.len() as f64
    };
    let day_ago = now - SECONDS_PER_DAY;
    let trips_last_day = history.iter().rev().take_while(|t| t.end_time() > day_ago).filter(|t| t.end_time() <= now).count();
    let mut charges = history.iter().rev().filter_map(|t| t.charge_time).take(TRAILING_CHARGES);
    let charge_gap = match (charges.next(), charges.last()) {
        (Some(latest), Some(oldest)) => {
            let n = history.iter().rev().filter(|t| t.charge_event).take(TRAILING_CHARGES).count();
            (latest - oldest) as f64 / (n - 1) as f64 / (60.0 * SECONDS_PER_DAY as f64)
        }
        _ => 0.0,
    };
    [mean_distance / 100.0, trips_last_day as f64 / 10.0, charge_gap]
}

pub fn encode_features(battery_pct: f64, location: Area, now: Timestamp, history: &[TripRecord], scaler: &TimeScaler) -> Features {
    let [d, c, g] = trailing_stats(history, now);
    Features { location, dense: [battery_pct / 100.0, scaler.scale(now), d, c, g] }
}

/// One supervised example: state after a trip, labelled with the next charge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub features: Features,
    pub next_location: Area,
    /// Scaled timestamp of the next charge.
    pub next_time: f64,
}

/// Builds samples from one EV's trips. Returns `(trip_index, sample)` for every
/// trip that ends above the charge threshold without charging and is followed
/// by a charge event.
pub fn build_samples(trips: &[TripRecord], scaler: &TimeScaler) -> Vec<(usize, Sample)> {
    let mut next_charge: Vec<Option<(Area, Timestamp)>> = vec![None; trips.len()];
    let mut upcoming = None;
    for (j, t) in trips.iter().enumerate().rev() {
        next_charge[j] = upcoming;
        if let Some(ct) = t.charge_time {
            upcoming = Some((t.dropoff, ct));
        }
    }
    trips
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.charge_event && t.battery_pct_after > CHARGE_THRESHOLD_PCT)
        .filter_map(|(j, t)| {
            let (loc, when) = next_charge[j]?;
            let features = encode_features(t.battery_pct_after, t.dropoff, t.end_time(), &trips[..=j], scaler);
            Some((j, Sample { features, next_location: loc, next_time: scaler.scale(when) }))
        })
        .collect()
}

/// Current situation of an EV as seen by the predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct EvState {
    pub battery_pct: f64,
    pub location: Area,
    pub neighbors: Vec<Area>,
    pub timestamp: Timestamp,
    pub history: Vec<TripRecord>,
    pub available_stations: BTreeSet<Area>,
}

impl EvState {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.battery_pct) {
            return Err(Error::InvalidParameter("battery_pct outside [0, 100]"));
        }
        if self.location as usize >= N_AREAS {
            return Err(Error::InvalidParameter("location outside [0, 77)"));
        }
        if self.neighbors.contains(&self.location) {
            return Err(Error::InvalidParameter("neighbors include the current location"));
        }
        if self.available_stations.is_empty() || self.available_stations.iter().any(|&s| s as usize >= N_AREAS) {
            return Err(Error::InvalidParameter("available stations must be a nonempty subset of the areas"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub next_location: Area,
    pub next_time: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight of the time-regression loss.
    pub lambda: f64,
    /// Coordinate clip applied to the trained weights.
    pub w_max: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 1, learning_rate: 0.5, batch_size: 32, lambda: 1.0, w_max: (1u64 << 20) as f64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<M> {
    pub model: M,
    /// Mean combined loss seen during each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Loss and accuracy of a model on a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Evaluation {
    pub count: usize,
    pub loss: f64,
    pub cross_entropy: f64,
    pub time_mse: f64,
    pub correct: usize,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 { 0.0 } else { self.correct as f64 / self.count as f64 }
    }

    /// Count-weighted mean of several evaluations.
    pub fn merge(parts: &[Evaluation]) -> Evaluation {
        let count: usize = parts.iter().map(|e| e.count).sum();
        if count == 0 {
            return Evaluation::default();
        }
        let w = |f: fn(&Evaluation) -> f64| parts.iter().map(|e| f(e) * e.count as f64).sum::<f64>() / count as f64;
        Evaluation {
            count,
            loss: w(|e| e.loss),
            cross_entropy: w(|e| e.cross_entropy),
            time_mse: w(|e| e.time_mse),
            correct: parts.iter().map(|e| e.correct).sum(),
        }
    }
}

/// Interface the protocol needs from a local model.
pub trait LocalModel: Clone + Send + Sync + Sized {
    fn dim(&self) -> usize;
    fn flatten(&self) -> Vec<f64>;
    /// Rebuilds a model with this model's layout from a flat vector.
    fn unflatten(&self, weights: &[f64]) -> Result<Self>;
    fn train_local(&self, data: &[Sample], cfg: &TrainConfig, rng: &mut SimRng) -> Result<TrainOutcome<Self>>;
    fn evaluate(&self, data: &[Sample], lambda: f64) -> Evaluation;
    /// Forward pass on a dense feature vector: `(area logits argmax over all
    /// areas, scaled time)`.
    fn forward_dense(&self, x: &[f64; FEATURE_DIM]) -> (Area, f64);
    fn flops_per_sample(&self) -> u64;
}

/// Linear two-head model.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTaskModel {
    /// Feature-major `F x 77`: entry `f * 77 + k` weights feature `f` for area `k`.
    pub location_weights: Vec<f64>,
    pub location_bias: Vec<f64>,
    pub time_weights: Vec<f64>,
    pub time_bias: f64,
}

impl Default for DualTaskModel {
    fn default() -> Self {
        Self::zeros()
    }
}

/// Index of the largest value among `candidates`, lowest index on ties.
fn argmax_over(values: &[f64], candidates: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in candidates {
        match best {
            Some(b) if values[i] <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Softmax probabilities and `log(sum(exp(z)))`.
fn softmax(z: &[f64; N_AREAS]) -> ([f64; N_AREAS], f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = z.map(|v| libm::exp(v - max));
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= sum);
    (p, max + libm::log(sum))
}

impl DualTaskModel {
    pub const DIM: usize = N_AREAS * FEATURE_DIM + N_AREAS + FEATURE_DIM + 1;

    pub fn zeros() -> Self {
        Self {
            location_weights: vec![0.0; N_AREAS * FEATURE_DIM],
            location_bias: vec![0.0; N_AREAS],
            time_weights: vec![0.0; FEATURE_DIM],
            time_bias: 0.0,
        }
    }

    pub fn from_flat(weights: &[f64]) -> Result<Self> {
        if weights.len() != Self::DIM {
            return Err(Error::LayoutMismatch { expected: Self::DIM, found: weights.len() });
        }
        let (lw, rest) = weights.split_at(N_AREAS * FEATURE_DIM);
        let (lb, rest) = rest.split_at(N_AREAS);
        let (tw, tb) = rest.split_at(FEATURE_DIM);
        Ok(Self {
            location_weights: lw.to_vec(),
            location_bias: lb.to_vec(),
            time_weights: tw.to_vec(),
            time_bias: tb[0],
        })
    }

    fn column(&self, f: usize) -> &[f64] {
        &self.location_weights[f * N_AREAS..(f + 1) * N_AREAS]
    }

    pub fn location_logits(&self, x: &Features) -> [f64; N_AREAS] {
        let mut z = [0.0; N_AREAS];
        let hot = self.column(ONE_HOT_OFFSET + x.location as usize);
        for ((zk, b), h) in z.iter_mut().zip(&self.location_bias).zip(hot) {
            *zk = b + h;
        }
        for (i, &v) in DENSE_INDEX.iter().zip(&x.dense) {
            for (zk, w) in z.iter_mut().zip(self.column(*i)) {
                *zk += w * v;
            }
        }
        z
    }

    pub fn time_output(&self, x: &Features) -> f64 {
        let mut acc = self.time_bias + self.time_weights[ONE_HOT_OFFSET + x.location as usize];
        for (i, &v) in DENSE_INDEX.iter().zip(&x.dense) {
            acc += self.time_weights[*i] * v;
        }
        acc
    }

    pub fn location_logits_dense(&self, x: &[f64; FEATURE_DIM]) -> [f64; N_AREAS] {
        core::array::from_fn(|k| {
            self.location_bias[k] + (0..FEATURE_DIM).map(|f| self.location_weights[f * N_AREAS + k] * x[f]).sum::<f64>()
        })
    }

    pub fn time_output_dense(&self, x: &[f64; FEATURE_DIM]) -> f64 {
        self.time_bias + self.time_weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Per-sample `(cross entropy, squared time error, correct)`.
    fn sample_loss(&self, s: &Sample) -> (f64, f64, bool) {
        let z = self.location_logits(&s.features);
        let (_, lse) = softmax(&z);
        let ce = lse - z[s.next_location as usize];
        let r = self.time_output(&s.features) - s.next_time;
        let pred = argmax_over(&z, 0..N_AREAS).unwrap_or(0);
        (ce, r * r, pred == s.next_location as usize)
    }

    /// Accumulates the gradient of the combined loss of `s` into `grad`
    /// (flat layout) and returns the sample loss.
    fn accumulate_gradient(&self, s: &Sample, lambda: f64, grad: &mut [f64]) -> f64 {
        let z = self.location_logits(&s.features);
        let (mut g, lse) = softmax(&z);
        let ce = lse - z[s.next_location as usize];
        g[s.next_location as usize] -= 1.0;
        let hot = ONE_HOT_OFFSET + s.features.location as usize;
        let bias_off = N_AREAS * FEATURE_DIM;
        let add = |f: usize, scale: f64, grad: &mut [f64]| {
            for (d, gk) in grad[f * N_AREAS..(f + 1) * N_AREAS].iter_mut().zip(&g) {
                *d += gk * scale;
            }
        };
        add(hot, 1.0, grad);
        for (i, &v) in DENSE_INDEX.iter().zip(&s.features.dense) {
            add(*i, v, grad);
        }
        for (d, gk) in grad[bias_off..bias_off + N_AREAS].iter_mut().zip(&g) {
            *d += gk;
        }
        let r = self.time_output(&s.features) - s.next_time;
        let gt = 2.0 * lambda * r;
        let tw_off = bias_off + N_AREAS;
        grad[tw_off + hot] += gt;
        for (i, &v) in DENSE_INDEX.iter().zip(&s.features.dense) {
            grad[tw_off + *i] += gt * v;
        }
        grad[tw_off + FEATURE_DIM] += gt;
        ce + lambda * r * r
    }

    /// Gradient of the mean combined loss over `data`, flat layout.
    pub fn gradient(&self, data: &[Sample], lambda: f64) -> Vec<f64> {
        let mut grad = vec![0.0; Self::DIM];
        for s in data {
            self.accumulate_gradient(s, lambda, &mut grad);
        }
        let n = data.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        grad
    }

    fn apply_step(&mut self, grad: &[f64], step: f64) {
        let (lw, rest) = grad.split_at(N_AREAS * FEATURE_DIM);
        let (lb, rest) = rest.split_at(N_AREAS);
        let (tw, tb) = rest.split_at(FEATURE_DIM);
        for (w, g) in self.location_weights.iter_mut().zip(lw) {
            *w -= step * g;
        }
        for (w, g) in self.location_bias.iter_mut().zip(lb) {
            *w -= step * g;
        }
        for (w, g) in self.time_weights.iter_mut().zip(tw) {
            *w -= step * g;
        }
        self.time_bias -= step * tb[0];
    }

    fn clip(&mut self, w_max: f64) {
        let c = |w: &mut f64| *w = w.clamp(-w_max, w_max);
        self.location_weights.iter_mut().for_each(c);
        self.location_bias.iter_mut().for_each(c);
        self.time_weights.iter_mut().for_each(c);
        c(&mut self.time_bias);
    }

    /// Next charging area and time for `state`.
    ///
    /// At or below 20 % battery the EV charges where it is, immediately.
    /// Otherwise the area is the highest-scoring available station (lowest
    /// index on ties) and the time is the regression output, never earlier
    /// than the current timestamp.
    pub fn predict_next(&self, state: &EvState, scaler: &TimeScaler) -> Prediction {
        if state.battery_pct <= CHARGE_THRESHOLD_PCT {
            return Prediction { next_location: state.location, next_time: state.timestamp };
        }
        let x = encode_features(state.battery_pct, state.location, state.timestamp, &state.history, scaler);
        let z = self.location_logits(&x);
        let loc = argmax_over(&z, state.available_stations.iter().map(|&a| a as usize))
            .unwrap_or(state.location as usize) as Area;
        let t = scaler.unscale(self.time_output(&x)).max(state.timestamp);
        Prediction { next_location: loc, next_time: t }
    }
}

impl LocalModel for DualTaskModel {
    fn dim(&self) -> usize {
        Self::DIM
    }

    fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::DIM);
        v.extend_from_slice(&self.location_weights);
        v.extend_from_slice(&self.location_bias);
        v.extend_from_slice(&self.time_weights);
        v.push(self.time_bias);
        v
    }

    fn unflatten(&self, weights: &[f64]) -> Result<Self> {
        Self::from_flat(weights)
    }

    fn train_local(&self, data: &[Sample], cfg: &TrainConfig, rng: &mut SimRng) -> Result<TrainOutcome<Self>> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if cfg.learning_rate.is_nan() || cfg.learning_rate < 0.0 || cfg.batch_size == 0 {
            return Err(Error::InvalidParameter("learning rate must be >= 0 and batch size >= 1"));
        }
        let mut model = self.clone();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut grad = vec![0.0; Self::DIM];
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for &i in batch {
                    total += model.accumulate_gradient(&data[i], cfg.lambda, &mut grad);
                }
                if cfg.learning_rate > 0.0 {
                    model.apply_step(&grad, cfg.learning_rate / batch.len() as f64);
                }
            }
            let mean = total / data.len() as f64;
            if !mean.is_finite() {
                return Err(Error::DivergedLoss);
            }
            epoch_losses.push(mean);
        }
        model.clip(cfg.w_max);
        if model.flatten().iter().any(|w| !w.is_finite()) {
            return Err(Error::DivergedLoss);
        }
        Ok(TrainOutcome { model, epoch_losses })
    }

    fn evaluate(&self, data: &[Sample], lambda: f64) -> Evaluation {
        if data.is_empty() {
            return Evaluation::default();
        }
        let (mut ce, mut se, mut correct) = (0.0, 0.0, 0);
        for s in data {
            let (c, e, ok) = self.sample_loss(s);
            ce += c;
            se += e;
            correct += ok as usize;
        }
        let n = data.len() as f64;
        Evaluation { count: data.len(), loss: (ce + lambda * se) / n, cross_entropy: ce / n, time_mse: se / n, correct }
    }

    fn forward_dense(&self, x: &[f64; FEATURE_DIM]) -> (Area, f64) {
        let z = self.location_logits_dense(x);
        (argmax_over(&z, 0..N_AREAS).unwrap_or(0) as Area, self.time_output_dense(x))
    }

    fn flops_per_sample(&self) -> u64 {
        // forward: 2 flops per weight; softmax and backward roughly double it
        (4 * Self::DIM + 3 * N_AREAS) as u64
    }
}
