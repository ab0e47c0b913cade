//! Per-client training data built from the synthetic trip generator.

use rayon::prelude::*;

use hfltn_core::datagen::{self, DatasetSplit, FleetEv, GeneratorConfig, TripRecord};
use hfltn_core::trainer::{build_samples, Features, Sample, TimeScaler};
use hfltn_core::{CommunityId, Result};

use crate::config::ExperimentConfig;

/// Number of trailing samples per client that feed the community summary.
pub const RECENT_SAMPLES: usize = 10;

#[derive(Debug, Clone)]
pub struct ClientData {
    pub ev: FleetEv,
    pub community: CommunityId,
    pub split: DatasetSplit<Sample>,
    pub recent: Vec<Features>,
}

impl ClientData {
    pub fn n_samples(&self) -> usize {
        self.split.train.len() + self.split.val.len() + self.split.test.len()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub clients: Vec<ClientData>,
    pub scaler: TimeScaler,
    pub communities: usize,
}

pub fn generator_config(cfg: &ExperimentConfig) -> GeneratorConfig {
    GeneratorConfig {
        days: cfg.days,
        transitory_fraction: cfg.transitory_fraction,
        mean_gap_hours: cfg.mean_gap_hours,
        ..GeneratorConfig::default()
    }
}

/// Fleet plus every EV's trips, in id order.
pub fn generate_trips(cfg: &ExperimentConfig) -> Result<Vec<(FleetEv, Vec<TripRecord>)>> {
    let gen = generator_config(cfg);
    let fleet = datagen::generate_fleet(cfg.n_evs, cfg.seed, &gen)?;
    fleet
        .into_par_iter()
        .map(|ev| datagen::generate_trips(&ev, cfg.seed, &gen).map(|t| (ev, t)))
        .collect()
}

/// Splits one EV's samples chronologically by the trip they came from.
fn split_samples(trips: &[TripRecord], samples: Vec<(usize, Sample)>) -> DatasetSplit<Sample> {
    let mut split = DatasetSplit { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    let Ok((a, b)) = datagen::split_points(trips.len()) else {
        return split;
    };
    for (j, s) in samples {
        if j < a {
            split.train.push(s);
        } else if j < b {
            split.val.push(s);
        } else {
            split.test.push(s);
        }
    }
    split
}

pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let gen = generator_config(cfg);
    let scaler = TimeScaler::new(gen.epoch_start, gen.epoch_end())?;
    let clients = generate_trips(cfg)?
        .into_par_iter()
        .map(|(ev, trips)| {
            let samples = build_samples(&trips, &scaler);
            let recent =
                samples[samples.len().saturating_sub(RECENT_SAMPLES)..].iter().map(|(_, s)| s.features).collect();
            ClientData { community: ev.community(cfg.communities), ev, split: split_samples(&trips, samples), recent }
        })
        .collect();
    Ok(Dataset { clients, scaler, communities: cfg.communities })
}

/// Trip export in the documented CSV layout.
pub fn trips_csv(fleet: &[(FleetEv, Vec<TripRecord>)]) -> String {
    let mut s = String::from(datagen::EXPORT_HEADER);
    s.push('\n');
    for (_, trips) in fleet {
        for t in trips {
            s.push_str(&datagen::export_line(t));
            s.push('\n');
        }
    }
    s
}
