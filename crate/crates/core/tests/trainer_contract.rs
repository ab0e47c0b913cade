use std::collections::BTreeSet;

use hfltn_core::datagen::{generate_fleet, generate_trips, GeneratorConfig, SECONDS_PER_DAY};
use hfltn_core::rng::seeded;
use hfltn_core::trainer::*;
use hfltn_core::{Area, Error, DATASET_EPOCH, N_AREAS};
use rand::Rng;

fn scaler() -> TimeScaler {
    TimeScaler::new(DATASET_EPOCH, DATASET_EPOCH + 365 * SECONDS_PER_DAY).unwrap()
}

fn random_model(rng: &mut impl Rng, scale: f64) -> DualTaskModel {
    let w: Vec<f64> = (0..DualTaskModel::DIM).map(|_| rng.random_range(-scale..scale)).collect();
    DualTaskModel::from_flat(&w).unwrap()
}

fn random_sample(rng: &mut impl Rng) -> Sample {
    let features = Features {
        location: rng.random_range(0..N_AREAS) as Area,
        dense: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
    };
    Sample { features, next_location: rng.random_range(0..N_AREAS) as Area, next_time: rng.random_range(0.0..1.0) }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = seeded(11);
    let model = random_model(&mut rng, 0.3);
    let data: Vec<Sample> = (0..5).map(|_| random_sample(&mut rng)).collect();
    let lambda = 1.0;
    let analytic = model.gradient(&data, lambda);
    let flat = model.flatten();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, &g) in analytic.iter().enumerate() {
        let mut plus = flat.clone();
        plus[i] += h;
        let mut minus = flat.clone();
        minus[i] -= h;
        let lp = DualTaskModel::from_flat(&plus).unwrap().evaluate(&data, lambda).loss;
        let lm = DualTaskModel::from_flat(&minus).unwrap().evaluate(&data, lambda).loss;
        let numeric = (lp - lm) / (2.0 * h);
        if g.abs().max(numeric.abs()) < 1e-7 {
            // untouched one-hot column on both sides
            assert!((g - numeric).abs() < 1e-9, "coord {i}: {g} vs {numeric}");
            continue;
        }
        worst = worst.max((g - numeric).abs() / g.abs().max(numeric.abs()));
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

/// On a single sample, each full-batch step shrinks the time residual by the
/// factor `1 - 2 * lr * lambda * |x|^2` (the least-squares solution has zero
/// residual), so the residual after n steps is known in closed form.
#[test]
fn single_sample_converges() {
    let mut rng = seeded(3);
    let s = random_sample(&mut rng);
    let x = s.features.to_dense();
    let norm2 = x.iter().map(|v| v * v).sum::<f64>() + 1.0;
    let cfg = TrainConfig { epochs: 100, learning_rate: 0.25 / norm2, batch_size: 1, ..TrainConfig::default() };
    let zero = DualTaskModel::zeros();
    let initial = zero.evaluate(&[s], cfg.lambda).loss;
    let out = zero.train_local(&[s], &cfg, &mut rng).unwrap();
    let after = out.model.evaluate(&[s], cfg.lambda);
    assert!(after.loss < 0.1 * initial, "{} vs {initial}", after.loss);

    let factor = 1.0 - 2.0 * cfg.learning_rate * cfg.lambda * norm2;
    let expected_residual = -s.next_time * factor.powi(100);
    let residual = out.model.time_output(&s.features) - s.next_time;
    assert!((residual - expected_residual).abs() < 1e-12, "{residual} vs {expected_residual}");
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let mut rng = seeded(8);
    let m = random_model(&mut rng, 1.0);
    let data: Vec<Sample> = (0..10).map(|_| random_sample(&mut rng)).collect();
    let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, ..TrainConfig::default() };
    assert_eq!(m.train_local(&data, &cfg, &mut rng).unwrap().model, m);
    assert_eq!(m.train_local(&[], &cfg, &mut rng).unwrap_err(), Error::EmptyDataset);
}

#[test]
fn flatten_round_trip() {
    let m = random_model(&mut seeded(1), 5.0);
    assert_eq!(DualTaskModel::from_flat(&m.flatten()).unwrap(), m);
    assert!(DualTaskModel::zeros().flatten().iter().all(|&w| w == 0.0));
    assert_eq!(DualTaskModel::zeros().flatten().len(), 6474);
    assert_eq!(DualTaskModel::from_flat(&[0.0; 3]).unwrap_err(), Error::LayoutMismatch { expected: 6474, found: 3 });
}

#[test]
fn scaler_is_exact_to_the_second() {
    let sc = scaler();
    let mut rng = seeded(2);
    for _ in 0..100_000 {
        let t = rng.random_range(sc.start..=sc.end);
        assert_eq!(sc.unscale(sc.scale(t)), t);
    }
    assert!(TimeScaler::new(5, 5).is_err());
}

fn ev_samples(seed: u64) -> Vec<Sample> {
    let cfg = GeneratorConfig::default();
    let fleet = generate_fleet(4, seed, &cfg).unwrap();
    fleet
        .iter()
        .flat_map(|ev| build_samples(&generate_trips(ev, seed, &cfg).unwrap(), &scaler()))
        .map(|(_, s)| s)
        .collect()
}

#[test]
fn training_is_deterministic_and_descends() {
    let data = ev_samples(21);
    assert!(data.len() > 100);
    let cfg = TrainConfig { epochs: 8, learning_rate: 0.2, ..TrainConfig::default() };
    let a = DualTaskModel::zeros().train_local(&data, &cfg, &mut seeded(4)).unwrap();
    let b = DualTaskModel::zeros().train_local(&data, &cfg, &mut seeded(4)).unwrap();
    assert_eq!(a, b);
    let l = &a.epoch_losses;
    assert!(l.last().unwrap() < l.first().unwrap());
    for w in l.windows(2) {
        assert!(w[1] <= w[0] * 1.02, "{l:?}");
    }
}

fn oracle_argmax(z: &[f64], allowed: &BTreeSet<Area>) -> Area {
    let mut best: Option<(f64, Area)> = None;
    for &a in allowed {
        let v = z[a as usize];
        if best.is_none_or(|(bv, _)| v > bv) {
            best = Some((v, a));
        }
    }
    best.unwrap().1
}

#[test]
fn restricted_argmax_example() {
    let mut m = DualTaskModel::zeros();
    m.location_bias[5] = 10.0;
    m.location_bias[3] = 1.0;
    m.location_bias[9] = 2.0;
    let state = EvState {
        battery_pct: 80.0,
        location: 0,
        neighbors: vec![1, 11],
        timestamp: DATASET_EPOCH + 1000,
        history: vec![],
        available_stations: [3, 9].into(),
    };
    assert_eq!(m.predict_next(&state, &scaler()).next_location, 9);
}

#[test]
fn low_battery_examples() {
    let m = random_model(&mut seeded(0), 1.0);
    let state = |battery_pct| EvState {
        battery_pct,
        location: 12,
        neighbors: vec![],
        timestamp: 1_700_000_000,
        history: vec![],
        available_stations: [40].into(),
    };
    let immediate = Prediction { next_location: 12, next_time: 1_700_000_000 };
    assert_eq!(m.predict_next(&state(15.0), &scaler()), immediate);
    assert_eq!(m.predict_next(&state(20.0), &scaler()), immediate);
    assert_ne!(m.predict_next(&state(20.5), &scaler()).next_location, 12);
}

#[test]
fn ten_thousand_states_honour_the_contract() {
    let sc = scaler();
    let mut rng = seeded(10_000);
    let cfg = GeneratorConfig::default();
    let fleet = generate_fleet(3, 1, &cfg).unwrap();
    let histories: Vec<_> = fleet.iter().map(|ev| generate_trips(ev, 1, &cfg).unwrap()).collect();
    for i in 0..10_000 {
        let model = random_model(&mut rng, if i % 2 == 0 { 1.0 } else { 1e-3 });
        let hist = &histories[i % 3];
        let cut = rng.random_range(0..hist.len());
        let history = hist[..cut].to_vec();
        let timestamp = history.last().map_or(sc.start, |t| t.end_time());
        let n_stations = rng.random_range(1..=N_AREAS);
        let available_stations: BTreeSet<Area> = (0..n_stations).map(|_| rng.random_range(0..N_AREAS) as Area).collect();
        let battery_pct = if i % 5 == 0 { 20.0 } else { rng.random_range(0.0..=100.0) };
        let location = rng.random_range(0..N_AREAS) as Area;
        let state = EvState { battery_pct, location, neighbors: vec![], timestamp, history, available_stations };
        state.validate().unwrap();
        let p = model.predict_next(&state, &sc);
        if battery_pct <= 20.0 {
            assert_eq!(p, Prediction { next_location: location, next_time: timestamp });
            continue;
        }
        assert!(state.available_stations.contains(&p.next_location));
        let x = encode_features(battery_pct, location, timestamp, &state.history, &sc).to_dense();
        assert_eq!(p.next_location, oracle_argmax(&model.location_logits_dense(&x), &state.available_stations));
        assert!(p.next_time >= timestamp);
    }
}
