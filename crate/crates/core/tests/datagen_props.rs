use std::collections::BTreeSet;

use hfltn_core::datagen::*;
use hfltn_core::{Error, N_AREAS};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn small_fleet_counts() {
    let fleet = generate_fleet(9, 5, &GeneratorConfig::default()).unwrap();
    let mut counts = [0usize; N_EV_MODELS];
    for ev in &fleet {
        counts[ev.model.model_id as usize] += 1;
    }
    assert!(counts.iter().all(|&c| c <= 9));
    assert_eq!(counts.iter().sum::<usize>(), 9);
    assert!(generate_fleet(0, 5, &GeneratorConfig::default()).is_err());
}

#[test]
fn model_assignment_is_uniform() {
    let fleet = generate_fleet(1000, 5, &GeneratorConfig::default()).unwrap();
    let mut counts = [0f64; N_EV_MODELS];
    for ev in &fleet {
        counts[ev.model.model_id as usize] += 1.0;
    }
    let expected = 1000.0 / N_EV_MODELS as f64;
    for c in counts {
        assert!((c / 1000.0 - 1.0 / N_EV_MODELS as f64).abs() <= 0.05, "{counts:?}");
    }
    let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((N_EV_MODELS - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.001, "p = {p}");
}

#[test]
fn generation_is_deterministic() {
    let cfg = GeneratorConfig::default();
    assert_eq!(generate_fleet(50, 9, &cfg).unwrap(), generate_fleet(50, 9, &cfg).unwrap());
    let ev = &generate_fleet(1, 9, &cfg).unwrap()[0];
    let a: Vec<String> = generate_trips(ev, 9, &cfg).unwrap().iter().map(export_line).collect();
    let b: Vec<String> = generate_trips(ev, 9, &cfg).unwrap().iter().map(export_line).collect();
    assert_eq!(a, b);
}

#[test]
fn sixty_km_trips_on_the_shortest_range() {
    let mut b = Battery::full(143.0);
    let drain: f64 = 60.0 / 143.0 * 100.0;
    assert!((drain - 41.958).abs() < 1e-3);
    assert!(!b.would_need_charge(60.0));
    let (after, charged) = b.drive(60.0, false);
    assert!((after - (100.0 - drain)).abs() < 1e-12 && !charged);
    assert!(b.would_need_charge(60.0));
    let (after, charged) = b.drive(60.0, false);
    assert!((after - (100.0 - 2.0 * drain)).abs() < 1e-12);
    assert!(after < 20.0 && charged);
    assert_eq!(b.pct, 100.0);
}

#[test]
fn zero_distance_keeps_the_battery() {
    let mut b = Battery { range_km: 200.0, pct: 55.5 };
    assert_eq!(b.drive(0.0, false), (55.5, false));
    assert_eq!(b.pct, 55.5);
}

#[test]
fn ranges_are_evenly_spaced() {
    let m = ev_models();
    assert_eq!(m[0].range_km, 143.0);
    assert_eq!(m[8].range_km, 416.0);
    for w in m.windows(2) {
        assert!((w[1].range_km - w[0].range_km - 34.125).abs() < 1e-9);
    }
}

#[test]
fn generated_trips_invariants() {
    let cfg = GeneratorConfig::default();
    let fleet = generate_fleet(40, 2, &cfg).unwrap();
    for ev in &fleet {
        let trips = generate_trips(ev, 2, &cfg).unwrap();
        assert!(!trips.is_empty());
        let mut prev_end = i64::MIN;
        for t in &trips {
            assert!(t.battery_pct_after >= 20.0 || t.charge_event);
            assert_eq!(t.charge_event, t.charge_time.is_some());
            assert!(t.start_time > prev_end);
            assert!(t.start_time >= cfg.epoch_start && t.end_time() < cfg.epoch_end());
            if let Some(ct) = t.charge_time {
                assert!(ct < cfg.epoch_end());
            }
            prev_end = t.end_time();
            assert!((t.pickup as usize) < N_AREAS && (t.dropoff as usize) < N_AREAS);
        }
    }
}

fn ks_distance(a: &[f64; N_AREAS], b: &[f64; N_AREAS]) -> f64 {
    let (mut ca, mut cb, mut d) = (0.0, 0.0, 0.0f64);
    for k in 0..N_AREAS {
        ca += a[k];
        cb += b[k];
        d = d.max((ca - cb).abs());
    }
    d
}

fn empirical_charge_locations(ev: &FleetEv, seed: u64, cfg: &GeneratorConfig) -> [f64; N_AREAS] {
    let trips = generate_trips(ev, seed, cfg).unwrap();
    let mut h = [0.0; N_AREAS];
    let charges: Vec<_> = trips.iter().filter(|t| t.charge_event).collect();
    for t in &charges {
        h[t.dropoff as usize] += 1.0 / charges.len() as f64;
    }
    h
}

#[test]
fn charge_marginals_are_non_iid() {
    let cfg = GeneratorConfig::default();
    let fleet = generate_fleet(20, 4, &cfg).unwrap();
    let marginals: Vec<_> = fleet.iter().map(|ev| empirical_charge_locations(ev, 4, &cfg)).collect();
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..marginals.len() {
        for j in i + 1..marginals.len() {
            total += ks_distance(&marginals[i], &marginals[j]);
            pairs += 1;
        }
    }
    assert!(total / pairs as f64 > 0.1);
}

#[test]
fn split_examples() {
    let s = split_dataset(&(0..100).collect::<Vec<_>>()).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (72, 13, 15));
    let s = split_dataset(&[1, 2, 3]).unwrap();
    assert_eq!((s.train, s.val, s.test), (vec![1], vec![2], vec![3]));
    assert_eq!(split_dataset(&[1, 2]).unwrap_err(), Error::TooFewRecords { needed: 3, found: 2 });
}

#[test]
fn split_is_a_chronological_prefix() {
    let cfg = GeneratorConfig::default();
    for ev in generate_fleet(10, 6, &cfg).unwrap() {
        let trips = generate_trips(&ev, 6, &cfg).unwrap();
        let s = split_dataset(&trips).unwrap();
        let max_train = s.train.iter().map(|t| t.start_time).max().unwrap();
        let min_val = s.val.iter().map(|t| t.start_time).min().unwrap();
        let max_val = s.val.iter().map(|t| t.start_time).max().unwrap();
        let min_test = s.test.iter().map(|t| t.start_time).min().unwrap();
        assert!(max_train < min_val && max_val < min_test);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), trips.len());
    }
}

#[test]
fn export_format() {
    let t = TripRecord {
        ev_id: 4,
        pickup: 1,
        dropoff: 76,
        distance_km: 12.345678,
        start_time: 1_672_531_300,
        battery_pct_after: 80.0,
        charge_event: false,
        charge_time: None,
    };
    assert_eq!(export_line(&t), "4,1,76,12.3457,1672531300,80.0000,0,");
    let c = TripRecord { charge_event: true, charge_time: Some(1_672_535_000), ..t };
    assert_eq!(export_line(&c), "4,1,76,12.3457,1672531300,80.0000,1,1672535000");
    assert_eq!(EXPORT_HEADER.split(',').count(), 8);
}

#[test]
fn homes_cover_many_areas() {
    let fleet = generate_fleet(500, 1, &GeneratorConfig::default()).unwrap();
    let homes: BTreeSet<_> = fleet.iter().map(|e| e.home_area).collect();
    assert!(homes.len() > 70);
    let transitory = fleet.iter().filter(|e| e.transitory).count() as f64 / 500.0;
    assert!((transitory - 0.2).abs() < 0.05);
}
