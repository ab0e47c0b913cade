use std::collections::BTreeMap;
use std::fs;
use std::sync::Arc;

use hfltn::config::{Ablation, ExperimentConfig};
use hfltn::dataset::{build_dataset, Dataset};
use hfltn::experiment::{run_experiment, run_on};
use hfltn::net::{channel_for, ChannelKind, NetError, Network, NodeId};
use hfltn::world::World;
use hfltn_core::derms::normalize;
use hfltn_core::rng::{domain, stream};
use hfltn_core::trainer::{DualTaskModel, LocalModel, TrainConfig};
use hfltn_core::wire;
use hfltn_core::FixedPointCodec;

fn small(n: usize, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_n_evs(n);
    cfg.seed = seed;
    cfg.days = 120;
    cfg.epochs = 3;
    cfg
}

fn dataset(cfg: &ExperimentConfig) -> Arc<Dataset> {
    Arc::new(build_dataset(cfg).unwrap())
}

#[test]
fn flops_per_epoch() {
    let mut cfg = small(500, 1);
    cfg.days = 30;
    cfg.epochs = 2;
    let data = dataset(&cfg);
    let capped = run_on(&cfg, data.clone()).unwrap();
    assert!(capped.rows.iter().all(|r| r.total_flops == 74_880_000 && r.active_clients == 150));
    let mut open = cfg.clone();
    open.ablations.insert(Ablation::CappingRotating);
    let open = run_on(&open, data).unwrap();
    assert!(open.rows.iter().all(|r| r.total_flops == 249_600_000 && r.active_clients == 500));
}

#[test]
fn identical_runs_write_identical_files() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let mut cfg = small(80, 7);
        cfg.cap = 30;
        cfg.out = Some(d.path().to_path_buf());
        run_experiment(&cfg).unwrap();
    }
    for f in ["metrics.csv", "summary.csv", "privacy.txt", "census.csv", "epdc.csv", "demand.csv", "models/community_1.hfls"] {
        let a = fs::read(dirs[0].path().join(f)).unwrap();
        let b = fs::read(dirs[1].path().join(f)).unwrap();
        assert!(!a.is_empty(), "{f}");
        assert_eq!(a, b, "{f}");
    }
    let metrics = fs::read_to_string(dirs[0].path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert_eq!(metrics.lines().next().unwrap(), hfltn::metrics::METRICS_HEADER);
}

#[test]
fn secret_sharing_ablation_switches_every_path_to_plaintext() {
    let cfg = small(60, 3);
    let data = dataset(&cfg);
    let base = run_on(&cfg, data.clone()).unwrap();
    let mut ab = cfg.clone();
    ab.ablations.insert(Ablation::SecretSharing);
    let ablated = run_on(&ab, data).unwrap();
    let paths = |o: &hfltn::experiment::ExperimentOutput| o.paths.iter().map(|(p, _)| *p).collect::<Vec<_>>();
    assert!(!paths(&base).contains(&"plaintext"));
    assert!(paths(&base).contains(&"p2p_augmented"));
    assert_eq!(paths(&ablated), vec!["plaintext"]);
    assert_eq!(ablated.census.count(ChannelKind::MelsecSim, "ev", "ev", 0), 0);
    assert!(base.census.count(ChannelKind::MelsecSim, "ev", "ev", 0) > 0);
    // the ring sum is exact either way; only the traffic volume differs
    let strip = |o: &hfltn::experiment::ExperimentOutput| {
        o.rows.iter().map(|r| hfltn::metrics::RoundMetrics { sim_time_ms: 0.0, ..r.clone() }).collect::<Vec<_>>()
    };
    assert_eq!(strip(&base), strip(&ablated));
    assert!(ablated.rows[0].sim_time_ms < base.rows[0].sim_time_ms);
    assert!(base.privacy.all_pass());
    assert!(!ablated.privacy.non_reconstruction());
}

#[test]
fn traffic_uses_the_expected_channels() {
    let out = run_on(&small(60, 4), dataset(&small(60, 4))).unwrap();
    let kinds: Vec<_> = out.census.messages.keys().map(|(ch, from, to, _)| (*ch, *from, *to)).collect();
    for (ch, from, to) in kinds {
        let expected = if to == "epdc" { ChannelKind::Tls13Sim } else { ChannelKind::MelsecSim };
        assert_eq!(ch, expected, "{from}->{to}");
    }
    assert_eq!(out.census.count(ChannelKind::Tls13Sim, "derms", "epdc", 2), 3 * 2);
    assert_eq!(out.epdc.len(), 6);
}

/// Retrains every client of one round from the broadcast weights, averages
/// the plaintext results and normalises them.
#[test]
fn next_broadcast_is_the_normalised_average() {
    let cfg = small(50, 9);
    let data = dataset(&cfg);
    let mut world = World::new(cfg.clone(), data.clone()).unwrap();
    world.run_round().unwrap();
    let before: Vec<Vec<f64>> = world.models().iter().map(|m| m.theta.clone()).collect();
    world.run_round().unwrap();
    let trace = world.last_trace().clone();
    let codec = FixedPointCodec::default();
    let train_cfg = TrainConfig {
        epochs: cfg.local_epochs,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        lambda: cfg.lambda,
        w_max: codec.w_max,
    };
    let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
    for &id in &trace.trained {
        let c = data.clients[id as usize].community;
        let start = codec.decode_vector(&codec.encode_vector(&before[c as usize]).unwrap());
        let mut rng = stream(cfg.seed, &[domain::TRAIN, 1, id as u64]);
        let w = DualTaskModel::from_flat(&start)
            .unwrap()
            .train_local(&data.clients[id as usize].split.train, &train_cfg, &mut rng)
            .unwrap()
            .model
            .flatten();
        let w = codec.decode_vector(&codec.encode_vector(&w).unwrap());
        let e = sums.entry(c).or_insert_with(|| (vec![0.0; w.len()], 0));
        e.0.iter_mut().zip(&w).for_each(|(s, x)| *s += x);
        e.1 += 1;
    }
    assert_eq!(sums.len(), 2);
    for (c, (sum, n)) in sums {
        let oracle = normalize(&sum.iter().map(|s| s / n as f64).collect::<Vec<_>>(), cfg.tau).unwrap();
        let installed = &trace.installed[&c];
        assert_eq!(installed, &world.models()[c as usize].theta);
        for (a, b) in installed.iter().zip(&oracle) {
            assert!((a - b).abs() <= n as f64 * 2f64.powi(-32), "{a} vs {b}");
        }
    }
}

#[test]
fn normalisation_contains_a_poisoned_client() {
    let mut cfg = small(120, 2);
    cfg.cap = 120;
    cfg.epochs = 6;
    cfg.poisoned_clients = 2;
    let data = dataset(&cfg);
    let with = run_on(&cfg, data.clone()).unwrap();
    let mut ab = cfg.clone();
    ab.ablations.insert(Ablation::Normalisation);
    let without = run_on(&ab, data.clone()).unwrap();
    let (w, wo) = (with.rows.last().unwrap(), without.rows.last().unwrap());
    assert!(wo.test_time_mse > 10.0 * w.test_time_mse, "{} vs {}", wo.test_time_mse, w.test_time_mse);
    assert!(wo.val_loss > w.val_loss);
}

#[test]
fn envelopes_and_topology() {
    use NodeId::*;
    assert_eq!(channel_for(Ev(1), Ev(2)), Some(ChannelKind::MelsecSim));
    assert_eq!(channel_for(Ev(1), Derms(0)), Some(ChannelKind::MelsecSim));
    assert_eq!(channel_for(Derms(0), Ev(1)), Some(ChannelKind::MelsecSim));
    assert_eq!(channel_for(Derms(1), Epdc), Some(ChannelKind::Tls13Sim));
    assert_eq!(channel_for(Ev(1), Epdc), None);
    assert_eq!(channel_for(Ev(1), Ev(1)), None);
    assert_eq!(channel_for(Derms(0), Derms(1)), None);

    let mut net = Network::new();
    net.set_time(42);
    let msg = wire::serialize_weights(5, &hfltn_core::RingVector::from_elems(vec![1, 2, 3]));
    net.send(Ev(5), Derms(0), msg.clone()).unwrap();
    net.send(Ev(6), Derms(0), msg.clone()).unwrap();
    assert!(matches!(net.send(Ev(5), Epdc, msg.clone()), Err(NetError::NoRoute(..))));
    assert_eq!(net.pending(), 2);
    let got = net.drain(Derms(0));
    assert_eq!(got.len(), 2);
    assert_eq!((got[0].sender, got[1].sender), (Ev(5), Ev(6)));
    assert!(got.iter().all(|e| e.payload == msg && e.sim_timestamp == 42 && e.channel_kind == ChannelKind::MelsecSim));
    assert_eq!(net.sent_bytes(Ev(5)), msg.len() as u64);
    assert_eq!(net.recv_bytes(Derms(0)), 2 * msg.len() as u64);
    let (_, _, census) = net.take_accounting();
    assert_eq!(census.count(ChannelKind::MelsecSim, "ev", "derms", 1), 2);
    assert_eq!(net.pending(), 0);
}
