//! Whole runs, the ablation matrix and seed replication, plus output files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::info;

use hfltn_core::derms::{epdc_ingest, EpdcRecord};
use hfltn_core::wire;

use crate::audit::PrivacyReport;
use crate::config::{Ablation, ExperimentConfig};
use crate::dataset::{build_dataset, Dataset};
use crate::metrics::{fmt_g, metrics_csv, RoundMetrics, RunSummary, SUMMARY_HEADER};
use crate::net::Census;
use crate::world::{RuntimeError, World};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigInvalid),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Core(#[from] hfltn_core::Error),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub rows: Vec<RoundMetrics>,
    pub summary: RunSummary,
    pub privacy: PrivacyReport,
    pub census: Census,
    pub paths: Vec<(&'static str, u64)>,
    pub epdc: Vec<EpdcRecord>,
    /// Final `(community, encoded model message)` pairs.
    pub models: Vec<(u32, Vec<u8>)>,
    pub wall_ms: u128,
}

/// Runs one configuration on a prebuilt dataset.
pub fn run_on(cfg: &ExperimentConfig, data: Arc<Dataset>) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut world = World::new(cfg.clone(), data)?;
    let initial = world.evaluate()?.train.loss;
    let mut rows = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let row = world.run_round()?;
        info!("epoch {} train_loss {:.5} gap {:.3}%", row.epoch, row.train_loss, row.generalization_gap_pct);
        rows.push(row);
    }
    let summary = RunSummary::from_rows(initial, &rows).expect("at least one epoch");
    let codec = hfltn_core::FixedPointCodec::default();
    let models = world
        .models()
        .iter()
        .map(|m| Ok((m.community_id, wire::serialize_weights(m.community_id, &codec.encode_vector(&m.theta)?))))
        .collect::<Result<_, hfltn_core::Error>>()?;
    Ok(ExperimentOutput {
        config: cfg.clone(),
        rows,
        summary,
        privacy: world.auditor.report(),
        census: world.census().clone(),
        paths: world.path_counts().iter().map(|(p, n)| (p.as_str(), *n)).collect(),
        epdc: world.epdc_records().to_vec(),
        models,
        wall_ms: start.elapsed().as_millis(),
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    let data = Arc::new(build_dataset(cfg)?);
    let out = run_on(cfg, data)?;
    if let Some(dir) = &cfg.out {
        write_outputs(&out, dir)?;
    }
    Ok(out)
}

pub fn census_csv(census: &Census, paths: &[(&str, u64)]) -> String {
    let mut s = String::from("category,name,count,bytes\n");
    for ((ch, from, to, t), (n, b)) in &census.messages {
        let _ = writeln!(s, "message,{} {}->{} type{},{},{}", ch.name(), from, to, t, n, b);
    }
    for (p, n) in paths {
        let _ = writeln!(s, "path,{p},{n},");
    }
    s
}

pub fn epdc_csv(records: &[EpdcRecord]) -> String {
    let mut s = String::from("round,community_id,predicted_location,predicted_time\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.round, r.community_id, r.predicted_location, r.predicted_time);
    }
    s
}

pub fn demand_csv(records: &[EpdcRecord]) -> String {
    let mut s = String::from("community_id,kind,key,count\n");
    for (c, p) in epdc_ingest(records) {
        for (loc, n) in &p.locations {
            let _ = writeln!(s, "{c},location,{loc},{n}");
        }
        for (h, n) in &p.hours {
            let _ = writeln!(s, "{c},hour,{h},{n}");
        }
    }
    s
}

/// Writes the output tree. Everything except `wall_time.txt` is a pure
/// function of the configuration.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir.join("models"))?;
    fs::write(dir.join("config.txt"), out.config.to_kv())?;
    fs::write(dir.join("metrics.csv"), metrics_csv(&out.rows))?;
    fs::write(dir.join("summary.csv"), format!("{SUMMARY_HEADER}\n{}\n", out.summary.csv_row()))?;
    fs::write(dir.join("privacy.txt"), out.privacy.render())?;
    fs::write(dir.join("census.csv"), census_csv(&out.census, &out.paths))?;
    fs::write(dir.join("epdc.csv"), epdc_csv(&out.epdc))?;
    fs::write(dir.join("demand.csv"), demand_csv(&out.epdc))?;
    for (c, bytes) in &out.models {
        fs::write(dir.join("models").join(format!("community_{c}.hfls")), bytes)?;
    }
    fs::write(dir.join("wall_time.txt"), format!("{}\n", out.wall_ms))?;
    Ok(())
}

/// Baseline plus each single-feature ablation on one shared dataset.
pub fn run_ablation_matrix(base: &ExperimentConfig) -> Result<Vec<(String, ExperimentOutput)>, ExperimentError> {
    base.validate()?;
    let data = Arc::new(build_dataset(base)?);
    let mut variants = vec![("baseline".to_string(), base.clone())];
    for a in Ablation::ALL {
        let mut cfg = base.clone();
        cfg.ablations.insert(a);
        variants.push((a.name().to_string(), cfg));
    }
    let mut results = Vec::new();
    for (name, mut cfg) in variants {
        cfg.out = base.out.as_ref().map(|d| d.join(&name));
        let out = run_on(&cfg, Arc::clone(&data))?;
        if let Some(dir) = &cfg.out {
            write_outputs(&out, dir)?;
        }
        results.push((name, out));
    }
    if let Some(dir) = &base.out {
        fs::write(dir.join("comparison.csv"), comparison_csv(&results))?;
    }
    Ok(results)
}

pub fn comparison_csv(results: &[(String, ExperimentOutput)]) -> String {
    let mut s = String::from(
        "variant,final_test_location_accuracy,final_test_time_mse,final_train_loss,loss_decrease_rate_pct,\
final_generalization_gap_pct,flops_per_epoch,non_reconstruction,peer_threshold,share_uniformity\n",
    );
    for (name, o) in results {
        let flops = o.rows.first().map(|r| r.total_flops).unwrap_or(0);
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{flops},{},{},{}",
            fmt_g(o.summary.final_test_location_accuracy),
            fmt_g(o.summary.final_test_time_mse),
            fmt_g(o.summary.final_train_loss),
            fmt_g(o.summary.loss_decrease_rate_pct),
            fmt_g(o.summary.final_generalization_gap_pct),
            o.privacy.non_reconstruction(),
            o.privacy.below_threshold(),
            o.privacy.uniform_shares(),
        );
    }
    s
}

pub const SUBGROUPS: [&str; 3] = ["A", "B", "C"];

/// Three seeds per fleet size, reported per subgroup and pooled.
pub fn replicate(base: &ExperimentConfig, sizes: &[usize]) -> Result<String, ExperimentError> {
    let mut s = format!("n_evs,subgroup,{SUMMARY_HEADER}\n");
    for &n in sizes {
        let mut pooled: Vec<RunSummary> = Vec::new();
        for (i, label) in SUBGROUPS.iter().enumerate() {
            let mut cfg = base.clone();
            cfg.n_evs = n;
            // a cap at or above the fleet size is the uncapped regime
            cfg.cap = base.cap.min(n);
            cfg.seed = base.seed + i as u64;
            cfg.out = base.out.as_ref().map(|d| d.join(format!("n{n}")).join(label));
            cfg.validate()?;
            let out = run_experiment(&cfg)?;
            let _ = writeln!(s, "{n},{label},{}", out.summary.csv_row());
            pooled.push(out.summary);
        }
        let k = pooled.len() as f64;
        let mean = |f: fn(&RunSummary) -> f64| pooled.iter().map(f).sum::<f64>() / k;
        let p = RunSummary {
            initial_train_loss: mean(|r| r.initial_train_loss),
            final_train_loss: mean(|r| r.final_train_loss),
            loss_decrease_rate_pct: mean(|r| r.loss_decrease_rate_pct),
            final_generalization_gap_pct: mean(|r| r.final_generalization_gap_pct),
            final_test_location_accuracy: mean(|r| r.final_test_location_accuracy),
            final_test_time_mse: mean(|r| r.final_test_time_mse),
            total_flops: pooled[0].total_flops,
            total_sim_time_ms: mean(|r| r.total_sim_time_ms),
        };
        let _ = writeln!(s, "{n},pooled,{}", p.csv_row());
    }
    if let Some(dir) = &base.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("replication.csv"), &s)?;
    }
    Ok(s)
}
