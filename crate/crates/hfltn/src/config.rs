//! Experiment configuration: flat `key = value` files plus flag overrides.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hfltn_core::scheduler::{DEFAULT_CAP, DEFAULT_PER_CLIENT_FLOPS};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
#[error("invalid config key `{key}`: {reason}")]
pub struct ConfigInvalid {
    pub key: String,
    pub reason: String,
}

impl ConfigInvalid {
    pub fn new(key: &str, reason: impl Into<String>) -> Self {
        Self { key: key.to_string(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ablation {
    CappingRotating,
    SecretSharing,
    SecureAggregation,
    Normalisation,
}

impl Ablation {
    pub const ALL: [Ablation; 4] =
        [Ablation::CappingRotating, Ablation::SecretSharing, Ablation::SecureAggregation, Ablation::Normalisation];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::CappingRotating => "capping_rotating",
            Ablation::SecretSharing => "secret_sharing",
            Ablation::SecureAggregation => "secure_aggregation",
            Ablation::Normalisation => "normalisation",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = ConfigInvalid;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ConfigInvalid::new("ablate", format!("unknown ablation `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_evs: usize,
    pub cap: usize,
    pub epochs: usize,
    pub seed: u64,
    pub communities: usize,
    pub dccm_enabled: bool,
    pub crm_enabled: bool,
    pub ablations: BTreeSet<Ablation>,
    pub alpha: f64,
    pub tau: f64,
    pub k_transitory: usize,
    pub per_client_flops: u64,
    pub out: Option<PathBuf>,
    // dataset
    pub days: u32,
    pub transitory_fraction: f64,
    pub mean_gap_hours: f64,
    // local training
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda: f64,
    // outlier injection
    pub poisoned_clients: usize,
    pub poison_factor: f64,
    // simulated clock
    pub client_flops_per_ms: f64,
    pub link_bytes_per_ms: f64,
}

impl ExperimentConfig {
    /// Defaults for everything except the fleet size.
    pub fn with_n_evs(n_evs: usize) -> Self {
        Self {
            n_evs,
            cap: DEFAULT_CAP,
            epochs: 10,
            seed: 0,
            communities: 2,
            dccm_enabled: true,
            crm_enabled: true,
            ablations: BTreeSet::new(),
            alpha: 1.0,
            tau: hfltn_core::derms::DEFAULT_TAU,
            k_transitory: 3,
            per_client_flops: DEFAULT_PER_CLIENT_FLOPS,
            out: None,
            days: 365,
            transitory_fraction: 0.2,
            mean_gap_hours: 20.0,
            local_epochs: 1,
            learning_rate: 0.5,
            batch_size: 32,
            lambda: 1.0,
            poisoned_clients: 0,
            poison_factor: 100.0,
            client_flops_per_ms: 1000.0,
            link_bytes_per_ms: 1000.0,
        }
    }

    pub fn ablated(&self, a: Ablation) -> bool {
        self.ablations.contains(&a)
    }

    /// Whether the cap is in force after ablations.
    pub fn capping(&self) -> bool {
        self.dccm_enabled && !self.ablated(Ablation::CappingRotating)
    }

    pub fn rotation(&self) -> bool {
        self.crm_enabled && !self.ablated(Ablation::CappingRotating)
    }

    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        let fail = |k: &str, r: &str| Err(ConfigInvalid::new(k, r));
        if self.n_evs == 0 {
            return fail("n_evs", "must be at least 1");
        }
        if self.n_evs > hfltn_core::FixedPointCodec::default().max_clients() {
            return fail("n_evs", "exceeds the fixed-point headroom of 2047 clients");
        }
        if self.cap == 0 {
            return fail("cap", "must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs", "must be at least 1");
        }
        if self.communities == 0 || self.communities > hfltn_core::N_AREAS {
            return fail("communities", "must be in 1..=77");
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return fail("alpha", "must be positive");
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return fail("tau", "must be positive");
        }
        if !(2..=u16::MAX as usize).contains(&self.k_transitory) {
            return fail("k_transitory", "must be at least 2");
        }
        if self.per_client_flops == 0 {
            return fail("per_client_flops", "must be positive");
        }
        if self.days == 0 {
            return fail("days", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.transitory_fraction) {
            return fail("transitory_fraction", "must be in [0, 1]");
        }
        if !(self.mean_gap_hours.is_finite() && self.mean_gap_hours > 0.0) {
            return fail("mean_gap_hours", "must be positive");
        }
        if self.local_epochs == 0 {
            return fail("local_epochs", "must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail("learning_rate", "must be non-negative");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail("lambda", "must be non-negative");
        }
        if self.poisoned_clients > self.n_evs {
            return fail("poisoned_clients", "must not exceed n_evs");
        }
        if !self.poison_factor.is_finite() {
            return fail("poison_factor", "must be finite");
        }
        if !(self.client_flops_per_ms > 0.0 && self.link_bytes_per_ms > 0.0) {
            return fail("client_flops_per_ms", "rates must be positive");
        }
        Ok(())
    }

    /// Resolved configuration in the file format.
    pub fn to_kv(&self) -> String {
        let ablations: Vec<&str> = self.ablations.iter().map(|a| a.name()).collect();
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("n_evs", self.n_evs.to_string());
        put("cap", self.cap.to_string());
        put("epochs", self.epochs.to_string());
        put("seed", self.seed.to_string());
        put("communities", self.communities.to_string());
        put("dccm", self.dccm_enabled.to_string());
        put("crm", self.crm_enabled.to_string());
        put("ablate", ablations.join(","));
        put("alpha", self.alpha.to_string());
        put("tau", self.tau.to_string());
        put("k_transitory", self.k_transitory.to_string());
        put("per_client_flops", self.per_client_flops.to_string());
        put("days", self.days.to_string());
        put("transitory_fraction", self.transitory_fraction.to_string());
        put("mean_gap_hours", self.mean_gap_hours.to_string());
        put("local_epochs", self.local_epochs.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lambda", self.lambda.to_string());
        put("poisoned_clients", self.poisoned_clients.to_string());
        put("poison_factor", self.poison_factor.to_string());
        put("client_flops_per_ms", self.client_flops_per_ms.to_string());
        put("link_bytes_per_ms", self.link_bytes_per_ms.to_string());
        s
    }
}

/// Raw `key = value` pairs in file order. `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ConfigInvalid> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigInvalid::new(line, format!("line {} is not `key = value`", lineno + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigInvalid> {
    v.parse().map_err(|_| ConfigInvalid::new(key, format!("cannot parse `{v}`")))
}

/// Builder that applies file entries first and flag overrides after.
#[derive(Debug, Default, Clone)]
pub struct ConfigBuilder {
    entries: Vec<(String, String)>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file(mut self, path: &Path) -> Result<Self, ConfigInvalid> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigInvalid::new("config", format!("{}: {e}", path.display())))?;
        self.entries.extend(parse_kv(&text)?);
        Ok(self)
    }

    pub fn text(mut self, text: &str) -> Result<Self, ConfigInvalid> {
        self.entries.extend(parse_kv(text)?);
        Ok(self)
    }

    pub fn set(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn build(self) -> Result<ExperimentConfig, ConfigInvalid> {
        let n_evs = self
            .entries
            .iter()
            .rev()
            .find(|(k, _)| k == "n_evs")
            .ok_or_else(|| ConfigInvalid::new("n_evs", "missing"))?;
        let mut cfg = ExperimentConfig::with_n_evs(parse("n_evs", &n_evs.1)?);
        for (k, v) in &self.entries {
            let k = k.as_str();
            match k {
                "n_evs" => cfg.n_evs = parse(k, v)?,
                "cap" => cfg.cap = parse(k, v)?,
                "epochs" => cfg.epochs = parse(k, v)?,
                "seed" => cfg.seed = parse(k, v)?,
                "communities" => cfg.communities = parse(k, v)?,
                "dccm" => cfg.dccm_enabled = parse(k, v)?,
                "crm" => cfg.crm_enabled = parse(k, v)?,
                "ablate" => {
                    for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        cfg.ablations.insert(name.parse()?);
                    }
                }
                "alpha" => cfg.alpha = parse(k, v)?,
                "tau" => cfg.tau = parse(k, v)?,
                "k_transitory" => cfg.k_transitory = parse(k, v)?,
                "per_client_flops" => cfg.per_client_flops = parse(k, v)?,
                "out" => cfg.out = Some(PathBuf::from(v)),
                "days" => cfg.days = parse(k, v)?,
                "transitory_fraction" => cfg.transitory_fraction = parse(k, v)?,
                "mean_gap_hours" => cfg.mean_gap_hours = parse(k, v)?,
                "local_epochs" => cfg.local_epochs = parse(k, v)?,
                "learning_rate" => cfg.learning_rate = parse(k, v)?,
                "batch_size" => cfg.batch_size = parse(k, v)?,
                "lambda" => cfg.lambda = parse(k, v)?,
                "poisoned_clients" => cfg.poisoned_clients = parse(k, v)?,
                "poison_factor" => cfg.poison_factor = parse(k, v)?,
                "client_flops_per_ms" => cfg.client_flops_per_ms = parse(k, v)?,
                "link_bytes_per_ms" => cfg.link_bytes_per_ms = parse(k, v)?,
                _ => return Err(ConfigInvalid::new(k, "unknown key")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
