use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hfltn::config::{ConfigBuilder, ConfigInvalid, ExperimentConfig};
use hfltn::experiment::{self, ExperimentError};

#[derive(Parser)]
#[command(name = "hfltn", version, about = "Hierarchical federated learning simulator for EV charging prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(Common),
    /// Run the baseline and every single-feature ablation.
    Ablate(Common),
    /// Three seeds per fleet size, reported per subgroup and pooled.
    Replicate {
        #[command(flatten)]
        common: Common,
        /// Fleet sizes to replicate.
        #[arg(long, value_delimiter = ',', default_values_t = [150usize, 300, 500, 750, 1000])]
        sizes: Vec<usize>,
    },
    /// Write the synthetic trip dataset as CSV.
    GenData(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_evs: Option<usize>,
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Disable the participation cap.
    #[arg(long)]
    no_dccm: bool,
    /// Disable client rotation.
    #[arg(long)]
    no_crm: bool,
    /// Remove a feature: capping_rotating, secret_sharing, secure_aggregation, normalisation.
    #[arg(long)]
    ablate: Vec<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, ConfigInvalid> {
        let mut b = ConfigBuilder::new();
        if let Some(path) = &self.config {
            b = b.file(path)?;
        }
        let opt = |b: ConfigBuilder, k: &str, v: Option<String>| match v {
            Some(v) => b.set(k, v),
            None => b,
        };
        b = opt(b, "n_evs", self.n_evs.map(|v| v.to_string()));
        b = opt(b, "cap", self.cap.map(|v| v.to_string()));
        b = opt(b, "epochs", self.epochs.map(|v| v.to_string()));
        b = opt(b, "seed", self.seed.map(|v| v.to_string()));
        b = opt(b, "out", self.out.as_ref().map(|p| p.display().to_string()));
        b = opt(b, "alpha", self.alpha.map(|v| v.to_string()));
        b = opt(b, "tau", self.tau.map(|v| v.to_string()));
        if self.no_dccm {
            b = b.set("dccm", false);
        }
        if self.no_crm {
            b = b.set("crm", false);
        }
        for a in &self.ablate {
            b = b.set("ablate", a);
        }
        b.build()
    }
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run(c) => {
            let cfg = c.resolve()?;
            let out = experiment::run_experiment(&cfg)?;
            print!("{}", hfltn::metrics::metrics_csv(&out.rows));
            eprint!("{}", out.privacy.render());
        }
        Command::Ablate(c) => {
            let cfg = c.resolve()?;
            let results = experiment::run_ablation_matrix(&cfg)?;
            print!("{}", experiment::comparison_csv(&results));
        }
        Command::Replicate { mut common, sizes } => {
            // each size overrides the fleet size anyway
            common.n_evs = common.n_evs.or(sizes.iter().copied().max());
            let cfg = common.resolve()?;
            if sizes.contains(&0) {
                return Err(ConfigInvalid::new("sizes", "fleet sizes must be positive").into());
            }
            print!("{}", experiment::replicate(&cfg, &sizes)?);
        }
        Command::GenData(c) => {
            let cfg = c.resolve()?;
            let trips = hfltn::dataset::generate_trips(&cfg)?;
            let csv = hfltn::dataset::trips_csv(&trips);
            match &cfg.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(dir.join("trips.csv"), csv)?;
                }
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(ExperimentError::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
