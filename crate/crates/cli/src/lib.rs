//! Experiment runner: data preparation, training scenarios, privacy
//! attacks, benchmarks and summary reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{Dataset, ExperimentConfig, MethodName};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "scol", version, about = "Two-party privacy-preserving collaborative learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the partitions and write their label histograms.
    GenData(Common),
    /// Train the selected methods and write metrics, timing and traffic.
    Train(Common),
    /// Run membership-inference attacks on the synthetic benchmark.
    Attack(AttackArgs),
    /// Time the collaborative phase in plaintext and under MPC.
    Bench(Common),
    /// Aggregate the runs below a directory into mean ± std tables.
    Report {
        dir: PathBuf,
    },
}

/// Flags shared by the run commands; each overrides the config file.
#[derive(Debug, Default, Args)]
pub struct Common {
    /// TOML experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<Dataset>,
    /// MNIST directory; overrides the environment.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Shrink every partition by this factor.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Comma-separated methods: nc, ctfe, sfe, ltfe.
    #[arg(long = "method", value_delimiter = ',')]
    pub methods: Vec<MethodName>,
    /// Run the collaborative phase under MPC.
    #[arg(long)]
    pub secure: bool,
    #[arg(long)]
    pub share_fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: Common,
    /// Rows per party of the synthetic benchmark.
    #[arg(long)]
    pub party_size: Option<usize>,
    #[arg(long)]
    pub attack_epochs: Option<usize>,
}

impl Common {
    /// The config file, or the defaults, with the flags applied.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
        if let Some(d) = self.dataset {
            c.dataset = d;
        }
        if let Some(d) = &self.data_dir {
            c.data_dir = Some(d.clone());
        }
        if !self.seeds.is_empty() {
            c.seeds = self.seeds.clone();
        }
        if self.scale.is_some() {
            c.scale = self.scale;
        }
        if !self.methods.is_empty() {
            c.scenario.methods = self.methods.clone();
        }
        if self.secure {
            c.scenario.secure = true;
        }
        if let Some(f) = self.share_fraction {
            c.scenario.share_fraction = f;
        }
        if let Some(e) = self.epochs {
            c.train.epochs = e;
        }
        Ok(c)
    }
}

impl AttackArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = self.common.resolve()?;
        c.dataset = Dataset::Synthetic;
        if !self.common.methods.is_empty() {
            c.attack.methods = self.common.methods.clone();
        }
        if let Some(n) = self.party_size {
            c.attack.party_size = n;
        }
        if let Some(e) = self.attack_epochs {
            c.attack.epochs = e;
        }
        Ok(c)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => commands::gen_data(&a.resolve()?),
        Command::Train(a) => commands::train(&a.resolve()?),
        Command::Attack(a) => commands::attack(&a.resolve()?),
        Command::Bench(a) => commands::bench(&a.resolve()?),
        Command::Report { dir } => commands::report(dir).map(|_| ()),
    }
}
