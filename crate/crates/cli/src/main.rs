//! `mtt`: simulate image sequences, track targets with known or learned
//! parameters, and evaluate or export the resulting chains.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mtt_core::birth::H1Rule;
use mtt_core::filtering::GammaRule;
use mtt_core::params::ObservationModel;
use mtt_core::Result;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "mtt", version, about = "Bayesian multi-target tracking from image sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw synthetic images and ground-truth tracks.
    Simulate(Flags),
    /// Run the tracker with θ held fixed.
    Track(Flags),
    /// Run the tracker while learning θ.
    Learn(Flags),
    /// OSPA of a run against ground truth.
    Evaluate(Flags),
    /// Summary tables of a run.
    Export(Flags),
}

/// Flags shared by every subcommand; each overrides the config file key of
/// the same name.
#[derive(Args, Debug, Default)]
struct Flags {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    /// Image stack: an `.mts` file or a directory of frame CSVs.
    #[arg(long)]
    input: Option<PathBuf>,
    /// θ as JSON.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Ground-truth tracks CSV.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Directory written by `track` or `learn`.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long)]
    n3: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    /// Birth/death, multi-step, one-step and swap probabilities.
    #[arg(long, num_args = 4, value_delimiter = ',')]
    move_probs: Option<Vec<f64>>,
    /// `min`, `max` or `fixed:<value>`.
    #[arg(long)]
    gamma_rule: Option<GammaRule>,
    #[arg(long, value_parser = parse_h1)]
    h1_rule: Option<H1Rule>,
    #[arg(long, value_parser = parse_observation)]
    observation_model: Option<ObservationModel>,
    #[arg(long)]
    ospa_p: Option<f64>,
    #[arg(long)]
    ospa_c: Option<f64>,
    #[arg(long)]
    bins: Option<usize>,
}

fn parse_h1(s: &str) -> std::result::Result<H1Rule, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}

fn parse_observation(s: &str) -> std::result::Result<ObservationModel, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

impl Flags {
    fn resolve(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        macro_rules! set_opt {
            ($($f:ident),*) => { $(if self.$f.is_some() { c.$f = self.$f; })* };
        }
        set!(chains, iterations, burn_in, warmup, n1, n2, particles, gamma_rule, h1_rule, observation_model, ospa_p, ospa_c, bins);
        set_opt!(seed, input, params, truth, run, output, n3);
        if let Some(p) = self.move_probs {
            c.move_probs = [p[0], p[1], p[2], p[3]];
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(f) => commands::simulate(&f.resolve()?),
        Command::Track(f) => commands::sample(&f.resolve()?, false),
        Command::Learn(f) => commands::sample(&f.resolve()?, true),
        Command::Evaluate(f) => commands::evaluate(&f.resolve()?),
        Command::Export(f) => commands::export(&f.resolve()?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
