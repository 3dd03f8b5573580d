use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use feddaa::config::{parse_config, Preset, SimulationConfig, OUTPUT_DIR_ENV};
use feddaa::runner;
use feddaa::Method;

/// Run drift-aware clustered federated learning simulations.
#[derive(Debug, Parser)]
#[command(name = "feddaa", version)]
struct Cli {
    /// TOML or JSON config file; absent keys take the preset's values.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Method to run (repeatable): feddaa, clustered_retrain, fedavg_retrain, oracle.
    #[arg(long = "method")]
    methods: Vec<Method>,

    /// Seed to run (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,

    /// Output directory; overrides the environment and the config file.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Desk-scale defaults (the default).
    #[arg(long, conflicts_with = "paper_scale")]
    desk: bool,

    /// Defaults matching the original benchmark's client count and rounds.
    #[arg(long)]
    paper_scale: bool,
}

impl Cli {
    fn preset(&self) -> Preset {
        if self.paper_scale {
            Preset::PaperScale
        } else {
            Preset::Desk
        }
    }

    fn resolve(&self, env_out: Option<String>) -> anyhow::Result<SimulationConfig> {
        let mut config = match &self.config {
            Some(path) => parse_config(path, self.preset())
                .with_context(|| format!("loading config {}", path.display()))?,
            None => SimulationConfig::preset(self.preset()),
        };
        config.apply_env_output_dir(env_out);
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if !self.methods.is_empty() {
            config.methods = self.methods.clone();
        }
        if !self.seeds.is_empty() {
            config.seeds = self.seeds.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let config = cli.resolve(std::env::var(OUTPUT_DIR_ENV).ok())?;
    let summary = runner::run(&config).context("simulation failed")?;
    println!("results written to {}", config.output_dir.display());
    for (method, stats) in &summary.methods {
        println!(
            "{method:<18} average accuracy {:.4} +/- {:.4} over {} seeds",
            stats.mean, stats.std, stats.runs
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("feddaa").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file_and_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "output_dir = \"from_file\"\nrounds = 2\nseeds = [9]").unwrap();
        let p = path.to_str().unwrap();

        let c = cli(&["--config", p]).resolve(None).unwrap();
        assert_eq!(c.output_dir, PathBuf::from("from_file"));
        assert_eq!(c.seeds, vec![9]);

        let c = cli(&["--config", p]).resolve(Some("from_env".into())).unwrap();
        assert_eq!(c.output_dir, PathBuf::from("from_env"));

        let c = cli(&["--config", p, "--out", "from_flag", "--seed", "1", "--seed", "2"])
            .resolve(Some("from_env".into()))
            .unwrap();
        assert_eq!(c.output_dir, PathBuf::from("from_flag"));
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.rounds, 2);
    }

    #[test]
    fn methods_and_presets_parse() {
        let c = cli(&["--method", "oracle", "--method", "feddaa", "--paper-scale"])
            .resolve(None)
            .unwrap();
        assert_eq!(c.methods, vec![Method::Oracle, Method::Feddaa]);
        assert_eq!(c.clients, 60);
        assert!(Cli::try_parse_from(["feddaa", "--method", "nope"]).is_err());
        assert!(Cli::try_parse_from(["feddaa", "--desk", "--paper-scale"]).is_err());
    }

    #[test]
    fn bad_config_reports_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "{\"sampling_rate\": 1.5}").unwrap();
        let err = cli(&["--config", path.to_str().unwrap()]).resolve(None).unwrap_err();
        assert!(format!("{err:#}").contains("sampling_rate"));
    }
}
