//! Fans a config out over (method, seed) runs and writes the artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::SimulationConfig;
use crate::datagen::build_scenario;
use crate::engine::{run_simulation, Method};
use crate::error::Result;
use crate::metrics::{summarize, write_csv, RunReport, Summary};

pub fn csv_path(dir: &Path, method: Method, seed: u64) -> PathBuf {
    dir.join(format!("{}_{seed}.csv", method.name()))
}

pub fn debug_path(dir: &Path, method: Method, seed: u64) -> PathBuf {
    dir.join(format!("{}_{seed}_debug.json", method.name()))
}

pub const SUMMARY_FILE: &str = "summary.json";

/// Runs every requested (method, seed) pair; one scenario per seed is
/// shared by all methods.
pub fn run_all(config: &SimulationConfig) -> Result<Vec<RunReport>> {
    config.validate()?;
    let scenario_config = config.scenario();
    let training = config.training();
    let scenarios = config
        .seeds
        .par_iter()
        .map(|&seed| build_scenario(&scenario_config, seed))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, Method)> = config
        .methods
        .iter()
        .flat_map(|&m| (0..config.seeds.len()).map(move |i| (i, m)))
        .collect();
    jobs.par_iter()
        .map(|&(i, method)| {
            log::info!("running {method} seed {}", config.seeds[i]);
            run_simulation(&scenarios[i], &training, method, config.seeds[i])
        })
        .collect()
}

/// Runs everything and writes `<method>_<seed>.csv` per run plus
/// `summary.json` into the output directory.
pub fn run(config: &SimulationConfig) -> Result<Summary> {
    let reports = run_all(config)?;
    write_outputs(config, &reports)
}

/// Writes the artifacts of already finished runs.
pub fn write_outputs(config: &SimulationConfig, reports: &[RunReport]) -> Result<Summary> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    for report in reports {
        let mut out = BufWriter::new(File::create(csv_path(dir, report.method, report.seed))?);
        write_csv(report, &mut out)?;
        out.flush()?;
        if config.debug_dump {
            let out = BufWriter::new(File::create(debug_path(dir, report.method, report.seed))?);
            serde_json::to_writer_pretty(out, &report.debug)?;
        }
    }
    let summary = summarize(reports)?;
    let mut out = BufWriter::new(File::create(dir.join(SUMMARY_FILE))?);
    serde_json::to_writer_pretty(&mut out, &summary)?;
    writeln!(out)?;
    out.flush()?;
    Ok(summary)
}
