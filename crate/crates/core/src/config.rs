//! Run configuration: presets, file parsing and validation.
//!
//! A config file is a flat TOML or JSON table (chosen by extension). Keys it
//! does not mention keep the selected preset's values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{DataSource, ScenarioConfig, DEFAULT_CONCEPT_COUNTS, DEFAULT_ROTATIONS};
use crate::engine::{Method, TrainingConfig};
use crate::error::{Error, Result};
use crate::ncd::KMeansOptions;

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "FEDDAA_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    #[default]
    Desk,
    PaperScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub clients: usize,
    pub time_steps: usize,
    pub rounds: usize,
    pub sampling_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub global_lr: f64,
    pub max_clusters: usize,
    pub dirichlet_beta: f64,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub per_class_count: usize,
    pub cluster_spread: f64,
    pub class_separation: f64,
    pub rotated_fraction: f64,
    pub test_samples_per_task: usize,
    pub hidden_dim: usize,
    pub probe_hidden_dim: usize,
    pub probe_warmup_rounds: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    /// Concepts alive per step; truncated to `time_steps`.
    pub concept_counts: Vec<usize>,
    /// Rotation in degrees per step; truncated to `time_steps`.
    pub rotations: Vec<i32>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// MNIST-style image file; replaces the synthetic generator together
    /// with `idx_labels`.
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    /// Write a per-run JSON dump of prototypes, silhouette tables, drift
    /// reports, mixture weights and label constants.
    pub debug_dump: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SimulationConfig {
    pub fn desk() -> Self {
        let training = TrainingConfig::default();
        let scenario = ScenarioConfig::default();
        Self {
            clients: scenario.num_clients,
            time_steps: DEFAULT_CONCEPT_COUNTS.len(),
            rounds: training.rounds,
            sampling_rate: training.sampling_rate,
            local_epochs: training.local_epochs,
            batch_size: training.batch_size,
            lr: training.lr,
            momentum: training.momentum,
            global_lr: training.global_lr,
            max_clusters: training.max_clusters,
            dirichlet_beta: scenario.dirichlet_beta,
            num_classes: scenario.num_classes,
            feature_dim: scenario.feature_dim,
            per_class_count: scenario.per_class_count,
            cluster_spread: scenario.cluster_spread,
            class_separation: scenario.class_separation,
            rotated_fraction: scenario.rotated_fraction,
            test_samples_per_task: scenario.test_samples_per_task,
            hidden_dim: training.hidden_dim,
            probe_hidden_dim: training.probe_hidden_dim,
            probe_warmup_rounds: training.probe_warmup_rounds,
            kmeans_restarts: training.kmeans.restarts,
            kmeans_max_iters: training.kmeans.max_iters,
            kmeans_tol: training.kmeans.tol,
            concept_counts: DEFAULT_CONCEPT_COUNTS.to_vec(),
            rotations: DEFAULT_ROTATIONS.to_vec(),
            methods: Method::ALL.to_vec(),
            seeds: (0..5).collect(),
            output_dir: PathBuf::from("results"),
            idx_images: None,
            idx_labels: None,
            debug_dump: false,
        }
    }

    /// Client count, round count, batch size and cluster cap of the original
    /// image-benchmark setup.
    pub fn paper_scale() -> Self {
        Self {
            clients: 60,
            rounds: 40,
            batch_size: 128,
            max_clusters: 8,
            per_class_count: 180,
            ..Self::desk()
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self::desk(),
            Preset::PaperScale => Self::paper_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients < 2 {
            return Err(Error::config("clients", "must be >= 2"));
        }
        if self.time_steps < 1 {
            return Err(Error::config("time_steps", "must be >= 1"));
        }
        if self.concept_counts.len() < self.time_steps {
            return Err(Error::config(
                "concept_counts",
                format!("needs at least time_steps = {} entries", self.time_steps),
            ));
        }
        if self.rotations.len() < self.time_steps {
            return Err(Error::config(
                "rotations",
                format!("needs at least time_steps = {} entries", self.time_steps),
            ));
        }
        if self.max_clusters < 2 || self.max_clusters > self.clients {
            return Err(Error::config("max_clusters", "must satisfy 2 <= max_clusters <= clients"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods", "at least one method is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.idx_images.is_some() != self.idx_labels.is_some() {
            return Err(Error::config("idx_labels", "idx_images and idx_labels go together"));
        }
        self.scenario().validate()?;
        self.training().validate(self.clients)
    }

    pub fn scenario(&self) -> ScenarioConfig {
        let t = self.time_steps;
        ScenarioConfig {
            num_clients: self.clients,
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            per_class_count: self.per_class_count,
            cluster_spread: self.cluster_spread,
            class_separation: self.class_separation,
            rotated_fraction: self.rotated_fraction,
            dirichlet_beta: self.dirichlet_beta,
            concept_counts: self.concept_counts.iter().copied().take(t).collect(),
            rotations: self.rotations.iter().copied().take(t).collect(),
            test_samples_per_task: self.test_samples_per_task,
            source: match (&self.idx_images, &self.idx_labels) {
                (Some(images), Some(labels)) => DataSource::Idx {
                    images: images.clone(),
                    labels: labels.clone(),
                },
                _ => DataSource::Synthetic,
            },
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            rounds: self.rounds,
            sampling_rate: self.sampling_rate,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            global_lr: self.global_lr,
            max_clusters: self.max_clusters,
            hidden_dim: self.hidden_dim,
            probe_hidden_dim: self.probe_hidden_dim,
            probe_warmup_rounds: self.probe_warmup_rounds,
            kmeans: KMeansOptions {
                max_iters: self.kmeans_max_iters,
                tol: self.kmeans_tol,
                restarts: self.kmeans_restarts,
            },
            record_debug: self.debug_dump,
        }
    }

    /// Output directory after the environment override; an explicit flag
    /// should be applied by the caller afterwards.
    pub fn apply_env_output_dir(&mut self, env_value: Option<String>) {
        if let Some(dir) = env_value.filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    /// `.json` selects JSON; anything else is read as TOML.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

fn merge(base: &mut serde_json::Value, overrides: serde_json::Value) -> Result<()> {
    let serde_json::Value::Object(fields) = overrides else {
        return Err(Error::ConfigParse("top level must be a table".into()));
    };
    let base = base
        .as_object_mut()
        .expect("presets serialize to objects");
    for (k, v) in fields {
        base.insert(k, v);
    }
    Ok(())
}

pub fn parse_config_str(text: &str, format: ConfigFormat, preset: Preset) -> Result<SimulationConfig> {
    let overrides: serde_json::Value = if text.trim().is_empty() {
        serde_json::Value::Object(Default::default())
    } else {
        match format {
            ConfigFormat::Toml => toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?,
            ConfigFormat::Json => serde_json::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?,
        }
    };
    let mut value = serde_json::to_value(SimulationConfig::preset(preset))?;
    merge(&mut value, overrides)?;
    let config: SimulationConfig =
        serde_json::from_value(value).map_err(|e| Error::ConfigParse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path, preset: Preset) -> Result<SimulationConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, ConfigFormat::from_path(path), preset)
}

pub fn to_toml(config: &SimulationConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::ConfigParse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(err: Error) -> String {
        match err {
            Error::Config { field, .. } => field,
            other => panic!("expected a field error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_desk_defaults() {
        let c = parse_config_str("", ConfigFormat::Toml, Preset::Desk).unwrap();
        assert_eq!(c, SimulationConfig::desk());
        assert_eq!((c.clients, c.rounds, c.batch_size), (20, 15, 32));
        let c = parse_config_str("{}", ConfigFormat::Json, Preset::Desk).unwrap();
        assert_eq!(c, SimulationConfig::desk());
    }

    #[test]
    fn sampling_rate_out_of_range_is_named() {
        let err = parse_config_str("sampling_rate = 1.5", ConfigFormat::Toml, Preset::Desk).unwrap_err();
        assert_eq!(field_of(err), "sampling_rate");
        let err = parse_config_str("max_clusters = 1", ConfigFormat::Toml, Preset::Desk).unwrap_err();
        assert_eq!(field_of(err), "max_clusters");
    }

    #[test]
    fn paper_values_round_trip() {
        let c = SimulationConfig::paper_scale();
        assert_eq!((c.clients, c.rounds, c.sampling_rate), (60, 40, 0.5));
        assert_eq!((c.local_epochs, c.batch_size, c.momentum), (1, 128, 0.9));
        let text = to_toml(&c).unwrap();
        assert_eq!(parse_config_str(&text, ConfigFormat::Toml, Preset::Desk).unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(parse_config_str(&json, ConfigFormat::Json, Preset::Desk).unwrap(), c);
    }

    #[test]
    fn file_overrides_preset() {
        let c = parse_config_str(
            "rounds = 3\nmethods = [\"oracle\"]\nseeds = [7]",
            ConfigFormat::Toml,
            Preset::PaperScale,
        )
        .unwrap();
        assert_eq!(c.rounds, 3);
        assert_eq!(c.clients, 60);
        assert_eq!(c.methods, vec![Method::Oracle]);
        assert_eq!(c.seeds, vec![7]);
    }

    #[test]
    fn unknown_keys_and_methods_are_rejected() {
        assert!(matches!(
            parse_config_str("colour = 1", ConfigFormat::Toml, Preset::Desk),
            Err(Error::ConfigParse(_))
        ));
        assert!(parse_config_str("methods = [\"fedprox\"]", ConfigFormat::Toml, Preset::Desk).is_err());
        assert!(parse_config_str("rounds = ", ConfigFormat::Toml, Preset::Desk).is_err());
    }

    #[test]
    fn shorter_horizon_truncates_schedule() {
        let c = parse_config_str("time_steps = 3", ConfigFormat::Toml, Preset::Desk).unwrap();
        assert_eq!(c.scenario().concept_counts, vec![2, 3, 4]);
        let err = parse_config_str("time_steps = 7", ConfigFormat::Toml, Preset::Desk).unwrap_err();
        assert_eq!(field_of(err), "concept_counts");
    }

    #[test]
    fn env_overrides_file_output_dir() {
        let mut c = SimulationConfig::desk();
        c.apply_env_output_dir(None);
        assert_eq!(c.output_dir, PathBuf::from("results"));
        c.apply_env_output_dir(Some("/tmp/x".into()));
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn format_follows_extension() {
        assert_eq!(ConfigFormat::from_path(Path::new("a.JSON")), ConfigFormat::Json);
        assert_eq!(ConfigFormat::from_path(Path::new("a.toml")), ConfigFormat::Toml);
    }
}
