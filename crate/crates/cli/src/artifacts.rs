//! Versioned JSON artifacts. Each stage writes one envelope carrying the
//! cumulative config hash of everything that shaped it; readers recompute the
//! expected hash from the current config and refuse stale inputs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Smooth,
    Prototypes,
    Simpc,
    TrainEncoder,
    Shapelets,
    TrainClassifier,
    KsFilter,
    Backtest,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Smooth,
        Stage::Prototypes,
        Stage::Simpc,
        Stage::TrainEncoder,
        Stage::Shapelets,
        Stage::TrainClassifier,
        Stage::KsFilter,
        Stage::Backtest,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Smooth => "smooth",
            Stage::Prototypes => "prototypes",
            Stage::Simpc => "simpc",
            Stage::TrainEncoder => "train-encoder",
            Stage::Shapelets => "shapelets",
            Stage::TrainClassifier => "train-classifier",
            Stage::KsFilter => "ks-filter",
            Stage::Backtest => "backtest",
            Stage::Report => "report",
        }
    }

    pub fn parse(name: &str) -> CliResult<Stage> {
        Stage::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| {
                let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
                CliError::Config(format!("unknown stage {name:?}; expected one of {}", names.join(", ")))
            })
    }

    pub fn file_name(self) -> String {
        format!("{}.json", self.name())
    }

    /// Artifacts this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest | Stage::Prototypes => &[],
            Stage::Smooth => &[Stage::Ingest],
            Stage::Simpc => &[Stage::Smooth, Stage::Prototypes],
            Stage::TrainEncoder => &[Stage::Simpc],
            Stage::Shapelets => &[Stage::TrainEncoder],
            Stage::TrainClassifier => &[Stage::Shapelets],
            Stage::KsFilter => &[Stage::TrainClassifier],
            Stage::Backtest => &[Stage::KsFilter],
            Stage::Report => &[Stage::Backtest],
        }
    }

    fn uses_seed(self) -> bool {
        matches!(
            self,
            Stage::Simpc | Stage::TrainEncoder | Stage::Shapelets | Stage::Backtest
        )
    }

    /// Config keys read by this stage alone.
    fn own_config(self, cfg: &PipelineConfig) -> Value {
        let c = cfg.canonical();
        match self {
            Stage::Ingest => json!({ "data": {
                "series": c.data.series,
                "channels": c.data.channels,
                "rsi_period": c.data.rsi_period,
            }, "split": c.split }),
            Stage::Smooth => json!({ "smoothing": c.smoothing }),
            Stage::Prototypes => json!({
                "data": c.data,
                "chart": c.chart,
                "simpc": {
                    "ref_len": c.simpc.ref_len,
                    "dba_max_iter": c.simpc.dba_max_iter,
                    "dba_tol": c.simpc.dba_tol,
                },
            }),
            Stage::Simpc => json!({ "simpc": c.simpc, "scale_delta": c.run.scale_delta }),
            Stage::TrainEncoder => json!({ "encoder": c.encoder, "ks_holdout": c.classifier.ks_holdout }),
            Stage::Shapelets => json!({ "shapelets": c.shapelets }),
            Stage::TrainClassifier => json!({ "classifier": c.classifier }),
            Stage::KsFilter => json!({}),
            Stage::Backtest => json!({ "backtest": c.backtest, "smoothing": c.smoothing }),
            Stage::Report => json!({}),
        }
    }

    /// Hash over this stage's own keys, the seed where used, and the hashes
    /// of every upstream stage.
    pub fn config_hash(self, cfg: &PipelineConfig) -> String {
        let parents: Vec<String> = self.upstream().iter().map(|s| s.config_hash(cfg)).collect();
        let material = json!({
            "stage": self.name(),
            "schema_version": SCHEMA_VERSION,
            "config": self.own_config(cfg),
            "seed": if self.uses_seed() { Some(cfg.run.seed) } else { None },
            "upstream": parents,
        });
        let bytes = serde_json::to_vec(&material).expect("json material serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact<T> {
    pub schema_version: u32,
    pub stage: Stage,
    pub config_hash: String,
    pub seed: u64,
    /// Upstream stage name to the hash this artifact was built from.
    pub upstream: BTreeMap<String, String>,
    pub payload: T,
}

/// Reads and writes the artifacts of one output directory.
#[derive(Debug, Clone)]
pub struct Store {
    pub dir: PathBuf,
}

impl Store {
    pub fn new(dir: impl Into<PathBuf>) -> CliResult<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn path(&self, stage: Stage) -> PathBuf {
        self.dir.join(stage.file_name())
    }

    pub fn write<T: Serialize>(&self, stage: Stage, cfg: &PipelineConfig, payload: T) -> CliResult<PathBuf> {
        let artifact = Artifact {
            schema_version: SCHEMA_VERSION,
            stage,
            config_hash: stage.config_hash(cfg),
            seed: cfg.run.seed,
            upstream: stage
                .upstream()
                .iter()
                .map(|s| (s.name().to_string(), s.config_hash(cfg)))
                .collect(),
            payload,
        };
        let path = self.path(stage);
        write_json(&path, &artifact)?;
        Ok(path)
    }

    /// Loads an upstream artifact, failing unless it matches `cfg`.
    pub fn read<T: DeserializeOwned>(&self, stage: Stage, cfg: &PipelineConfig) -> CliResult<T> {
        let path = self.path(stage);
        if !path.exists() {
            return Err(CliError::Stale(format!(
                "{} is missing; run stage {stage} first",
                path.display()
            )));
        }
        let artifact: Artifact<T> = read_json(&path)?;
        if artifact.schema_version != SCHEMA_VERSION {
            return Err(CliError::Stale(format!(
                "{} has schema version {}, expected {SCHEMA_VERSION}",
                path.display(),
                artifact.schema_version
            )));
        }
        let expected = stage.config_hash(cfg);
        if artifact.config_hash != expected {
            return Err(CliError::Stale(format!(
                "{} was produced by config hash {}, current config expects {expected}; re-run stage {stage}",
                path.display(),
                artifact.config_hash
            )));
        }
        Ok(artifact.payload)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}
