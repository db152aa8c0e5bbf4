//! Pipeline configuration: one TOML file of flat dotted keys such as
//! `simpc.delta = 2.3`. Every key is optional; omitted keys take their
//! defaults, unknown keys are rejected.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use patternforge::backtest::BacktestConfig;
use patternforge::chart::ChartConfig;
use patternforge::classifier::ClassifierConfig;
use patternforge::encoder::EncoderConfig;
use patternforge::series::{DateRange, SmoothingConfig, DEFAULT_RSI_PERIOD};
use patternforge::shapelets::ShapeletConfig;
use patternforge::simpc::SimpcConfig;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// OHLCV file of the traded asset; relative paths resolve against the
    /// config file's directory.
    pub series: String,
    /// Directory of OHLCV files for chart-pattern prototypes; empty disables
    /// seeding.
    pub seed_dir: String,
    pub channels: Vec<String>,
    pub price_channel: String,
    pub rsi_period: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            series: "data/series.csv".into(),
            seed_dir: String::new(),
            channels: vec!["close".into(), "volume".into(), "rsi".into()],
            price_channel: "close".into(),
            rsi_period: DEFAULT_RSI_PERIOD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    #[serde(deserialize_with = "de_date")]
    pub train_start: NaiveDate,
    #[serde(deserialize_with = "de_date")]
    pub train_end: NaiveDate,
    #[serde(deserialize_with = "de_date")]
    pub valid_start: NaiveDate,
    #[serde(deserialize_with = "de_date")]
    pub valid_end: NaiveDate,
    #[serde(deserialize_with = "de_date")]
    pub test_start: NaiveDate,
    #[serde(deserialize_with = "de_date")]
    pub test_end: NaiveDate,
}

/// Accepts a bare TOML date (`2014-01-01`) or a quoted one.
fn de_date<'de, D: serde::Deserializer<'de>>(d: D) -> Result<NaiveDate, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Toml(toml::value::Datetime),
        Text(String),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Toml(dt) => match (dt.date, dt.time) {
            (Some(date), None) => date.to_string(),
            _ => return Err(serde::de::Error::custom(format!("expected a plain date, got {dt}"))),
        },
        Raw::Text(s) => s,
    };
    NaiveDate::parse_from_str(&text, "%Y-%m-%d")
        .map_err(|e| serde::de::Error::custom(format!("bad date {text:?}: {e}")))
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid literal date")
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_start: ymd(2014, 1, 1),
            train_end: ymd(2021, 12, 31),
            valid_start: ymd(2022, 1, 1),
            valid_end: ymd(2023, 1, 31),
            test_start: ymd(2024, 2, 1),
            test_end: ymd(2025, 5, 13),
        }
    }
}

impl SplitConfig {
    pub fn ranges(&self) -> CliResult<[DateRange; 3]> {
        Ok([
            DateRange::new(self.train_start, self.train_end)?,
            DateRange::new(self.valid_start, self.valid_end)?,
            DateRange::new(self.test_start, self.test_end)?,
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingSection {
    pub bandwidth: f64,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        Self { bandwidth: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Scale `simpc.delta` by `sqrt(D / 3)` for the configured channel count.
    pub scale_delta: bool,
    pub out_dir: String,
    /// Worker cap; 0 uses every core.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            scale_delta: true,
            out_dir: "out".into(),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub smoothing: SmoothingSection,
    pub chart: ChartConfig,
    pub simpc: SimpcConfig,
    pub encoder: EncoderConfig,
    pub shapelets: ShapeletConfig,
    pub classifier: ClassifierConfig,
    pub backtest: BacktestConfig,
    pub run: RunConfig,
    /// Directory that relative data paths resolve against. Not a key.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let field = |key: &str, msg: String| Err(CliError::Config(format!("{key}: {msg}")));
        if self.data.channels.is_empty() {
            return field("data.channels", "at least one channel required".into());
        }
        if !self.data.channels.contains(&self.data.price_channel) {
            return field(
                "data.price_channel",
                format!("{:?} is not among data.channels", self.data.price_channel),
            );
        }
        self.split.ranges()?;
        if let Err(e) = SmoothingConfig::new(self.smoothing.bandwidth) {
            return field("smoothing.bandwidth", e.to_string());
        }
        self.simpc.validate()?;
        self.encoder.validate()?;
        self.backtest.validate()?;
        if self.shapelets.n_shapelets == 0 {
            return field("shapelets.n_shapelets", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.classifier.ks_holdout) {
            return field("classifier.ks_holdout", "must lie in [0, 1)".into());
        }
        if !(self.classifier.c > 0.0) {
            return field("classifier.c", "must be > 0".into());
        }
        Ok(())
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn channel_refs(&self) -> Vec<&str> {
        self.data.channels.iter().map(String::as_str).collect()
    }

    /// Copy without run-local settings (output directory, worker cap) that
    /// never influence results; this is what hashes and echoes see.
    pub fn canonical(&self) -> PipelineConfig {
        let mut c = self.clone();
        c.run.out_dir = String::new();
        c.run.threads = 0;
        c.base_dir = PathBuf::new();
        c
    }

    /// Flat `section.key = value` listing, one key per line.
    pub fn to_flat_toml(&self) -> CliResult<String> {
        let value = Value::try_from(self).map_err(|e| CliError::Config(e.to_string()))?;
        let mut out = String::new();
        if let Value::Table(sections) = value {
            for (name, section) in &sections {
                if !out.is_empty() {
                    out.push('\n');
                }
                emit(&mut out, name, section);
            }
        }
        Ok(out)
    }
}

fn emit(out: &mut String, prefix: &str, v: &Value) {
    match v {
        Value::Table(t) => {
            for (k, child) in t {
                emit(out, &format!("{prefix}.{k}"), child);
            }
        }
        leaf => {
            out.push_str(&format!("{prefix} = {leaf}\n"));
        }
    }
}
