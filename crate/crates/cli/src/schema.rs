//! Artifact validation: envelope fields, hash format and a typed decode of
//! the payload (payload types reject unknown and missing fields).

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::artifacts::{Artifact, Stage, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};
use crate::pipeline::{
    BacktestPayload, ClassifierPayload, EncoderPayload, IngestPayload, KsPayload, PrototypesPayload, ReportPayload,
    ShapeletsPayload, SimpcPayload, SmoothPayload,
};

fn typed<T: DeserializeOwned>(v: Value) -> Result<(), String> {
    serde_json::from_value::<Artifact<T>>(v).map(|_| ()).map_err(|e| e.to_string())
}

/// Checks one artifact document against the schema of `stage`.
pub fn validate_value(stage: Stage, v: &Value) -> CliResult<()> {
    let fail = |m: String| Err(CliError::Schema(format!("{}: {m}", stage.file_name())));
    let Some(obj) = v.as_object() else {
        return fail("top level is not an object".into());
    };
    if obj.get("schema_version").and_then(Value::as_u64) != Some(u64::from(SCHEMA_VERSION)) {
        return fail(format!("schema_version must be {SCHEMA_VERSION}"));
    }
    if obj.get("stage").and_then(Value::as_str) != Some(stage.name()) {
        return fail(format!("stage must be {:?}", stage.name()));
    }
    let hash_ok = obj
        .get("config_hash")
        .and_then(Value::as_str)
        .is_some_and(|h| h.len() == 64 && h.bytes().all(|b| b.is_ascii_hexdigit()));
    if !hash_ok {
        return fail("config_hash must be 64 hex digits".into());
    }
    if obj.get("seed").and_then(Value::as_u64).is_none() {
        return fail("seed must be an unsigned integer".into());
    }
    let v = v.clone();
    let decoded = match stage {
        Stage::Ingest => typed::<IngestPayload>(v),
        Stage::Smooth => typed::<SmoothPayload>(v),
        Stage::Prototypes => typed::<PrototypesPayload>(v),
        Stage::Simpc => typed::<SimpcPayload>(v),
        Stage::TrainEncoder => typed::<EncoderPayload>(v),
        Stage::Shapelets => typed::<ShapeletsPayload>(v),
        Stage::TrainClassifier => typed::<ClassifierPayload>(v),
        Stage::KsFilter => typed::<KsPayload>(v),
        Stage::Backtest => typed::<BacktestPayload>(v),
        Stage::Report => typed::<ReportPayload>(v),
    };
    decoded.or_else(|m| fail(m))
}

/// Validates every stage artifact in `dir`; all must be present.
pub fn validate_dir(dir: &Path) -> CliResult<()> {
    for stage in Stage::ALL {
        let path = dir.join(stage.file_name());
        let v: Value = crate::artifacts::read_json(&path)?;
        validate_value(stage, &v)?;
    }
    Ok(())
}
