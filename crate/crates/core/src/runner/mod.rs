//! Batch orchestration behind the `mca` binary.

mod artifacts;
mod commands;
mod config;

pub use artifacts::{load_ingest, load_run, IngestArtifact, IngestSummary, SelectionMarker};
pub use commands::{
    campaign_order, cmd_evaluate, cmd_ingest, cmd_report, cmd_simulate, cmd_train, EvaluateOutput,
    ParentSource, TrainOutput,
};
pub use config::{
    CampaignEntry, CampaignParent, ExperimentConfig, ForcingConfig, LineageRef, ModelConfig,
    DEFAULT_OUTPUT, OUTPUT_ENV,
};

use crate::error::Error;

/// 2 for unusable input or configuration, 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MalformedRow { .. }
        | Error::NonConsecutiveDates { .. }
        | Error::NegativeForcing { .. }
        | Error::IncompleteFirstYear
        | Error::TooFewYears { .. }
        | Error::MissingObservation { .. }
        | Error::InvalidOption(_)
        | Error::Config(_)
        | Error::Csv(_) => 2,
        _ => 1,
    }
}

/// Applies `key.path=value` to a config; the value is read as a TOML literal when
/// it parses as one and as a plain string otherwise.
pub fn apply_override(
    config: &ExperimentConfig,
    assignment: &str,
) -> crate::Result<ExperimentConfig> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut root = toml::Value::try_from(config).map_err(|e| Error::Config(e.to_string()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = &mut root;
    for (i, p) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` does not name a table field")))?;
        if i + 1 == parts.len() {
            table.insert(p.to_string(), value.clone());
            break;
        }
        cur = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    root.try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("override `{assignment}`: {e}")))
}
