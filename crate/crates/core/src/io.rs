//! Reading and writing the JSON and JSON-lines artifacts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::em::EmStep;
use crate::error::{LtpError, Result};
use crate::inference::VariationalState;
use crate::perm_models::ModelParams;
use crate::rankings::{ObservationRecord, QueryObservation};
use crate::topic_model::{import_topic_maps, TopicMap, TopicMaps};

/// Line of `items.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub text: String,
}

/// Parses one JSON value per non-blank line. Line numbers in errors are
/// 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| LtpError::Schema {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let reader = BufReader::new(File::open(path)?);
    serde_json::from_reader(reader).map_err(|e| LtpError::Schema {
        line: e.line(),
        message: e.to_string(),
    })
}

/// Pretty-printed with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads and aligns `observations.jsonl`. Alignment errors are reported with
/// the offending line.
pub fn read_observations(path: &Path) -> Result<Vec<QueryObservation>> {
    let records: Vec<ObservationRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(idx, r)| {
            r.into_observation().map_err(|e| match e {
                LtpError::DuplicateItem(_) | LtpError::EmptyObservation => LtpError::Schema {
                    line: idx + 1,
                    message: e.to_string(),
                },
                other => other,
            })
        })
        .collect()
}

pub fn write_observations(path: &Path, observations: &[QueryObservation]) -> Result<()> {
    write_jsonl(path, observations.iter().map(ObservationRecord::from))
}

pub fn read_topic_maps(path: &Path, expected_topics: Option<usize>) -> Result<TopicMaps> {
    let rows: Vec<TopicMap> = read_jsonl(path)?;
    import_topic_maps(rows, expected_topics)
}

pub fn write_topic_maps(path: &Path, maps: &TopicMaps) -> Result<()> {
    write_jsonl(path, maps.to_records())
}

/// Contents of `profile.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub eta_tilde: Vec<f64>,
    pub kappa1: f64,
    pub kappa2: f64,
    pub tau_mean: f64,
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
    pub delta: f64,
    pub elbo: f64,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub phi: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_trace: Option<Vec<EmStep>>,
}

impl Profile {
    pub fn new(
        query_ids: &[String],
        state: &VariationalState,
        params: &ModelParams,
        em_trace: Option<Vec<EmStep>>,
    ) -> Self {
        Self {
            eta_tilde: state.eta_tilde.clone(),
            kappa1: state.kappa1,
            kappa2: state.kappa2,
            tau_mean: state.tau_mean(),
            lambda: params.lambda,
            mu: params.mu,
            gamma: params.gamma,
            delta: params.delta,
            elbo: state.elbo,
            elbo_trace: state.elbo_trace.clone(),
            converged: state.converged,
            phi: query_ids
                .iter()
                .cloned()
                .zip(state.phi.iter().copied())
                .collect(),
            em_trace,
        }
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            mu: self.mu,
            lambda: self.lambda,
            gamma: self.gamma,
            delta: self.delta,
        }
    }
}
