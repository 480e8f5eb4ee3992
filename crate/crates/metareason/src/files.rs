//! Run artifacts: JSONL trace, metrics CSV, bandit snapshot, output directory.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use metareason_core::bandit::snapshot::SnapshotDoc;
use metareason_core::bandit::{BanditError, BanditState};
use metareason_core::catalog::{Catalog, CatalogEntry};
use metareason_core::orchestrator::{ReasoningTrace, TraceEvent, TraceSink};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const TRACE_SCHEMA_VERSION: u32 = 1;
pub const TRACE_FILE: &str = "trace.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

/// Creates `dir`, or a fresh timestamped subdirectory when `dir` exists.
pub fn prepare_output_dir(dir: &Path) -> io::Result<PathBuf> {
    if !dir.exists() {
        fs::create_dir_all(dir)?;
        return Ok(dir.to_path_buf());
    }
    let stamp = chrono::Local::now().format("run-%Y%m%dT%H%M%S").to_string();
    let mut candidate = dir.join(&stamp);
    let mut n = 1;
    while candidate.exists() {
        candidate = dir.join(format!("{stamp}-{n}"));
        n += 1;
    }
    fs::create_dir_all(&candidate)?;
    Ok(candidate)
}

#[derive(Serialize)]
struct Line<'a, T: Serialize> {
    record: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    schema_version: Option<u32>,
    #[serde(flatten)]
    body: &'a T,
}

/// Line-delimited JSON trace. The first record is a header carrying the
/// schema version and the full configuration.
pub struct TraceWriter {
    out: BufWriter<File>,
    error: Option<io::Error>,
}

impl TraceWriter {
    pub fn create(path: &Path, header: Value) -> io::Result<Self> {
        let mut writer = Self {
            out: BufWriter::new(File::create(path)?),
            error: None,
        };
        writer.line(&Line {
            record: "header",
            schema_version: Some(TRACE_SCHEMA_VERSION),
            body: &header,
        });
        writer.take_error()?;
        Ok(writer)
    }

    fn line<T: Serialize>(&mut self, value: &T) {
        if self.error.is_some() {
            return;
        }
        let result = serde_json::to_writer(&mut self.out, value)
            .map_err(io::Error::from)
            .and_then(|_| self.out.write_all(b"\n"));
        if let Err(e) = result {
            self.error = Some(e);
        }
    }

    fn take_error(&mut self) -> io::Result<()> {
        self.error.take().map_or(Ok(()), Err)
    }

    pub fn task(&mut self, trace: &ReasoningTrace) {
        self.line(&Line {
            record: "task",
            schema_version: None,
            body: &json!({ "trace": trace }),
        });
    }

    pub fn catalog(&mut self, entries: &[CatalogEntry]) {
        self.line(&Line {
            record: "catalog",
            schema_version: None,
            body: &json!({ "entries": entries }),
        });
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.take_error()?;
        self.out.flush()
    }
}

impl TraceSink for TraceWriter {
    fn record(&mut self, event: TraceEvent) {
        self.line(&Line {
            record: "event",
            schema_version: None,
            body: &event,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: u32,
    pub task_id: String,
    pub arm_id: Option<u32>,
    pub reward: Option<f64>,
    pub cumulative_reward: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_ms: u64,
}

/// One row per step; `cumulative_reward` runs across all tasks of a run.
pub struct MetricsWriter {
    out: csv::Writer<File>,
    cumulative: f64,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> io::Result<Self> {
        let mut out = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(File::create(path)?);
        out.write_record([
            "round",
            "task_id",
            "arm_id",
            "reward",
            "cumulative_reward",
            "prompt_tokens",
            "completion_tokens",
            "wall_ms",
        ])?;
        Ok(Self { out, cumulative: 0.0 })
    }

    /// The reward of round `t` is credited to the arm chosen for round `t`.
    pub fn task(&mut self, trace: &ReasoningTrace) -> io::Result<()> {
        for step in &trace.steps {
            let reward = step.reward.as_ref().map(|r| r.total());
            if step.bandit_updated {
                self.cumulative += reward.unwrap_or(0.0);
            }
            self.out.serialize(MetricsRow {
                round: step.round,
                task_id: trace.task_id.clone(),
                arm_id: step.selected_arm.map(|a| a.0),
                reward,
                cumulative_reward: self.cumulative,
                prompt_tokens: step.prompt_tokens(),
                completion_tokens: step.completion_tokens(),
                wall_ms: step.wall_ms(),
            })?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("cannot read snapshot: {0}")]
    Io(#[from] io::Error),
    #[error("malformed snapshot: {0}")]
    Format(String),
    #[error("snapshot checksum mismatch")]
    Checksum,
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error("catalog does not match the bandit arms: {0}")]
    Catalog(String),
}

/// Bandit state plus catalog, with a checksum over both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotFile {
    pub checksum: String,
    pub bandit: SnapshotDoc,
    #[serde(default)]
    pub catalog: Vec<CatalogEntry>,
}

fn checksum(bandit: &SnapshotDoc, catalog: &[CatalogEntry]) -> String {
    let body = serde_json::to_vec(&(bandit, catalog)).expect("snapshot is serializable");
    Sha256::digest(&body).iter().map(|b| format!("{b:02x}")).collect()
}

impl SnapshotFile {
    pub fn new(bandit: &BanditState, catalog: &Catalog) -> Self {
        let doc = bandit.to_doc();
        let entries = catalog.export(bandit);
        Self {
            checksum: checksum(&doc, &entries),
            bandit: doc,
            catalog: entries,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("snapshot is serializable");
        out.push(b'\n');
        out
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_bytes())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let file: SnapshotFile = serde_json::from_slice(bytes).map_err(|e| SnapshotError::Format(e.to_string()))?;
        if checksum(&file.bandit, &file.catalog) != file.checksum {
            return Err(SnapshotError::Checksum);
        }
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self, SnapshotError> {
        Self::parse(&fs::read(path)?)
    }

    /// Rebuilds the bandit and checks that the catalog maps onto its arms and
    /// that serializing the restored state reproduces the file.
    pub fn restore_check(&self) -> Result<BanditState, SnapshotError> {
        let state = BanditState::from_doc(self.bandit.clone())?;
        if state.to_doc() != self.bandit {
            return Err(SnapshotError::Format("restored state differs from the document".into()));
        }
        if !self.catalog.is_empty() {
            if self.catalog.len() != state.arm_count() {
                return Err(SnapshotError::Catalog(format!(
                    "{} entries for {} arms",
                    self.catalog.len(),
                    state.arm_count()
                )));
            }
            for (i, entry) in self.catalog.iter().enumerate() {
                let arm = state
                    .arm(entry.arm_id)
                    .filter(|_| entry.arm_id.index() == i)
                    .ok_or_else(|| SnapshotError::Catalog(format!("entry {i} names arm {}", entry.arm_id.0)))?;
                if arm.is_retired() != entry.retired {
                    return Err(SnapshotError::Catalog(format!("retired flag differs for arm {i}")));
                }
            }
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use metareason_core::orchestrator::{Orchestrator, OrchestratorConfig};

    #[test]
    fn snapshot_detects_flipped_bytes() {
        let orch = Orchestrator::new(OrchestratorConfig::default()).unwrap();
        let (bandit, catalog) = orch.fresh_state(1).unwrap();
        let file = SnapshotFile::new(&bandit, &catalog);
        let bytes = file.to_bytes();
        let back = SnapshotFile::parse(&bytes).unwrap();
        assert_eq!(back, file);
        back.restore_check().unwrap();

        let text = String::from_utf8(bytes).unwrap();
        let pos = text.find("\"pull_count\": 0").unwrap() + "\"pull_count\": ".len();
        let mut corrupt = text.into_bytes();
        corrupt[pos] = b'7';
        assert!(matches!(SnapshotFile::parse(&corrupt), Err(SnapshotError::Checksum)));
    }

    #[test]
    fn existing_output_dir_gets_a_subdirectory() {
        let root = tempfile::tempdir().unwrap();
        let first = prepare_output_dir(&root.path().join("out")).unwrap();
        assert_eq!(first, root.path().join("out"));
        let second = prepare_output_dir(&first).unwrap();
        let third = prepare_output_dir(&first).unwrap();
        assert!(second.starts_with(&first) && second != first);
        assert_ne!(second, third);
        assert!(second.file_name().unwrap().to_string_lossy().starts_with("run-"));
    }
}
