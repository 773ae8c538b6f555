use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use covsteer::sdp::Tolerances;
use serde::Serialize;
use serde_json::{json, Value};

/// Provenance of one command invocation. The embedded form omits the output
/// directory, worker count and timestamp so reruns reproduce artifacts
/// byte for byte; `manifest.json` carries everything.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub problem: String,
    pub config: Value,
    pub tolerances: Tolerances,
    pub backend: String,
    pub seed: Option<u64>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str, problem: String, config: Value, tolerances: Tolerances) -> Self {
        RunManifest {
            command: command.to_string(),
            problem,
            config,
            tolerances,
            backend: "clarabel".into(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn embedded(&self) -> Value {
        serde_json::to_value(self).expect("manifest serializes")
    }

    /// Single-line form for CSV comment headers.
    pub fn comment(&self) -> String {
        format!("manifest: {}", self.embedded())
    }

    pub fn full(&self, out_dir: &Path, jobs: Option<usize>) -> Value {
        let mut v = self.embedded();
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let obj = v.as_object_mut().expect("manifest is an object");
        obj.insert("output_dir".into(), json!(out_dir.display().to_string()));
        obj.insert("jobs".into(), json!(jobs));
        obj.insert("timestamp_unix".into(), json!(stamp));
        v
    }
}
