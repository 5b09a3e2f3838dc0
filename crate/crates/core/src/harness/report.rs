use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Envelope for every report file: no timestamps, so equal runs give equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub kind: String,
    pub seed: u64,
    pub config_hash: String,
    pub body: T,
}

/// Writes `<name>.json` and `<name>.txt` into `dir`.
pub fn write_report<T: Serialize>(
    dir: &Path,
    name: &str,
    kind: &str,
    seed: u64,
    config_hash: &str,
    body: &T,
    text: &str,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let report = Report { kind: kind.to_string(), seed, config_hash: config_hash.to_string(), body };
    let json = serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let jp = dir.join(format!("{name}.json"));
    std::fs::write(&jp, json + "\n").map_err(|e| HarnessError::io(&jp, e))?;
    let tp = dir.join(format!("{name}.txt"));
    let txt = format!("{kind} | seed {seed} | config {config_hash}\n\n{text}");
    std::fs::write(&tp, txt).map_err(|e| HarnessError::io(&tp, e))?;
    Ok(())
}
