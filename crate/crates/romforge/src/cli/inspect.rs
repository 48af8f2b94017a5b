//! Artifact-directory summary.

use std::fs;
use std::path::Path;

use super::CliError;

/// Print a short human-readable summary of an artifact directory: the
/// config echo, greedy anchors when present, and per-file row counts.
pub fn inspect_dir(dir: &Path) -> Result<String, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut out = String::new();
    out.push_str(&format!("artifact directory: {}\n", dir.display()));

    let config_path = dir.join("config.json");
    if config_path.exists() {
        if let Ok(v) = serde_json::from_slice::<serde_json::Value>(&fs::read(&config_path)?) {
            let kind = v.get("kind").and_then(|k| k.as_str()).unwrap_or("?");
            out.push_str(&format!("experiment kind: {kind}\n"));
            if let Some(seed) = v.get("seed") {
                out.push_str(&format!("seed: {seed}\n"));
            }
        }
    }

    let greedy_path = dir.join("models").join("greedy.json");
    if greedy_path.exists() {
        if let Ok(v) = serde_json::from_slice::<serde_json::Value>(&fs::read(&greedy_path)?) {
            if let Some(anchors) = v.get("anchors").and_then(|a| a.as_array()) {
                let mus: Vec<String> = anchors
                    .iter()
                    .filter_map(|a| a.get("mu_star").map(|m| m.to_string()))
                    .collect();
                out.push_str(&format!("greedy anchors: [{}]\n", mus.join(", ")));
            }
        }
    }

    let mut entries: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    entries.sort();
    for path in entries {
        let name = path
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        if path.is_dir() {
            let count = fs::read_dir(&path).map(|d| d.count()).unwrap_or(0);
            out.push_str(&format!("  {name}/ ({count} entries)\n"));
        } else if name.ends_with(".csv") {
            let rows = fs::read_to_string(&path)
                .map(|t| t.lines().count().saturating_sub(1))
                .unwrap_or(0);
            out.push_str(&format!("  {name} ({rows} rows)\n"));
        } else {
            let size = fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
            out.push_str(&format!("  {name} ({size} bytes)\n"));
        }
    }
    Ok(out)
}
