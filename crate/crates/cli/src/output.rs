//! Result files. JSON files wrap the result with the format version and run
//! config; CSV files carry both as `#` header lines above the table.

use std::path::{Path, PathBuf};

use gmclab_core::config::{OutputFormat, RunConfig};
use gmclab_core::GmcError;
use serde_json::{json, Map, Value};

/// Version of the result-file layout.
pub const RESULT_FORMAT_VERSION: u32 = 1;

pub fn write(dir: &Path, command: &str, cfg: &RunConfig, result: &Value) -> Result<PathBuf, GmcError> {
    match cfg.output.format {
        OutputFormat::Json => {
            let path = dir.join(format!("{command}.json"));
            let doc = json!({"formatVersion": RESULT_FORMAT_VERSION, "command": command, "config": cfg, "result": result});
            std::fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
            Ok(path)
        }
        OutputFormat::Csv => {
            let path = dir.join(format!("{command}.csv"));
            let mut text = format!("# formatVersion={RESULT_FORMAT_VERSION}\n# command={command}\n# config={}\n", serde_json::to_string(cfg)?);
            text.push_str(&to_csv(result));
            std::fs::write(&path, text)?;
            Ok(path)
        }
    }
}

/// Flattens nested objects to dotted scalar columns.
fn flatten(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, c) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, c, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn cell(v: &Value) -> String {
    let s = match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

/// One row per array element, or per criterion for suite summaries, or a
/// single row otherwise.
pub fn to_csv(result: &Value) -> String {
    let rows: Vec<&Value> = match result {
        Value::Array(a) => a.iter().collect(),
        Value::Object(m) if m.get("criteria").is_some_and(Value::is_array) => m["criteria"].as_array().expect("checked").iter().collect(),
        other => vec![other],
    };
    let flat: Vec<Map<String, Value>> = rows
        .iter()
        .map(|r| {
            let mut m = Map::new();
            flatten("", r, &mut m);
            m
        })
        .collect();
    let mut header: Vec<String> = Vec::new();
    for m in &flat {
        for k in m.keys() {
            if !header.contains(k) {
                header.push(k.clone());
            }
        }
    }
    let mut text = header.iter().map(|h| cell(&Value::String(h.clone()))).collect::<Vec<_>>().join(",") + "\n";
    for m in &flat {
        let line: Vec<String> = header.iter().map(|h| m.get(h).map(cell).unwrap_or_default()).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    text
}
