use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config::{Format, RunConfig};
use crate::CliError;

/// One output table. Cells are JSON values so that a table renders as
/// either CSV or JSON without a second code path.
#[derive(Clone, Debug)]
pub struct Table {
    pub name: String,
    pub meta: Vec<String>,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            meta: Vec::new(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn meta(mut self, line: impl Into<String>) -> Self {
        self.meta.push(line.into());
        self
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn to_csv(&self) -> String {
        let mut s = String::new();
        for m in &self.meta {
            s.push_str(&format!("# {m}\n"));
        }
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(csv_cell).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    fn to_json(&self) -> Value {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = self
                    .columns
                    .iter()
                    .map(|c| c.to_string())
                    .zip(row.iter().cloned())
                    .collect();
                Value::Object(obj)
            })
            .collect();
        Value::Array(rows)
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) if n.is_f64() => format!("{:.15e}", n.as_f64().unwrap()),
        other => other.to_string(),
    }
}

/// Float cell; non-finite values become empty cells.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn int(x: usize) -> Value {
    Value::from(x)
}

pub fn text(s: impl Into<String>) -> Value {
    Value::String(s.into())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub version: String,
    pub git_describe: String,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputFile>,
    pub failures: Vec<String>,
}

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let path = dir.join("manifest.lock");
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                CliError::Config(format!(
                    "output directory {} is in use ({}): {e}",
                    dir.display(),
                    path.display()
                ))
            })?;
        Ok(Self { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Writes the tables, the effective config and the manifest into the
/// output directory and returns the manifest.
pub fn persist(
    command: &str,
    cfg: &RunConfig,
    tables: &[Table],
    failures: &[String],
    started: Instant,
) -> Result<RunManifest, CliError> {
    let _lock = DirLock::acquire(&cfg.out)?;
    let mut outputs = Vec::new();
    let mut emit = |name: &str, bytes: &[u8]| -> Result<(), CliError> {
        let path = cfg.out.join(name);
        File::create(&path)?.write_all(bytes)?;
        outputs.push(OutputFile {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    };
    emit("config.toml", cfg.to_toml().as_bytes())?;
    match cfg.format {
        Format::Csv => {
            for t in tables {
                emit(&format!("{}.csv", t.name), t.to_csv().as_bytes())?;
            }
        }
        Format::Json => {
            let results: Map<String, Value> =
                tables.iter().map(|t| (t.name.clone(), t.to_json())).collect();
            let doc = serde_json::json!({
                "command": command,
                "config": cfg,
                "results": results,
            });
            emit(&format!("{command}.json"), serde_json::to_string_pretty(&doc)?.as_bytes())?;
        }
    }
    let manifest = RunManifest {
        command: command.to_string(),
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        git_describe: btc_metrology::monitoring::git_describe().to_string(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs,
        failures: failures.to_vec(),
    };
    fs::write(cfg.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = Table::new("x", &["N", "value", "note"]).meta("kappa=1");
        t.push(vec![int(2), num(0.5), text("ok")]);
        t.push(vec![int(3), num(f64::NAN), text("")]);
        assert_eq!(
            t.to_csv(),
            "# kappa=1\nN,value,note\n2,5.000000000000000e-1,ok\n3,,\n"
        );
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let first = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(first);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
