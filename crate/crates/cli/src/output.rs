//! Output files. Every file carries the tool version and the config hash: CSV files
//! in a leading `#` comment, JSON files in a `meta` object, JSONL files in their
//! first line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct Meta {
    pub command: &'static str,
    pub config_hash: String,
}

impl Meta {
    pub fn json(&self) -> Value {
        json!({
            "tool": "dfm",
            "version": VERSION,
            "command": self.command,
            "config_sha256": self.config_hash,
        })
    }
}

pub struct Writer {
    pub dir: PathBuf,
    pub meta: Meta,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

impl Writer {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(&self, name: &str, columns: &[String], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut w = create(&path)?;
        writeln!(
            w,
            "# dfm {} command={} config_sha256={}",
            VERSION, self.meta.command, self.meta.config_hash
        )?;
        writeln!(w, "{}", columns.join(","))?;
        for r in rows {
            writeln!(w, "{}", r.join(","))?;
        }
        w.flush()?;
        Ok(path)
    }

    /// Writes `{"meta": ..., <body fields>}`.
    pub fn json(&self, name: &str, body: Value) -> Result<PathBuf> {
        let path = self.path(name);
        let mut doc = serde_json::Map::new();
        doc.insert("meta".into(), self.meta.json());
        if let Value::Object(m) = body {
            doc.extend(m);
        }
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &Value::Object(doc))?;
        writeln!(w)?;
        w.flush()?;
        Ok(path)
    }

    /// Writes a `{"meta": ...}` line followed by one record per line.
    pub fn jsonl<'a>(&self, name: &str, records: impl IntoIterator<Item = &'a Value>) -> Result<PathBuf> {
        let path = self.path(name);
        let mut w = create(&path)?;
        serde_json::to_writer(&mut w, &json!({ "meta": self.meta.json() }))?;
        writeln!(w)?;
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        w.flush()?;
        Ok(path)
    }
}

pub fn fmt_state(x: &[usize]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}
