//! Record output: `key=value` lines by default, JSON lines with `--json`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

pub struct Emitter {
    json: bool,
    w: Box<dyn Write>,
    count: usize,
}

impl Emitter {
    pub fn stdout(json: bool) -> Self {
        Self {
            json,
            w: Box::new(io::stdout().lock()),
            count: 0,
        }
    }

    pub fn file(json: bool, path: &Path) -> Result<Self> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            json,
            w: Box::new(BufWriter::new(f)),
            count: 0,
        })
    }

    pub fn emit(&mut self, record: &impl Serialize) -> Result<()> {
        let value = serde_json::to_value(record)?;
        let line = if self.json {
            serde_json::to_string(&value)?
        } else {
            plain(&value)
        };
        writeln!(self.w, "{line}")?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

/// `key=value` pairs separated by spaces. Strings without whitespace or `=`
/// are bare; everything else is compact JSON.
pub fn plain(value: &Value) -> String {
    match value {
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| format!("{k}={}", scalar(v)))
            .collect::<Vec<_>>()
            .join(" "),
        other => scalar(other),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s)
            if !s.is_empty()
                && !s.contains(|c: char| c.is_whitespace() || c == '=' || c == '"') =>
        {
            s.clone()
        }
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}
