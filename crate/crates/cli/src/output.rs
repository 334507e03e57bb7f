//! Tables rendered as CSV or JSON, to files or stdout.

use serde_json::{Map, Value};
use std::io::Write;
use std::path::PathBuf;

use crate::{CliError, Format};

pub struct Table {
    pub headers: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(headers: &[&'static str]) -> Self {
        Self {
            headers: headers.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    fn csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::Config(e.to_string());
        w.write_record(&self.headers).map_err(err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(cell)).map_err(err)?;
        }
        w.into_inner().map_err(|e| CliError::Config(e.to_string()))
    }

    fn json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .headers
                        .iter()
                        .map(|h| h.to_string())
                        .zip(row.iter().cloned())
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub struct Output {
    dir: Option<PathBuf>,
    format: Format,
}

impl Output {
    pub fn new(dir: Option<PathBuf>, format: Format) -> Self {
        Self { dir, format }
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        match &self.dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join(name), bytes)?;
            }
            None => {
                let mut stdout = std::io::stdout().lock();
                writeln!(stdout, "# {name}")?;
                stdout.write_all(bytes)?;
            }
        }
        Ok(())
    }

    /// `<stem>.csv` or `<stem>.json` depending on the format.
    pub fn table(&self, stem: &str, table: &Table) -> Result<(), CliError> {
        match self.format {
            Format::Csv => self.write(&format!("{stem}.csv"), &table.csv()?),
            Format::Json => self.json(stem, &table.json()),
        }
    }

    /// Always JSON; used for nested reports.
    pub fn json(&self, stem: &str, value: &Value) -> Result<(), CliError> {
        let mut bytes =
            serde_json::to_vec_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        bytes.push(b'\n');
        self.write(&format!("{stem}.json"), &bytes)
    }

    pub fn raw(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        if self.dir.is_some() {
            self.write(name, bytes)
        } else {
            Ok(())
        }
    }
}
