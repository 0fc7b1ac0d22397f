//! Append-only trial logs: one JSON object per line, one file per
//! (optimizer, seed) study.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use slotune_core::{OptimizerKind, TrialRecord};

use crate::error::{Error, Result};

pub const LOG_EXTENSION: &str = "jsonl";

/// Deterministic file name of a study's log.
pub fn log_file_name(optimizer: OptimizerKind, seed: u64) -> String {
    format!("{optimizer}-seed{seed}.{LOG_EXTENSION}")
}

/// Parses a whole log. Every line must hold one complete record.
pub fn read_log(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_lines(path, &text)
}

fn parse_lines(path: &Path, text: &str) -> Result<Vec<TrialRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writer for one study's log.
#[derive(Debug)]
pub struct TrialLog {
    path: PathBuf,
    file: File,
}

impl TrialLog {
    /// Opens `path` for appending, creating it if needed, and returns the
    /// records already stored. A final line without its newline is the
    /// remnant of an interrupted write; it never completed, so it is cut
    /// off before anything new is appended.
    pub fn open(path: &Path) -> Result<(Self, Vec<TrialRecord>)> {
        let write_err = |source| Error::Write {
            path: path.to_path_buf(),
            source,
        };
        let text = match fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(source) => {
                return Err(Error::Read {
                    path: path.to_path_buf(),
                    source,
                })
            }
        };
        let complete = match text.rfind('\n') {
            Some(i) => i + 1,
            None => 0,
        };
        let records = parse_lines(path, &text[..complete])?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(write_err)?;
        if complete < text.len() {
            file.set_len(complete as u64).map_err(write_err)?;
            file.sync_data().map_err(write_err)?;
        }
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            records,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one record and waits until it reaches stable storage.
    pub fn append(&mut self, record: &TrialRecord) -> Result<()> {
        let mut line = serde_json::to_string(record).expect("trial records always serialize");
        line.push('\n');
        let write_err = |source| Error::Write {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(write_err)?;
        self.file.flush().map_err(write_err)?;
        self.file.sync_data().map_err(write_err)
    }
}
