//! Run directories, logging, and failure classification.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;

/// `Invalid` failures happen before any work starts.
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

pub fn invalid<T>(msg: impl std::fmt::Display) -> Outcome<T> {
    Err(Failure::Invalid(anyhow::anyhow!("{msg}")))
}

pub trait IntoInvalid<T> {
    fn or_invalid(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> IntoInvalid<T> for Result<T, E> {
    fn or_invalid(self) -> Outcome<T> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }
}

/// Output directory of one invocation. Timestamps go only to `log`.
pub struct RunDir {
    pub path: PathBuf,
    log: File,
}

impl RunDir {
    pub fn create(path: &Path) -> Outcome<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path.join("log"))
            .with_context(|| format!("opening log in {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            log,
        })
    }

    pub fn log(&mut self, msg: impl AsRef<str>) {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        let _ = writeln!(self.log, "[{}.{:03}] {}", t.as_secs(), t.subsec_millis(), msg.as_ref());
        eprintln!("{}", msg.as_ref());
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Outcome {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path.join(name), text).with_context(|| format!("writing {name}"))?;
        Ok(())
    }

    pub fn write_text(&self, name: &str, text: &str) -> Outcome {
        fs::write(self.path.join(name), text).with_context(|| format!("writing {name}"))?;
        Ok(())
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}
