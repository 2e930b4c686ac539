//! Output directory of one invocation plus its `manifest.toml`.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::settings::Settings;
use crate::CliError;

pub const MANIFEST: &str = "manifest.toml";

#[derive(Serialize)]
struct Artifact {
    kind: String,
    path: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    argv: Vec<String>,
    started_unix: u64,
    elapsed_seconds: f64,
    status: String,
    inputs: &'a toml::Table,
    artifacts: &'a [Artifact],
    settings: &'a Settings,
}

pub struct RunDir {
    root: PathBuf,
    command: &'static str,
    started: Instant,
    started_unix: u64,
    inputs: toml::Table,
    artifacts: Vec<Artifact>,
}

impl RunDir {
    /// Creates `out`, or `runs/<command>-<unix time>` when not given.
    pub fn create(out: Option<&Path>, command: &'static str) -> Result<RunDir, CliError> {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let root = match out {
            Some(p) => p.to_path_buf(),
            None => {
                let base = PathBuf::from("runs").join(format!("{command}-{started_unix}"));
                let mut root = base.clone();
                let mut n = 1;
                while root.exists() {
                    root = PathBuf::from(format!("{}-{n}", base.display()));
                    n += 1;
                }
                root
            }
        };
        std::fs::create_dir_all(&root).map_err(segcrf::Error::from)?;
        log::info!("run directory {}", root.display());
        Ok(RunDir {
            root,
            command,
            started: Instant::now(),
            started_unix,
            inputs: toml::Table::new(),
            artifacts: Vec::new(),
        })
    }

    /// Records a command-specific input in the manifest.
    pub fn input(&mut self, key: &str, value: impl Into<toml::Value>) {
        self.inputs.insert(key.to_string(), value.into());
    }

    /// Path for a new artifact, recorded in the manifest.
    pub fn artifact(&mut self, kind: &str, name: &str) -> PathBuf {
        self.artifacts.push(Artifact {
            kind: kind.to_string(),
            path: name.to_string(),
        });
        self.root.join(name)
    }

    /// Writes the manifest; `status` is `ok` or the error message.
    pub fn finish(&self, settings: &Settings, status: &Result<(), CliError>) -> Result<(), CliError> {
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            argv: std::env::args().collect(),
            started_unix: self.started_unix,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
            status: match status {
                Ok(()) => "ok".into(),
                Err(e) => format!("error: {e}"),
            },
            inputs: &self.inputs,
            artifacts: &self.artifacts,
            settings,
        };
        let text = toml::to_string(&manifest).expect("manifest serializes");
        std::fs::write(self.root.join(MANIFEST), text).map_err(segcrf::Error::from)?;
        Ok(())
    }
}
