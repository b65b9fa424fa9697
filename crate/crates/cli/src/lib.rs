//! Batch front-end of the run-and-tumble simulator.

pub mod config;
mod experiments;

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{Experiment, Loaded, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] runtumble::Error),
    #[error("writing artifacts: {0}")]
    Io(#[from] std::io::Error),
}

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    /// The experiment ran and its check failed.
    VerificationFailure,
}

impl Status {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Pass
        } else {
            Status::VerificationFailure
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Status::Pass => 0,
            Status::VerificationFailure => 2,
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Serialize)]
struct ArtifactEntry {
    file: String,
    sha256: String,
}

/// Collects the files of one run; every file is hashed into the manifest.
pub struct Artifacts {
    dir: PathBuf,
    stem: &'static str,
    entries: Vec<ArtifactEntry>,
}

impl Artifacts {
    fn new(dir: &Path, exp: Experiment) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), stem: exp.stem(), entries: Vec::new() })
    }

    /// Writes `<experiment>_<suffix>`.
    pub fn write(&mut self, suffix: &str, bytes: &[u8]) -> Result<(), CliError> {
        let file = format!("{}_{suffix}", self.stem);
        std::fs::write(self.dir.join(&file), bytes)?;
        self.entries.push(ArtifactEntry { file, sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, suffix: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).expect("artifact values serialise");
        s.push('\n');
        self.write(suffix, s.as_bytes())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    seed: u64,
    config_sha256: String,
    /// The merged configuration, overrides applied.
    config: &'a toml::Table,
    versions: Versions,
    pass: bool,
    artifacts: &'a [ArtifactEntry],
}

#[derive(Serialize)]
struct Versions {
    rtk: &'static str,
    runtumble: &'static str,
}

/// Canonical JSON of the merged configuration; keys are sorted.
pub fn config_hash(table: &toml::Table) -> String {
    sha256_hex(serde_json::to_string(table).expect("toml tables serialise").as_bytes())
}

/// Runs one experiment and writes its artifacts plus `manifest.json` to `out`.
///
/// The worker count is whatever rayon pool the caller installs; results do not depend on it.
pub fn run(exp: Experiment, loaded: &Loaded, out: &Path) -> Result<Status, CliError> {
    let cfg = &loaded.config;
    if let Some(e) = cfg.experiment {
        if e != exp {
            return Err(CliError::Usage(format!("config is for `{e}` but the subcommand is `{exp}`")));
        }
    }
    let seed = cfg
        .seed
        .ok_or_else(|| CliError::Config("`seed` is mandatory; add `seed = <integer>` or `--set seed=<integer>`".into()))?;
    let mut art = Artifacts::new(out, exp)?;
    let pass = experiments::dispatch(exp, cfg, seed, &mut art)?;
    let manifest = Manifest {
        experiment: exp.name(),
        seed,
        config_sha256: config_hash(&loaded.table),
        config: &loaded.table,
        versions: Versions { rtk: env!("CARGO_PKG_VERSION"), runtumble: runtumble::VERSION },
        pass,
        artifacts: &art.entries,
    };
    let mut s = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    s.push('\n');
    std::fs::write(out.join("manifest.json"), s)?;
    Ok(Status::from_pass(pass))
}
