use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{Command, Failure};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: usize,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub options: Value,
    pub seeds: Vec<u64>,
    pub version: String,
    pub rng: String,
    pub threads: usize,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    /// Values resolved at run time (estimated exponents, threshold sources).
    pub resolved: serde_json::Map<String, Value>,
    pub started: String,
    pub finished: Option<String>,
    pub exit_code: Option<u8>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl Manifest {
    pub fn start(command: &Command) -> Self {
        let (name, options) = match command {
            Command::Detect(a) => ("detect", serde_json::to_value(a)),
            Command::Calibrate(a) => ("calibrate", serde_json::to_value(a)),
            Command::Gen(a) => ("gen", serde_json::to_value(a)),
            Command::Elrt(a) => ("elrt", serde_json::to_value(a)),
            Command::Boxcox(a) => ("boxcox", serde_json::to_value(a)),
            Command::Gof(a) => ("gof", serde_json::to_value(a)),
            Command::Bench(a) => ("bench", serde_json::to_value(a)),
            Command::Carhop(a) => ("carhop", serde_json::to_value(a)),
        };
        let options = options.unwrap_or(Value::Null);
        let seeds = options
            .get("seed")
            .and_then(Value::as_u64)
            .into_iter()
            .collect();
        Self {
            subcommand: name.to_string(),
            options,
            seeds,
            version: env!("CARGO_PKG_VERSION").to_string(),
            rng: segpoint::rng::RNG_ALGORITHM.to_string(),
            threads: rayon::current_num_threads(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            resolved: serde_json::Map::new(),
            started: now(),
            finished: None,
            exit_code: None,
        }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256: format!("{:x}", Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn resolve(&mut self, key: &str, value: impl Serialize) {
        self.resolved.insert(
            key.to_string(),
            serde_json::to_value(value).unwrap_or(Value::Null),
        );
    }

    pub fn finish(&mut self, code: u8) {
        self.finished = Some(now());
        self.exit_code = Some(code);
    }

    pub fn emit(&self, path: Option<&Path>) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        match path {
            Some(p) => std::fs::write(p, text + "\n").map_err(|e| Failure::io(p, e)),
            None => {
                eprintln!("{text}");
                Ok(())
            }
        }
    }
}
