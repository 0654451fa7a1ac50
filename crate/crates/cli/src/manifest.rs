use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::inputs::{read_text, write_text};

/// Record of one command invocation. `argv` replays it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, Value>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Arguments after the program name.
    pub argv: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String]) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            argv: argv.to_vec(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.config.insert(key.to_string(), value.into());
        self
    }

    pub fn input(&mut self, p: &Path) -> &mut Self {
        self.inputs.push(p.display().to_string());
        self
    }

    pub fn output(&mut self, p: &Path) -> &mut Self {
        self.outputs.push(p.display().to_string());
        self
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::input(e.to_string()))?;
        text.push('\n');
        write_text(path, &text)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        serde_json::from_str(&read_text(path)?)
            .map_err(|e| CliError::input(format!("{}: not a run manifest: {e}", path.display())))
    }
}

/// `<dir>/manifest.json` for directory outputs, `<file>.manifest.json` otherwise.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}
