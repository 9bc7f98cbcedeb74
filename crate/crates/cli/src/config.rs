//! Configuration files, flag merging and config echoes.
//!
//! A config file is a JSON object with optional top-level `seed`, `out`,
//! `threads` and `experiment` keys plus one section per subcommand, keyed by
//! the subcommand name. Section keys use the flag names with `_` in place of
//! `-`. Flags given on the command line win over the file.
//!
//! Every run writes `<out>/<subcommand>.config.json` in the same format, so
//! `oodseg --config <echo> <subcommand>` replays it.

use std::path::{Path, PathBuf};

use oodseg::pipeline::ExperimentConfig;
use oodseg::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub struct FileConfig {
    root: Map<String, Value>,
}

impl FileConfig {
    pub fn empty() -> Self {
        Self { root: Map::new() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match serde_json::from_str(&text)? {
            Value::Object(root) => Ok(Self { root }),
            _ => Err(Error::Format(format!("{}: config must be a JSON object", path.display()))),
        }
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.root.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| Error::Format(format!("config key {key:?}: {e}"))),
        }
    }

    pub fn seed(&self) -> Result<Option<u64>> {
        self.get("seed")
    }

    pub fn out(&self) -> Result<Option<PathBuf>> {
        self.get("out")
    }

    pub fn threads(&self) -> Result<Option<usize>> {
        self.get("threads")
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        Ok(self.get("experiment")?.unwrap_or_default())
    }

    /// The subcommand section with every non-null flag value laid over it.
    pub fn merge<T: Serialize + DeserializeOwned>(&self, section: &str, flags: &T) -> Result<T> {
        let mut base = match self.root.get(section) {
            None | Some(Value::Null) => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return Err(Error::Format(format!("config section {section:?} must be an object"))),
        };
        if let Value::Object(over) = serde_json::to_value(flags)? {
            for (k, v) in over {
                if !v.is_null() {
                    base.insert(k, v);
                }
            }
        }
        serde_json::from_value(Value::Object(base)).map_err(|e| Error::Format(format!("config section {section:?}: {e}")))
    }
}

/// Writes the replayable config echo of one run.
pub fn write_echo(
    out: &Path,
    command: &str,
    seed: u64,
    experiment: Option<&ExperimentConfig>,
    section: &impl Serialize,
) -> Result<Value> {
    let mut root = Map::new();
    root.insert("seed".into(), Value::from(seed));
    root.insert("out".into(), Value::from(out.to_string_lossy().into_owned()));
    if let Some(e) = experiment {
        root.insert("experiment".into(), serde_json::to_value(e)?);
    }
    root.insert(command.into(), serde_json::to_value(section)?);
    let echo = Value::Object(root);
    write_json(&out.join(format!("{command}.config.json")), &echo)?;
    Ok(echo)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    oodseg::tensor::write_file(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
