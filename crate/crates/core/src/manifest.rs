//! JSON dataset manifests.
//!
//! ```json
//! {
//!   "role": "ood-test",
//!   "num_classes": 5,
//!   "entries": [
//!     { "id": "test_0000", "features": "test_0000.feat", "labels": "test_0000.labl",
//!       "softmax": "test_0000.soft", "heatmaps": { "odin": "test_0000.odin.heat" } }
//!   ]
//! }
//! ```
//!
//! Relative paths are resolved against the manifest's directory. Every file
//! reference is optional so the same schema serves generated scenes (features
//! and labels) and inferred outputs (softmax and heat maps).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::tensor::{self, FeatureMap, HeatMap, LabelMap, SoftmaxMap};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    InTrain,
    OutProxy,
    OodTest,
    InVal,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::InTrain, Role::OutProxy, Role::OodTest, Role::InVal];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::InTrain => "in-train",
            Role::OutProxy => "out-proxy",
            Role::OodTest => "ood-test",
            Role::InVal => "in-val",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub softmax: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub heatmaps: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub role: Role,
    pub num_classes: usize,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against; set on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(role: Role, num_classes: usize) -> Self {
        Self {
            role,
            num_classes,
            entries: Vec::new(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        tensor::write_file(path.as_ref(), text.as_bytes())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn has_labels(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.labels.is_some())
    }

    pub fn load_labels(&self, entry: &ManifestEntry) -> Result<Option<LabelMap>> {
        entry
            .labels
            .as_deref()
            .map(|p| tensor::load_labels(self.resolve(p)))
            .transpose()
    }

    pub fn load_softmax(&self, entry: &ManifestEntry) -> Result<SoftmaxMap> {
        let p = entry.softmax.as_deref().ok_or_else(|| {
            Error::Format(format!("manifest entry {} has no softmax file", entry.id))
        })?;
        tensor::load_softmax(self.resolve(p))
    }

    pub fn load_features(&self, entry: &ManifestEntry) -> Result<FeatureMap> {
        let p = entry.features.as_deref().ok_or_else(|| {
            Error::Format(format!("manifest entry {} has no feature file", entry.id))
        })?;
        tensor::load_features(self.resolve(p))
    }

    pub fn load_heatmap(&self, entry: &ManifestEntry, kind: &str) -> Result<Option<HeatMap>> {
        entry
            .heatmaps
            .get(kind)
            .map(|p| tensor::load_heatmap(self.resolve(p)))
            .transpose()
    }

    /// Checks that every referenced file exists, parses, and agrees on `q`
    /// and on the dimensions within an entry.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            let labels = self.load_labels(e)?;
            let softmax = e.softmax.as_ref().map(|_| self.load_softmax(e)).transpose()?;
            let features = e.features.as_ref().map(|_| self.load_features(e)).transpose()?;
            if let Some(l) = &labels {
                if l.num_classes() != self.num_classes {
                    return Err(Error::DimensionMismatch(format!(
                        "{}: labels declare q = {}, manifest q = {}",
                        e.id,
                        l.num_classes(),
                        self.num_classes
                    )));
                }
            }
            if let Some(s) = &softmax {
                if s.num_classes() != self.num_classes {
                    return Err(Error::DimensionMismatch(format!(
                        "{}: softmax has q = {}, manifest q = {}",
                        e.id,
                        s.num_classes(),
                        self.num_classes
                    )));
                }
                if let Some(l) = &labels {
                    tensor::validate_pair(s, l)?;
                }
            }
            if let (Some(f), Some(l)) = (&features, &labels) {
                if (f.height(), f.width()) != (l.height(), l.width()) {
                    return Err(Error::DimensionMismatch(format!(
                        "{}: features and labels differ in size",
                        e.id
                    )));
                }
            }
            for kind in e.heatmaps.keys() {
                self.load_heatmap(e, kind)?;
            }
        }
        Ok(())
    }
}
