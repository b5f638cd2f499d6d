use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split `{other}` (expected train, val or test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub path: String,
    pub label: String,
    pub split: Split,
}

/// Dataset index read from a CSV with header `id,path,label,split`.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    records: Vec<ManifestRecord>,
    vocabulary: Vec<String>,
    root: PathBuf,
}

impl Manifest {
    /// `root` is the directory that relative audio paths resolve against.
    pub fn new(records: Vec<ManifestRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.id.is_empty() {
                return Err(Error::Data("manifest record with empty id".into()));
            }
            if r.id.contains('#') {
                return Err(Error::Data(format!("manifest id `{}` may not contain `#`", r.id)));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Data(format!("duplicate manifest id `{}`", r.id)));
            }
        }
        for split in [Split::Train, Split::Test] {
            if !records.iter().any(|r| r.split == split) {
                return Err(Error::Data(format!("manifest has no {split} records")));
            }
        }
        let vocabulary: Vec<String> = records
            .iter()
            .map(|r| r.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Manifest {
            records,
            vocabulary,
            root: root.into(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["id", "path", "label", "split"] {
            return Err(Error::Ingestion {
                path: path.to_path_buf(),
                reason: format!("expected header id,path,label,split, found {}", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut records = Vec::new();
        for row in reader.deserialize::<ManifestRecord>() {
            records.push(row.map_err(|e| csv_error(path, e))?);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(records, root)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.vocabulary.binary_search_by(|v| v.as_str().cmp(label)).ok()
    }

    pub fn audio_path(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}
