use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub scanner_id: String,
    pub image_path: String,
    /// Empty for inference-only subjects.
    #[serde(default)]
    pub label_path: String,
}

impl SubjectRecord {
    pub fn has_label(&self) -> bool {
        !self.label_path.trim().is_empty()
    }
}

/// Subject list plus the directory its relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub subjects: Vec<SubjectRecord>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, subjects: Vec<SubjectRecord>) -> Result<Self> {
        let m = Manifest {
            root: root.into(),
            subjects,
        };
        m.check_unique()?;
        Ok(m)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.subjects {
            if !seen.insert(s.subject_id.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate subject_id '{}' in manifest",
                    s.subject_id
                )));
            }
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader.headers()?.clone();
        for required in ["subject_id", "scanner_id", "image_path", "label_path"] {
            if !headers.iter().any(|h| h == required) {
                return Err(Error::format(
                    path,
                    format!("manifest header lacks column '{required}'"),
                ));
            }
        }
        let subjects = reader
            .deserialize()
            .collect::<std::result::Result<Vec<SubjectRecord>, _>>()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Manifest::new(root, subjects)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        for s in &self.subjects {
            writer.serialize(s)?;
        }
        if self.subjects.is_empty() {
            writer.write_record(["subject_id", "scanner_id", "image_path", "label_path"])?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn get(&self, subject_id: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.subject_id == subject_id)
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Restriction to the given ids, keeping manifest order.
    pub fn subset(&self, ids: &[String]) -> Manifest {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        Manifest {
            root: self.root.clone(),
            subjects: self
                .subjects
                .iter()
                .filter(|s| wanted.contains(s.subject_id.as_str()))
                .cloned()
                .collect(),
        }
    }
}
