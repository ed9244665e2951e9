use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pathology::{PathologyCategory, PathologyTable};
use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn code(self) -> &'static str {
        match self {
            Gender::Male => "m",
            Gender::Female => "f",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
        })
    }
}

impl FromStr for Gender {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "m" | "male" => Ok(Gender::Male),
            "f" | "female" => Ok(Gender::Female),
            other => Err(format!("unknown gender {other:?} (expected m or f)")),
        }
    }
}

/// Pathological status; the binary task merges organic and inorganic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Healthy,
    Organic,
    Inorganic,
}

impl Status {
    /// Binary class index: 0 healthy, 1 pathological.
    pub fn class_index(self) -> usize {
        match self {
            Status::Healthy => 0,
            Status::Organic | Status::Inorganic => 1,
        }
    }

    pub fn is_pathological(self) -> bool {
        self != Status::Healthy
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Healthy => "healthy",
            Status::Organic => "organic",
            Status::Inorganic => "inorganic",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Status {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "healthy" => Ok(Status::Healthy),
            "organic" => Ok(Status::Organic),
            "inorganic" => Ok(Status::Inorganic),
            other => Err(format!(
                "unknown status {other:?} (expected healthy, organic or inorganic)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub id: String,
    pub audio_path: PathBuf,
    pub speaker_id: String,
    pub gender: Gender,
    pub pathology_labels: BTreeSet<String>,
    pub status: Status,
}

impl RecordingMeta {
    /// Categories of the labelled pathologies; unknown names are skipped.
    pub fn categories(&self, table: &PathologyTable) -> BTreeSet<PathologyCategory> {
        self.pathology_labels
            .iter()
            .filter_map(|l| table.category(l))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestSource {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub records: Vec<RecordingMeta>,
    pub source: ManifestSource,
    /// Directory that relative audio paths resolve against.
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &RecordingMeta) -> PathBuf {
        if record.audio_path.is_absolute() {
            record.audio_path.clone()
        } else {
            self.root.join(&record.audio_path)
        }
    }

    pub fn get(&self, id: &str) -> Option<&RecordingMeta> {
        self.records.iter().find(|r| r.id == id)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct ManifestRow {
    id: String,
    path: String,
    speaker: String,
    gender: String,
    status: String,
    pathologies: String,
}

pub const MANIFEST_HEADER: [&str; 6] = ["id", "path", "speaker", "gender", "status", "pathologies"];

/// Parses a manifest CSV (`id,path,speaker,gender,status,pathologies`).
///
/// Rows are validated against `table`: pathology names must be known,
/// healthy rows must carry no pathologies and pathological rows at least one.
pub fn load_manifest(path: &Path, table: &PathologyTable) -> Result<CorpusManifest, CorpusError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CorpusError::csv(path, e))?;
    let headers = reader.headers().map_err(|e| CorpusError::csv(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(CorpusError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("header must be {}", MANIFEST_HEADER.join(",")),
        });
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| CorpusError::csv(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let parse_err = |message: String| CorpusError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row: ManifestRow = row.deserialize(Some(&headers)).map_err(|e| parse_err(e.to_string()))?;
        let gender: Gender = row.gender.parse().map_err(parse_err)?;
        let status: Status = row.status.parse().map_err(parse_err)?;
        let labels: BTreeSet<String> = row
            .pathologies
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if let Some(unknown) = labels.iter().find(|l| table.category(l).is_none()) {
            return Err(CorpusError::UnknownPathology {
                line,
                name: unknown.clone(),
            });
        }
        if (status == Status::Healthy) != labels.is_empty() {
            return Err(CorpusError::Validation {
                line,
                message: format!(
                    "status {status} inconsistent with {} pathology label(s)",
                    labels.len()
                ),
            });
        }
        if row.id.trim().is_empty() {
            return Err(parse_err("empty id".into()));
        }
        if !seen.insert(row.id.clone()) {
            return Err(CorpusError::Validation {
                line,
                message: format!("duplicate id {:?}", row.id),
            });
        }
        records.push(RecordingMeta {
            id: row.id,
            audio_path: PathBuf::from(row.path),
            speaker_id: row.speaker,
            gender,
            pathology_labels: labels,
            status,
        });
    }
    Ok(CorpusManifest {
        records,
        source: ManifestSource::Real,
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

pub fn write_manifest(path: &Path, manifest: &CorpusManifest) -> Result<(), CorpusError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| CorpusError::csv(path, e))?;
    for r in &manifest.records {
        writer
            .serialize(ManifestRow {
                id: r.id.clone(),
                path: r.audio_path.to_string_lossy().replace('\\', "/"),
                speaker: r.speaker_id.clone(),
                gender: r.gender.code().into(),
                status: r.status.as_str().into(),
                pathologies: r
                    .pathology_labels
                    .iter()
                    .map(String::as_str)
                    .collect::<Vec<_>>()
                    .join(";"),
            })
            .map_err(|e| CorpusError::csv(path, e))?;
    }
    if manifest.records.is_empty() {
        writer
            .write_record(MANIFEST_HEADER)
            .map_err(|e| CorpusError::csv(path, e))?;
    }
    writer.flush().map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Drops recordings whose labels span both organic and inorganic categories.
pub fn filter_records(manifest: &CorpusManifest, table: &PathologyTable) -> CorpusManifest {
    let records = manifest
        .records
        .iter()
        .filter(|r| r.categories(table).len() < 2)
        .cloned()
        .collect();
    CorpusManifest {
        records,
        source: manifest.source,
        root: manifest.root.clone(),
    }
}
