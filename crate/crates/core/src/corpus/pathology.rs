use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathologyCategory {
    Organic,
    Inorganic,
}

/// Default organic/inorganic assignment for common voice-database
/// diagnoses. Review before running on real recordings.
const DEFAULT_TABLE: &[(&str, PathologyCategory)] = {
    use PathologyCategory::{Inorganic, Organic};
    &[
        ("laryngitis", Organic),
        ("chronic laryngitis", Organic),
        ("leukoplakia", Organic),
        ("vocal fold polyp", Organic),
        ("vocal fold nodules", Organic),
        ("vocal fold cyst", Organic),
        ("reinke edema", Organic),
        ("contact granuloma", Organic),
        ("laryngeal carcinoma", Organic),
        ("papilloma", Organic),
        ("recurrent laryngeal nerve paralysis", Organic),
        ("vocal fold paralysis", Organic),
        ("sulcus vocalis", Organic),
        ("functional dysphonia", Inorganic),
        ("hyperfunctional dysphonia", Inorganic),
        ("hypofunctional dysphonia", Inorganic),
        ("psychogenic dysphonia", Inorganic),
        ("psychogenic aphonia", Inorganic),
        ("ventricular dysphonia", Inorganic),
    ]
};

/// Lookup from pathology name to category. Names are matched
/// case-insensitively with internal whitespace collapsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathologyTable {
    entries: BTreeMap<String, PathologyCategory>,
}

impl Default for PathologyTable {
    fn default() -> Self {
        Self {
            entries: DEFAULT_TABLE
                .iter()
                .map(|(name, cat)| (normalize_name(name), *cat))
                .collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct TableRow {
    name: String,
    category: PathologyCategory,
}

impl PathologyTable {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Reads a `name,category` CSV (category ∈ {organic, inorganic}).
    pub fn from_csv(path: &Path) -> Result<Self, CorpusError> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| CorpusError::csv(path, e))?;
        let mut table = Self::empty();
        for row in reader.deserialize::<TableRow>() {
            let row = row.map_err(|e| CorpusError::csv(path, e))?;
            table.insert(&row.name, row.category);
        }
        Ok(table)
    }

    pub fn insert(&mut self, name: &str, category: PathologyCategory) {
        self.entries.insert(normalize_name(name), category);
    }

    pub fn category(&self, name: &str) -> Option<PathologyCategory> {
        self.entries.get(&normalize_name(name)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}
