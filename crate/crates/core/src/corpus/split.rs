use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusManifest, Gender, Status};
use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    /// `(id, split)` in manifest order.
    entries: Vec<(String, Split)>,
    index: HashMap<String, usize>,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    pub fn get(&self, id: &str) -> Option<Split> {
        self.index.get(id).map(|&i| self.entries[i].1)
    }

    pub fn entries(&self) -> &[(String, Split)] {
        &self.entries
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |(_, s)| *s == split)
            .map(|(id, _)| id.as_str())
    }

    pub fn count(&self, split: Split) -> usize {
        self.ids(split).count()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CorpusError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CorpusError::csv(path, e))?;
        w.write_record(["id", "split"]).map_err(|e| CorpusError::csv(path, e))?;
        for (id, split) in &self.entries {
            w.write_record([id.as_str(), split.as_str()])
                .map_err(|e| CorpusError::csv(path, e))?;
        }
        w.flush().map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self, CorpusError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| CorpusError::csv(path, e))?;
        let mut entries = Vec::new();
        for row in r.records() {
            let row = row.map_err(|e| CorpusError::csv(path, e))?;
            let line = row.position().map_or(0, |p| p.line());
            let split = row
                .get(1)
                .unwrap_or_default()
                .parse()
                .map_err(|message| CorpusError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message,
                })?;
            entries.push((row.get(0).unwrap_or_default().to_string(), split));
        }
        Ok(Self::from_entries(entries, 0, [0.0; 3]))
    }

    fn from_entries(entries: Vec<(String, Split)>, seed: u64, ratios: [f64; 3]) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.clone(), i))
            .collect();
        Self {
            entries,
            index,
            seed,
            ratios,
            warnings: Vec::new(),
        }
    }
}

/// Per-stratum (status × gender) split with largest-remainder rounding.
///
/// Each stratum is shuffled with a seeded stream and cut into
/// train/dev/test blocks whose sizes differ from `n·ratio` by less than one.
pub fn stratified_split(
    manifest: &CorpusManifest,
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment, CorpusError> {
    if ratios.iter().any(|&r| !(r > 0.0)) {
        return Err(CorpusError::Ratios(format!("ratios must be positive, got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(CorpusError::Ratios(format!("ratios sum to {total}, expected 1")));
    }

    let mut strata: BTreeMap<(Status, Gender), Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        strata.entry((r.status, r.gender)).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assigned = vec![Split::Train; manifest.records.len()];
    let mut warnings = Vec::new();
    for ((status, gender), mut members) in strata {
        if members.len() < 3 {
            let msg = format!(
                "stratum {status}/{gender} has {} record(s); split is best-effort",
                members.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        members.shuffle(&mut rng);
        let counts = largest_remainder(members.len(), ratios);
        let mut cursor = members.into_iter();
        for (split, &count) in Split::ALL.iter().zip(&counts) {
            for idx in cursor.by_ref().take(count) {
                assigned[idx] = *split;
            }
        }
    }

    let entries = manifest
        .records
        .iter()
        .zip(assigned)
        .map(|(r, s)| (r.id.clone(), s))
        .collect();
    let mut out = SplitAssignment::from_entries(entries, seed, ratios);
    out.warnings = warnings;
    Ok(out)
}

/// Integer counts summing to `n`; leftovers go to the largest fractional
/// parts, earlier splits winning ties.
pub fn largest_remainder(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}
