use rayon::prelude::*;

use super::{Sample, TrainError};
use crate::corpus::{CorpusManifest, Split, SplitAssignment};
use crate::dsp::{featurize_file, normalize_spectrogram, pad_or_truncate, NormStats, Spectrogram};

/// Normalized, padded samples per split plus the train-split statistics.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub stats: NormStats,
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl FeatureSet {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Featurizes every manifest record, computes statistics over the unpadded
/// train cells, normalizes, and pads or truncates to `max_seconds`. The pad
/// value is zero, i.e. the training mean after normalization.
pub fn featurize_corpus(
    manifest: &CorpusManifest,
    split: &SplitAssignment,
    max_seconds: f64,
) -> Result<FeatureSet, TrainError> {
    let raw: Vec<(Spectrogram, Split)> = manifest
        .records
        .par_iter()
        .map(|r| {
            let s = split
                .get(&r.id)
                .ok_or_else(|| TrainError::Config(format!("{} has no split assignment", r.id)))?;
            Ok((featurize_file(&manifest.resolve(r))?, s))
        })
        .collect::<Result<_, TrainError>>()?;
    let stats = NormStats::from_spectrograms(raw.iter().filter(|(_, s)| *s == Split::Train).map(|(x, _)| x));
    let mut set = FeatureSet {
        stats,
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for (rec, (spec, s)) in manifest.records.iter().zip(raw) {
        let spec = pad_or_truncate(&normalize_spectrogram(&spec, stats)?, max_seconds, 0.0);
        let sample = Sample {
            id: rec.id.clone(),
            spec,
            label: rec.status.class_index(),
        };
        match s {
            Split::Train => set.train.push(sample),
            Split::Dev => set.dev.push(sample),
            Split::Test => set.test.push(sample),
        }
    }
    Ok(set)
}
