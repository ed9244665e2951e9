//! Recording manifests, pathology selection, stratified splits and a
//! synthetic stand-in corpus.

use std::path::{Path, PathBuf};

mod manifest;
mod pathology;
mod split;
mod synth;

pub use manifest::{
    filter_records, load_manifest, write_manifest, CorpusManifest, Gender, ManifestSource, RecordingMeta, Status,
    MANIFEST_HEADER,
};
pub use pathology::{PathologyCategory, PathologyTable};
pub use split::{largest_remainder, stratified_split, Split, SplitAssignment};
pub use synth::{draw_params, synth_corpus, synthesize, SynthConfig, SynthesizedRecording, VoiceParams, VoiceQuality};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("line {line}: {message}")]
    Validation { line: u64, message: String },
    #[error("line {line}: unknown pathology {name:?}")]
    UnknownPathology { line: u64, name: String },
    #[error("invalid split ratios: {0}")]
    Ratios(String),
    #[error("audio: {0}")]
    Audio(String),
}

impl CorpusError {
    pub(crate) fn csv(path: &Path, e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line());
        match e.into_kind() {
            csv::ErrorKind::Io(source) => CorpusError::Io {
                path: path.to_path_buf(),
                source,
            },
            kind => CorpusError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("{kind:?}"),
            },
        }
    }
}
