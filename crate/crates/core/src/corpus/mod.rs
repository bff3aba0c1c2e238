//! Labeled DNA sequence datasets in the GUE per-split CSV layout.
//!
//! A dataset split is a plain CSV file with the header `sequence,label`,
//! one record per line, no quoting. Sequences are restricted to the
//! alphabet `{A,C,G,T,N}`.

mod perturb;
mod registry;
mod synthetic;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use perturb::{perturb, Perturbation};
pub use registry::{
    lookup_task, registry_csv, validate_against_registry, validate_dataset, DatasetStats, Mismatch,
    TaskInfo, REGISTRY,
};
pub use synthetic::{planted_motif_task, MotifTaskParams};

/// The four unambiguous bases, in the canonical (lexicographic) order.
pub const BASES: [u8; 4] = *b"ACGT";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("file is empty")]
    EmptyFile,
    #[error("first line must be the header `sequence,label`, found {found:?}")]
    MissingHeader { found: String },
    #[error("row {row}: sequence contains a character outside {{A,C,G,T,N}}")]
    BadAlphabet { row: usize },
    #[error("row {row}: label {label} is not below the class count {num_classes}")]
    LabelOutOfRange {
        row: usize,
        label: u64,
        num_classes: usize,
    },
    #[error("row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("sequence must contain at least one base")]
    EmptySequence,
    #[error("invalid base {0:?}")]
    InvalidBase(char),
    #[error("perturbation size {n} is not smaller than the sequence length {len}")]
    PerturbationTooLarge { n: usize, len: usize },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
}

/// A non-empty nucleotide string over `{A,C,G,T,N}`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DnaSequence(Vec<u8>);

impl DnaSequence {
    pub fn new(bases: impl Into<Vec<u8>>) -> Result<Self, CorpusError> {
        let bases = bases.into();
        if bases.is_empty() {
            return Err(CorpusError::EmptySequence);
        }
        if let Some(&bad) = bases.iter().find(|b| !is_dna_symbol(**b)) {
            return Err(CorpusError::InvalidBase(bad as char));
        }
        Ok(Self(bases))
    }

    /// Wraps bytes already known to satisfy the alphabet invariant.
    pub(crate) fn from_valid(bases: Vec<u8>) -> Self {
        debug_assert!(!bases.is_empty() && bases.iter().all(|b| is_dna_symbol(*b)));
        Self(bases)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn as_str(&self) -> &str {
        // alphabet is ASCII
        std::str::from_utf8(&self.0).expect("ASCII sequence")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::str::FromStr for DnaSequence {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s.as_bytes().to_vec())
    }
}

impl TryFrom<String> for DnaSequence {
    type Error = CorpusError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s.into_bytes())
    }
}

impl From<DnaSequence> for String {
    fn from(seq: DnaSequence) -> Self {
        String::from_utf8(seq.0).expect("ASCII sequence")
    }
}

impl fmt::Display for DnaSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for DnaSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DnaSequence({})", self.as_str())
    }
}

#[inline]
pub(crate) fn is_dna_symbol(b: u8) -> bool {
    matches!(b, b'A' | b'C' | b'G' | b'T' | b'N')
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub sequence: DnaSequence,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.csv",
            Split::Dev => "dev.csv",
            Split::Test => "test.csv",
        }
    }
}

/// One dataset of a task with its three splits.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub name: String,
    pub species: String,
    pub num_classes: usize,
    pub nominal_length: usize,
    pub train: Vec<LabeledSequence>,
    pub dev: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
}

impl TaskDataset {
    pub fn split(&self, split: Split) -> &[LabeledSequence] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            name: self.name.clone(),
            num_classes: self.num_classes,
            nominal_length: self.nominal_length,
            train: self.train.len(),
            dev: self.dev.len(),
            test: self.test.len(),
        }
    }

    /// Loads `train.csv`, `dev.csv` and `test.csv` from `dir`.
    ///
    /// `nominal_length` is taken from the caller when known, otherwise the
    /// longest training sequence is used.
    pub fn load_dir(
        dir: &Path,
        name: &str,
        species: &str,
        num_classes: usize,
        nominal_length: Option<usize>,
    ) -> Result<Self, CorpusError> {
        let train = load_task_csv(&dir.join(Split::Train.file_name()), num_classes)?;
        let dev = load_task_csv(&dir.join(Split::Dev.file_name()), num_classes)?;
        let test = load_task_csv(&dir.join(Split::Test.file_name()), num_classes)?;
        let nominal_length = nominal_length
            .unwrap_or_else(|| train.iter().map(|r| r.sequence.len()).max().unwrap_or(0));
        Ok(Self {
            name: name.to_string(),
            species: species.to_string(),
            num_classes,
            nominal_length,
            train,
            dev,
            test,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for split in Split::ALL {
            write_task_csv(&dir.join(split.file_name()), self.split(split))?;
        }
        Ok(())
    }
}

const HEADER: &str = "sequence,label";

/// Parses one split from CSV text. Row numbers in errors are 1-based data rows.
pub fn parse_task_csv(text: &str, num_classes: usize) -> Result<Vec<LabeledSequence>, CorpusError> {
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyFile);
    }
    let mut lines = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
    let header = lines.next().unwrap_or_default();
    if header.trim_start_matches('\u{feff}') != HEADER {
        return Err(CorpusError::MissingHeader {
            found: header.to_string(),
        });
    }

    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 1;
        if line.is_empty() {
            // tolerate the trailing newline, nothing else
            continue;
        }
        let (seq, label) = line.split_once(',').ok_or_else(|| CorpusError::Malformed {
            row,
            reason: "expected two comma-separated fields".into(),
        })?;
        if seq.is_empty() {
            return Err(CorpusError::Malformed {
                row,
                reason: "empty sequence".into(),
            });
        }
        if !seq.bytes().all(is_dna_symbol) {
            return Err(CorpusError::BadAlphabet { row });
        }
        let label: u64 = label.trim().parse().map_err(|_| CorpusError::Malformed {
            row,
            reason: format!("label {label:?} is not a non-negative integer"),
        })?;
        if label >= num_classes as u64 {
            return Err(CorpusError::LabelOutOfRange {
                row,
                label,
                num_classes,
            });
        }
        records.push(LabeledSequence {
            sequence: DnaSequence::from_valid(seq.as_bytes().to_vec()),
            label: label as usize,
        });
    }
    Ok(records)
}

pub fn load_task_csv(path: &Path, num_classes: usize) -> Result<Vec<LabeledSequence>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_task_csv(&text, num_classes)
}

pub fn write_task_csv(path: &Path, records: &[LabeledSequence]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    writeln!(out, "{HEADER}").map_err(io_err)?;
    for r in records {
        writeln!(out, "{},{}", r.sequence, r.label).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}
