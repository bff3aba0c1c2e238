//! Embedded statistics of the GUE benchmark tasks.
//!
//! Split sizes are totals across all datasets belonging to a task.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CorpusError, TaskDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TaskInfo {
    pub id: &'static str,
    pub species: &'static str,
    pub task: &'static str,
    pub num_datasets: usize,
    pub num_classes: usize,
    pub sequence_length: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Alternative spellings used in result tables.
    #[serde(skip)]
    pub aliases: &'static [&'static str],
}

pub const REGISTRY: [TaskInfo; 7] = [
    TaskInfo {
        id: "Human-CPD",
        species: "Human",
        task: "Core Promoter Detection",
        num_datasets: 3,
        num_classes: 2,
        sequence_length: 70,
        train: 94712,
        dev: 11840,
        test: 11840,
        aliases: &[],
    },
    TaskInfo {
        id: "Human-TFP",
        species: "Human",
        task: "Transcription Factor Prediction",
        num_datasets: 5,
        num_classes: 2,
        sequence_length: 100,
        train: 128345,
        dev: 5000,
        test: 5000,
        aliases: &["Human-FTP"],
    },
    TaskInfo {
        id: "Human-PD",
        species: "Human",
        task: "Promoter Detection",
        num_datasets: 3,
        num_classes: 2,
        sequence_length: 300,
        train: 93902,
        dev: 11840,
        test: 11840,
        aliases: &[],
    },
    TaskInfo {
        id: "Human-SSP",
        species: "Human",
        task: "Splice Site Prediction",
        num_datasets: 1,
        num_classes: 3,
        sequence_length: 400,
        train: 36496,
        dev: 4562,
        test: 4562,
        aliases: &["Human-SSD"],
    },
    TaskInfo {
        id: "Mouse-TFP",
        species: "Mouse",
        task: "Transcription Factor Prediction",
        num_datasets: 5,
        num_classes: 2,
        sequence_length: 100,
        train: 80018,
        dev: 9735,
        test: 9735,
        aliases: &[],
    },
    TaskInfo {
        id: "Yeast-EMP",
        species: "Yeast",
        task: "Epigenetic Marks Prediction",
        num_datasets: 10,
        num_classes: 2,
        sequence_length: 500,
        train: 229885,
        dev: 28741,
        test: 28741,
        aliases: &["Yest-EMP"],
    },
    TaskInfo {
        id: "Virus-CVC",
        species: "Virus",
        task: "Covid Variant Classification",
        num_datasets: 1,
        num_classes: 9,
        sequence_length: 1000,
        train: 73335,
        dev: 9168,
        test: 9166,
        aliases: &["Virus-Covid"],
    },
];

/// Case-insensitive lookup by id or alias.
pub fn lookup_task(name: &str) -> Option<&'static TaskInfo> {
    REGISTRY.iter().find(|t| {
        t.id.eq_ignore_ascii_case(name) || t.aliases.iter().any(|a| a.eq_ignore_ascii_case(name))
    })
}

/// Summary counts of a loaded task, enough to check it against the registry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub num_classes: usize,
    pub nominal_length: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mismatch {
    pub field: &'static str,
    pub expected: usize,
    pub actual: usize,
}

/// Returns every field that disagrees with the registry row; empty means pass.
pub fn validate_against_registry(stats: &DatasetStats) -> Result<Vec<Mismatch>, CorpusError> {
    let info =
        lookup_task(&stats.name).ok_or_else(|| CorpusError::UnknownTask(stats.name.clone()))?;
    let checks = [
        ("num_classes", info.num_classes, stats.num_classes),
        (
            "sequence_length",
            info.sequence_length,
            stats.nominal_length,
        ),
        ("train", info.train, stats.train),
        ("dev", info.dev, stats.dev),
        ("test", info.test, stats.test),
    ];
    Ok(checks
        .into_iter()
        .filter(|(_, expected, actual)| expected != actual)
        .map(|(field, expected, actual)| Mismatch {
            field,
            expected,
            actual,
        })
        .collect())
}

pub fn validate_dataset(dataset: &TaskDataset) -> Result<Vec<Mismatch>, CorpusError> {
    validate_against_registry(&dataset.stats())
}

/// The registry as CSV, one row per task.
pub fn registry_csv() -> String {
    let mut out =
        String::from("id,species,task,num_datasets,num_classes,sequence_length,train,dev,test\n");
    for t in &REGISTRY {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            t.id,
            t.species,
            t.task,
            t.num_datasets,
            t.num_classes,
            t.sequence_length,
            t.train,
            t.dev,
            t.test
        );
    }
    out
}
