use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{CellCoords, EvalSplit, GridConfig};
use super::ExperimentError;
use crate::corpus::{lookup_task, planted_motif_task, DnaSequence, TaskDataset};
use crate::model::{count_parameters, ModelConfig, ModelParams};
use crate::position::SchemeKind;
use crate::tokenize::{bpe_train, TokenizerSpec};
use crate::train::{encode_split, evaluate, train, AdamWConfig, RunMetadata, TrainConfig};

pub const MOTIF_TASK: &str = "motif";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub dataset: String,
    pub test_mcc: f64,
    /// MCC under each perturbation setting, keyed by its label.
    pub perturbed_mcc: BTreeMap<String, f64>,
    pub max_len: usize,
    pub vocab_size: usize,
    pub run: RunMetadata,
}

/// Outcome of one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub key: String,
    pub task: String,
    pub tokenizer: String,
    pub scheme: SchemeKind,
    pub depth: usize,
    pub seed: u64,
    pub datasets: Vec<DatasetResult>,
    /// Mean of the per-dataset test MCCs.
    pub task_mcc: f64,
    /// Per-setting means over datasets.
    pub perturbed_mcc: BTreeMap<String, f64>,
    pub parameter_count: usize,
    pub runtime_secs: f64,
}

impl ExperimentRecord {
    pub fn coords(&self) -> CellCoords {
        CellCoords {
            task: self.task.clone(),
            tokenizer: self.tokenizer.clone(),
            scheme: self.scheme,
            depth: self.depth,
            seed: self.seed,
        }
    }

    /// Equality ignoring wall-clock fields.
    pub fn same_results(&self, other: &Self) -> bool {
        let strip = |r: &Self| {
            let mut r = r.clone();
            r.runtime_secs = 0.0;
            for d in &mut r.datasets {
                d.run.wall_clock_secs = 0.0;
            }
            r
        };
        strip(self) == strip(other)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub key: String,
    pub coords: CellCoords,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct GridOutcome {
    /// Completed cells in coordinate order, including resumed ones.
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<CellFailure>,
    /// Cells trained in this invocation.
    pub trained: usize,
    /// Cells skipped because a record already existed.
    pub resumed: usize,
}

/// Everything that changes a cell's result, hashed into its record key.
#[derive(Serialize)]
struct KeyMaterial<'a> {
    coords: &'a CellCoords,
    training: &'a super::TrainingOverrides,
    perturbations: &'a [crate::corpus::Perturbation],
    perturb_seed: u64,
    perturb_split: EvalSplit,
    bpe_merges: usize,
    num_classes: Option<usize>,
    motif: Option<&'a crate::corpus::MotifTaskParams>,
}

/// Stable 16-hex-digit key for a cell under `config`.
pub fn cell_key(config: &GridConfig, coords: &CellCoords) -> String {
    let material = KeyMaterial {
        coords,
        training: &config.training,
        perturbations: &config.perturbations,
        perturb_seed: config.perturb_seed,
        perturb_split: config.perturb_split,
        bpe_merges: config.bpe_merges,
        num_classes: config.num_classes.get(&coords.task).copied(),
        motif: is_motif(&coords.task).then_some(&config.motif),
    };
    let json = serde_json::to_vec(&material).expect("key material serializes");
    let digest = Sha256::digest(&json);
    hex::encode(&digest[..8])
}

fn is_motif(task: &str) -> bool {
    task.eq_ignore_ascii_case(MOTIF_TASK)
}

pub(crate) fn cells_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("cells")
}

fn record_path(run_dir: &Path, key: &str) -> PathBuf {
    cells_dir(run_dir).join(format!("{key}.json"))
}

/// Write to a temporary sibling, then rename over the target.
fn write_atomic(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(|e| ExperimentError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ExperimentError::io(path, e))
}

fn read_record(path: &Path) -> Option<ExperimentRecord> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn load_task_datasets(
    config: &GridConfig,
    task: &str,
) -> Result<Vec<TaskDataset>, ExperimentError> {
    if is_motif(task) {
        return Ok(vec![planted_motif_task(&config.motif)]);
    }
    let info = lookup_task(task);
    let num_classes = config
        .num_classes
        .get(task)
        .copied()
        .or(info.map(|i| i.num_classes))
        .ok_or_else(|| {
            ExperimentError::DataMissing(format!(
                "task {task} is not in the registry; give its class count under num_classes"
            ))
        })?;
    let nominal = info.map(|i| i.sequence_length);
    let species = info.map_or("", |i| i.species);
    let data_dir = config.data_dir.as_ref().ok_or_else(|| {
        ExperimentError::DataMissing(format!("no data_dir configured for task {task}"))
    })?;
    let root = data_dir.join(task);
    let missing = |e: crate::corpus::CorpusError| ExperimentError::DataMissing(e.to_string());
    if root.join("train.csv").is_file() {
        let ds =
            TaskDataset::load_dir(&root, task, species, num_classes, nominal).map_err(missing)?;
        return Ok(vec![ds]);
    }
    let entries = fs::read_dir(&root)
        .map_err(|e| ExperimentError::DataMissing(format!("{}: {e}", root.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("train.csv").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(ExperimentError::DataMissing(format!(
            "{} has neither train.csv nor dataset subdirectories",
            root.display()
        )));
    }
    dirs.iter()
        .map(|d| {
            let name = d
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            TaskDataset::load_dir(d, &name, species, num_classes, nominal).map_err(missing)
        })
        .collect()
}

fn build_tokenizer(
    config: &GridConfig,
    desc: &str,
    ds: &TaskDataset,
) -> Result<TokenizerSpec, ExperimentError> {
    if desc == "bpe" {
        let corpus: Vec<DnaSequence> = ds.train.iter().map(|r| r.sequence.clone()).collect();
        let vocab = bpe_train(&corpus, config.bpe_merges)
            .map_err(|e| ExperimentError::DataMissing(e.to_string()))?;
        return TokenizerSpec::bpe(vocab).map_err(|e| ExperimentError::DataMissing(e.to_string()));
    }
    TokenizerSpec::from_descriptor(desc)
        .map_err(|e| ExperimentError::DataMissing(format!("{desc}: {e}")))
}

fn default_max_len(spec: &TokenizerSpec, nominal: usize) -> usize {
    match spec {
        TokenizerSpec::KMer { .. } => nominal + 2,
        TokenizerSpec::Bpe { .. } => nominal / 3 + 2,
    }
}

/// Tokenizers and datasets shared by the cells of one task.
struct Prepared {
    datasets: Vec<TaskDataset>,
    tokenizers: HashMap<(String, usize), TokenizerSpec>,
}

fn run_dataset(
    config: &GridConfig,
    coords: &CellCoords,
    ds: &TaskDataset,
    spec: &TokenizerSpec,
) -> Result<(DatasetResult, usize), String> {
    let t = &config.training;
    let max_len = t
        .max_len
        .unwrap_or_else(|| default_max_len(spec, ds.nominal_length));
    let model = ModelConfig {
        vocab_size: spec.vocab_size(),
        d_model: t.d_model,
        num_layers: coords.depth,
        num_heads: t.heads(),
        d_ff: t.d_ff.unwrap_or(4 * t.d_model),
        max_len,
        num_classes: ds.num_classes,
        dropout: t.dropout,
        scheme: t.scheme(coords.scheme),
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(coords.seed);
    init_rng.set_stream(1);
    let init = ModelParams::init(&model, &mut init_rng).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch_size,
        seed: coords.seed,
        optimizer: AdamWConfig {
            lr_peak: t.lr,
            weight_decay: t.weight_decay,
            ..AdamWConfig::default()
        },
    };
    let start = Instant::now();
    let train_set = encode_split(&ds.train, spec, max_len).map_err(|e| e.to_string())?;
    let dev_set = encode_split(&ds.dev, spec, max_len).map_err(|e| e.to_string())?;
    let outcome = train(&model, init, &train_set, &dev_set, &tc).map_err(|e| e.to_string())?;
    let test_mcc = evaluate(
        &outcome.params,
        &model,
        spec,
        &ds.test,
        crate::corpus::Perturbation::Original,
        0,
    )
    .map_err(|e| e.to_string())?
    .mcc;
    let split = match config.perturb_split {
        EvalSplit::Test => &ds.test,
        EvalSplit::Dev => &ds.dev,
    };
    let mut perturbed_mcc = BTreeMap::new();
    for &p in &config.perturbations {
        let ev = evaluate(&outcome.params, &model, spec, split, p, config.perturb_seed)
            .map_err(|e| e.to_string())?;
        perturbed_mcc.insert(p.label().to_string(), ev.mcc);
    }
    let run = RunMetadata::new(&model, &tc, &outcome, start.elapsed().as_secs_f64());
    Ok((
        DatasetResult {
            dataset: ds.name.clone(),
            test_mcc,
            perturbed_mcc,
            max_len,
            vocab_size: spec.vocab_size(),
            run,
        },
        count_parameters(&model),
    ))
}

fn run_cell(
    config: &GridConfig,
    coords: &CellCoords,
    key: &str,
    prep: &Prepared,
) -> Result<ExperimentRecord, String> {
    let start = Instant::now();
    let mut datasets = Vec::with_capacity(prep.datasets.len());
    let mut parameter_count = 0;
    for (i, ds) in prep.datasets.iter().enumerate() {
        let spec = &prep.tokenizers[&(coords.tokenizer.clone(), i)];
        let (res, params) =
            run_dataset(config, coords, ds, spec).map_err(|e| format!("{}: {e}", ds.name))?;
        parameter_count = parameter_count.max(params);
        datasets.push(res);
    }
    let n = datasets.len() as f64;
    let task_mcc = datasets.iter().map(|d| d.test_mcc).sum::<f64>() / n;
    let mut perturbed_mcc = BTreeMap::new();
    for p in &config.perturbations {
        let label = p.label();
        let mean = datasets.iter().map(|d| d.perturbed_mcc[label]).sum::<f64>() / n;
        perturbed_mcc.insert(label.to_string(), mean);
    }
    Ok(ExperimentRecord {
        key: key.to_string(),
        task: coords.task.clone(),
        tokenizer: coords.tokenizer.clone(),
        scheme: coords.scheme,
        depth: coords.depth,
        seed: coords.seed,
        datasets,
        task_mcc,
        perturbed_mcc,
        parameter_count,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn run_grid(config: &GridConfig) -> Result<GridOutcome, ExperimentError> {
    run_grid_observed(config, &|_| {})
}

/// Runs every cell without a stored record, up to `config.workers` at a
/// time. `observe` receives one progress line per event.
pub fn run_grid_observed(
    config: &GridConfig,
    observe: &(dyn Fn(&str) + Sync),
) -> Result<GridOutcome, ExperimentError> {
    config.validate()?;
    let cells_root = cells_dir(&config.run_dir);
    fs::create_dir_all(&cells_root).map_err(|e| ExperimentError::io(&cells_root, e))?;

    let cells = config.cells();
    observe(&format!("grid has {} cells", cells.len()));
    let keyed: Vec<(CellCoords, String)> = cells
        .into_iter()
        .map(|c| {
            let k = cell_key(config, &c);
            (c, k)
        })
        .collect();

    let mut done: HashMap<String, ExperimentRecord> = HashMap::new();
    let mut pending = Vec::new();
    for (coords, key) in &keyed {
        match read_record(&record_path(&config.run_dir, key)) {
            Some(r) if r.key == *key => {
                done.insert(key.clone(), r);
            }
            _ => pending.push((coords.clone(), key.clone())),
        }
    }
    let resumed = done.len();
    if resumed > 0 {
        observe(&format!("{resumed} cells already complete"));
    }

    // load data and build tokenizers only for tasks with pending cells
    let mut prepared: HashMap<String, Prepared> = HashMap::new();
    for (coords, _) in &pending {
        if !prepared.contains_key(&coords.task) {
            let datasets = load_task_datasets(config, &coords.task)?;
            prepared.insert(
                coords.task.clone(),
                Prepared {
                    datasets,
                    tokenizers: HashMap::new(),
                },
            );
        }
        let prep = prepared.get_mut(&coords.task).expect("inserted above");
        for i in 0..prep.datasets.len() {
            let k = (coords.tokenizer.clone(), i);
            if !prep.tokenizers.contains_key(&k) {
                let spec = build_tokenizer(config, &coords.tokenizer, &prep.datasets[i])?;
                prep.tokenizers.insert(k, spec);
            }
        }
    }

    let job = |(coords, key): &(CellCoords, String)| -> Result<ExperimentRecord, CellFailure> {
        let result = run_cell(config, coords, key, &prepared[&coords.task]).and_then(|rec| {
            let json = serde_json::to_string_pretty(&rec).expect("record serializes");
            write_atomic(&record_path(&config.run_dir, key), &json).map_err(|e| e.to_string())?;
            Ok(rec)
        });
        match result {
            Ok(rec) => {
                observe(&format!(
                    "done {} {} {} depth={} seed={}: mcc {:.4} in {:.1}s",
                    coords.task,
                    coords.tokenizer,
                    coords.scheme,
                    coords.depth,
                    coords.seed,
                    rec.task_mcc,
                    rec.runtime_secs
                ));
                Ok(rec)
            }
            Err(error) => {
                observe(&format!(
                    "FAILED {} {} {} depth={} seed={}: {error}",
                    coords.task, coords.tokenizer, coords.scheme, coords.depth, coords.seed
                ));
                Err(CellFailure {
                    key: key.clone(),
                    coords: coords.clone(),
                    error,
                })
            }
        }
    };
    let results: Vec<Result<ExperimentRecord, CellFailure>> = if config.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        pool.install(|| pending.par_iter().map(job).collect())
    } else {
        pending.iter().map(job).collect()
    };

    let trained = pending.len();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => {
                done.insert(rec.key.clone(), rec);
            }
            Err(f) => failures.push(f),
        }
    }
    // coordinate order, independent of completion order
    let records = keyed.iter().filter_map(|(_, k)| done.remove(k)).collect();
    Ok(GridOutcome {
        records,
        failures,
        trained,
        resumed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MotifTaskParams;

    fn tiny(run_dir: &Path) -> GridConfig {
        let mut c = GridConfig::from_json(r#"{"tasks":["motif"],"tokenizers":["1mer","2mer"],"schemes":["alibi"],"depths":[1],"seeds":[0]}"#)
            .unwrap();
        c.run_dir = run_dir.to_path_buf();
        c.motif = MotifTaskParams {
            motif: "TATA".into(),
            length: 12,
            train: 16,
            dev: 8,
            test: 8,
            seed: 0,
        };
        c.training.d_model = 8;
        c.training.epochs = 1;
        c.training.batch_size = 8;
        c
    }

    #[test]
    fn two_tokenizers_two_records_then_resume() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        let first = run_grid(&c).unwrap();
        assert_eq!(first.records.len(), 2);
        assert_eq!(first.trained, 2);
        assert!(first.failures.is_empty());
        assert_eq!(first.records[0].tokenizer, "1mer");
        let again = run_grid(&c).unwrap();
        assert_eq!(again.trained, 0);
        assert_eq!(again.resumed, 2);
        assert_eq!(again.records, first.records);
    }

    #[test]
    fn parallel_matches_serial() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let serial = run_grid(&tiny(a.path())).unwrap();
        let mut pc = tiny(b.path());
        pc.workers = 2;
        let parallel = run_grid(&pc).unwrap();
        assert_eq!(serial.records.len(), parallel.records.len());
        for (s, p) in serial.records.iter().zip(&parallel.records) {
            assert!(s.same_results(p));
        }
    }

    #[test]
    fn key_tracks_training_settings() {
        let c = tiny(Path::new("x"));
        let coords = c.cells()[0].clone();
        let mut d = c.clone();
        d.training.lr *= 2.0;
        assert_ne!(cell_key(&c, &coords), cell_key(&d, &coords));
        assert_eq!(cell_key(&c, &coords), cell_key(&c.clone(), &coords));
    }

    #[test]
    fn unknown_task_without_data_is_missing() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(dir.path());
        c.tasks = vec!["nowhere".into()];
        assert!(matches!(run_grid(&c), Err(ExperimentError::DataMissing(_))));
        c.tasks = vec!["Human-TFP".into()];
        assert!(matches!(run_grid(&c), Err(ExperimentError::DataMissing(_))));
    }
}
