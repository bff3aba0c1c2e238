use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::runner::{cells_dir, ExperimentRecord};
use super::ExperimentError;
use crate::position::SchemeKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// One table per scheme: rows (depth, tokenizer), columns tasks.
    ByScheme,
    /// One table per task: rows (scheme, depth, tokenizer), columns perturbation settings.
    Robustness,
}

impl FromStr for Layout {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "by-scheme" => Ok(Self::ByScheme),
            "robustness" => Ok(Self::Robustness),
            other => Err(ExperimentError::UnknownLayout(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportFile {
    pub name: String,
    pub contents: String,
}

/// k-mers by ascending k, then everything else by name.
fn tokenizer_order(desc: &str) -> (u8, usize, String) {
    match desc
        .strip_suffix("mer")
        .and_then(|k| k.parse::<usize>().ok())
    {
        Some(k) => (0, k, String::new()),
        None => (1, 0, desc.to_string()),
    }
}

fn scheme_order(s: SchemeKind) -> usize {
    SchemeKind::ALL
        .iter()
        .position(|&k| k == s)
        .unwrap_or(usize::MAX)
}

/// Mean over seeds; with more than one seed, `mean±(max-min)`.
fn summarize(values: &[f64]) -> String {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return format!("{mean:.4}");
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!("{mean:.4}±{:.4}", hi - lo)
}

fn sorted_unique<T: Clone + Ord>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut v: Vec<T> = items.collect();
    v.sort();
    v.dedup();
    v
}

fn row_keys(
    records: &[&ExperimentRecord],
    with_scheme: bool,
) -> Vec<(usize, usize, (u8, usize, String), String)> {
    let mut rows: Vec<_> = records
        .iter()
        .map(|r| {
            let s = if with_scheme {
                scheme_order(r.scheme)
            } else {
                0
            };
            (
                s,
                r.depth,
                tokenizer_order(&r.tokenizer),
                r.tokenizer.clone(),
            )
        })
        .collect();
    rows.sort();
    rows.dedup();
    rows
}

fn by_scheme(records: &[ExperimentRecord]) -> Vec<ReportFile> {
    let tasks = sorted_unique(records.iter().map(|r| r.task.clone()));
    let schemes = sorted_unique(records.iter().map(|r| scheme_order(r.scheme)));
    let mut files = Vec::new();
    for s in schemes {
        let scheme = SchemeKind::ALL[s];
        let subset: Vec<&ExperimentRecord> =
            records.iter().filter(|r| r.scheme == scheme).collect();
        let mut out = String::from("depth,tokenizer");
        for t in &tasks {
            write!(out, ",{t}").unwrap();
        }
        out.push('\n');
        for (_, depth, _, tok) in row_keys(&subset, false) {
            write!(out, "{depth},{tok}").unwrap();
            for t in &tasks {
                let vals: Vec<f64> = subset
                    .iter()
                    .filter(|r| r.depth == depth && r.tokenizer == tok && &r.task == t)
                    .map(|r| r.task_mcc)
                    .collect();
                out.push(',');
                if !vals.is_empty() {
                    out.push_str(&summarize(&vals));
                }
            }
            out.push('\n');
        }
        files.push(ReportFile {
            name: format!("by_scheme_{scheme}.csv"),
            contents: out,
        });
    }
    files
}

fn robustness(records: &[ExperimentRecord]) -> Vec<ReportFile> {
    let tasks = sorted_unique(records.iter().map(|r| r.task.clone()));
    let mut files = Vec::new();
    for task in tasks {
        let subset: Vec<&ExperimentRecord> = records.iter().filter(|r| r.task == task).collect();
        // column order: the unperturbed setting first, then by label
        let mut labels = sorted_unique(subset.iter().flat_map(|r| r.perturbed_mcc.keys().cloned()));
        if let Some(i) = labels.iter().position(|l| l == "original") {
            let l = labels.remove(i);
            labels.insert(0, l);
        }
        let mut out = String::from("scheme,depth,tokenizer");
        for l in &labels {
            write!(out, ",{l}").unwrap();
        }
        out.push('\n');
        for (s, depth, _, tok) in row_keys(&subset, true) {
            let scheme = SchemeKind::ALL[s];
            write!(out, "{scheme},{depth},{tok}").unwrap();
            let cell: Vec<&&ExperimentRecord> = subset
                .iter()
                .filter(|r| r.scheme == scheme && r.depth == depth && r.tokenizer == tok)
                .collect();
            for l in &labels {
                let vals: Vec<f64> = cell
                    .iter()
                    .filter_map(|r| r.perturbed_mcc.get(l).copied())
                    .collect();
                out.push(',');
                if !vals.is_empty() {
                    out.push_str(&summarize(&vals));
                }
            }
            out.push('\n');
        }
        files.push(ReportFile {
            name: format!("robustness_{task}.csv"),
            contents: out,
        });
    }
    files
}

/// Lays records out as CSV tables. Output depends only on the record set.
pub fn report(
    records: &[ExperimentRecord],
    layout: Layout,
) -> Result<Vec<ReportFile>, ExperimentError> {
    if records.is_empty() {
        return Err(ExperimentError::NoRecords);
    }
    Ok(match layout {
        Layout::ByScheme => by_scheme(records),
        Layout::Robustness => robustness(records),
    })
}

/// Reads every record under `run_dir/cells`, sorted by key.
pub fn load_records(run_dir: &Path) -> Result<Vec<ExperimentRecord>, ExperimentError> {
    let dir = cells_dir(run_dir);
    let entries = fs::read_dir(&dir).map_err(|e| ExperimentError::io(&dir, e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut by_key = BTreeMap::new();
    for p in paths {
        let text = fs::read_to_string(&p).map_err(|e| ExperimentError::io(&p, e))?;
        let rec: ExperimentRecord =
            serde_json::from_str(&text).map_err(|e| ExperimentError::BadRecord {
                path: p.display().to_string(),
                reason: e.to_string(),
            })?;
        by_key.insert(rec.key.clone(), rec);
    }
    Ok(by_key.into_values().collect())
}

pub fn write_reports(files: &[ReportFile], out_dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(out_dir).map_err(|e| ExperimentError::io(out_dir, e))?;
    for f in files {
        let path = out_dir.join(&f.name);
        fs::write(&path, &f.contents).map_err(|e| ExperimentError::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(
        task: &str,
        tok: &str,
        scheme: SchemeKind,
        depth: usize,
        seed: u64,
        mcc: f64,
    ) -> ExperimentRecord {
        let mut perturbed = BTreeMap::new();
        perturbed.insert("original".to_string(), mcc);
        perturbed.insert("end_substitution".to_string(), mcc / 2.0);
        ExperimentRecord {
            key: format!("{task}-{tok}-{scheme}-{depth}-{seed}"),
            task: task.into(),
            tokenizer: tok.into(),
            scheme,
            depth,
            seed,
            datasets: vec![],
            task_mcc: mcc,
            perturbed_mcc: perturbed,
            parameter_count: 0,
            runtime_secs: 0.0,
        }
    }

    #[test]
    fn by_scheme_rows_and_columns() {
        let mut recs = Vec::new();
        for depth in [4, 2] {
            for tok in ["bpe", "6mer", "1mer"] {
                recs.push(record("tf", tok, SchemeKind::Alibi, depth, 0, 0.5));
                recs.push(record("emp", tok, SchemeKind::Alibi, depth, 0, 0.25));
            }
        }
        let files = report(&recs, Layout::ByScheme).unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(files[0].name, "by_scheme_alibi.csv");
        let lines: Vec<&str> = files[0].contents.lines().collect();
        assert_eq!(lines[0], "depth,tokenizer,emp,tf");
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[1], "2,1mer,0.2500,0.5000");
        assert_eq!(lines[3], "2,bpe,0.2500,0.5000");
        assert_eq!(lines[4], "4,1mer,0.2500,0.5000");
    }

    #[test]
    fn single_record_one_row() {
        let recs = [record("tf", "3mer", SchemeKind::Rope, 2, 0, 0.9)];
        let f = report(&recs, Layout::ByScheme).unwrap();
        assert_eq!(f[0].contents.lines().count(), 2);
    }

    #[test]
    fn seeds_collapse_to_mean_and_range() {
        let recs = [
            record("tf", "3mer", SchemeKind::Sape, 2, 0, 0.5),
            record("tf", "3mer", SchemeKind::Sape, 2, 1, 0.7),
        ];
        let f = report(&recs, Layout::ByScheme).unwrap();
        assert_eq!(f[0].contents.lines().nth(1), Some("2,3mer,0.6000±0.2000"));
    }

    #[test]
    fn robustness_columns() {
        let recs = [
            record("tf", "3mer", SchemeKind::Rope, 2, 0, 0.8),
            record("tf", "3mer", SchemeKind::Sape, 2, 0, 0.4),
        ];
        let f = report(&recs, Layout::Robustness).unwrap();
        assert_eq!(f[0].name, "robustness_tf.csv");
        let lines: Vec<&str> = f[0].contents.lines().collect();
        assert_eq!(lines[0], "scheme,depth,tokenizer,original,end_substitution");
        assert_eq!(lines[1], "sape,2,3mer,0.4000,0.2000");
        assert_eq!(lines[2], "rope,2,3mer,0.8000,0.4000");
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(
            report(&[], Layout::ByScheme),
            Err(ExperimentError::NoRecords)
        ));
        assert!("bogus".parse::<Layout>().is_err());
    }
}
