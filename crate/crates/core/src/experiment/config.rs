use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::corpus::{MotifTaskParams, Perturbation};
use crate::position::{PositionalScheme, SchemeKind};
use crate::tokenize::TokenizerSpec;

/// Merges learned when a grid asks for a `bpe` tokenizer without a vocabulary
/// file: 4 bases + 4,092 merges = 4,096 DNA tokens (4,100 with specials).
pub const DEFAULT_BPE_MERGES: usize = 4092;

/// Which split the robustness perturbations are evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingOverrides {
    pub batch_size: usize,
    pub epochs: usize,
    /// Defaults to `nominal + 2` for k-mers and `nominal / 3 + 2` for BPE.
    pub max_len: Option<usize>,
    pub d_model: usize,
    /// Defaults to one head per 64 dimensions (12 at width 768).
    pub num_heads: Option<usize>,
    /// Defaults to `4 * d_model`.
    pub d_ff: Option<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// ALiBi slopes, one per head; defaults to the geometric rule.
    pub alibi_slopes: Option<Vec<f64>>,
    pub rope_base: Option<f64>,
}

impl Default for TrainingOverrides {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 3,
            max_len: None,
            d_model: 768,
            num_heads: None,
            d_ff: None,
            lr: 1e-4,
            weight_decay: 0.01,
            dropout: 0.1,
            alibi_slopes: None,
            rope_base: None,
        }
    }
}

impl TrainingOverrides {
    pub fn heads(&self) -> usize {
        self.num_heads
            .unwrap_or(if self.d_model.is_multiple_of(64) {
                self.d_model / 64
            } else {
                1
            })
    }

    pub fn scheme(&self, kind: SchemeKind) -> PositionalScheme {
        match kind {
            SchemeKind::Alibi => match &self.alibi_slopes {
                Some(slopes) => PositionalScheme::Alibi {
                    slopes: slopes.clone(),
                },
                None => PositionalScheme::with_defaults(kind, self.heads()),
            },
            SchemeKind::Rope => match self.rope_base {
                Some(base) => PositionalScheme::Rotary { base },
                None => PositionalScheme::with_defaults(kind, self.heads()),
            },
            SchemeKind::Sape => PositionalScheme::Sinusoidal,
        }
    }
}

pub fn default_perturbations() -> Vec<Perturbation> {
    vec![
        Perturbation::Original,
        Perturbation::EndSubstitution { n_per_end: 3 },
        Perturbation::HeadDeleteTailFill { n: 3 },
    ]
}

fn default_run_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_workers() -> usize {
    1
}

fn default_merges() -> usize {
    DEFAULT_BPE_MERGES
}

fn default_split() -> EvalSplit {
    EvalSplit::Test
}

/// A tokenizer × scheme × depth sweep over tasks and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub tasks: Vec<String>,
    /// `<k>mer`, `bpe:<vocab file>`, or `bpe` to learn one per dataset.
    pub tokenizers: Vec<String>,
    pub schemes: Vec<SchemeKind>,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub training: TrainingOverrides,
    #[serde(default = "default_perturbations")]
    pub perturbations: Vec<Perturbation>,
    #[serde(default)]
    pub perturb_seed: u64,
    #[serde(default = "default_split")]
    pub perturb_split: EvalSplit,
    /// Root holding one directory per task.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_run_dir")]
    pub run_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Class counts for tasks missing from the registry.
    #[serde(default)]
    pub num_classes: BTreeMap<String, usize>,
    /// Generator settings for the built-in `motif` task.
    #[serde(default)]
    pub motif: MotifTaskParams,
    #[serde(default = "default_merges")]
    pub bpe_merges: usize,
}

impl GridConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: GridConfig =
            serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.tasks.is_empty()
            || self.tokenizers.is_empty()
            || self.schemes.is_empty()
            || self.depths.is_empty()
            || self.seeds.is_empty()
        {
            return bad("tasks, tokenizers, schemes, depths and seeds must all be non-empty");
        }
        if self.perturbations.is_empty() {
            return bad("perturbations must be non-empty");
        }
        let mut labels: Vec<&str> = self.perturbations.iter().map(|p| p.label()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("each perturbation kind may appear once");
        }
        if self.depths.contains(&0) {
            return bad("depths must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        let t = &self.training;
        if t.batch_size == 0 || t.d_model == 0 {
            return bad("batch_size and d_model must be positive");
        }
        for desc in &self.tokenizers {
            if desc != "bpe" && !desc.starts_with("bpe:") {
                TokenizerSpec::from_descriptor(desc)
                    .map_err(|e| ExperimentError::Config(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Size of the cross product.
    pub fn num_cells(&self) -> usize {
        self.tasks.len()
            * self.tokenizers.len()
            * self.schemes.len()
            * self.depths.len()
            * self.seeds.len()
    }

    /// Every cell in coordinate order.
    pub fn cells(&self) -> Vec<CellCoords> {
        let mut out = Vec::with_capacity(self.num_cells());
        for task in &self.tasks {
            for tokenizer in &self.tokenizers {
                for &scheme in &self.schemes {
                    for &depth in &self.depths {
                        for &seed in &self.seeds {
                            out.push(CellCoords {
                                task: task.clone(),
                                tokenizer: tokenizer.clone(),
                                scheme,
                                depth,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellCoords {
    pub task: String,
    /// Tokenizer descriptor as written in the grid.
    pub tokenizer: String,
    pub scheme: SchemeKind,
    pub depth: usize,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"tasks":["motif"],"tokenizers":["1mer","3mer"],
        "schemes":["sape"],"depths":[2],"seeds":[0]}"#;

    #[test]
    fn defaults_fill_in() {
        let c = GridConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.num_cells(), 2);
        assert_eq!(c.cells().len(), 2);
        assert_eq!(c.training.epochs, 3);
        assert_eq!(c.training.batch_size, 32);
        assert_eq!(c.training.heads(), 12);
        assert_eq!(c.perturbations.len(), 3);
        assert_eq!(c.perturb_split, EvalSplit::Test);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("\"seeds\"", "\"sedes\":[1],\"seeds\"");
        assert!(matches!(
            GridConfig::from_json(&text),
            Err(ExperimentError::Config(_))
        ));
        let text = MINIMAL.replace("\"seeds\":[0]", "\"seeds\":[0],\"training\":{\"epoch\":1}");
        assert!(GridConfig::from_json(&text).is_err());
    }

    #[test]
    fn empty_lists_rejected() {
        let text = MINIMAL.replace("[\"sape\"]", "[]");
        assert!(GridConfig::from_json(&text).is_err());
        let text = MINIMAL.replace("\"3mer\"", "\"9mer\"");
        assert!(GridConfig::from_json(&text).is_err());
    }
}
