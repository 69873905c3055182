//! TOML experiment configuration and the data-preparation steps it drives.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocab, load_corpus, synth_corpus, Corpus, SynthSpec, Vocabulary};
use crate::error::{Error, Result};
use crate::federation::{ExecutionOrder, FederationConfig, Mode};
use crate::model::{EvalConfig, TrainConfig};
use crate::partition::{
    partition, validate_partition, PartitionKind, PartitionManifest, PartitionSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// JSON-lines corpus; when unset the `synth` corpus is generated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub synth_seed: u64,
    pub heldout_fraction: f64,
    pub split_seed: u64,
    pub vocab_size: usize,
    pub min_freq: usize,
    pub synth: SynthSpec,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            path: None,
            synth_seed: 0,
            heldout_fraction: 0.1,
            split_seed: 0,
            vocab_size: 2000,
            min_freq: 1,
            synth: SynthSpec {
                docs: 5000,
                ..SynthSpec::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub kind: PartitionKind,
    pub skew_factor: f64,
    pub seed: u64,
    pub rare_threshold: usize,
    /// Precomputed manifest; overrides the fields above.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection {
            kind: PartitionKind::Iid,
            skew_factor: 3.0,
            seed: 0,
            rare_threshold: 1,
            manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub layers: usize,
    pub dim: usize,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub context_radius: usize,
    pub mask_rate: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        ModelSection {
            layers: 6,
            dim: 64,
            learning_rate: t.learning_rate,
            local_epochs: t.local_epochs,
            batch_size: t.batch_size,
            steps_per_epoch: t.steps_per_epoch,
            context_radius: t.context_radius,
            mask_rate: t.mask_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    /// Defaults to `layers − 1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<usize>,
    pub gamma: f64,
    pub literal_pseudocode: bool,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            epsilon: None,
            gamma: 1.0,
            literal_pseudocode: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    pub mode: Mode,
    pub clients: usize,
    pub rounds: usize,
    pub eval_every: usize,
    pub master_seed: u64,
    pub order: ExecutionOrder,
    pub eval_batches: usize,
    pub eval_batch_size: usize,
    pub eval_seed: u64,
}

impl Default for FederationSection {
    fn default() -> Self {
        let f = FederationConfig::default();
        FederationSection {
            mode: f.mode,
            clients: f.clients,
            rounds: f.rounds,
            eval_every: f.eval_every,
            master_seed: f.master_seed,
            order: f.order,
            eval_batches: f.eval.batches,
            eval_batch_size: f.eval.batch_size,
            eval_seed: f.eval.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub corpus: CorpusSection,
    pub partition: PartitionSection,
    pub model: ModelSection,
    pub schedule: ScheduleSection,
    pub federation: FederationSection,
    pub output: OutputSection,
}

/// Keys that have no default value and are therefore absent from the
/// rendered default config.
const OPTIONAL_KEYS: [(&str, &str); 3] = [
    ("corpus.path", "unset: generate corpus.synth"),
    ("partition.manifest", "unset: partition the training split"),
    ("schedule.epsilon", "unset: model.layers - 1"),
];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Override one dotted key, e.g. `model.dim=32`. The value is read as a
    /// TOML literal, falling back to a bare string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut doc = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let parts: Vec<&str> = key.split('.').collect();
        let (last, path) = parts
            .split_last()
            .ok_or_else(|| Error::Config("empty key".into()))?;
        let mut table = &mut doc;
        for p in path {
            table = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{key}`: `{p}` is not a section")))?;
        }
        table.insert(last.to_string(), parsed);
        *self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("`{key}`: {e}")))?;
        Ok(())
    }

    /// Every key with its default, one `key = value` line each.
    pub fn default_keys() -> Vec<(String, String)> {
        fn walk(prefix: &str, t: &toml::Table, out: &mut Vec<(String, String)>) {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match v {
                    toml::Value::Table(inner) => walk(&key, inner, out),
                    other => out.push((key, other.to_string())),
                }
            }
        }
        let table = toml::Table::try_from(ExperimentConfig::default()).expect("defaults serialize");
        let mut out = Vec::new();
        walk("", &table, &mut out);
        out.extend(
            OPTIONAL_KEYS
                .iter()
                .map(|(k, v)| (k.to_string(), format!("({v})"))),
        );
        out.sort();
        out
    }

    pub fn train_config(&self) -> TrainConfig {
        let m = &self.model;
        TrainConfig {
            learning_rate: m.learning_rate,
            local_epochs: m.local_epochs,
            batch_size: m.batch_size,
            steps_per_epoch: m.steps_per_epoch,
            context_radius: m.context_radius,
            mask_rate: m.mask_rate,
            seed: 0,
        }
    }

    pub fn federation_config(&self) -> FederationConfig {
        let f = &self.federation;
        FederationConfig {
            mode: f.mode,
            clients: f.clients,
            rounds: f.rounds,
            eval_every: f.eval_every,
            master_seed: f.master_seed,
            layers: self.model.layers,
            dim: self.model.dim,
            epsilon: self.schedule.epsilon,
            gamma: self.schedule.gamma,
            literal_pseudocode: self.schedule.literal_pseudocode,
            order: f.order,
            train: self.train_config(),
            eval: EvalConfig {
                batches: f.eval_batches,
                batch_size: f.eval_batch_size,
                seed: f.eval_seed,
                context_radius: self.model.context_radius,
                mask_rate: self.model.mask_rate,
            },
        }
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            kind: self.partition.kind,
            num_clients: self.federation.clients,
            skew_factor: self.partition.skew_factor,
            seed: self.partition.seed,
            rare_threshold: self.partition.rare_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if !(c.heldout_fraction > 0.0 && c.heldout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "corpus.heldout_fraction {} must be in (0, 1)",
                c.heldout_fraction
            )));
        }
        c.synth
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.federation_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Corpus split and vocabulary ready for training.
pub struct PreparedData {
    pub train: Corpus,
    pub heldout: Corpus,
    pub vocab: Vocabulary,
}

pub fn load_or_synth(config: &ExperimentConfig) -> Result<Corpus> {
    match &config.corpus.path {
        Some(p) => load_corpus(p),
        None => synth_corpus(&config.corpus.synth, config.corpus.synth_seed),
    }
}

/// Load or synthesize the corpus, split off the held-out set and build the
/// vocabulary from the training split.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let corpus = load_or_synth(config)?;
    let (train, heldout) =
        corpus.split_heldout(config.corpus.heldout_fraction, config.corpus.split_seed)?;
    let vocab = build_vocab(
        train.docs(),
        config.corpus.vocab_size,
        config.corpus.min_freq,
    )?;
    Ok(PreparedData {
        train,
        heldout,
        vocab,
    })
}

/// The manifest named in the config, or a fresh partition of `train`.
pub fn resolve_manifest(config: &ExperimentConfig, train: &Corpus) -> Result<PartitionManifest> {
    let manifest = match &config.partition.manifest {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            PartitionManifest::from_json(&text)?
        }
        None => partition(train, &config.partition_spec())?,
    };
    if let Err(v) = validate_partition(&manifest, train) {
        let list: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        return Err(Error::invalid(format!(
            "invalid manifest: {}",
            list.join("; ")
        )));
    }
    Ok(manifest)
}
