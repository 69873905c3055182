//! FedAvg rounds over simulated clients.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EncodedShard, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{
    train_local, weighted_combination, EvalConfig, EvalResult, EvalSet, FreezeMask, LayeredLm,
    LocalTrainStats, ModelDims, TrainConfig,
};
use crate::partition::{PartitionKind, PartitionManifest};
use crate::rng;
use crate::schedule::{build_schedule, FreezePlan, ScheduleParams};

/// Environment variable capping the number of clients trained concurrently.
pub const THREADS_ENV: &str = "FFDAPT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Centralized,
    Fdapt,
    Ffdapt,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Centralized => "centralized",
            Mode::Fdapt => "fdapt",
            Mode::Ffdapt => "ffdapt",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "centralized" | "central" => Ok(Mode::Centralized),
            "fdapt" => Ok(Mode::Fdapt),
            "ffdapt" => Ok(Mode::Ffdapt),
            other => Err(Error::invalid(format!("unknown mode `{other}`"))),
        }
    }
}

/// How the clients of one round are executed. All three give identical
/// aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionOrder {
    Serial,
    Reverse,
    #[default]
    Parallel,
}

impl FromStr for ExecutionOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "serial" => Ok(ExecutionOrder::Serial),
            "reverse" => Ok(ExecutionOrder::Reverse),
            "parallel" => Ok(ExecutionOrder::Parallel),
            other => Err(Error::invalid(format!("unknown execution order `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub mode: Mode,
    /// K. The centralized baseline runs `K × steps` per round to stay
    /// step-matched with the federated runs.
    pub clients: usize,
    pub rounds: usize,
    pub eval_every: usize,
    pub master_seed: u64,
    pub layers: usize,
    pub dim: usize,
    /// Defaults to `layers − 1`.
    pub epsilon: Option<usize>,
    pub gamma: f64,
    pub literal_pseudocode: bool,
    pub order: ExecutionOrder,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            mode: Mode::Ffdapt,
            clients: 8,
            rounds: 20,
            eval_every: 5,
            master_seed: 0,
            layers: 6,
            dim: 64,
            epsilon: None,
            gamma: 1.0,
            literal_pseudocode: false,
            order: ExecutionOrder::Parallel,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl FederationConfig {
    pub fn epsilon(&self) -> usize {
        self.epsilon.unwrap_or(self.layers.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 || self.rounds == 0 || self.eval_every == 0 {
            return Err(Error::invalid(
                "clients, rounds and eval_every must be at least 1",
            ));
        }
        if self.layers < 3 || self.dim == 0 {
            return Err(Error::invalid(format!(
                "model needs layers ≥ 3 and dim ≥ 1 (got {} and {})",
                self.layers, self.dim
            )));
        }
        if self.epsilon() >= self.layers {
            return Err(Error::invalid(format!(
                "epsilon {} must be below the layer count {}",
                self.epsilon(),
                self.layers
            )));
        }
        self.train.validate()
    }

    pub fn dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            layers: self.layers,
            dim: self.dim,
            vocab,
        }
    }

    /// Freeze plan for the given per-client sample counts: Algorithm-1 masks
    /// in FFDAPT mode, all-empty otherwise.
    pub fn plan(&self, samples: &[u64]) -> Result<FreezePlan> {
        let params = ScheduleParams {
            layers: self.layers,
            samples: samples.to_vec(),
            rounds: self.rounds,
            epsilon: if self.mode == Mode::Ffdapt {
                self.epsilon()
            } else {
                0
            },
            gamma: self.gamma,
            literal_pseudocode: self.literal_pseudocode,
        };
        build_schedule(&params)
    }
}

/// Sample-count weighted mean of client models, reduced in client order.
pub fn fedavg_aggregate(models: &[LayeredLm], samples: &[u64]) -> Result<LayeredLm> {
    if models.is_empty() || models.len() != samples.len() {
        return Err(Error::invalid(format!(
            "{} models with {} sample counts",
            models.len(),
            samples.len()
        )));
    }
    if samples.contains(&0) {
        return Err(Error::invalid("every client needs at least one sample"));
    }
    let total: u64 = samples.iter().sum();
    let weights: Vec<f64> = samples.iter().map(|&n| n as f64 / total as f64).collect();
    let refs: Vec<&LayeredLm> = models.iter().collect();
    weighted_combination(&refs, &weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub k: usize,
    pub frozen: FreezeMask,
    #[serde(flatten)]
    pub stats: LocalTrainStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub clients: Vec<ClientRecord>,
    /// Slowest client, i.e. the round time with clients in parallel.
    pub wall_time: f64,
    pub serial_wall_time: f64,
    pub backward_flops: u64,
    /// Sample-weighted mean of client training losses.
    pub mean_loss: f64,
    pub eval: Option<EvalResult>,
}

impl RoundRecord {
    pub fn frozen_fraction(&self, layers: usize) -> f64 {
        let frozen: usize = self.clients.iter().map(|c| c.frozen.len()).sum();
        frozen as f64 / (layers * self.clients.len()) as f64
    }
}

/// Everything one client needs for local training.
pub struct ClientData {
    pub samples: u64,
    pub shard: EncodedShard,
}

/// One synchronous round: every client trains a private copy of `global`
/// under its mask, then the copies are averaged.
pub fn run_round(
    global: &LayeredLm,
    clients: &[ClientData],
    masks: &[FreezeMask],
    config: &FederationConfig,
    round: usize,
    threads: usize,
) -> Result<(LayeredLm, RoundRecord)> {
    if masks.len() != clients.len() {
        return Err(Error::invalid(format!(
            "plan row has {} masks for {} clients",
            masks.len(),
            clients.len()
        )));
    }
    let train_one = |i: usize| -> Result<(LayeredLm, LocalTrainStats)> {
        let cfg = TrainConfig {
            seed: rng::client_stream_seed(config.master_seed, round, i + 1),
            ..config.train.clone()
        };
        train_local(global, &clients[i].shard, &masks[i], &cfg)
    };
    let k = clients.len();
    let outcomes: Vec<Result<(LayeredLm, LocalTrainStats)>> = match config.order {
        ExecutionOrder::Serial => (0..k).map(train_one).collect(),
        ExecutionOrder::Reverse => {
            let mut out: Vec<_> = (0..k).rev().map(train_one).collect();
            out.reverse();
            out
        }
        ExecutionOrder::Parallel => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.clamp(1, k))
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            pool.install(|| (0..k).into_par_iter().map(train_one).collect())
        }
    };
    let mut models = Vec::with_capacity(k);
    let mut records = Vec::with_capacity(k);
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let (model, stats) = outcome?;
        models.push(model);
        records.push(ClientRecord {
            k: i + 1,
            frozen: masks[i].clone(),
            stats,
        });
    }
    let samples: Vec<u64> = clients.iter().map(|c| c.samples).collect();
    let next = fedavg_aggregate(&models, &samples)?;
    if !next.is_finite() {
        return Err(Error::NonFinite(format!(
            "aggregated model after round {round}"
        )));
    }
    let total: u64 = samples.iter().sum();
    let record = RoundRecord {
        round,
        wall_time: records
            .iter()
            .map(|c| c.stats.wall_time)
            .fold(0.0, f64::max),
        serial_wall_time: records.iter().map(|c| c.stats.wall_time).sum(),
        backward_flops: records.iter().map(|c| c.stats.backward_flops).sum(),
        mean_loss: records
            .iter()
            .zip(&samples)
            .map(|(c, &n)| c.stats.mean_loss * n as f64)
            .sum::<f64>()
            / total as f64,
        clients: records,
        eval: None,
    };
    Ok((next, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: FederationConfig,
    pub dims: ModelDims,
    /// Per-client document counts used as aggregation weights (the single
    /// entry is the corpus size for the centralized baseline).
    pub samples: Vec<u64>,
    pub manifest: Option<String>,
    pub skew: Option<PartitionKind>,
    pub plan: Vec<Vec<FreezeMask>>,
    pub initial_eval: EvalResult,
    pub rounds: Vec<RoundRecord>,
    pub final_eval: EvalResult,
    pub checkpoint: Option<String>,
}

impl ExperimentResult {
    pub fn mean_round_time(&self) -> f64 {
        self.rounds.iter().map(|r| r.wall_time).sum::<f64>() / self.rounds.len() as f64
    }

    pub fn total_backward_flops(&self) -> u64 {
        self.rounds.iter().map(|r| r.backward_flops).sum()
    }

    pub fn rounds_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rounds {
            out.push_str(&serde_json::to_string(r).expect("round serializes"));
            out.push('\n');
        }
        out
    }

    /// Summary JSON: the result without the per-round records.
    pub fn summary_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("result serializes");
        v.as_object_mut().expect("object").remove("rounds");
        serde_json::to_string_pretty(&v).expect("value serializes")
    }

    pub fn from_files(summary: &str, rounds: &str) -> Result<Self> {
        let mut v: serde_json::Value = serde_json::from_str(summary)?;
        let rounds: Vec<serde_json::Value> = rounds
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        v.as_object_mut()
            .ok_or_else(|| Error::invalid("summary is not a JSON object"))?
            .insert("rounds".into(), serde_json::Value::Array(rounds));
        Ok(serde_json::from_value(v)?)
    }
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ffdl";

/// Write `summary.json`, `rounds.jsonl` and the final checkpoint into `dir`.
pub fn write_experiment(
    dir: &Path,
    result: &mut ExperimentResult,
    model: &LayeredLm,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    model.save(&ckpt)?;
    result.checkpoint = Some(CHECKPOINT_FILE.into());
    write_file(&dir.join(ROUNDS_FILE), &result.rounds_jsonl())?;
    write_file(&dir.join(SUMMARY_FILE), &result.summary_json())
}

pub fn read_experiment(dir: &Path) -> Result<ExperimentResult> {
    let read = |name: &str| {
        let p: PathBuf = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    ExperimentResult::from_files(&read(SUMMARY_FILE)?, &read(ROUNDS_FILE)?)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Client parallelism: `FFDAPT_THREADS` if set, else one thread per client.
pub fn thread_cap(clients: usize) -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(clients)
        .min(clients.max(1))
}

/// Inputs shared by every mode.
pub struct ExperimentData<'a> {
    pub train: &'a Corpus,
    pub heldout: &'a Corpus,
    pub vocab: &'a Vocabulary,
    /// Required for the federated modes.
    pub manifest: Option<&'a PartitionManifest>,
    pub manifest_path: Option<String>,
}

fn client_data(config: &FederationConfig, data: &ExperimentData) -> Result<Vec<ClientData>> {
    if config.mode == Mode::Centralized {
        let shard = EncodedShard::new(data.train.docs(), data.vocab);
        return Ok(vec![ClientData {
            samples: data.train.len() as u64,
            shard,
        }]);
    }
    let manifest = data.manifest.ok_or_else(|| {
        Error::invalid(format!("{} mode needs a partition manifest", config.mode))
    })?;
    if manifest.num_clients() != config.clients {
        return Err(Error::ConfigMismatch(vec![format!(
            "clients: config {} vs manifest {}",
            config.clients,
            manifest.num_clients()
        )]));
    }
    manifest
        .clients
        .iter()
        .map(|c| {
            if c.doc_ids.is_empty() {
                return Err(Error::EmptyShard);
            }
            let docs = data.train.select(&c.doc_ids)?;
            Ok(ClientData {
                samples: c.doc_ids.len() as u64,
                shard: EncodedShard::new(docs, data.vocab),
            })
        })
        .collect()
}

/// An experiment advanced one round at a time.
pub struct Experiment {
    config: FederationConfig,
    round_config: FederationConfig,
    dims: ModelDims,
    clients: Vec<ClientData>,
    samples: Vec<u64>,
    plan: Vec<Vec<FreezeMask>>,
    eval_set: EvalSet,
    threads: usize,
    global: LayeredLm,
    initial_eval: EvalResult,
    rounds: Vec<RoundRecord>,
    manifest_path: Option<String>,
    skew: Option<PartitionKind>,
}

impl Experiment {
    pub fn new(config: &FederationConfig, data: &ExperimentData) -> Result<Self> {
        config.validate()?;
        let dims = config.dims(data.vocab.len());
        let clients = client_data(config, data)?;
        let samples: Vec<u64> = clients.iter().map(|c| c.samples).collect();
        let plan = if config.mode == Mode::Centralized {
            FreezePlan::empty(1, config.rounds)
        } else {
            config.plan(&samples)?.rounds
        };
        let round_config = if config.mode == Mode::Centralized {
            FederationConfig {
                train: TrainConfig {
                    steps_per_epoch: config.train.steps_per_epoch * config.clients,
                    ..config.train.clone()
                },
                order: ExecutionOrder::Serial,
                ..config.clone()
            }
        } else {
            config.clone()
        };
        let heldout = EncodedShard::new(data.heldout.docs(), data.vocab);
        let eval_set = EvalSet::new(&heldout, &config.eval)?;
        let global = LayeredLm::init(dims, rng::derive_seed(&[config.master_seed, 0x1417]))?;
        let initial_eval = eval_set.evaluate(&global)?;
        Ok(Experiment {
            threads: thread_cap(clients.len()),
            config: config.clone(),
            round_config,
            dims,
            clients,
            samples,
            plan,
            eval_set,
            global,
            initial_eval,
            rounds: Vec::with_capacity(config.rounds),
            manifest_path: data.manifest_path.clone(),
            skew: data
                .manifest
                .filter(|_| config.mode != Mode::Centralized)
                .map(|m| m.spec.kind),
        })
    }

    pub fn is_done(&self) -> bool {
        self.rounds.len() == self.config.rounds
    }

    pub fn global(&self) -> &LayeredLm {
        &self.global
    }

    /// Run the next round; `None` once all rounds are done.
    pub fn step(&mut self) -> Result<Option<&RoundRecord>> {
        if self.is_done() {
            return Ok(None);
        }
        let t = self.rounds.len() + 1;
        let row = &self.plan[t - 1];
        let (next, mut record) = run_round(
            &self.global,
            &self.clients,
            row,
            &self.round_config,
            t,
            self.threads,
        )?;
        self.global = next;
        if t.is_multiple_of(self.config.eval_every) || t == self.config.rounds {
            record.eval = Some(self.eval_set.evaluate(&self.global)?);
        }
        self.rounds.push(record);
        Ok(self.rounds.last())
    }

    /// Result record and final global model. Panics if rounds remain.
    pub fn finish(self) -> (ExperimentResult, LayeredLm) {
        assert!(self.is_done(), "experiment has rounds left");
        let final_eval = self
            .rounds
            .last()
            .and_then(|r| r.eval)
            .expect("last round is evaluated");
        (
            ExperimentResult {
                config: self.config,
                dims: self.dims,
                samples: self.samples,
                manifest: self.manifest_path,
                skew: self.skew,
                plan: self.plan,
                initial_eval: self.initial_eval,
                rounds: self.rounds,
                final_eval,
                checkpoint: None,
            },
            self.global,
        )
    }
}

/// Run every round of one experiment. Returns the result record and the
/// final global model.
pub fn run_experiment(
    config: &FederationConfig,
    data: &ExperimentData,
) -> Result<(ExperimentResult, LayeredLm)> {
    run_experiment_with(config, data, |_| {})
}

/// As [`run_experiment`], calling `progress` after each round.
pub fn run_experiment_with(
    config: &FederationConfig,
    data: &ExperimentData,
    mut progress: impl FnMut(&RoundRecord),
) -> Result<(ExperimentResult, LayeredLm)> {
    let mut exp = Experiment::new(config, data)?;
    while let Some(record) = exp.step()? {
        progress(record);
    }
    Ok(exp.finish())
}
