use std::path::{Path, PathBuf};

use ffdapt::config::{load_or_synth, prepare_data, resolve_manifest, ExperimentConfig};
use ffdapt::corpus::{synth_corpus, EncodedShard};
use ffdapt::federation::{
    read_experiment, run_experiment_with, write_experiment, write_file, ExperimentData, Mode,
};
use ffdapt::metrics::{compare_runs, write_reports, SummaryRow};
use ffdapt::model::{EvalSet, LayeredLm};
use ffdapt::partition::{partition as split, validate_partition, PartitionKind, PartitionManifest};
use ffdapt::schedule::{build_schedule, ScheduleParams};
use ffdapt::Error;

use crate::ConfigArgs;

pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SKEW: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;
pub const EXIT_MISMATCH: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::InvalidParams(_) => EXIT_CONFIG,
            Error::Io { .. }
            | Error::MalformedLine { .. }
            | Error::DuplicateId(_)
            | Error::EmptyCorpus
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Checkpoint(_) => EXIT_IO,
            Error::SkewUnachievable(_) => EXIT_SKEW,
            Error::ConfigMismatch(_) => EXIT_MISMATCH,
            _ => EXIT_RUNTIME,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Every config key and its default, for `--help`.
pub fn config_help() -> String {
    let keys = ExperimentConfig::default_keys();
    let width = keys.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (TOML file via --config, or --set KEY=VALUE):\n");
    for (k, v) in keys {
        out.push_str(&format!("  {k:<width$}  {v}\n"));
    }
    out
}

fn load_config(args: &ConfigArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => CliError::from(e),
            other => CliError::config(other.to_string()),
        })?,
        None => ExperimentConfig::default(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v.trim())
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    Ok(cfg)
}

fn apply(cfg: &mut ExperimentConfig, key: &str, value: Option<String>) -> CliResult {
    if let Some(v) = value {
        cfg.set(key, &v)
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    Ok(())
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn validated(cfg: ExperimentConfig) -> CliResult<ExperimentConfig> {
    cfg.validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    Ok(cfg)
}

/// `<dir>/<stem>.config.toml` next to a file output.
fn sidecar(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.config.toml"))
}

fn ensure_parent(path: &Path) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

pub fn synth(args: &ConfigArgs, seed: Option<u64>, docs: Option<usize>, out: &Path) -> CliResult {
    let mut cfg = load_config(args)?;
    apply(&mut cfg, "corpus.synth_seed", seed.map(|s| s.to_string()))?;
    apply(&mut cfg, "corpus.synth.docs", docs.map(|d| d.to_string()))?;
    let cfg = validated(cfg)?;
    let corpus = synth_corpus(&cfg.corpus.synth, cfg.corpus.synth_seed)
        .map_err(|e| CliError::config(e.to_string()))?;
    ensure_parent(out)?;
    corpus.write_jsonl(out)?;
    write_file(&sidecar(out), &cfg.to_toml())?;
    println!("wrote {} documents to {}", corpus.len(), out.display());
    Ok(())
}

pub struct PartitionArgs {
    pub config: ConfigArgs,
    pub corpus: Option<PathBuf>,
    pub kind: Option<String>,
    pub clients: Option<usize>,
    pub skew: Option<f64>,
    pub seed: Option<u64>,
    pub whole_corpus: bool,
    pub out: PathBuf,
}

pub fn partition(args: &PartitionArgs) -> CliResult {
    let mut cfg = load_config(&args.config)?;
    apply(
        &mut cfg,
        "corpus.path",
        args.corpus.as_ref().map(|p| quoted(&p.to_string_lossy())),
    )?;
    // Accept the short aliases here; TOML wants the serde spelling.
    let kind = args.kind.as_ref().map(|k| {
        let canonical = k
            .parse::<PartitionKind>()
            .map(serde_kind)
            .unwrap_or_else(|_| k.clone());
        quoted(&canonical)
    });
    apply(&mut cfg, "partition.kind", kind)?;
    apply(
        &mut cfg,
        "federation.clients",
        args.clients.map(|k| k.to_string()),
    )?;
    apply(
        &mut cfg,
        "partition.skew_factor",
        args.skew.map(|s| format!("{s:?}")),
    )?;
    apply(&mut cfg, "partition.seed", args.seed.map(|s| s.to_string()))?;
    let cfg = validated(cfg)?;
    let spec = cfg.partition_spec();
    spec.validate()
        .map_err(|e| CliError::config(e.to_string()))?;

    let corpus = if args.whole_corpus {
        load_or_synth(&cfg)?
    } else {
        prepare_data(&cfg)?.train
    };
    let manifest = split(&corpus, &spec)?;
    if let Err(v) = validate_partition(&manifest, &corpus) {
        let list: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        return Err(CliError {
            code: EXIT_RUNTIME,
            message: format!("refusing to write an invalid manifest: {}", list.join("; ")),
        });
    }
    ensure_parent(&args.out)?;
    write_file(&args.out, &manifest.to_json())?;
    write_file(&sidecar(&args.out), &cfg.to_toml())?;
    let counts: Vec<String> = manifest
        .doc_counts()
        .iter()
        .map(|c| c.to_string())
        .collect();
    println!(
        "kind {} K={} counts {}",
        spec.kind,
        spec.num_clients,
        counts.join("/")
    );
    print!("{}", manifest.skew);
    Ok(())
}

fn serde_kind(k: PartitionKind) -> String {
    serde_json::to_value(k)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub struct ScheduleArgs {
    pub config: ConfigArgs,
    pub layers: Option<usize>,
    pub samples: Vec<u64>,
    pub manifest: Option<PathBuf>,
    pub rounds: Option<usize>,
    pub epsilon: Option<usize>,
    pub gamma: Option<f64>,
    pub literal_pseudocode: bool,
    pub out: Option<PathBuf>,
}

pub fn schedule(args: &ScheduleArgs) -> CliResult {
    let mut cfg = load_config(&args.config)?;
    apply(&mut cfg, "model.layers", args.layers.map(|v| v.to_string()))?;
    apply(
        &mut cfg,
        "federation.rounds",
        args.rounds.map(|v| v.to_string()),
    )?;
    apply(
        &mut cfg,
        "schedule.epsilon",
        args.epsilon.map(|v| v.to_string()),
    )?;
    apply(
        &mut cfg,
        "schedule.gamma",
        args.gamma.map(|v| format!("{v:?}")),
    )?;
    if args.literal_pseudocode {
        cfg.schedule.literal_pseudocode = true;
    }
    let samples = match &args.manifest {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            PartitionManifest::from_json(&text)?.doc_counts()
        }
        None if !args.samples.is_empty() => args.samples.clone(),
        None => vec![1; cfg.federation.clients],
    };
    let params = ScheduleParams {
        layers: cfg.model.layers,
        samples,
        rounds: cfg.federation.rounds,
        epsilon: cfg
            .schedule
            .epsilon
            .unwrap_or(cfg.model.layers.saturating_sub(1)),
        gamma: cfg.schedule.gamma,
        literal_pseudocode: cfg.schedule.literal_pseudocode,
    };
    let plan = build_schedule(&params).map_err(|e| CliError::config(e.to_string()))?;
    let json = plan.to_json();
    match &args.out {
        Some(out) => {
            ensure_parent(out)?;
            write_file(out, &format!("{json}\n"))?;
            write_file(&sidecar(out), &cfg.to_toml())?;
            println!(
                "N_k = {:?}; wrote {} rounds to {}",
                plan.counts,
                plan.rounds.len(),
                out.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

pub fn pretrain(
    args: &ConfigArgs,
    mode: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> CliResult {
    let mut cfg = load_config(args)?;
    if let Some(m) = mode {
        let m: Mode = m
            .parse()
            .map_err(|e: Error| CliError::config(e.to_string()))?;
        cfg.federation.mode = m;
    }
    apply(
        &mut cfg,
        "federation.master_seed",
        seed.map(|s| s.to_string()),
    )?;
    if let Some(o) = out {
        cfg.output.dir = o;
    }
    let cfg = validated(cfg)?;
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_file(&dir.join("config.toml"), &cfg.to_toml())?;

    let prepared = prepare_data(&cfg)?;
    let fed = cfg.federation_config();
    let manifest = if fed.mode == Mode::Centralized {
        None
    } else {
        let m = resolve_manifest(&cfg, &prepared.train)?;
        write_file(&dir.join("manifest.json"), &m.to_json())?;
        Some(m)
    };
    let data = ExperimentData {
        train: &prepared.train,
        heldout: &prepared.heldout,
        vocab: &prepared.vocab,
        manifest: manifest.as_ref(),
        manifest_path: manifest.as_ref().map(|_| "manifest.json".to_string()),
    };
    println!(
        "{} K={} T={} vocab={} train={} heldout={}",
        fed.mode,
        fed.clients,
        fed.rounds,
        prepared.vocab.len(),
        prepared.train.len(),
        prepared.heldout.len()
    );
    let (mut result, model) = run_experiment_with(&fed, &data, |r| {
        let eval = r
            .eval
            .map(|e| format!("  eval {:.4}", e.mean_loss))
            .unwrap_or_default();
        println!(
            "round {:>3}/{}  loss {:.4}  time {:.3}s  frozen {:.1}%{eval}",
            r.round,
            fed.rounds,
            r.mean_loss,
            r.wall_time,
            100.0 * r.frozen_fraction(fed.layers)
        );
    })?;
    write_experiment(&dir, &mut result, &model)?;
    println!(
        "final loss {:.4} perplexity {:.2}; results in {}",
        result.final_eval.mean_loss,
        result.final_eval.perplexity,
        dir.display()
    );
    Ok(())
}

pub fn evaluate(args: &ConfigArgs, checkpoint: &Path) -> CliResult {
    let cfg = validated(load_config(args)?)?;
    let model = LayeredLm::load(checkpoint)?;
    let prepared = prepare_data(&cfg)?;
    if model.dims().vocab != prepared.vocab.len() {
        return Err(CliError::config(format!(
            "checkpoint vocab {} does not match the configured vocabulary ({})",
            model.dims().vocab,
            prepared.vocab.len()
        )));
    }
    let heldout = EncodedShard::new(prepared.heldout.docs(), &prepared.vocab);
    let eval = EvalSet::new(&heldout, &cfg.federation_config().eval)?.evaluate(&model)?;
    println!("{}", serde_json::to_string(&eval).map_err(Error::from)?);
    Ok(())
}

pub fn compare(fdapt: &Path, ffdapt: &Path, out: &Path) -> CliResult {
    let a = read_experiment(fdapt)?;
    let b = read_experiment(ffdapt)?;
    let report = compare_runs(&a, &b)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let rows = [
        SummaryRow::new("fdapt", &a, None),
        SummaryRow::new("ffdapt", &b, Some(&report)),
    ];
    write_reports(&rows, &[("fdapt", &a), ("ffdapt", &b)], out)?;
    write_file(
        &out.join("efficiency.json"),
        &serde_json::to_string_pretty(&report).map_err(Error::from)?,
    )?;
    println!(
        "I_flops {:.3}%  I_wall {:.3}% (T {:.4}s, T_F {:.4}s)  I_wall(parallel) {:.3}%",
        report.i_flops, report.i_wall, report.t_mean, report.t_f_mean, report.i_wall_parallel
    );
    Ok(())
}
