use ffdapt::corpus::{build_vocab, synth_corpus, Corpus, SynthSpec, Vocabulary};
use ffdapt::federation::{run_experiment, ExecutionOrder, ExperimentData, FederationConfig, Mode};
use ffdapt::model::{EvalConfig, TrainConfig};
use ffdapt::partition::{partition, PartitionKind, PartitionManifest, PartitionSpec};

struct Fixture {
    train: Corpus,
    heldout: Corpus,
    vocab: Vocabulary,
    manifest: PartitionManifest,
}

fn fixture(kind: PartitionKind, k: usize) -> Fixture {
    let spec = SynthSpec {
        docs: 160,
        common_vocab: 120,
        rare_vocab: 400,
        ..SynthSpec::default()
    };
    let corpus = synth_corpus(&spec, 3).unwrap();
    let (train, heldout) = corpus.split_heldout(0.2, 1).unwrap();
    let vocab = build_vocab(train.docs(), 150, 1).unwrap();
    let manifest = partition(&train, &PartitionSpec::new(kind, k, 3.0, 5)).unwrap();
    Fixture {
        train,
        heldout,
        vocab,
        manifest,
    }
}

impl Fixture {
    fn data(&self) -> ExperimentData<'_> {
        ExperimentData {
            train: &self.train,
            heldout: &self.heldout,
            vocab: &self.vocab,
            manifest: Some(&self.manifest),
            manifest_path: None,
        }
    }
}

fn config(mode: Mode, clients: usize) -> FederationConfig {
    FederationConfig {
        mode,
        clients,
        rounds: 4,
        eval_every: 2,
        master_seed: 17,
        layers: 5,
        dim: 8,
        train: TrainConfig {
            batch_size: 8,
            steps_per_epoch: 4,
            context_radius: 3,
            ..TrainConfig::default()
        },
        eval: EvalConfig {
            batches: 2,
            batch_size: 32,
            context_radius: 3,
            ..EvalConfig::default()
        },
        ..FederationConfig::default()
    }
}

#[test]
fn ffdapt_with_zero_epsilon_equals_fdapt() {
    let f = fixture(PartitionKind::QuantitySkew, 3);
    let (_, base) = run_experiment(&config(Mode::Fdapt, 3), &f.data()).unwrap();
    let cfg = FederationConfig {
        epsilon: Some(0),
        ..config(Mode::Ffdapt, 3)
    };
    let (res, frozen) = run_experiment(&cfg, &f.data()).unwrap();
    assert!(res.plan.iter().flatten().all(|m| m.is_empty()));
    assert_eq!(base.to_checkpoint_bytes(), frozen.to_checkpoint_bytes());
}

#[test]
fn execution_order_does_not_change_the_model() {
    let f = fixture(PartitionKind::Iid, 4);
    let mut checkpoints = Vec::new();
    for order in [
        ExecutionOrder::Serial,
        ExecutionOrder::Reverse,
        ExecutionOrder::Parallel,
    ] {
        let cfg = FederationConfig {
            order,
            ..config(Mode::Ffdapt, 4)
        };
        let (res, model) = run_experiment(&cfg, &f.data()).unwrap();
        assert!(res.plan.iter().flatten().any(|m| !m.is_empty()));
        checkpoints.push(model.to_checkpoint_bytes());
    }
    assert_eq!(checkpoints[0], checkpoints[1]);
    assert_eq!(checkpoints[0], checkpoints[2]);
}

#[test]
fn reruns_give_identical_metrics() {
    let f = fixture(PartitionKind::SentenceLengthSkew, 3);
    let cfg = config(Mode::Ffdapt, 3);
    let (mut a, ma) = run_experiment(&cfg, &f.data()).unwrap();
    let (mut b, mb) = run_experiment(&cfg, &f.data()).unwrap();
    for r in a.rounds.iter_mut().chain(b.rounds.iter_mut()) {
        r.wall_time = 0.0;
        r.serial_wall_time = 0.0;
        for c in &mut r.clients {
            c.stats.wall_time = 0.0;
        }
    }
    assert_eq!(a, b);
    assert!(ma.bit_eq(&mb));
    assert_eq!(a.skew, Some(PartitionKind::SentenceLengthSkew));
}

#[test]
fn training_beats_the_initial_model() {
    let f = fixture(PartitionKind::VocabularySkew, 2);
    let cfg = FederationConfig {
        rounds: 8,
        train: TrainConfig {
            steps_per_epoch: 10,
            ..config(Mode::Fdapt, 2).train
        },
        ..config(Mode::Fdapt, 2)
    };
    let (res, _) = run_experiment(&cfg, &f.data()).unwrap();
    assert!(res.final_eval.mean_loss < res.initial_eval.mean_loss);
    assert_eq!(res.rounds.len(), 8);
}
