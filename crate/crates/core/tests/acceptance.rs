//! Acceptance suite. Every criterion runs inside one test so the wall-clock
//! measurement is not disturbed by concurrently running tests; each prints a
//! single PASS/FAIL line.

use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use ffdapt::config::{prepare_data, resolve_manifest, ExperimentConfig, PreparedData};
use ffdapt::corpus::{
    build_vocab, synth_corpus, Corpus, EncodedShard, MlmBatch, SynthSpec, MASK, PAD,
};
use ffdapt::federation::{
    fedavg_aggregate, run_experiment, ExecutionOrder, Experiment, ExperimentData, ExperimentResult,
    FederationConfig, Mode,
};
use ffdapt::metrics::{compare_runs, efficiency_improvement, predicted_flops_improvement};
use ffdapt::model::{flops_estimate, train_local, FreezeMask, LayeredLm, ModelDims, TrainConfig};
use ffdapt::partition::{
    measure_skew, partition, validate_partition, PartitionKind, PartitionManifest, PartitionSpec,
};
use ffdapt::rng;
use ffdapt::schedule::{build_schedule, ScheduleParams};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn run(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = started.elapsed().as_secs_f64();
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    report(&format!(
        "[{tag}] criterion {id:>2} {name}: {detail} ({secs:.1}s)"
    ));
    ok
}

// ---------------------------------------------------------------------------
// 1-2: freeze schedule
// ---------------------------------------------------------------------------

/// Line-by-line reading of the schedule pseudocode. `offset` is added to
/// `end = start + N_k`: 0 is the verbatim text, -1 freezes exactly `N_k`.
fn pseudocode_plan(
    layers: usize,
    samples: &[u64],
    rounds: usize,
    epsilon: usize,
    gamma: f64,
    offset: i64,
) -> Vec<Vec<Vec<usize>>> {
    let n: u64 = samples.iter().sum();
    let big_n = layers as i64;
    let mut start: i64 = 1;
    let mut plan = Vec::new();
    for _t in 1..=rounds {
        let mut row = Vec::new();
        for &n_k in samples {
            // ⌈n_k / n · N⌉ by counting up
            let mut ceil = 0u64;
            while ceil * n < n_k * layers as u64 {
                ceil += 1;
            }
            let scaled = (ceil as f64 * gamma + 0.5).floor() as i64;
            let n_k_frozen = scaled.min(epsilon as i64).min(big_n - 1).max(0);
            let mut end = start + n_k_frozen + offset;
            let mut frozen = Vec::new();
            if end <= big_n {
                frozen.extend(start..=end);
            } else {
                end -= big_n;
                frozen.extend(start..=big_n);
                frozen.extend(1..=end);
            }
            start = end + 1;
            if start > big_n {
                start -= big_n;
            }
            let mut frozen: Vec<usize> = frozen.into_iter().map(|x| x as usize).collect();
            frozen.sort_unstable();
            row.push(frozen);
        }
        plan.push(row);
    }
    plan
}

fn plan_as_vecs(params: &ScheduleParams) -> Vec<Vec<Vec<usize>>> {
    build_schedule(params)
        .expect("valid params")
        .rounds
        .iter()
        .map(|row| row.iter().map(|m| m.iter().collect()).collect())
        .collect()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut r = rng::stream(0xa1);
    let gammas = [0.25, 0.5, 1.0, 2.0];
    for case in 0..50 {
        let layers = r.random_range(3..=12);
        let k = r.random_range(1..=16);
        let samples: Vec<u64> = (0..k).map(|_| r.random_range(1..=1000)).collect();
        let params = ScheduleParams {
            layers,
            samples: samples.clone(),
            rounds: r.random_range(1..=20),
            epsilon: r.random_range(0..layers),
            gamma: gammas[r.random_range(0..gammas.len())],
            literal_pseudocode: false,
        };
        let oracle = pseudocode_plan(
            layers,
            &samples,
            params.rounds,
            params.epsilon,
            params.gamma,
            -1,
        );
        ensure!(
            plan_as_vecs(&params) == oracle,
            "case {case} differs: {params:?}"
        );
        let literal = ScheduleParams {
            literal_pseudocode: true,
            ..params.clone()
        };
        let verbatim = pseudocode_plan(
            layers,
            &samples,
            params.rounds,
            params.epsilon,
            params.gamma,
            0,
        );
        ensure!(
            plan_as_vecs(&literal) == verbatim,
            "case {case} literal mode differs"
        );
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 1.0, "took {secs:.3}s");
    Ok(format!(
        "50/50 random parameter sets match the interpreter in {:.1} ms",
        secs * 1e3
    ))
}

fn criterion_2() -> Outcome {
    let params = ScheduleParams {
        layers: 6,
        samples: vec![75, 25],
        rounds: 2,
        epsilon: 5,
        gamma: 1.0,
        literal_pseudocode: false,
    };
    let expected = vec![
        vec![vec![1, 2, 3, 4, 5], vec![1, 6]],
        vec![vec![2, 3, 4, 5, 6], vec![1, 2]],
    ];
    let got = plan_as_vecs(&params);
    ensure!(got == expected, "got {got:?}");
    Ok("{1..5},{6,1} / {2..6},{1,2}".into())
}

// ---------------------------------------------------------------------------
// 3-5: model and aggregation
// ---------------------------------------------------------------------------

fn small_corpus(docs: usize, seed: u64) -> Corpus {
    let spec = SynthSpec {
        docs,
        common_vocab: 150,
        rare_vocab: 500,
        ..SynthSpec::default()
    };
    synth_corpus(&spec, seed).expect("synthetic corpus")
}

fn group_bytes(m: &LayeredLm, g: usize) -> Vec<u8> {
    m.group(g).values().flat_map(|v| v.to_le_bytes()).collect()
}

fn criterion_3() -> Outcome {
    let corpus = small_corpus(150, 31);
    let vocab = build_vocab(corpus.docs(), 200, 1).map_err(|e| e.to_string())?;
    let shard = EncodedShard::new(corpus.docs(), &vocab);
    let mut r = rng::stream(0xa3);
    let mut frozen_total = 0;
    for run in 0..20u64 {
        let dims = ModelDims {
            layers: r.random_range(3..=8),
            dim: r.random_range(2..=16),
            vocab: vocab.len(),
        };
        let model = LayeredLm::init(dims, run).map_err(|e| e.to_string())?;
        let mask = FreezeMask::from_indices(
            (1..=dims.layers)
                .filter(|_| r.random_bool(0.4))
                .take(dims.layers - 1),
        );
        let cfg = TrainConfig {
            steps_per_epoch: 6,
            batch_size: 8,
            context_radius: 3,
            seed: run,
            ..TrainConfig::default()
        };
        let (after, _) = train_local(&model, &shard, &mask, &cfg).map_err(|e| e.to_string())?;
        for g in mask.iter() {
            ensure!(
                group_bytes(&after, g) == group_bytes(&model, g),
                "run {run}: frozen group {g} changed"
            );
            frozen_total += 1;
        }
    }
    Ok(format!(
        "{frozen_total} frozen groups byte-identical across 20 runs"
    ))
}

/// Neumaier-compensated Σ n_k x_k / n.
fn oracle_weighted_mean(xs: &[f64], n: &[u64]) -> f64 {
    let total: u64 = n.iter().sum();
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (&x, &w) in xs.iter().zip(n) {
        let term = x * w as f64;
        let t = sum + term;
        comp += if sum.abs() >= term.abs() {
            (sum - t) + term
        } else {
            (term - t) + sum
        };
        sum = t;
    }
    (sum + comp) / total as f64
}

fn criterion_4() -> Outcome {
    let mut r = rng::stream(0xa4);
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let k = r.random_range(1..=16);
        let dims = ModelDims {
            layers: r.random_range(3..=5),
            dim: r.random_range(1..=4),
            vocab: r.random_range(4..=10),
        };
        let models: Vec<LayeredLm> = (0..k)
            .map(|_| {
                let flat: Vec<f64> = (0..dims.param_count())
                    .map(|_| r.random_range(0.5..2.0))
                    .collect();
                LayeredLm::unflatten(dims, &flat).expect("shape")
            })
            .collect();
        let n: Vec<u64> = (0..k).map(|_| r.random_range(1..=500)).collect();
        let total: u64 = n.iter().sum();
        let weight_sum: f64 = n.iter().map(|&x| x as f64 / total as f64).sum();
        ensure!(
            (weight_sum - 1.0).abs() <= 1e-15,
            "case {case}: weights sum to {weight_sum}"
        );
        let agg = fedavg_aggregate(&models, &n)
            .map_err(|e| e.to_string())?
            .flatten();
        let flats: Vec<Vec<f64>> = models.iter().map(|m| m.flatten()).collect();
        for (i, &a) in agg.iter().enumerate() {
            let xs: Vec<f64> = flats.iter().map(|f| f[i]).collect();
            let o = oracle_weighted_mean(&xs, &n);
            let rel = (a - o).abs() / o.abs();
            worst = worst.max(rel);
            ensure!(
                rel <= 1e-12,
                "case {case} param {i}: {a} vs {o} (rel {rel:e})"
            );
        }
        let same = vec![models[0].clone(); k];
        let out = fedavg_aggregate(&same, &n).map_err(|e| e.to_string())?;
        ensure!(
            out.bit_eq(&models[0]),
            "case {case}: identical models not a fixed point"
        );
    }
    Ok(format!(
        "100 instances, worst relative error {worst:.2e}; identity bit-exact"
    ))
}

fn random_batch<R: Rng>(r: &mut R, vocab: usize, window: usize, rows: usize) -> MlmBatch {
    let mut ids = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..rows {
        let mut row: Vec<u32> = (0..window)
            .map(|_| match r.random_range(0..6) {
                0 => PAD,
                1 => MASK,
                _ => r.random_range(3..vocab as u32),
            })
            .collect();
        row[window / 2] = MASK;
        ids.push(row);
        targets.push(r.random_range(1..vocab as u32));
    }
    MlmBatch::from_rows(&ids, &targets).expect("batch")
}

fn criterion_5() -> Outcome {
    const STEP: f64 = 1e-6;
    let mut r = rng::stream(0xa5);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for case in 0..20u64 {
        let dims = ModelDims {
            layers: r.random_range(3..=6),
            dim: r.random_range(1..=8),
            vocab: r.random_range(4..=32),
        };
        let mut model = LayeredLm::init(dims, case).map_err(|e| e.to_string())?;
        for g in 1..=dims.layers {
            model
                .group_mut(g)
                .weight
                .iter_mut()
                .for_each(|w| *w *= 10.0);
            for b in model.group_mut(g).bias.iter_mut() {
                *b = r.random_range(-0.3..0.3);
            }
        }
        let window = 2 * r.random_range(1..=3) + 1;
        let rows = r.random_range(1..=4);
        let batch = random_batch(&mut r, dims.vocab, window, rows);
        let mask = if case < 4 {
            FreezeMask::none()
        } else {
            let cap = r.random_range(0..dims.layers);
            FreezeMask::from_indices((1..=dims.layers).filter(|_| r.random_bool(0.5)).take(cap))
        };
        let (_, cache) = model.forward(&batch).map_err(|e| e.to_string())?;
        let analytic = model
            .backward(&cache, &mask)
            .map_err(|e| e.to_string())?
            .flatten();
        let mut flat = model.flatten();
        let mut at = 0;
        for g in 1..=dims.layers {
            let (w, b) = dims.group_shape(g);
            for i in at..at + w + b {
                if mask.contains(g) {
                    ensure!(
                        analytic[i] == 0.0,
                        "case {case}: frozen group {g} has a gradient"
                    );
                    continue;
                }
                let orig = flat[i];
                flat[i] = orig + STEP;
                let up = LayeredLm::unflatten(dims, &flat)
                    .expect("shape")
                    .forward(&batch)
                    .expect("fwd")
                    .0;
                flat[i] = orig - STEP;
                let down = LayeredLm::unflatten(dims, &flat)
                    .expect("shape")
                    .forward(&batch)
                    .expect("fwd")
                    .0;
                flat[i] = orig;
                let numeric = (up - down) / (2.0 * STEP);
                let rel =
                    (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-3);
                worst = worst.max(rel);
                checked += 1;
                ensure!(
                    rel <= 1e-4,
                    "case {case} group {g}: {} vs {numeric} (rel {rel:e})",
                    analytic[i]
                );
            }
            at += w + b;
        }
    }
    Ok(format!(
        "{checked} parameters over 20 models, worst relative error {worst:.2e}"
    ))
}

// ---------------------------------------------------------------------------
// 6-8: federated runs
// ---------------------------------------------------------------------------

fn data<'a>(p: &'a PreparedData, manifest: &'a PartitionManifest) -> ExperimentData<'a> {
    ExperimentData {
        train: &p.train,
        heldout: &p.heldout,
        vocab: &p.vocab,
        manifest: Some(manifest),
        manifest_path: None,
    }
}

fn criterion_6() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.corpus.synth = SynthSpec {
        docs: 400,
        ..SynthSpec::default()
    };
    cfg.corpus.vocab_size = 500;
    cfg.model.dim = 16;
    cfg.model.steps_per_epoch = 5;
    cfg.federation.clients = 4;
    cfg.federation.rounds = 6;
    cfg.partition.kind = PartitionKind::QuantitySkew;
    let prepared = prepare_data(&cfg).map_err(|e| e.to_string())?;
    let manifest = resolve_manifest(&cfg, &prepared.train).map_err(|e| e.to_string())?;
    let d = data(&prepared, &manifest);

    let base = FederationConfig {
        mode: Mode::Fdapt,
        ..cfg.federation_config()
    };
    let zero = FederationConfig {
        mode: Mode::Ffdapt,
        epsilon: Some(0),
        ..cfg.federation_config()
    };
    let (_, a) = run_experiment(&base, &d).map_err(|e| e.to_string())?;
    let (_, b) = run_experiment(&zero, &d).map_err(|e| e.to_string())?;
    ensure!(
        a.to_checkpoint_bytes() == b.to_checkpoint_bytes(),
        "FFDAPT(eps=0) checkpoint differs from FDAPT"
    );

    let mut bytes = Vec::new();
    for order in [
        ExecutionOrder::Serial,
        ExecutionOrder::Reverse,
        ExecutionOrder::Parallel,
    ] {
        let c = FederationConfig {
            mode: Mode::Ffdapt,
            order,
            ..cfg.federation_config()
        };
        let (_, m) = run_experiment(&c, &d).map_err(|e| e.to_string())?;
        bytes.push(m.to_checkpoint_bytes());
    }
    ensure!(
        bytes[0] == bytes[1] && bytes[0] == bytes[2],
        "aggregates depend on execution order"
    );
    Ok("checkpoints byte-equal; serial, reverse and parallel agree".into())
}

/// N=6, d=64, V=2000, T=20 on a 5,000-document synthetic corpus.
fn reference_config() -> ExperimentConfig {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.model.layers, 6);
    assert_eq!(cfg.model.dim, 64);
    assert_eq!(cfg.corpus.vocab_size, 2000);
    assert_eq!(cfg.federation.rounds, 20);
    assert_eq!(cfg.corpus.synth.docs, 5000);
    cfg
}

fn criterion_7() -> Outcome {
    let mut cfg = reference_config();
    cfg.federation.clients = 8;
    cfg.partition.kind = PartitionKind::Iid;
    cfg.schedule.gamma = 1.0;
    cfg.schedule.epsilon = Some(5);
    cfg.federation.order = ExecutionOrder::Serial;
    let prepared = prepare_data(&cfg).map_err(|e| e.to_string())?;
    ensure!(
        prepared.vocab.len() == 2000,
        "vocab has {} entries",
        prepared.vocab.len()
    );
    let manifest = resolve_manifest(&cfg, &prepared.train).map_err(|e| e.to_string())?;
    let d = data(&prepared, &manifest);

    // Rounds of the two runs alternate so slow drift in machine load hits
    // both equally.
    let fd_cfg = FederationConfig {
        mode: Mode::Fdapt,
        ..cfg.federation_config()
    };
    let ff_cfg = FederationConfig {
        mode: Mode::Ffdapt,
        ..cfg.federation_config()
    };
    let mut fd = Experiment::new(&fd_cfg, &d).map_err(|e| e.to_string())?;
    let mut ff = Experiment::new(&ff_cfg, &d).map_err(|e| e.to_string())?;
    while !fd.is_done() {
        fd.step().map_err(|e| e.to_string())?;
        ff.step().map_err(|e| e.to_string())?;
    }
    let (fd, _) = fd.finish();
    let (ff, _) = ff.finish();
    let report = compare_runs(&fd, &ff).map_err(|e| e.to_string())?;
    let predicted = predicted_flops_improvement(ff.dims, &ff.config.train, &ff.plan)
        .map_err(|e| e.to_string())?;
    let independent = independent_flops_improvement(&ff);
    ensure!(
        report.i_flops == predicted && report.i_flops == independent,
        "I_flops {} vs predicted {predicted} / {independent}",
        report.i_flops
    );
    ensure!(
        report.i_wall > 0.0,
        "I_wall {:.3}% not positive",
        report.i_wall
    );
    ensure!(
        (report.i_wall - report.i_flops).abs() <= 0.5 * report.i_flops,
        "I_wall {:.3}% outside ±50% of I_flops {:.3}%",
        report.i_wall,
        report.i_flops
    );
    Ok(format!(
        "I_flops {:.3}% = prediction; I_wall {:.3}% (T {:.3}s, T_F {:.3}s per round)",
        report.i_flops, report.i_wall, report.t_mean, report.t_f_mean
    ))
}

/// Backward work summed group by group from the frozen sets alone.
fn independent_flops_improvement(run: &ExperimentResult) -> f64 {
    let dims = run.dims;
    let train = &run.config.train;
    let window = 2 * train.context_radius + 1;
    let examples = (train.batch_size * train.local_epochs * train.steps_per_epoch) as u64;
    let (d, v, w) = (dims.dim as u64, dims.vocab as u64, window as u64);
    let hidden = (dims.layers - 2) as u64;
    let fixed = v + d * v + hidden * (d * d + d);
    let group_cost = |g: usize| -> u64 {
        if g == 1 {
            w * d
        } else if g == dims.layers {
            d * v + v
        } else {
            d * d + d
        }
    };
    let full: u64 = fixed + (1..=dims.layers).map(group_cost).sum::<u64>();
    let mut t = 0u64;
    let mut t_f = 0u64;
    for mask in run.plan.iter().flatten() {
        t += full * examples;
        t_f += (full - mask.iter().map(group_cost).sum::<u64>()) * examples;
    }
    debug_assert_eq!(
        t,
        run.plan
            .iter()
            .flatten()
            .map(|_| flops_estimate(
                dims,
                window,
                &FreezeMask::none(),
                train.batch_size,
                train.total_steps()
            )
            .backward)
            .sum::<u64>()
    );
    (t as f64 - t_f as f64) / t_f as f64 * 100.0
}

fn criterion_8() -> Outcome {
    let mut cfg = reference_config();
    cfg.federation.clients = 2;
    cfg.partition.kind = PartitionKind::Iid;
    let prepared = prepare_data(&cfg).map_err(|e| e.to_string())?;
    let mut losses = [[0.0f64; 3]; 3];
    for (s, seed) in [0u64, 1, 2].into_iter().enumerate() {
        cfg.federation.master_seed = seed;
        cfg.partition.seed = seed;
        let manifest = resolve_manifest(&cfg, &prepared.train).map_err(|e| e.to_string())?;
        let d = data(&prepared, &manifest);
        for (m, mode) in [Mode::Centralized, Mode::Fdapt, Mode::Ffdapt]
            .into_iter()
            .enumerate()
        {
            let c = FederationConfig {
                mode,
                ..cfg.federation_config()
            };
            let (res, _) = run_experiment(&c, &d).map_err(|e| e.to_string())?;
            ensure!(
                res.final_eval.mean_loss < res.initial_eval.mean_loss,
                "seed {seed} {mode}: {:.4} does not beat untrained {:.4}",
                res.final_eval.mean_loss,
                res.initial_eval.mean_loss
            );
            losses[m][s] = res.final_eval.mean_loss;
        }
    }
    let mean = |m: usize| losses[m].iter().sum::<f64>() / 3.0;
    let (central, fdapt, ffdapt) = (mean(0), mean(1), mean(2));
    let gap_fd = (fdapt - central).abs() / central;
    let gap_ff = (ffdapt - fdapt).abs() / fdapt;
    ensure!(
        gap_fd <= 0.05,
        "FDAPT {fdapt:.4} vs centralized {central:.4}: {:.2}%",
        gap_fd * 100.0
    );
    ensure!(
        gap_ff <= 0.05,
        "FFDAPT {ffdapt:.4} vs FDAPT {fdapt:.4}: {:.2}%",
        gap_ff * 100.0
    );
    Ok(format!(
        "loss centralized {central:.4}, FDAPT {fdapt:.4} ({:.2}%), FFDAPT {ffdapt:.4} ({:.2}%)",
        gap_fd * 100.0,
        gap_ff * 100.0
    ))
}

// ---------------------------------------------------------------------------
// 9-10: partitioners and the efficiency formula
// ---------------------------------------------------------------------------

/// Geometric targets with largest-remainder rounding, computed directly.
fn oracle_targets(n: usize, k: usize, skew: f64) -> Vec<usize> {
    let raw: Vec<f64> = (1..=k)
        .map(|i| skew.powf((k - i) as f64 / (k - 1) as f64))
        .collect();
    let sum: f64 = raw.iter().sum();
    let exact: Vec<f64> = raw.iter().map(|x| x / sum * n as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = n - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

fn criterion_9() -> Outcome {
    let spec = SynthSpec {
        docs: 2000,
        sentence_len_min: 4.0,
        sentence_len_max: 30.0,
        ..SynthSpec::default()
    };
    let corpus = synth_corpus(&spec, 7).map_err(|e| e.to_string())?;
    let (k, skew) = (8, 3.0);
    let mut details = Vec::new();
    for kind in [
        PartitionKind::QuantitySkew,
        PartitionKind::SentenceLengthSkew,
        PartitionKind::VocabularySkew,
    ] {
        let m =
            partition(&corpus, &PartitionSpec::new(kind, k, skew, 0)).map_err(|e| e.to_string())?;
        ensure!(
            validate_partition(&m, &corpus).is_ok(),
            "{kind}: invalid manifest"
        );
        let report = measure_skew(&m);
        let primary = report.primary(kind);
        let worst = report
            .secondaries(kind)
            .iter()
            .map(|s| s.cv)
            .fold(0.0, f64::max);
        ensure!(
            primary.cv >= 3.0 * worst,
            "{kind}: primary CV {:.4} vs secondary {worst:.4}",
            primary.cv
        );
        ensure!(
            primary.ratio >= 0.9 * skew,
            "{kind}: primary ratio {:.3}",
            primary.ratio
        );
        if kind == PartitionKind::QuantitySkew {
            let targets = oracle_targets(corpus.len(), k, skew);
            for (c, t) in m.clients.iter().zip(&targets) {
                ensure!(
                    c.doc_ids.len().abs_diff(*t) <= 1,
                    "client {}: {} docs, target {t}",
                    c.k,
                    c.doc_ids.len()
                );
            }
        }
        details.push(format!(
            "{kind} cv {:.3}/{worst:.3} ratio {:.2}",
            primary.cv, primary.ratio
        ));
    }

    let mut r = rng::stream(0xa9);
    let kinds = [
        PartitionKind::Iid,
        PartitionKind::QuantitySkew,
        PartitionKind::SentenceLengthSkew,
        PartitionKind::VocabularySkew,
    ];
    let mut valid = 0;
    for case in 0..100u64 {
        let docs = r.random_range(10..=120);
        let c = small_corpus(docs, 1000 + case);
        let spec = PartitionSpec::new(
            kinds[r.random_range(0..kinds.len())],
            r.random_range(2..=6),
            r.random_range(1.2..4.0),
            case,
        );
        match partition(&c, &spec) {
            Ok(m) => {
                if let Err(v) = validate_partition(&m, &c) {
                    return Err(format!("case {case} {spec:?}: {v:?}"));
                }
                valid += 1;
            }
            Err(ffdapt::Error::SkewUnachievable(_)) => {}
            Err(e) => return Err(format!("case {case}: {e}")),
        }
    }
    ensure!(valid >= 90, "only {valid} randomized partitions produced");
    Ok(format!(
        "{}; {valid}/100 randomized manifests valid",
        details.join("; ")
    ))
}

fn criterion_10() -> Outcome {
    let i = |t: f64, t_f: f64| efficiency_improvement(t, t_f).map_err(|e| e.to_string());
    ensure!(i(7.5, 7.5)? == 0.0, "T = T_F gives {}", i(7.5, 7.5)?);
    ensure!(i(90.0, 80.0)? == 12.5, "(90, 80) gives {}", i(90.0, 80.0)?);
    ensure!(
        efficiency_improvement(1.0, 0.0).is_err(),
        "T_F = 0 accepted"
    );
    ensure!(
        efficiency_improvement(1.0, -2.0).is_err(),
        "T_F < 0 accepted"
    );
    Ok("I(T,T)=0, I(90,80)=12.5, T_F<=0 rejected".into())
}

#[test]
fn acceptance_criteria() {
    let results = [
        run(1, "schedule matches pseudocode interpreter", criterion_1),
        run(2, "hand-traced two-round plan", criterion_2),
        run(3, "frozen groups immutable under training", criterion_3),
        run(4, "FedAvg exactness", criterion_4),
        run(5, "gradients vs finite differences", criterion_5),
        run(6, "FFDAPT(eps=0) = FDAPT, order independence", criterion_6),
        run(7, "efficiency analog on reference config", criterion_7),
        run(8, "convergence parity on reference config", criterion_8),
        run(9, "partitioner skew", criterion_9),
        run(10, "efficiency formula", criterion_10),
    ];
    let failed: Vec<usize> = (1..=results.len()).filter(|&i| !results[i - 1]).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
