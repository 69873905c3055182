use ffdapt::corpus::{synth_corpus, SynthSpec};
use ffdapt::partition::{
    partition, quantity_targets, validate_partition, PartitionKind, PartitionSpec,
};

#[test]
fn quantity_skew_on_homogeneous_corpus_keeps_sentence_lengths_flat() {
    let spec = SynthSpec {
        docs: 600,
        sentence_len_min: 12.0,
        sentence_len_max: 12.0,
        doc_tokens_min: 90,
        doc_tokens_max: 110,
        ..SynthSpec::default()
    };
    let corpus = synth_corpus(&spec, 2).unwrap();
    let m = partition(
        &corpus,
        &PartitionSpec::new(PartitionKind::QuantitySkew, 4, 3.0, 0),
    )
    .unwrap();
    assert!(m.skew.mean_sentence_length.cv <= 0.05, "{}", m.skew);
    let counts: Vec<usize> = m.clients.iter().map(|c| c.doc_ids.len()).collect();
    assert_eq!(counts, quantity_targets(600, 4, 3.0).unwrap());
    assert!(validate_partition(&m, &corpus).is_ok());
}

#[test]
fn skewed_partitions_dominate_their_secondary_metrics() {
    let spec = SynthSpec {
        docs: 1200,
        sentence_len_min: 4.0,
        sentence_len_max: 30.0,
        ..SynthSpec::default()
    };
    let corpus = synth_corpus(&spec, 8).unwrap();
    for kind in [
        PartitionKind::QuantitySkew,
        PartitionKind::SentenceLengthSkew,
        PartitionKind::VocabularySkew,
    ] {
        let m = partition(&corpus, &PartitionSpec::new(kind, 4, 2.5, 0)).unwrap();
        let primary = m.skew.primary(kind);
        for s in m.skew.secondaries(kind) {
            assert!(primary.cv >= 3.0 * s.cv, "{kind}:\n{}", m.skew);
        }
        assert!(primary.ratio >= 0.9 * 2.5, "{kind}:\n{}", m.skew);
    }
}
