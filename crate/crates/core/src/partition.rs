//! Splitting a corpus across simulated clients.
//!
//! Besides IID, three label-free skews are supported. Each one drives a
//! single metric (document count, mean sentence length, or unique-word
//! count) apart across clients and then runs a bounded swap pass that pulls
//! the remaining metrics back together:
//!
//! * quantity: geometric target counts, filled greedily so small clients get
//!   lexically rich documents;
//! * sentence length: documents sorted by mean sentence length and cut into
//!   contiguous equal-size blocks;
//! * vocabulary: documents sorted by their number of corpus-rare tokens and
//!   cut likewise.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{corpus_stats, Corpus, CorpusStats, Document};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Iid,
    QuantitySkew,
    SentenceLengthSkew,
    VocabularySkew,
}

impl PartitionKind {
    pub fn label(self) -> &'static str {
        match self {
            PartitionKind::Iid => "iid",
            PartitionKind::QuantitySkew => "quantity",
            PartitionKind::SentenceLengthSkew => "sentence-length",
            PartitionKind::VocabularySkew => "vocabulary",
        }
    }
}

impl fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PartitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "iid" => Ok(PartitionKind::Iid),
            "quantity" | "quantity-skew" => Ok(PartitionKind::QuantitySkew),
            "sentence-length" | "length" | "sentence-length-skew" => {
                Ok(PartitionKind::SentenceLengthSkew)
            }
            "vocabulary" | "vocab" | "vocabulary-skew" => Ok(PartitionKind::VocabularySkew),
            other => Err(Error::invalid(format!("unknown partition kind `{other}`"))),
        }
    }
}

fn default_rare_threshold() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub num_clients: usize,
    /// Target max/min ratio of the skewed metric. For the length and
    /// vocabulary skews it is also the floor the swap pass must respect.
    pub skew_factor: f64,
    /// Shuffle seed for IID; the skewed partitioners are seed-free.
    pub seed: u64,
    /// Tokens with corpus frequency at or below this count are "rare".
    #[serde(default = "default_rare_threshold")]
    pub rare_threshold: usize,
}

impl PartitionSpec {
    pub fn new(kind: PartitionKind, num_clients: usize, skew_factor: f64, seed: u64) -> Self {
        PartitionSpec {
            kind,
            num_clients,
            skew_factor,
            seed,
            rare_threshold: default_rare_threshold(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 2 {
            return Err(Error::invalid(format!(
                "num_clients {} < 2",
                self.num_clients
            )));
        }
        if self.kind != PartitionKind::Iid
            && !(self.skew_factor > 1.0 && self.skew_factor.is_finite())
        {
            return Err(Error::invalid(format!(
                "skew_factor {} must be > 1",
                self.skew_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientShard {
    /// 1-based client index.
    pub k: usize,
    pub doc_ids: Vec<String>,
    pub stats: CorpusStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub spec: PartitionSpec,
    pub clients: Vec<ClientShard>,
    pub skew: SkewReport,
}

impl PartitionManifest {
    fn from_assignment(corpus: &Corpus, spec: &PartitionSpec, mut groups: Vec<Vec<usize>>) -> Self {
        let clients: Vec<ClientShard> = groups
            .iter_mut()
            .enumerate()
            .map(|(i, idx)| {
                idx.sort_unstable();
                let docs = idx.iter().map(|&d| &corpus.docs()[d]);
                ClientShard {
                    k: i + 1,
                    doc_ids: idx.iter().map(|&d| corpus.docs()[d].id.clone()).collect(),
                    stats: corpus_stats(docs),
                }
            })
            .collect();
        let skew = measure_stats(clients.iter().map(|c| &c.stats));
        PartitionManifest {
            spec: spec.clone(),
            clients,
            skew,
        }
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// Documents per client, `n_k`.
    pub fn doc_counts(&self) -> Vec<u64> {
        self.clients
            .iter()
            .map(|c| c.doc_ids.len() as u64)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

mod ratio_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSkew {
    /// Population standard deviation over mean.
    pub cv: f64,
    /// max / min; infinite (serialized as `null`) when the minimum is zero.
    #[serde(with = "ratio_serde")]
    pub ratio: f64,
}

impl MetricSkew {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MetricSkew {
                cv: 0.0,
                ratio: 1.0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let cv = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let ratio = if max == min {
            1.0
        } else if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        };
        MetricSkew { cv, ratio }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewReport {
    pub doc_count: MetricSkew,
    pub mean_sentence_length: MetricSkew,
    pub unique_word_count: MetricSkew,
}

impl SkewReport {
    /// The metric a partition kind drives apart (IID has none; doc count is
    /// returned for it).
    pub fn primary(&self, kind: PartitionKind) -> MetricSkew {
        match kind {
            PartitionKind::Iid | PartitionKind::QuantitySkew => self.doc_count,
            PartitionKind::SentenceLengthSkew => self.mean_sentence_length,
            PartitionKind::VocabularySkew => self.unique_word_count,
        }
    }

    pub fn secondaries(&self, kind: PartitionKind) -> [MetricSkew; 2] {
        match kind {
            PartitionKind::Iid | PartitionKind::QuantitySkew => {
                [self.mean_sentence_length, self.unique_word_count]
            }
            PartitionKind::SentenceLengthSkew => [self.doc_count, self.unique_word_count],
            PartitionKind::VocabularySkew => [self.doc_count, self.mean_sentence_length],
        }
    }
}

impl fmt::Display for SkewReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, m) in [
            ("doc_count", self.doc_count),
            ("mean_sentence_length", self.mean_sentence_length),
            ("unique_word_count", self.unique_word_count),
        ] {
            writeln!(f, "{name:<22} cv={:.4} ratio={:.4}", m.cv, m.ratio)?;
        }
        Ok(())
    }
}

fn measure_stats<'a>(stats: impl Iterator<Item = &'a CorpusStats>) -> SkewReport {
    let stats: Vec<&CorpusStats> = stats.collect();
    let col = |f: &dyn Fn(&CorpusStats) -> f64| {
        MetricSkew::of(&stats.iter().map(|s| f(s)).collect::<Vec<_>>())
    };
    SkewReport {
        doc_count: col(&|s| s.doc_count as f64),
        mean_sentence_length: col(&|s| s.mean_sentence_length),
        unique_word_count: col(&|s| s.unique_word_count as f64),
    }
}

/// Recompute the skew report from a manifest's per-client statistics.
pub fn measure_skew(manifest: &PartitionManifest) -> SkewReport {
    measure_stats(manifest.clients.iter().map(|c| &c.stats))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    ClientCount { expected: usize, found: usize },
    ClientIndex { position: usize, k: usize },
    EmptyShard(usize),
    UnknownDocument { k: usize, id: String },
    DuplicateDocument { id: String, clients: Vec<usize> },
    MissingDocument(String),
    StatsMismatch(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ClientCount { expected, found } => {
                write!(f, "spec asks for {expected} clients, manifest has {found}")
            }
            Violation::ClientIndex { position, k } => {
                write!(f, "client at position {position} is labelled k={k}")
            }
            Violation::EmptyShard(k) => write!(f, "client {k} has no documents"),
            Violation::UnknownDocument { k, id } => {
                write!(f, "client {k} lists unknown document `{id}`")
            }
            Violation::DuplicateDocument { id, clients } => {
                write!(
                    f,
                    "document `{id}` assigned more than once (clients {clients:?})"
                )
            }
            Violation::MissingDocument(id) => write!(f, "document `{id}` is not assigned"),
            Violation::StatsMismatch(k) => write!(f, "client {k} stats do not match its documents"),
        }
    }
}

/// Check disjointness, completeness, non-empty shards and stored statistics,
/// collecting every violation.
pub fn validate_partition(
    manifest: &PartitionManifest,
    corpus: &Corpus,
) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if manifest.clients.len() != manifest.spec.num_clients {
        out.push(Violation::ClientCount {
            expected: manifest.spec.num_clients,
            found: manifest.clients.len(),
        });
    }
    let mut owners: HashMap<&str, Vec<usize>> = HashMap::new();
    for (pos, client) in manifest.clients.iter().enumerate() {
        if client.k != pos + 1 {
            out.push(Violation::ClientIndex {
                position: pos + 1,
                k: client.k,
            });
        }
        if client.doc_ids.is_empty() {
            out.push(Violation::EmptyShard(client.k));
        }
        let mut docs = Vec::with_capacity(client.doc_ids.len());
        for id in &client.doc_ids {
            owners.entry(id.as_str()).or_default().push(client.k);
            match corpus.get(id) {
                Some(d) => docs.push(d),
                None => out.push(Violation::UnknownDocument {
                    k: client.k,
                    id: id.clone(),
                }),
            }
        }
        if corpus_stats(docs) != client.stats {
            out.push(Violation::StatsMismatch(client.k));
        }
    }
    let mut dups: Vec<_> = owners
        .iter()
        .filter(|(_, ks)| ks.len() > 1)
        .map(|(id, ks)| Violation::DuplicateDocument {
            id: id.to_string(),
            clients: ks.clone(),
        })
        .collect();
    dups.sort_by(|a, b| format!("{a}").cmp(&format!("{b}")));
    out.extend(dups);
    for doc in corpus.docs() {
        if !owners.contains_key(doc.id.as_str()) {
            out.push(Violation::MissingDocument(doc.id.clone()));
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

pub fn partition(corpus: &Corpus, spec: &PartitionSpec) -> Result<PartitionManifest> {
    match spec.kind {
        PartitionKind::Iid => {
            spec.validate()?;
            let groups = iid_groups(corpus.len(), spec.num_clients, spec.seed)?;
            Ok(PartitionManifest::from_assignment(corpus, spec, groups))
        }
        PartitionKind::QuantitySkew => partition_quantity_skew(corpus, spec),
        PartitionKind::SentenceLengthSkew => partition_sentence_length_skew(corpus, spec),
        PartitionKind::VocabularySkew => partition_vocabulary_skew(corpus, spec),
    }
}

fn check_size(corpus: &Corpus, k: usize) -> Result<()> {
    if corpus.len() < k {
        return Err(Error::invalid(format!(
            "{} documents cannot fill {k} clients",
            corpus.len()
        )));
    }
    Ok(())
}

fn iid_groups(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("num_clients {k} < 2")));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "{n} documents cannot fill {k} clients"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(rng::derive_seed(&[seed, 0x11d])));
    let mut groups = vec![Vec::new(); k];
    for (i, d) in order.into_iter().enumerate() {
        groups[i % k].push(d);
    }
    Ok(groups)
}

/// Shuffle by seed and deal round-robin.
pub fn partition_iid(corpus: &Corpus, num_clients: usize, seed: u64) -> Result<PartitionManifest> {
    let spec = PartitionSpec::new(PartitionKind::Iid, num_clients, 1.0, seed);
    partition(corpus, &spec)
}

/// Client sizes proportional to `r^(K-k)` with `r^(K-1) = skew_factor`,
/// rounded by largest remainder (ties to the lower client index).
pub fn quantity_targets(n_docs: usize, num_clients: usize, skew_factor: f64) -> Result<Vec<usize>> {
    let k = num_clients;
    if k < 2 || !(skew_factor > 1.0 && skew_factor.is_finite()) {
        return Err(Error::invalid("need K ≥ 2 and skew_factor > 1"));
    }
    let step = skew_factor.powf(1.0 / (k - 1) as f64);
    let weights: Vec<f64> = (0..k).map(|i| step.powi((k - 1 - i) as i32)).collect();
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n_docs as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut by_remainder: Vec<usize> = (0..k).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in by_remainder.iter().take(n_docs - assigned) {
        counts[i] += 1;
    }
    if let Some(i) = counts.iter().position(|&c| c < 1) {
        return Err(Error::SkewUnachievable(format!(
            "client {} would receive no documents ({n_docs} docs, K={k}, skew {skew_factor})",
            i + 1
        )));
    }
    Ok(counts)
}

// ---------------------------------------------------------------------------
// Incremental per-client bookkeeping for the greedy and swap passes.
// ---------------------------------------------------------------------------

struct DocInfo {
    tokens: usize,
    sentences: usize,
    /// (interned token, count), sorted by token.
    counts: Vec<(u32, u32)>,
}

impl DocInfo {
    fn has(&self, t: u32) -> bool {
        self.counts
            .binary_search_by_key(&t, |&(tok, _)| tok)
            .is_ok()
    }
}

fn doc_infos(docs: &[Document]) -> (Vec<DocInfo>, usize) {
    let mut intern: HashMap<&str, u32> = HashMap::new();
    let infos = docs
        .iter()
        .map(|d| {
            let mut local: HashMap<u32, u32> = HashMap::new();
            for tok in &d.tokens {
                let next = intern.len() as u32;
                let id = *intern.entry(tok.as_str()).or_insert(next);
                *local.entry(id).or_default() += 1;
            }
            let mut counts: Vec<(u32, u32)> = local.into_iter().collect();
            counts.sort_unstable();
            DocInfo {
                tokens: d.tokens.len(),
                sentences: d.sentence_lengths.len(),
                counts,
            }
        })
        .collect();
    (infos, intern.len())
}

#[derive(Clone)]
struct ClientState {
    docs: Vec<usize>,
    tokens: usize,
    sentences: usize,
    counts: Vec<u32>,
    unique: usize,
}

impl ClientState {
    fn new(types: usize) -> Self {
        ClientState {
            docs: Vec::new(),
            tokens: 0,
            sentences: 0,
            counts: vec![0; types],
            unique: 0,
        }
    }

    fn add(&mut self, d: usize, info: &DocInfo) {
        self.docs.push(d);
        self.tokens += info.tokens;
        self.sentences += info.sentences;
        for &(t, c) in &info.counts {
            if self.counts[t as usize] == 0 {
                self.unique += 1;
            }
            self.counts[t as usize] += c;
        }
    }

    fn remove(&mut self, d: usize, info: &DocInfo) {
        let pos = self.docs.iter().position(|&x| x == d).expect("doc present");
        self.docs.swap_remove(pos);
        self.tokens -= info.tokens;
        self.sentences -= info.sentences;
        for &(t, c) in &info.counts {
            self.counts[t as usize] -= c;
            if self.counts[t as usize] == 0 {
                self.unique -= 1;
            }
        }
    }

    /// Unique count after replacing `out` by `inn`.
    fn unique_after_swap(&self, out: &DocInfo, inn: &DocInfo) -> usize {
        let lost = out
            .counts
            .iter()
            .filter(|&&(t, c)| self.counts[t as usize] == c && !inn.has(t))
            .count();
        let gained = inn
            .counts
            .iter()
            .filter(|&&(t, _)| self.counts[t as usize] == 0)
            .count();
        self.unique + gained - lost
    }

    fn msl(tokens: usize, sentences: usize) -> f64 {
        if sentences == 0 {
            0.0
        } else {
            tokens as f64 / sentences as f64
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Metric {
    MeanSentenceLength,
    UniqueWords,
}

/// Per-client value of a metric, with one client optionally replaced by a
/// hypothetical `(tokens, sentences, unique)`.
fn metric_values(
    clients: &[ClientState],
    metric: Metric,
    over: &[(usize, (usize, usize, usize))],
) -> Vec<f64> {
    clients
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (tokens, sentences, unique) = over
                .iter()
                .find(|(j, _)| *j == i)
                .map(|&(_, v)| v)
                .unwrap_or((c.tokens, c.sentences, c.unique));
            match metric {
                Metric::MeanSentenceLength => ClientState::msl(tokens, sentences),
                Metric::UniqueWords => unique as f64,
            }
        })
        .collect()
}

fn cv2(values: &[f64]) -> f64 {
    MetricSkew::of(values).cv.powi(2)
}

struct SwapPass<'a> {
    infos: &'a [DocInfo],
    /// Metrics whose dispersion the pass minimizes.
    balance: Vec<Metric>,
    /// Metric whose max/min ratio must stay at or above `floor`.
    guard: Option<(Metric, f64)>,
    candidates: usize,
    max_swaps: usize,
}

impl SwapPass<'_> {
    fn objective(&self, clients: &[ClientState], over: &[(usize, (usize, usize, usize))]) -> f64 {
        self.balance
            .iter()
            .map(|&m| cv2(&metric_values(clients, m, over)))
            .sum()
    }

    /// Best improving swap of one candidate from `p` with one from `q`.
    fn best_swap(
        &self,
        clients: &[ClientState],
        p: usize,
        q: usize,
        from_p: &[usize],
        from_q: &[usize],
        current: f64,
    ) -> Option<(f64, usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for &a in from_p {
            for &b in from_q {
                let (ia, ib) = (&self.infos[a], &self.infos[b]);
                let cp = &clients[p];
                let cq = &clients[q];
                let over = [
                    (
                        p,
                        (
                            cp.tokens - ia.tokens + ib.tokens,
                            cp.sentences - ia.sentences + ib.sentences,
                            cp.unique_after_swap(ia, ib),
                        ),
                    ),
                    (
                        q,
                        (
                            cq.tokens - ib.tokens + ia.tokens,
                            cq.sentences - ib.sentences + ia.sentences,
                            cq.unique_after_swap(ib, ia),
                        ),
                    ),
                ];
                if let Some((metric, floor)) = self.guard {
                    let ratio = MetricSkew::of(&metric_values(clients, metric, &over)).ratio;
                    if ratio < floor {
                        continue;
                    }
                }
                let score = self.objective(clients, &over);
                if score < current - 1e-15 && best.is_none_or(|(s, _, _)| score < s) {
                    best = Some((score, a, b));
                }
            }
        }
        best
    }

    fn apply(&self, clients: &mut [ClientState], p: usize, q: usize, a: usize, b: usize) {
        clients[p].remove(a, &self.infos[a]);
        clients[q].remove(b, &self.infos[b]);
        clients[p].add(b, &self.infos[b]);
        clients[q].add(a, &self.infos[a]);
    }

    /// Swaps restricted to adjacent blocks `(j, j+1)`; candidates are the
    /// documents nearest the block boundary under `key`. A swapped document is
    /// never moved again.
    fn run_adjacent(&self, clients: &mut [ClientState], key: &[f64]) {
        let mut locked = vec![false; self.infos.len()];
        for _ in 0..self.max_swaps {
            let current = self.objective(clients, &[]);
            let mut best: Option<(f64, usize, usize, usize)> = None;
            for j in 0..clients.len() - 1 {
                let upper = boundary_docs(&clients[j], key, &locked, self.candidates, true);
                let lower = boundary_docs(&clients[j + 1], key, &locked, self.candidates, false);
                if let Some((s, a, b)) = self.best_swap(clients, j, j + 1, &upper, &lower, current)
                {
                    if best.is_none_or(|(bs, ..)| s < bs) {
                        best = Some((s, j, a, b));
                    }
                }
            }
            let Some((_, j, a, b)) = best else { break };
            self.apply(clients, j, j + 1, a, b);
            locked[a] = true;
            locked[b] = true;
        }
    }

    /// Swaps between the clients holding the extreme values of the most
    /// dispersed balanced metric.
    fn run_extremes(&self, clients: &mut [ClientState], features: &[(Metric, Vec<f64>)]) {
        for _ in 0..self.max_swaps {
            let current = self.objective(clients, &[]);
            let mut order: Vec<Metric> = self.balance.clone();
            order.sort_by(|&x, &y| {
                cv2(&metric_values(clients, y, &[])).total_cmp(&cv2(&metric_values(
                    clients,
                    x,
                    &[],
                )))
            });
            let mut applied = false;
            for metric in order {
                let values = metric_values(clients, metric, &[]);
                let hi = argmax(&values);
                let lo = argmin(&values);
                if hi == lo {
                    continue;
                }
                let feature = &features
                    .iter()
                    .find(|(m, _)| *m == metric)
                    .expect("feature")
                    .1;
                let from_hi = extreme_docs(&clients[hi], feature, self.candidates, true);
                let from_lo = extreme_docs(&clients[lo], feature, self.candidates, false);
                if let Some((_, a, b)) =
                    self.best_swap(clients, hi, lo, &from_hi, &from_lo, current)
                {
                    self.apply(clients, hi, lo, a, b);
                    applied = true;
                    break;
                }
            }
            if !applied {
                break;
            }
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] < v[best] { i } else { best })
}

fn boundary_docs(c: &ClientState, key: &[f64], locked: &[bool], m: usize, top: bool) -> Vec<usize> {
    let mut docs: Vec<usize> = c.docs.iter().copied().filter(|&d| !locked[d]).collect();
    docs.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
    if top {
        docs.reverse();
    }
    docs.truncate(m);
    docs
}

fn extreme_docs(c: &ClientState, feature: &[f64], m: usize, top: bool) -> Vec<usize> {
    boundary_docs(c, feature, &vec![false; feature.len()], m, top)
}

const SWAP_CANDIDATES: usize = 12;

fn max_swaps(n_docs: usize, k: usize) -> usize {
    (32 * k).min(n_docs)
}

/// Position of each document when sorted by id.
fn id_ranks(corpus: &Corpus) -> Vec<usize> {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| corpus.docs()[a].id.cmp(&corpus.docs()[b].id));
    let mut rank = vec![0; order.len()];
    for (r, d) in order.into_iter().enumerate() {
        rank[d] = r;
    }
    rank
}

/// Sort documents ascending by `key` (ties by id) and cut into `k`
/// contiguous blocks whose sizes differ by at most one.
fn quantile_blocks(key: &[f64], rank: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = key.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(rank[a].cmp(&rank[b])));
    let (base, extra) = (n / k, n % k);
    let mut blocks = Vec::with_capacity(k);
    let mut at = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        blocks.push(order[at..at + size].to_vec());
        at += size;
    }
    blocks
}

fn states_for(blocks: &[Vec<usize>], infos: &[DocInfo], types: usize) -> Vec<ClientState> {
    blocks
        .iter()
        .map(|b| {
            let mut s = ClientState::new(types);
            for &d in b {
                s.add(d, &infos[d]);
            }
            s
        })
        .collect()
}

fn finish(corpus: &Corpus, spec: &PartitionSpec, clients: Vec<ClientState>) -> PartitionManifest {
    PartitionManifest::from_assignment(corpus, spec, clients.into_iter().map(|c| c.docs).collect())
}

fn require_kind(spec: &PartitionSpec, kind: PartitionKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::invalid(format!(
            "spec kind {} passed to the {} partitioner",
            spec.kind, kind
        )));
    }
    spec.validate()
}

/// Geometric client sizes; documents are dealt richest-first to whichever
/// client is furthest below its projected unique-word count, then a swap pass
/// balances mean sentence length and unique-word count.
pub fn partition_quantity_skew(corpus: &Corpus, spec: &PartitionSpec) -> Result<PartitionManifest> {
    require_kind(spec, PartitionKind::QuantitySkew)?;
    check_size(corpus, spec.num_clients)?;
    let targets = quantity_targets(corpus.len(), spec.num_clients, spec.skew_factor)?;
    let (infos, types) = doc_infos(corpus.docs());
    let distinct: Vec<f64> = infos.iter().map(|i| i.counts.len() as f64).collect();

    let rank = id_ranks(corpus);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| {
        distinct[b]
            .total_cmp(&distinct[a])
            .then(rank[a].cmp(&rank[b]))
    });
    let mut remaining_distinct: f64 = distinct.iter().sum();
    let mut remaining_docs = corpus.len();
    let mut clients: Vec<ClientState> = (0..spec.num_clients)
        .map(|_| ClientState::new(types))
        .collect();
    for d in order {
        remaining_distinct -= distinct[d];
        remaining_docs -= 1;
        let avg = if remaining_docs == 0 {
            0.0
        } else {
            remaining_distinct / remaining_docs as f64
        };
        let pick = (0..clients.len())
            .filter(|&k| clients[k].docs.len() < targets[k])
            .min_by(|&a, &b| {
                let proj = |k: usize| {
                    clients[k].unique as f64 + (targets[k] - clients[k].docs.len()) as f64 * avg
                };
                proj(a).total_cmp(&proj(b)).then(a.cmp(&b))
            })
            .expect("targets sum to corpus size");
        clients[pick].add(d, &infos[d]);
    }

    let msl: Vec<f64> = corpus
        .docs()
        .iter()
        .map(Document::mean_sentence_length)
        .collect();
    SwapPass {
        infos: &infos,
        balance: vec![Metric::MeanSentenceLength, Metric::UniqueWords],
        guard: None,
        candidates: SWAP_CANDIDATES,
        max_swaps: max_swaps(corpus.len(), spec.num_clients),
    }
    .run_extremes(
        &mut clients,
        &[
            (Metric::MeanSentenceLength, msl),
            (Metric::UniqueWords, distinct),
        ],
    );
    Ok(finish(corpus, spec, clients))
}

fn has_variance(key: &[f64]) -> bool {
    key.windows(2).any(|w| w[0] != w[1])
}

fn ratio_floor(clients: &[ClientState], metric: Metric, skew_factor: f64) -> f64 {
    MetricSkew::of(&metric_values(clients, metric, &[]))
        .ratio
        .min(skew_factor)
}

/// Equal-size contiguous blocks by per-document mean sentence length
/// (client 1 shortest), then adjacent swaps to even out unique-word counts.
pub fn partition_sentence_length_skew(
    corpus: &Corpus,
    spec: &PartitionSpec,
) -> Result<PartitionManifest> {
    require_kind(spec, PartitionKind::SentenceLengthSkew)?;
    check_size(corpus, spec.num_clients)?;
    let key: Vec<f64> = corpus
        .docs()
        .iter()
        .map(Document::mean_sentence_length)
        .collect();
    if !has_variance(&key) {
        return Err(Error::SkewUnachievable(
            "every document has the same mean sentence length".into(),
        ));
    }
    let (infos, types) = doc_infos(corpus.docs());
    let mut clients = states_for(
        &quantile_blocks(&key, &id_ranks(corpus), spec.num_clients),
        &infos,
        types,
    );
    let floor = ratio_floor(&clients, Metric::MeanSentenceLength, spec.skew_factor);
    SwapPass {
        infos: &infos,
        balance: vec![Metric::UniqueWords],
        guard: Some((Metric::MeanSentenceLength, floor)),
        candidates: SWAP_CANDIDATES,
        max_swaps: max_swaps(corpus.len(), spec.num_clients),
    }
    .run_adjacent(&mut clients, &key);
    Ok(finish(corpus, spec, clients))
}

/// Number of distinct corpus-rare tokens in each document.
pub fn rare_token_scores(docs: &[Document], rare_threshold: usize) -> Vec<usize> {
    let freq = crate::corpus::token_frequencies(docs);
    docs.iter()
        .map(|d| {
            d.distinct_tokens()
                .into_iter()
                .filter(|t| freq[t] <= rare_threshold)
                .count()
        })
        .collect()
}

/// Equal-size contiguous blocks by rare-token score (client 1 fewest), then
/// adjacent swaps to even out mean sentence length.
pub fn partition_vocabulary_skew(
    corpus: &Corpus,
    spec: &PartitionSpec,
) -> Result<PartitionManifest> {
    require_kind(spec, PartitionKind::VocabularySkew)?;
    check_size(corpus, spec.num_clients)?;
    let key: Vec<f64> = rare_token_scores(corpus.docs(), spec.rare_threshold)
        .into_iter()
        .map(|s| s as f64)
        .collect();
    if !has_variance(&key) {
        return Err(Error::SkewUnachievable(
            "every document has the same number of rare tokens".into(),
        ));
    }
    let (infos, types) = doc_infos(corpus.docs());
    let mut clients = states_for(
        &quantile_blocks(&key, &id_ranks(corpus), spec.num_clients),
        &infos,
        types,
    );
    let floor = ratio_floor(&clients, Metric::UniqueWords, spec.skew_factor);
    SwapPass {
        infos: &infos,
        balance: vec![Metric::MeanSentenceLength],
        guard: Some((Metric::UniqueWords, floor)),
        candidates: SWAP_CANDIDATES,
        max_swaps: max_swaps(corpus.len(), spec.num_clients),
    }
    .run_adjacent(&mut clients, &key);
    Ok(finish(corpus, spec, clients))
}
