//! Text ingestion, vocabulary, corpus statistics, masked-LM batches and
//! synthetic corpora.
//!
//! A sentence is a fragment between the terminators `.`, `!` and `?`; a token
//! is a lowercased whitespace-delimited unit of a sentence.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const NUM_SPECIALS: usize = 3;

const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[MASK]"];

/// Split on `.`, `!` and `?`, trimming each fragment and dropping empty ones.
pub fn split_sentences(text: &str) -> Vec<&str> {
    text.split(['.', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub sentence_lengths: Vec<usize>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let mut tokens = Vec::new();
        let mut sentence_lengths = Vec::new();
        for sentence in split_sentences(&text) {
            let toks = tokenize(sentence);
            if toks.is_empty() {
                continue;
            }
            sentence_lengths.push(toks.len());
            tokens.extend(toks);
        }
        Document {
            id: id.into(),
            text,
            tokens,
            sentence_lengths,
        }
    }

    /// Tokens per sentence for this document alone (0 for an empty document).
    pub fn mean_sentence_length(&self) -> f64 {
        if self.sentence_lengths.is_empty() {
            0.0
        } else {
            self.tokens.len() as f64 / self.sentence_lengths.len() as f64
        }
    }

    pub fn distinct_tokens(&self) -> HashSet<&str> {
        self.tokens.iter().map(String::as_str).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct RawRecord<'a> {
    id: std::borrow::Cow<'a, str>,
    text: std::borrow::Cow<'a, str>,
}

/// An ordered collection of documents with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
        }
        Ok(Corpus { docs, by_id })
    }

    pub fn from_texts<I, S, T>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        Corpus::new(
            items
                .into_iter()
                .map(|(id, text)| Document::new(id, text))
                .collect(),
        )
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index_of(id).map(|i| &self.docs[i])
    }

    /// Resolve a list of ids to documents, in the given order.
    pub fn select<'a>(&'a self, ids: &[String]) -> Result<Vec<&'a Document>> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::invalid(format!("unknown document id `{id}`")))
            })
            .collect()
    }

    /// Deterministically split off a held-out set of `round(fraction · len)`
    /// documents. Both halves keep corpus order.
    pub fn split_heldout(&self, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::invalid(format!(
                "heldout fraction {fraction} not in [0, 1)"
            )));
        }
        let n_held = (fraction * self.len() as f64).round() as usize;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(seed));
        let mut held = vec![false; self.len()];
        for &i in &order[..n_held] {
            held[i] = true;
        }
        let (mut train, mut heldout) = (Vec::new(), Vec::new());
        for (doc, &h) in self.docs.iter().zip(&held) {
            if h {
                heldout.push(doc.clone());
            } else {
                train.push(doc.clone());
            }
        }
        Ok((Corpus::new(train)?, Corpus::new(heldout)?))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.docs {
            let rec = RawRecord {
                id: doc.id.as_str().into(),
                text: doc.text.as_str().into(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("string fields serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn parse_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut docs = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
            if !seen.insert(rec.id.to_string()) {
                return Err(Error::DuplicateId(rec.id.into_owned()));
            }
            docs.push(Document::new(rec.id.into_owned(), rec.text.into_owned()));
        }
        Corpus::new(docs)
    }
}

/// Load a JSON-lines corpus of `{"id": .., "text": ..}` objects.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Corpus::parse_jsonl(BufReader::new(file))
}

/// Token ↔ id map. Ids 0, 1, 2 are PAD, UNK and MASK.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_tokens(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let tokens: Vec<String> = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or UNK when it is out of vocabulary.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Non-special tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[NUM_SPECIALS..]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Specials plus the `max_size - 3` most frequent tokens with frequency at
/// least `min_freq`; equal frequencies are ordered lexicographically.
pub fn build_vocab(docs: &[Document], max_size: usize, min_freq: usize) -> Result<Vocabulary> {
    if max_size < NUM_SPECIALS + 1 {
        return Err(Error::invalid(format!("max_size {max_size} < 4")));
    }
    if min_freq < 1 {
        return Err(Error::invalid("min_freq must be at least 1"));
    }
    if docs.iter().all(|d| d.tokens.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for tok in docs.iter().flat_map(|d| &d.tokens) {
        *freq.entry(tok.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(t, f)| f >= min_freq && !SPECIAL_TOKENS.contains(&t))
        .collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - NUM_SPECIALS);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub mean_sentence_length: f64,
    pub unique_word_count: usize,
}

/// Statistics over raw token types (independent of any vocabulary).
pub fn corpus_stats<'a>(docs: impl IntoIterator<Item = &'a Document>) -> CorpusStats {
    let mut doc_count = 0;
    let mut tokens = 0usize;
    let mut sentences = 0usize;
    let mut unique: HashSet<&str> = HashSet::new();
    for doc in docs {
        doc_count += 1;
        tokens += doc.tokens.len();
        sentences += doc.sentence_lengths.len();
        unique.extend(doc.tokens.iter().map(String::as_str));
    }
    CorpusStats {
        doc_count,
        mean_sentence_length: if sentences == 0 {
            0.0
        } else {
            tokens as f64 / sentences as f64
        },
        unique_word_count: unique.len(),
    }
}

/// Which corruption was applied to the centre position of a batch row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Corruption {
    Mask,
    Random,
    Keep,
}

/// `batch_size` rows of `2 * radius + 1` token ids; the centre column is the
/// prediction target.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmBatch {
    pub batch_size: usize,
    pub window: usize,
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub corruption: Vec<Corruption>,
}

impl MlmBatch {
    pub fn row(&self, i: usize) -> &[u32] {
        &self.input_ids[i * self.window..(i + 1) * self.window]
    }

    pub fn center(&self) -> usize {
        self.window / 2
    }

    pub fn from_rows(rows: &[Vec<u32>], targets: &[u32]) -> Result<Self> {
        let window = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || window.is_multiple_of(2) || rows.iter().any(|r| r.len() != window) {
            return Err(Error::ShapeMismatch(
                "rows must share one odd window length".into(),
            ));
        }
        if targets.len() != rows.len() {
            return Err(Error::ShapeMismatch("one target per row".into()));
        }
        Ok(MlmBatch {
            batch_size: rows.len(),
            window,
            input_ids: rows.concat(),
            target_ids: targets.to_vec(),
            corruption: vec![Corruption::Mask; rows.len()],
        })
    }
}

/// Batch-generation knobs shared by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingConfig {
    pub context_radius: usize,
    /// Probability that a non-centre context token is replaced by MASK.
    pub mask_rate: f64,
    pub mask_prob: f64,
    pub random_prob: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            context_radius: 8,
            mask_rate: 0.15,
            mask_prob: 0.8,
            random_prob: 0.1,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::invalid(format!(
                "mask_rate {} not in (0, 1)",
                self.mask_rate
            )));
        }
        if self.mask_prob < 0.0 || self.random_prob < 0.0 || self.mask_prob + self.random_prob > 1.0
        {
            return Err(Error::invalid("corruption probabilities must sum to ≤ 1"));
        }
        Ok(())
    }
}

/// Documents of one shard encoded once against a vocabulary.
#[derive(Debug, Clone)]
pub struct EncodedShard {
    docs: Vec<Vec<u32>>,
    // offsets[i] = number of tokens in docs[..i]
    offsets: Vec<usize>,
    vocab_size: usize,
}

impl EncodedShard {
    pub fn new<'a>(docs: impl IntoIterator<Item = &'a Document>, vocab: &Vocabulary) -> Self {
        let docs: Vec<Vec<u32>> = docs.into_iter().map(|d| vocab.encode(&d.tokens)).collect();
        let mut offsets = Vec::with_capacity(docs.len() + 1);
        let mut total = 0;
        offsets.push(0);
        for d in &docs {
            total += d.len();
            offsets.push(total);
        }
        EncodedShard {
            docs,
            offsets,
            vocab_size: vocab.len(),
        }
    }

    pub fn total_tokens(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Draw `batch_size` examples, each at a token position chosen uniformly
    /// from the shard.
    pub fn sample_batch<R: Rng>(
        &self,
        rng: &mut R,
        batch_size: usize,
        masking: &MaskingConfig,
    ) -> Result<MlmBatch> {
        masking.validate()?;
        let total = self.total_tokens();
        if total == 0 {
            return Err(Error::EmptyShard);
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        let radius = masking.context_radius;
        let window = 2 * radius + 1;
        let mut input_ids = Vec::with_capacity(batch_size * window);
        let mut target_ids = Vec::with_capacity(batch_size);
        let mut corruption = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let pos = rng.random_range(0..total);
            let doc_idx = self.offsets.partition_point(|&o| o <= pos) - 1;
            let doc = &self.docs[doc_idx];
            let local = pos - self.offsets[doc_idx];
            for offset in 0..window {
                let p = local as isize + offset as isize - radius as isize;
                if offset == radius {
                    let original = doc[local];
                    let u: f64 = rng.random();
                    let (id, kind) = if u < masking.mask_prob {
                        (MASK, Corruption::Mask)
                    } else if u < masking.mask_prob + masking.random_prob {
                        (self.random_token(rng), Corruption::Random)
                    } else {
                        (original, Corruption::Keep)
                    };
                    input_ids.push(id);
                    target_ids.push(original);
                    corruption.push(kind);
                } else if p < 0 || p as usize >= doc.len() {
                    input_ids.push(PAD);
                } else if rng.random::<f64>() < masking.mask_rate {
                    input_ids.push(MASK);
                } else {
                    input_ids.push(doc[p as usize]);
                }
            }
        }
        Ok(MlmBatch {
            batch_size,
            window,
            input_ids,
            target_ids,
            corruption,
        })
    }

    fn random_token<R: Rng>(&self, rng: &mut R) -> u32 {
        if self.vocab_size > NUM_SPECIALS {
            rng.random_range(NUM_SPECIALS as u32..self.vocab_size as u32)
        } else {
            UNK
        }
    }
}

/// One-shot batch construction; prefer [`EncodedShard`] when sampling
/// repeatedly from the same documents.
pub fn make_mlm_batch<R: Rng>(
    docs: &[Document],
    vocab: &Vocabulary,
    rng: &mut R,
    batch_size: usize,
    masking: &MaskingConfig,
) -> Result<MlmBatch> {
    EncodedShard::new(docs, vocab).sample_batch(rng, batch_size, masking)
}

/// Generator parameters for a synthetic corpus.
///
/// Each document draws its own mean sentence length, token budget, dominant
/// topic and rare-word rate, independently of one another, so every skew
/// metric varies across documents without correlating with the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub docs: usize,
    pub doc_tokens_min: usize,
    pub doc_tokens_max: usize,
    pub sentence_len_min: f64,
    pub sentence_len_max: f64,
    pub common_vocab: usize,
    pub rare_vocab: usize,
    pub topics: usize,
    /// Probability that a common word comes from the document topic rather
    /// than the shared background distribution.
    pub topic_focus: f64,
    pub rare_rate_min: f64,
    pub rare_rate_max: f64,
    pub zipf_exponent: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            docs: 1000,
            doc_tokens_min: 60,
            doc_tokens_max: 140,
            sentence_len_min: 6.0,
            sentence_len_max: 24.0,
            common_vocab: 1500,
            rare_vocab: 20000,
            topics: 8,
            topic_focus: 0.7,
            rare_rate_min: 0.0,
            rare_rate_max: 0.2,
            zipf_exponent: 1.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("synth: {m}")));
        if self.docs == 0 || self.common_vocab == 0 || self.rare_vocab == 0 || self.topics == 0 {
            return bad("docs, common_vocab, rare_vocab and topics must be positive");
        }
        if self.doc_tokens_min == 0 || self.doc_tokens_min > self.doc_tokens_max {
            return bad("need 0 < doc_tokens_min ≤ doc_tokens_max");
        }
        if !(self.sentence_len_min >= 1.0 && self.sentence_len_min <= self.sentence_len_max) {
            return bad("need 1 ≤ sentence_len_min ≤ sentence_len_max");
        }
        if !(0.0..=1.0).contains(&self.topic_focus) {
            return bad("topic_focus must be in [0, 1]");
        }
        if !(0.0 <= self.rare_rate_min
            && self.rare_rate_min <= self.rare_rate_max
            && self.rare_rate_max <= 1.0)
        {
            return bad("need 0 ≤ rare_rate_min ≤ rare_rate_max ≤ 1");
        }
        if !(self.zipf_exponent > 0.0) {
            return bad("zipf_exponent must be positive");
        }
        Ok(())
    }
}

struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    fn new(n: usize, exponent: f64) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (1..=n)
            .map(|r| {
                acc += (r as f64).powf(-exponent);
                acc
            })
            .collect();
        for c in &mut cdf {
            *c /= acc;
        }
        Zipf { cdf }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1)
    }
}

/// Generate a reproducible corpus; equal `(spec, seed)` give byte-identical
/// output.
pub fn synth_corpus(spec: &SynthSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = rng::stream(rng::derive_seed(&[seed, 0x5e17]));
    let zipf = Zipf::new(spec.common_vocab, spec.zipf_exponent);
    let topic_ranks: Vec<Vec<usize>> = (0..spec.topics)
        .map(|_| {
            let mut perm: Vec<usize> = (0..spec.common_vocab).collect();
            perm.shuffle(&mut rng);
            perm
        })
        .collect();
    let width = (spec.docs.max(1) as f64).log10().floor() as usize + 1;
    let mut docs = Vec::with_capacity(spec.docs);
    for i in 0..spec.docs {
        let budget = rng.random_range(spec.doc_tokens_min..=spec.doc_tokens_max);
        let mean_len = rng.random_range(spec.sentence_len_min..=spec.sentence_len_max);
        let topic = rng.random_range(0..spec.topics);
        let rare_rate = rng.random_range(spec.rare_rate_min..=spec.rare_rate_max);
        let mut text = String::new();
        let mut emitted = 0;
        while emitted < budget {
            let jitter = rng.random_range(0.75..=1.25);
            let len = ((mean_len * jitter).round() as usize).max(1);
            if !text.is_empty() {
                text.push(' ');
            }
            for j in 0..len {
                if j > 0 {
                    text.push(' ');
                }
                if rng.random::<f64>() < rare_rate {
                    let r = rng.random_range(0..spec.rare_vocab);
                    text.push_str(&format!("r{r}"));
                } else {
                    let rank = zipf.sample(&mut rng);
                    let w = if rng.random::<f64>() < spec.topic_focus {
                        topic_ranks[topic][rank]
                    } else {
                        rank
                    };
                    text.push_str(&format!("w{w}"));
                }
            }
            text.push('.');
            emitted += len;
        }
        docs.push(Document::new(format!("d{i:0width$}"), text));
    }
    Corpus::new(docs)
}

/// Token frequency over a document set, keyed in sorted order.
pub fn token_frequencies<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
) -> BTreeMap<&'a str, usize> {
    let mut freq = BTreeMap::new();
    for tok in docs.into_iter().flat_map(|d| &d.tokens) {
        *freq.entry(tok.as_str()).or_default() += 1;
    }
    freq
}
