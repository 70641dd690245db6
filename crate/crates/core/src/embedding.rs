//! Syscall embeddings learned with skip-gram and negative sampling.
//!
//! Each window's syscall names form one sentence; context never crosses a
//! window boundary. A window is summarized downstream as the mean of its
//! tokens' input vectors.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("corpus contains no tokens")]
    EmptyCorpus,
    #[error("invalid embedding config: {0}")]
    BadConfig(String),
    #[error("invalid embedding table: {0}")]
    BadTable(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    counts: Vec<u64>,
    id_of: HashMap<String, usize>,
}

impl Vocabulary {
    /// Counts tokens and keeps those seen at least `min_count` times.
    /// Kept names are ordered by descending frequency, ties broken
    /// lexicographically; everything else folds into `UNK` at index 0.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: u64) -> Result<Self, EmbedError> {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for tok in corpus.iter().flatten() {
            *freq.entry(tok.as_ref()).or_default() += 1;
        }
        if freq.is_empty() {
            return Err(EmbedError::EmptyCorpus);
        }
        let mut kept: Vec<(&str, u64)> = Vec::new();
        let mut unk = 0;
        for (name, count) in freq {
            if count >= min_count.max(1) && name != UNK {
                kept.push((name, count));
            } else {
                unk += count;
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut names = vec![UNK.to_string()];
        let mut counts = vec![unk];
        for (name, count) in kept {
            names.push(name.to_string());
            counts.push(count);
        }
        Ok(Self::from_parts(names, counts))
    }

    fn from_parts(names: Vec<String>, counts: Vec<u64>) -> Self {
        let id_of = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Vocabulary {
            names,
            counts,
            id_of,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Index of `name`, or 0 (`UNK`) when unknown.
    pub fn id(&self, name: &str) -> usize {
        self.id_of.get(name).copied().unwrap_or(0)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgnsConfig {
    pub dim: usize,
    pub context_radius: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 16,
            context_radius: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_learning_rate: 1e-4,
            min_count: 2,
            seed: 0,
        }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 || self.context_radius == 0 || self.negatives == 0 {
            return Err(EmbedError::BadConfig(
                "dim, context_radius and negatives must be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.min_learning_rate >= 0.0) {
            return Err(EmbedError::BadConfig(
                "learning rates must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(x)`, stable for large |x|.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss and gradients for one (center, context, negatives) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnsGrads {
    pub loss: f64,
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// `-ln σ(u·v) - Σ ln σ(-u_n·v)` for center `v`, context `u` and negative
/// output vectors `u_n`, with its exact partial derivatives.
pub fn sgns_loss_and_grads(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> SgnsGrads {
    let d = center.len();
    let pos = dot(context, center);
    let mut loss = neg_log_sigmoid(pos);
    // d/ds [-ln σ(s)] = σ(s) - 1
    let g_pos = sigmoid(pos) - 1.0;
    let mut g_center: Vec<f64> = context.iter().map(|u| g_pos * u).collect();
    let g_context: Vec<f64> = center.iter().map(|v| g_pos * v).collect();

    let mut g_negs = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let s = dot(neg, center);
        loss += neg_log_sigmoid(-s);
        // d/ds [-ln σ(-s)] = σ(s)
        let g = sigmoid(s);
        for j in 0..d {
            g_center[j] += g * neg[j];
        }
        g_negs.push(center.iter().map(|v| g * v).collect());
    }
    SgnsGrads {
        loss,
        center: g_center,
        context: g_context,
        negatives: g_negs,
    }
}

/// Learned vectors. Rows are indexed like the vocabulary they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    names: Vec<String>,
    id_of: HashMap<String, usize>,
    dim: usize,
    input: Vec<f64>,
    output: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    dim: usize,
    names: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    /// Standard SGNS start: input rows uniform in `(-0.5/d, 0.5/d)`, output
    /// rows zero.
    pub fn initialize(vocab: &Vocabulary, dim: usize, rng: &mut impl Rng) -> Self {
        let half = 0.5 / dim as f64;
        let input = (0..vocab.len() * dim)
            .map(|_| rng.random_range(-half..half))
            .collect();
        EmbeddingTable {
            names: vocab.names().to_vec(),
            id_of: vocab.id_of.clone(),
            dim,
            input,
            output: vec![0.0; vocab.len() * dim],
        }
    }

    /// Builds a lookup-only table from explicit rows. Row 0 is the unknown
    /// token.
    pub fn from_rows(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, EmbedError> {
        if names.is_empty() || names.len() != rows.len() {
            return Err(EmbedError::BadTable(format!(
                "{} names for {} rows",
                names.len(),
                rows.len()
            )));
        }
        let dim = rows[0].len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(EmbedError::BadTable("ragged or empty rows".into()));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(EmbedError::BadTable("non-finite entry".into()));
        }
        let id_of: HashMap<String, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        if id_of.len() != names.len() {
            return Err(EmbedError::BadTable("duplicate names".into()));
        }
        Ok(EmbeddingTable {
            output: vec![0.0; names.len() * dim],
            input: rows.into_iter().flatten().collect(),
            names,
            id_of,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> usize {
        self.id_of.get(name).copied().unwrap_or(0)
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        &self.input[id * self.dim..(id + 1) * self.dim]
    }

    pub fn vector_of(&self, name: &str) -> &[f64] {
        self.vector(self.id(name))
    }

    pub fn context_vector(&self, id: usize) -> &[f64] {
        &self.output[id * self.dim..(id + 1) * self.dim]
    }

    /// Mean input vector over `names`; the zero vector for an empty window.
    pub fn embed_window<S: AsRef<str>>(&self, names: &[S]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        if names.is_empty() {
            return acc;
        }
        for name in names {
            for (a, x) in acc.iter_mut().zip(self.vector_of(name.as_ref())) {
                *a += x;
            }
        }
        let n = names.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let (u, v) = (self.vector_of(a), self.vector_of(b));
        let denom = dot(u, u).sqrt() * dot(v, v).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            dot(u, v) / denom
        }
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<(), EmbedError> {
        let file = TableFile {
            dim: self.dim,
            names: self.names.clone(),
            vectors: self.input.chunks(self.dim).map(<[f64]>::to_vec).collect(),
        };
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self, EmbedError> {
        let file: TableFile = serde_json::from_reader(input)?;
        let table = Self::from_rows(file.names, file.vectors)?;
        if table.dim != file.dim {
            return Err(EmbedError::BadTable(format!(
                "declared dim {} but rows have {}",
                file.dim, table.dim
            )));
        }
        Ok(table)
    }
}

/// Alias table would be overkill at syscall-vocabulary sizes; a cumulative
/// table with binary search is exact and fast enough.
struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    fn new(vocab: &Vocabulary) -> Self {
        let mut total = 0.0;
        let mut cumulative = Vec::with_capacity(vocab.len());
        for id in 0..vocab.len() {
            total += (vocab.count(id) as f64).powf(0.75);
            cumulative.push(total);
        }
        NegativeSampler { cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().unwrap_or(&0.0);
        let x = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= x)
            .min(self.cumulative.len() - 1)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEmbedding {
    pub vocab: Vocabulary,
    pub table: EmbeddingTable,
    /// Mean SGNS loss per training pair at the end of each epoch.
    pub epoch_loss: Vec<f64>,
}

/// Trains skip-gram with negative sampling on `corpus`.
///
/// Every (center, context) pair within `context_radius` gets one update with
/// `negatives` samples from the unigram^0.75 distribution. The learning rate
/// decays linearly to `min_learning_rate` over the whole run. Deterministic
/// per seed.
pub fn train_skipgram<S: AsRef<str>>(
    corpus: &[Vec<S>],
    config: &SgnsConfig,
) -> Result<TrainedEmbedding, EmbedError> {
    config.validate()?;
    let vocab = Vocabulary::build(corpus, config.min_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut table = EmbeddingTable::initialize(&vocab, config.dim, &mut rng);
    let sampler = NegativeSampler::new(&vocab);
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.iter().map(|t| vocab.id(t.as_ref())).collect())
        .collect();

    let c = config.context_radius;
    let pairs_per_epoch: usize = sentences
        .iter()
        .map(|s| {
            let n = s.len();
            (0..n).map(|i| i.min(c) + (n - 1 - i).min(c)).sum::<usize>()
        })
        .sum();
    let total_steps = (pairs_per_epoch * config.epochs).max(1) as f64;

    let d = config.dim;
    let mut neg_ids = vec![0usize; config.negatives];
    let mut g_center = vec![0.0; d];
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut step = 0usize;

    for _ in 0..config.epochs {
        for sent in &sentences {
            for (pos, &center) in sent.iter().enumerate() {
                let lo = pos.saturating_sub(c);
                let hi = (pos + c).min(sent.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = sent[ctx_pos];
                    let progress = step as f64 / total_steps;
                    let lr =
                        (config.learning_rate * (1.0 - progress)).max(config.min_learning_rate);
                    step += 1;

                    for id in neg_ids.iter_mut() {
                        *id = sampler.sample(&mut rng);
                    }
                    sgns_step(&mut table, center, context, &neg_ids, lr, &mut g_center);
                }
            }
        }
        epoch_loss.push(corpus_loss(
            &table,
            &sentences,
            c,
            config.negatives,
            &sampler,
            config.seed,
        ));
    }

    Ok(TrainedEmbedding {
        vocab,
        table,
        epoch_loss,
    })
}

/// Mean SGNS loss per pair over the whole corpus at the current parameters.
/// Negatives come from a stream that restarts at the same seed on every
/// call, so successive epochs are scored on identical draws. The running
/// loss seen during SGD is biased low at high learning rates because
/// consecutive pairs are correlated.
fn corpus_loss(
    table: &EmbeddingTable,
    sentences: &[Vec<usize>],
    radius: usize,
    negatives: usize,
    sampler: &NegativeSampler,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let d = table.dim;
    let (mut total, mut pairs) = (0.0, 0usize);
    for sent in sentences {
        for (pos, &center) in sent.iter().enumerate() {
            let v = &table.input[center * d..(center + 1) * d];
            let lo = pos.saturating_sub(radius);
            let hi = (pos + radius).min(sent.len() - 1);
            for ctx_pos in (lo..=hi).filter(|&p| p != pos) {
                let u = sent[ctx_pos];
                total += neg_log_sigmoid(dot(&table.output[u * d..(u + 1) * d], v));
                for _ in 0..negatives {
                    let n = sampler.sample(&mut rng);
                    total += neg_log_sigmoid(-dot(&table.output[n * d..(n + 1) * d], v));
                }
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// One in-place SGD step; same objective as [`sgns_loss_and_grads`] without
/// allocating per-negative gradients.
fn sgns_step(
    table: &mut EmbeddingTable,
    center: usize,
    context: usize,
    negatives: &[usize],
    lr: f64,
    g_center: &mut [f64],
) {
    let d = table.dim;
    let v = center * d..(center + 1) * d;
    g_center.iter_mut().for_each(|g| *g = 0.0);

    let targets = std::iter::once((context, true)).chain(negatives.iter().map(|&n| (n, false)));
    for (target, positive) in targets {
        let u = target * d..(target + 1) * d;
        let s = dot(&table.output[u.clone()], &table.input[v.clone()]);
        let g = if positive {
            sigmoid(s) - 1.0
        } else {
            sigmoid(s)
        };
        for j in 0..d {
            g_center[j] += g * table.output[u.start + j];
            table.output[u.start + j] -= lr * g * table.input[v.start + j];
        }
    }
    for j in 0..d {
        table.input[v.start + j] -= lr * g_center[j];
    }
}
