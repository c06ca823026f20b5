//! Desk-scale models: a neighbor-context masked conditional model, an explicit
//! joint table for exactness checks, and a multinomial Naive Bayes classifier.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{ln, log_sum_exp, softmax};
use crate::oracle::{state_count, state_index};
use crate::text::{Corpus, TokenId, UNK};

/// Tolerance for checking that a distribution sums to one.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// A probability vector over token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Checks finiteness, non-negativity and normalization.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution("negative or non-finite mass".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!("mass sums to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self { probs: vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs.get(id as usize).copied().unwrap_or(0.0)
    }

    pub fn log_prob(&self, id: TokenId) -> f64 {
        ln(self.prob(id))
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    /// Inverse-CDF draw for a uniform `u` in `[0, 1)`. Rounding slack at the
    /// top end goes to the last id with positive mass.
    pub fn sample_with(&self, u: f64) -> TokenId {
        let mut acc = 0.0;
        for (id, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return id as TokenId;
            }
        }
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as TokenId
    }

    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (id, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = id;
            }
        }
        best as TokenId
    }
}

/// Anything that yields a distribution over the vocabulary for one masked
/// position given the rest of the sequence.
///
/// The token currently at `i` must not influence either method's answer
/// beyond `score` reading it as the token being scored.
pub trait MaskedConditional: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// `p(· | x without position i)`.
    fn conditional(&self, x: &[TokenId], i: usize) -> Result<Distribution>;

    /// Unnormalized log-score of `x[i]` at the masked slot `i`.
    fn score(&self, x: &[TokenId], i: usize) -> Result<f64>;
}

fn check_position(x: &[TokenId], i: usize) -> Result<()> {
    if i < x.len() {
        Ok(())
    } else {
        Err(Error::PositionOutOfRange { position: i, len: x.len() })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    centers: BTreeMap<TokenId, u64>,
}

/// Count model over `(left, center, right)` triples with add-k smoothing. The
/// conditional at position `i` depends only on the immediate neighbors, with
/// `boundary()` standing in past either edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NeighborMlmRepr", into = "NeighborMlmRepr")]
pub struct NeighborMlm {
    vocab_size: usize,
    k: f64,
    contexts: BTreeMap<(TokenId, TokenId), ContextCounts>,
}

/// Flat storage form: one `(left, right, center, count)` entry per seen triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeighborMlmRepr {
    pub vocab_size: usize,
    pub k: f64,
    pub counts: Vec<(TokenId, TokenId, TokenId, u64)>,
}

impl From<NeighborMlm> for NeighborMlmRepr {
    fn from(m: NeighborMlm) -> Self {
        let counts = m.triples().collect();
        Self { vocab_size: m.vocab_size, k: m.k, counts }
    }
}

impl TryFrom<NeighborMlmRepr> for NeighborMlm {
    type Error = Error;
    fn try_from(r: NeighborMlmRepr) -> Result<Self> {
        let mut m = NeighborMlm::empty(r.vocab_size, r.k)?;
        let boundary = m.boundary();
        for (l, rt, c, n) in r.counts {
            if l > boundary || rt > boundary || c >= boundary {
                return Err(Error::InvalidTokenId { id: c.max(l).max(rt), vocab_size: r.vocab_size });
            }
            m.add(l, rt, c, n);
        }
        Ok(m)
    }
}

impl NeighborMlm {
    fn empty(vocab_size: usize, k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidSmoothing(k));
        }
        if vocab_size == 0 {
            return Err(Error::InvalidVocabulary("empty".into()));
        }
        Ok(Self { vocab_size, k, contexts: BTreeMap::new() })
    }

    fn add(&mut self, left: TokenId, right: TokenId, center: TokenId, n: u64) {
        let ctx = self.contexts.entry((left, right)).or_default();
        ctx.total += n;
        *ctx.centers.entry(center).or_default() += n;
    }

    /// Sentinel id used for the left neighbor of position 0 and the right
    /// neighbor of the last position.
    pub fn boundary(&self) -> TokenId {
        self.vocab_size as TokenId
    }

    pub fn smoothing(&self) -> f64 {
        self.k
    }

    pub fn count(&self, left: TokenId, center: TokenId, right: TokenId) -> u64 {
        self.contexts.get(&(left, right)).and_then(|c| c.centers.get(&center)).copied().unwrap_or(0)
    }

    pub fn context_total(&self, left: TokenId, right: TokenId) -> u64 {
        self.contexts.get(&(left, right)).map_or(0, |c| c.total)
    }

    /// Seen triples as `(left, right, center, count)` in key order.
    pub fn triples(&self) -> impl Iterator<Item = (TokenId, TokenId, TokenId, u64)> + '_ {
        self.contexts.iter().flat_map(|(&(l, r), ctx)| ctx.centers.iter().map(move |(&c, &n)| (l, r, c, n)))
    }

    fn neighbors(&self, x: &[TokenId], i: usize) -> (TokenId, TokenId) {
        let left = if i == 0 { self.boundary() } else { x[i - 1] };
        let right = if i + 1 == x.len() { self.boundary() } else { x[i + 1] };
        (left, right)
    }

    /// Smoothed conditional for an explicit context.
    pub fn context_distribution(&self, left: TokenId, right: TokenId) -> Distribution {
        let v = self.vocab_size;
        let (total, centers) = match self.contexts.get(&(left, right)) {
            Some(c) => (c.total, Some(&c.centers)),
            None => (0, None),
        };
        let denom = total as f64 + self.k * v as f64;
        let mut probs = vec![self.k / denom; v];
        if let Some(centers) = centers {
            for (&c, &n) in centers {
                if let Some(p) = probs.get_mut(c as usize) {
                    *p = (n as f64 + self.k) / denom;
                }
            }
        }
        Distribution { probs }
    }
}

/// Tallies every `(left, center, right)` triple with boundary padding.
pub fn fit_neighbor_mlm(corpus: &Corpus, vocab_size: usize, k: f64) -> Result<NeighborMlm> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    corpus.validate(vocab_size)?;
    let mut m = NeighborMlm::empty(vocab_size, k)?;
    for line in &corpus.lines {
        for i in 0..line.len() {
            let (l, r) = m.neighbors(line, i);
            m.add(l, r, line[i], 1);
        }
    }
    Ok(m)
}

impl MaskedConditional for NeighborMlm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn conditional(&self, x: &[TokenId], i: usize) -> Result<Distribution> {
        check_position(x, i)?;
        let (l, r) = self.neighbors(x, i);
        Ok(self.context_distribution(l, r))
    }

    /// `ln(count + k)`: the smoothed count before normalization.
    fn score(&self, x: &[TokenId], i: usize) -> Result<f64> {
        check_position(x, i)?;
        let (l, r) = self.neighbors(x, i);
        Ok(ln(self.count(l, x[i], r) as f64 + self.k))
    }
}

/// Explicit probability table over all `V^L` sequences, indexed
/// lexicographically with position 0 most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularJoint {
    vocab_size: usize,
    length: usize,
    probs: Vec<f64>,
}

impl TabularJoint {
    pub fn new(vocab_size: usize, length: usize, probs: Vec<f64>) -> Result<Self> {
        let n = state_count(vocab_size, length)?;
        if probs.len() as u128 != n {
            return Err(Error::LengthMismatch { left: probs.len(), right: n as usize });
        }
        if probs.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidDistribution("joint table must be strictly positive".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!("joint sums to {total}")));
        }
        Ok(Self { vocab_size, length, probs })
    }

    /// Normalizes positive weights into a joint table.
    pub fn from_weights(vocab_size: usize, length: usize, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        Self::new(vocab_size, length, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, x: &[TokenId]) -> Result<f64> {
        if x.len() != self.length {
            return Err(Error::LengthMismatch { left: x.len(), right: self.length });
        }
        let idx = state_index(x, self.vocab_size)?;
        Ok(self.probs[idx])
    }

    pub fn log_prob(&self, x: &[TokenId]) -> Result<f64> {
        self.prob(x).map(ln)
    }
}

impl MaskedConditional for TabularJoint {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Exact `p(x_i = v | x_{-i})` by renormalizing the row of the table that
    /// varies position `i`.
    fn conditional(&self, x: &[TokenId], i: usize) -> Result<Distribution> {
        check_position(x, i)?;
        if x.len() != self.length {
            return Err(Error::LengthMismatch { left: x.len(), right: self.length });
        }
        let base = state_index(x, self.vocab_size)?;
        let stride = self.vocab_size.pow((self.length - 1 - i) as u32);
        let current = x[i] as usize;
        let row_start = base - current * stride;
        let row: Vec<f64> = (0..self.vocab_size).map(|v| self.probs[row_start + v * stride]).collect();
        Distribution::from_weights(row)
    }

    /// Log conditional probability of the token at `i`.
    fn score(&self, x: &[TokenId], i: usize) -> Result<f64> {
        let d = self.conditional(x, i)?;
        Ok(d.log_prob(x[i]))
    }
}

/// A classifier over token sequences.
pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;

    /// Unnormalized per-class log-scores.
    fn logits(&self, x: &[TokenId]) -> Vec<f64>;

    fn posterior(&self, x: &[TokenId]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Most probable class; ties go to the lowest class id.
    fn predict(&self, x: &[TokenId]) -> usize {
        argmax_lowest(&self.posterior(x))
    }
}

pub(crate) fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (c, &p) in xs.iter().enumerate() {
        if p > xs[best] {
            best = c;
        }
    }
    best
}

/// Multinomial Naive Bayes over bags of tokens with add-k smoothing. Stores raw
/// counts; log-parameters are derived on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NaiveBayesRepr", into = "NaiveBayesRepr")]
pub struct NaiveBayes {
    repr: NaiveBayesRepr,
    log_priors: Vec<f64>,
    // [class][token]
    log_likelihood: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesRepr {
    pub vocab_size: usize,
    pub k: f64,
    pub class_lines: Vec<u64>,
    pub token_counts: Vec<Vec<u64>>,
}

impl From<NaiveBayes> for NaiveBayesRepr {
    fn from(nb: NaiveBayes) -> Self {
        nb.repr
    }
}

impl TryFrom<NaiveBayesRepr> for NaiveBayes {
    type Error = Error;
    fn try_from(repr: NaiveBayesRepr) -> Result<Self> {
        if !(repr.k.is_finite() && repr.k > 0.0) {
            return Err(Error::InvalidSmoothing(repr.k));
        }
        let present = repr.class_lines.iter().filter(|&&n| n > 0).count();
        if present < 2 {
            return Err(Error::TooFewClasses(present));
        }
        if repr.token_counts.len() != repr.class_lines.len()
            || repr.token_counts.iter().any(|row| row.len() != repr.vocab_size)
        {
            return Err(Error::InvalidDistribution("count table shape".into()));
        }
        let n_lines: u64 = repr.class_lines.iter().sum();
        let log_priors = repr.class_lines.iter().map(|&n| ln(n as f64 / n_lines as f64)).collect();
        let v = repr.vocab_size as f64;
        let log_likelihood = repr
            .token_counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                let denom = total as f64 + repr.k * v;
                row.iter().map(|&n| ln((n as f64 + repr.k) / denom)).collect()
            })
            .collect();
        Ok(Self { repr, log_priors, log_likelihood })
    }
}

impl NaiveBayes {
    pub fn smoothing(&self) -> f64 {
        self.repr.k
    }

    pub fn vocab_size(&self) -> usize {
        self.repr.vocab_size
    }

    pub fn priors(&self) -> Vec<f64> {
        softmax(&self.log_priors)
    }

    pub fn counts(&self) -> &NaiveBayesRepr {
        &self.repr
    }
}

pub fn fit_nb_classifier(corpus: &Corpus, vocab_size: usize, k: f64) -> Result<NaiveBayes> {
    let labels = corpus.labels.as_ref().ok_or(Error::LabelCount { labels: 0, lines: corpus.len() })?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    corpus.validate(vocab_size)?;
    let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut class_lines = vec![0u64; n_classes];
    let mut token_counts = vec![vec![0u64; vocab_size]; n_classes];
    for (line, &label) in corpus.lines.iter().zip(labels) {
        class_lines[label] += 1;
        for &id in line {
            token_counts[label][id as usize] += 1;
        }
    }
    NaiveBayes::try_from(NaiveBayesRepr { vocab_size, k, class_lines, token_counts })
}

impl Classifier for NaiveBayes {
    fn num_classes(&self) -> usize {
        self.log_priors.len()
    }

    /// Log prior plus summed token log-likelihoods; ids outside the vocabulary
    /// count as UNK.
    fn logits(&self, x: &[TokenId]) -> Vec<f64> {
        self.log_priors
            .iter()
            .zip(&self.log_likelihood)
            .map(|(&prior, row)| {
                x.iter().fold(prior, |acc, &id| {
                    let id = if (id as usize) < row.len() { id } else { UNK };
                    acc + row[id as usize]
                })
            })
            .collect()
    }
}

/// Log-space posterior; exposed for callers that want log-probabilities
/// without the round trip through `exp`.
pub fn log_posterior<C: Classifier + ?Sized>(clf: &C, x: &[TokenId]) -> Vec<f64> {
    let logits = clf.logits(x);
    let lse = log_sum_exp(&logits);
    logits.iter().map(|l| l - lse).collect()
}
