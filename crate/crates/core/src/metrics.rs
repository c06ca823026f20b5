//! Corpus-level evaluation: internal classifier accuracy, hamming to source,
//! distinct-n diversity and corpus BLEU.

use alloc::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::hamming_energy;
use crate::math::{exp, ln};
use crate::text::{Sequence, TokenId};
use crate::toy::Classifier;

/// Substitute for zero n-gram precisions in [`corpus_bleu`].
pub const BLEU_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub mean_hamming: Option<f64>,
    pub internal_accuracy: Option<f64>,
    pub distinct_1: Option<f64>,
    pub distinct_2: Option<f64>,
    pub distinct_3: Option<f64>,
    pub bleu: Option<f64>,
    pub mean_energy: Option<f64>,
    pub acceptance_rate: Option<f64>,
}

/// Fraction of samples whose predicted class is `target`.
pub fn internal_accuracy<C: Classifier + ?Sized>(samples: &[Sequence], clf: &C, target: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let hits = samples.iter().filter(|s| clf.predict(s.ids()) == target).count();
    Ok(hits as f64 / samples.len() as f64)
}

pub fn mean_hamming(samples: &[Sequence], sources: &[Sequence]) -> Result<f64> {
    if samples.len() != sources.len() {
        return Err(Error::LengthMismatch { left: samples.len(), right: sources.len() });
    }
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut total = 0.0;
    for (s, r) in samples.iter().zip(sources) {
        total += hamming_energy(s, r)?;
    }
    Ok(total / samples.len() as f64)
}

/// Unique n-grams over total n-grams, pooled across samples. Samples shorter
/// than `n` are skipped with a warning.
pub fn distinct_n(samples: &[&[TokenId]], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::NoNgrams(n));
    }
    let mut unique = BTreeSet::new();
    let mut total = 0usize;
    let mut skipped = 0usize;
    for s in samples {
        if s.len() < n {
            skipped += 1;
            continue;
        }
        for gram in s.windows(n) {
            unique.insert(gram);
            total += 1;
        }
    }
    if skipped > 0 {
        log::warn!("distinct-{n}: skipped {skipped} samples shorter than {n}");
    }
    if total == 0 {
        return Err(Error::NoNgrams(n));
    }
    Ok(unique.len() as f64 / total as f64)
}

fn ngram_counts(tokens: &[TokenId], n: usize) -> BTreeMap<&[TokenId], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU with one reference per hypothesis: clipped n-gram precisions
/// pooled over the corpus for `n = 1..=max_n`, zero precisions replaced by
/// [`BLEU_EPSILON`], geometric mean times the brevity penalty
/// `min(1, exp(1 - r/c))`.
pub fn corpus_bleu(hypotheses: &[&[TokenId]], references: &[&[TokenId]], max_n: usize) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::LengthMismatch { left: hypotheses.len(), right: references.len() });
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut matched = alloc::vec![0usize; max_n];
    let mut possible = alloc::vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (g, c) in &hc {
                matched[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
                possible[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let log_mean = matched
        .iter()
        .zip(&possible)
        .map(|(&m, &p)| {
            let precision = if m == 0 { BLEU_EPSILON } else { m as f64 / p as f64 };
            ln(precision)
        })
        .sum::<f64>()
        / max_n as f64;
    let bp = if hyp_len >= ref_len { 1.0 } else { exp(1.0 - ref_len as f64 / hyp_len as f64) };
    Ok(bp * exp(log_mean))
}
