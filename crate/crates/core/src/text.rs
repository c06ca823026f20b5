//! Vocabulary, whitespace tokenization and the frozen-position sequence type.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const MASK: TokenId = 0;
pub const UNK: TokenId = 1;
pub const MASK_TOKEN: &str = "[MASK]";
pub const UNK_TOKEN: &str = "[UNK]";

/// Bijection between token strings and ids. `[MASK]` is always id 0 and
/// `[UNK]` id 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from an id-ordered token list. The first two entries
    /// must be the MASK and UNK strings.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != MASK_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::InvalidVocabulary(format!("ids 0 and 1 must be {MASK_TOKEN} and {UNK_TOKEN}")));
        }
        let mut index = BTreeMap::new();
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::InvalidVocabulary(format!("bad token at id {id}: {tok:?}")));
            }
            if index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or UNK.
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Result<&str> {
        self.tokens.get(id as usize).map(String::as_str).ok_or(Error::InvalidTokenId { id, vocab_size: self.len() })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn check_id(&self, id: TokenId) -> Result<()> {
        if (id as usize) < self.len() {
            Ok(())
        } else {
            Err(Error::InvalidTokenId { id, vocab_size: self.len() })
        }
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Counts whitespace tokens over `lines` and keeps those seen at least
/// `min_count` times, ordered by descending frequency then lexicographically.
pub fn build_vocab<'a, I>(lines: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    if min_count == 0 {
        return Err(Error::InvalidMinCount);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut n_lines = 0usize;
    for line in lines {
        n_lines += 1;
        for tok in line.split_whitespace() {
            if tok == MASK_TOKEN || tok == UNK_TOKEN {
                continue;
            }
            *counts.entry(tok).or_default() += 1;
        }
    }
    if n_lines == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    // BTreeMap iteration is already lexicographic; a stable sort keeps that as the tie-break.
    kept.sort_by_key(|&(_, c)| core::cmp::Reverse(c));
    let mut tokens = Vec::with_capacity(kept.len() + 2);
    tokens.push(MASK_TOKEN.to_string());
    tokens.push(UNK_TOKEN.to_string());
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
    Vocabulary::from_tokens(tokens)
}

/// A fixed-length token sequence with a per-position freeze mask. Frozen
/// positions are never modified by the sampler.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sequence {
    ids: Vec<TokenId>,
    frozen: Vec<bool>,
}

impl Sequence {
    /// All positions revisable.
    pub fn new(ids: Vec<TokenId>) -> Self {
        let frozen = alloc::vec![false; ids.len()];
        Self { ids, frozen }
    }

    pub fn with_frozen(ids: Vec<TokenId>, frozen: Vec<bool>) -> Result<Self> {
        if ids.len() != frozen.len() {
            return Err(Error::LengthMismatch { left: ids.len(), right: frozen.len() });
        }
        Ok(Self { ids, frozen })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen.get(i).copied().unwrap_or(false)
    }

    pub fn get(&self, i: usize) -> Option<TokenId> {
        self.ids.get(i).copied()
    }

    /// Positions the sampler may revise, in increasing order.
    pub fn free_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.frozen[i]).collect()
    }

    /// Replaces the token at `i`, ignoring the freeze mask.
    pub fn set(&mut self, i: usize, id: TokenId) -> Result<()> {
        let len = self.len();
        let slot = self.ids.get_mut(i).ok_or(Error::PositionOutOfRange { position: i, len })?;
        *slot = id;
        Ok(())
    }

    /// Copy with position `i` replaced.
    pub fn replaced(&self, i: usize, id: TokenId) -> Result<Self> {
        let mut out = self.clone();
        out.set(i, id)?;
        Ok(out)
    }

    /// Whether the sequence is usable as a sampler input: non-empty with at
    /// least one revisable position.
    pub fn is_sampleable(&self) -> bool {
        self.frozen.iter().any(|f| !f)
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        for &id in &self.ids {
            if id as usize >= vocab_size {
                return Err(Error::InvalidTokenId { id, vocab_size });
            }
        }
        Ok(())
    }
}

/// Whitespace tokenization; unseen tokens become UNK and nothing is frozen.
/// Empty text yields an empty sequence, which the sampler rejects.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Sequence {
    Sequence::new(text.split_whitespace().map(|t| vocab.id_or_unk(t)).collect())
}

pub fn detokenize(seq: &Sequence, vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for (n, &id) in seq.ids().iter().enumerate() {
        if n > 0 {
            out.push(' ');
        }
        out.push_str(vocab.token(id)?);
    }
    Ok(out)
}

/// Tokenized lines, optionally labeled with a class id per line.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub lines: Vec<Vec<TokenId>>,
    pub labels: Option<Vec<usize>>,
}

impl Corpus {
    pub fn from_lines<'a, I>(lines: I, vocab: &Vocabulary) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let lines = lines.into_iter().map(|l| l.split_whitespace().map(|t| vocab.id_or_unk(t)).collect()).collect();
        Self { lines, labels: None }
    }

    pub fn labeled(lines: Vec<Vec<TokenId>>, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != lines.len() {
            return Err(Error::LabelCount { labels: labels.len(), lines: lines.len() });
        }
        Ok(Self { lines, labels: Some(labels) })
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        for line in &self.lines {
            for &id in line {
                if id as usize >= vocab_size {
                    return Err(Error::InvalidTokenId { id, vocab_size });
                }
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.lines.len() {
                return Err(Error::LabelCount { labels: labels.len(), lines: self.lines.len() });
            }
        }
        Ok(())
    }
}
