//! Expert energies and their weighted sum.
//!
//! Each expert maps a sequence to a scalar energy (lower is better). An
//! [`EnergyModel`] combines experts linearly; its total is the dot product of
//! the weights with the component energies, accumulated in list order.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{ln, sqrt};
use crate::text::{Sequence, TokenId, UNK};
use crate::toy::{Classifier, MaskedConditional, TabularJoint};

/// Posterior floor applied before taking the log in the discriminator energy.
pub const POSTERIOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertKind {
    Mlm,
    Discriminator,
    Hamming,
    Fuzzy,
    Lexicon,
    /// Negative log of an explicit joint table.
    Joint,
    Remote,
}

impl ExpertKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExpertKind::Mlm => "mlm",
            ExpertKind::Discriminator => "discriminator",
            ExpertKind::Hamming => "hamming",
            ExpertKind::Fuzzy => "fuzzy",
            ExpertKind::Lexicon => "lexicon",
            ExpertKind::Joint => "joint",
            ExpertKind::Remote => "remote",
        }
    }
}

/// A black-box energy over sequences. Implementations must be pure: the same
/// sequence always yields the same bits.
pub trait Expert: Send + Sync {
    fn kind(&self) -> ExpertKind;

    fn name(&self) -> &str {
        self.kind().as_str()
    }

    fn energy(&self, x: &Sequence) -> Result<f64>;
}

pub fn hamming_energy(x: &Sequence, reference: &Sequence) -> Result<f64> {
    if x.len() != reference.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: reference.len() });
    }
    Ok(x.ids().iter().zip(reference.ids()).filter(|(a, b)| a != b).count() as f64)
}

/// Negative count of positions holding a lexicon token.
pub fn lexicon_energy(x: &Sequence, lexicon: &BTreeSet<TokenId>) -> f64 {
    -(x.ids().iter().filter(|id| lexicon.contains(id)).count() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorMode {
    /// `-ln max(p(target | x), 1e-12)`.
    #[default]
    LogPosterior,
    /// Negative raw logit of the target class.
    RawLogit,
}

pub fn disc_energy<C: Classifier + ?Sized>(x: &Sequence, clf: &C, target: usize) -> Result<f64> {
    disc_energy_with(x, clf, target, DiscriminatorMode::LogPosterior)
}

pub fn disc_energy_with<C: Classifier + ?Sized>(
    x: &Sequence,
    clf: &C,
    target: usize,
    mode: DiscriminatorMode,
) -> Result<f64> {
    let n = clf.num_classes();
    if target >= n {
        return Err(Error::UnknownClass { class: target, num_classes: n });
    }
    Ok(match mode {
        DiscriminatorMode::LogPosterior => posterior_energy(clf.posterior(x.ids())[target]),
        DiscriminatorMode::RawLogit => -clf.logits(x.ids())[target],
    })
}

/// `-ln p` with `p` floored at [`POSTERIOR_FLOOR`].
pub fn posterior_energy(p: f64) -> f64 {
    -ln(p.max(POSTERIOR_FLOOR))
}

/// Negative sum over positions of the model's unnormalized log-score for the
/// token at that position, each position scored with itself masked.
pub fn mlm_energy<M: MaskedConditional + ?Sized>(x: &Sequence, mlm: &M) -> Result<f64> {
    let ids = x.ids();
    let mut total = 0.0;
    for i in 0..ids.len() {
        total += mlm.score(ids, i)?;
    }
    Ok(-total)
}

/// Token embeddings indexed by id, with the UNK vector as fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: Vec<Option<Vec<f64>>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, vocab_size: usize) -> Self {
        Self { dim, vectors: alloc::vec![None; vocab_size] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, id: TokenId, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::EmbeddingDimension { expected: self.dim, got: vector.len() });
        }
        let vocab_size = self.vectors.len();
        let slot = self.vectors.get_mut(id as usize).ok_or(Error::InvalidTokenId { id, vocab_size })?;
        *slot = Some(vector);
        Ok(())
    }

    pub fn get(&self, id: TokenId) -> Result<&[f64]> {
        self.vectors
            .get(id as usize)
            .and_then(Option::as_ref)
            .or_else(|| self.vectors.get(UNK as usize).and_then(Option::as_ref))
            .map(Vec::as_slice)
            .ok_or(Error::MissingEmbedding(id))
    }

    fn cosine(&self, a: TokenId, b: TokenId) -> Result<f64> {
        let (u, v) = (self.get(a)?, self.get(b)?);
        let nu = sqrt(u.iter().map(|x| x * x).sum());
        let nv = sqrt(v.iter().map(|x| x * x).sum());
        if nu == 0.0 {
            return Err(Error::ZeroNormEmbedding(a));
        }
        if nv == 0.0 {
            return Err(Error::ZeroNormEmbedding(b));
        }
        let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
        Ok(dot / (nu * nv))
    }
}

/// `1 - F1` of greedy cosine matching between the two token sets: precision
/// averages each candidate token's best match in the reference, recall the
/// reverse.
pub fn fuzzy_energy(x: &Sequence, reference: &Sequence, emb: &EmbeddingTable) -> Result<f64> {
    if x.is_empty() || reference.is_empty() {
        return Err(Error::EmptySequence);
    }
    let (xs, rs) = (x.ids(), reference.ids());
    let mut sim = Vec::with_capacity(xs.len() * rs.len());
    for &a in xs {
        for &b in rs {
            sim.push(emb.cosine(a, b)?);
        }
    }
    let cols = rs.len();
    let precision = (0..xs.len())
        .map(|i| sim[i * cols..(i + 1) * cols].iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / xs.len() as f64;
    let recall =
        (0..cols).map(|j| (0..xs.len()).map(|i| sim[i * cols + j]).fold(f64::NEG_INFINITY, f64::max)).sum::<f64>()
            / cols as f64;
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(1.0 - f1)
}

#[derive(Debug, Clone)]
pub struct HammingExpert {
    reference: Sequence,
}

impl HammingExpert {
    pub fn new(reference: Sequence) -> Self {
        Self { reference }
    }
}

impl Expert for HammingExpert {
    fn kind(&self) -> ExpertKind {
        ExpertKind::Hamming
    }
    fn energy(&self, x: &Sequence) -> Result<f64> {
        hamming_energy(x, &self.reference)
    }
}

#[derive(Debug, Clone)]
pub struct FuzzyExpert {
    reference: Sequence,
    embeddings: Arc<EmbeddingTable>,
}

impl FuzzyExpert {
    pub fn new(reference: Sequence, embeddings: Arc<EmbeddingTable>) -> Self {
        Self { reference, embeddings }
    }
}

impl Expert for FuzzyExpert {
    fn kind(&self) -> ExpertKind {
        ExpertKind::Fuzzy
    }
    fn energy(&self, x: &Sequence) -> Result<f64> {
        fuzzy_energy(x, &self.reference, &self.embeddings)
    }
}

#[derive(Debug, Clone)]
pub struct LexiconExpert {
    lexicon: BTreeSet<TokenId>,
}

impl LexiconExpert {
    pub fn new(lexicon: impl IntoIterator<Item = TokenId>) -> Self {
        Self { lexicon: lexicon.into_iter().collect() }
    }

    pub fn lexicon(&self) -> &BTreeSet<TokenId> {
        &self.lexicon
    }
}

impl Expert for LexiconExpert {
    fn kind(&self) -> ExpertKind {
        ExpertKind::Lexicon
    }
    fn energy(&self, x: &Sequence) -> Result<f64> {
        Ok(lexicon_energy(x, &self.lexicon))
    }
}

#[derive(Clone)]
pub struct DiscriminatorExpert {
    classifier: Arc<dyn Classifier>,
    target: usize,
    mode: DiscriminatorMode,
}

impl DiscriminatorExpert {
    pub fn new(classifier: Arc<dyn Classifier>, target: usize, mode: DiscriminatorMode) -> Result<Self> {
        let n = classifier.num_classes();
        if target >= n {
            return Err(Error::UnknownClass { class: target, num_classes: n });
        }
        Ok(Self { classifier, target, mode })
    }
}

impl Expert for DiscriminatorExpert {
    fn kind(&self) -> ExpertKind {
        ExpertKind::Discriminator
    }
    fn energy(&self, x: &Sequence) -> Result<f64> {
        disc_energy_with(x, self.classifier.as_ref(), self.target, self.mode)
    }
}

#[derive(Clone)]
pub struct MlmExpert {
    model: Arc<dyn MaskedConditional>,
}

impl MlmExpert {
    pub fn new(model: Arc<dyn MaskedConditional>) -> Self {
        Self { model }
    }
}

impl Expert for MlmExpert {
    fn kind(&self) -> ExpertKind {
        ExpertKind::Mlm
    }
    fn energy(&self, x: &Sequence) -> Result<f64> {
        mlm_energy(x, self.model.as_ref())
    }
}

/// `-ln p(x)` under an explicit joint table.
#[derive(Debug, Clone)]
pub struct JointExpert {
    joint: Arc<TabularJoint>,
}

impl JointExpert {
    pub fn new(joint: Arc<TabularJoint>) -> Self {
        Self { joint }
    }
}

impl Expert for JointExpert {
    fn kind(&self) -> ExpertKind {
        ExpertKind::Joint
    }
    fn energy(&self, x: &Sequence) -> Result<f64> {
        Ok(-self.joint.log_prob(x.ids())?)
    }
}

/// Per-expert energies and their weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub components: Vec<f64>,
    pub total: f64,
}

/// Ordered `(expert, weight)` pairs.
#[derive(Clone, Default)]
pub struct EnergyModel {
    experts: Vec<(Arc<dyn Expert>, f64)>,
}

impl core::fmt::Debug for EnergyModel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_list().entries(self.experts.iter().map(|(e, w)| (e.name().to_string(), *w))).finish()
    }
}

impl EnergyModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<E: Expert + 'static>(&mut self, expert: E, weight: f64) -> Result<()> {
        self.push_shared(Arc::new(expert), weight)
    }

    pub fn push_shared(&mut self, expert: Arc<dyn Expert>, weight: f64) -> Result<()> {
        if !weight.is_finite() {
            return Err(Error::NonFinite("expert weight"));
        }
        if weight < 0.0 {
            log::warn!("expert `{}` has negative weight {weight}", expert.name());
        }
        self.experts.push((expert, weight));
        Ok(())
    }

    /// Appends another model's experts after this one's.
    pub fn extend(&mut self, other: &EnergyModel) {
        self.experts.extend(other.experts.iter().cloned());
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.experts.iter().map(|(_, w)| *w).collect()
    }

    pub fn experts(&self) -> impl Iterator<Item = (&dyn Expert, f64)> {
        self.experts.iter().map(|(e, w)| (e.as_ref(), *w))
    }

    /// Copy with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { experts: self.experts.iter().map(|(e, w)| (e.clone(), w * factor)).collect() }
    }

    pub fn total(&self, x: &Sequence) -> Result<f64> {
        combined_energy(x, self).map(|b| b.total)
    }
}

pub fn combined_energy(x: &Sequence, model: &EnergyModel) -> Result<EnergyBreakdown> {
    let mut components = Vec::with_capacity(model.len());
    let mut total = 0.0;
    for (expert, weight) in model.experts() {
        let e = expert
            .energy(x)
            .map_err(|source| Error::Expert { name: expert.name().to_string(), source: Box::new(source) })?;
        total += weight * e;
        components.push(e);
    }
    Ok(EnergyBreakdown { components, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn seq(ids: &[TokenId]) -> Sequence {
        Sequence::new(ids.to_vec())
    }

    #[test]
    fn hamming_cases() {
        assert_eq!(hamming_energy(&seq(&[2, 3, 4]), &seq(&[2, 3, 5])).unwrap(), 1.0);
        assert_eq!(hamming_energy(&seq(&[2, 3, 4]), &seq(&[2, 3, 4])).unwrap(), 0.0);
        assert_eq!(hamming_energy(&seq(&[2, 3, 4]), &seq(&[5, 6, 7])).unwrap(), 3.0);
        assert!(hamming_energy(&seq(&[2]), &seq(&[2, 3])).is_err());
    }

    fn emb_ab() -> EmbeddingTable {
        let mut e = EmbeddingTable::new(2, 4);
        e.insert(2, vec![1.0, 0.0]).unwrap();
        e.insert(3, vec![0.0, 1.0]).unwrap();
        e
    }

    #[test]
    fn fuzzy_cases() {
        let e = emb_ab();
        assert_eq!(fuzzy_energy(&seq(&[2, 3]), &seq(&[2, 3]), &e).unwrap(), 0.0);
        assert_eq!(fuzzy_energy(&seq(&[2]), &seq(&[3]), &e).unwrap(), 1.0);
        // P = 1, R = (1 + 0)/2, F1 = 2/3
        assert_relative_eq!(fuzzy_energy(&seq(&[2]), &seq(&[2, 3]), &e).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn fuzzy_errors() {
        let mut e = emb_ab();
        assert_eq!(fuzzy_energy(&seq(&[2]), &seq(&[0]), &e), Err(Error::MissingEmbedding(0)));
        e.insert(UNK, vec![0.0, 0.0]).unwrap();
        assert_eq!(fuzzy_energy(&seq(&[0]), &seq(&[2]), &e), Err(Error::ZeroNormEmbedding(0)));
        assert_eq!(fuzzy_energy(&seq(&[]), &seq(&[2]), &e), Err(Error::EmptySequence));
        assert!(e.insert(2, vec![1.0]).is_err());
    }

    #[test]
    fn lexicon_counts_positions() {
        let lex: BTreeSet<TokenId> = [5, 6].into_iter().collect();
        assert_eq!(lexicon_energy(&seq(&[2, 3]), &lex), 0.0);
        assert_eq!(lexicon_energy(&seq(&[5, 3, 6]), &lex), -2.0);
        assert_eq!(lexicon_energy(&seq(&[5, 5]), &lex), -2.0);
    }

    struct Fixed(Vec<f64>);
    impl Classifier for Fixed {
        fn num_classes(&self) -> usize {
            self.0.len()
        }
        fn logits(&self, _: &[TokenId]) -> Vec<f64> {
            self.0.iter().map(|&p| ln(p)).collect()
        }
        fn posterior(&self, _: &[TokenId]) -> Vec<f64> {
            self.0.clone()
        }
    }

    #[test]
    #[allow(clippy::approx_constant)] // values as printed in the worked examples
    fn disc_cases() {
        let x = seq(&[2]);
        assert_eq!(disc_energy(&x, &Fixed(vec![0.0, 1.0]), 1).unwrap(), 0.0);
        assert_relative_eq!(disc_energy(&x, &Fixed(vec![0.5, 0.5]), 1).unwrap(), 0.693147, epsilon = 1e-6);
        assert_relative_eq!(disc_energy(&x, &Fixed(vec![1.0, 0.0]), 1).unwrap(), 27.6310, epsilon = 1e-4);
        assert_eq!(disc_energy(&x, &Fixed(vec![0.5, 0.5]), 2), Err(Error::UnknownClass { class: 2, num_classes: 2 }));
    }

    #[test]
    fn disc_raw_logit_mode() {
        let x = seq(&[2]);
        let e = disc_energy_with(&x, &Fixed(vec![0.25, 0.75]), 0, DiscriminatorMode::RawLogit).unwrap();
        assert_relative_eq!(e, -ln(0.25));
    }

    #[test]
    fn mlm_energy_uniform_tabular() {
        let t = TabularJoint::new(2, 2, vec![0.25; 4]).unwrap();
        assert_relative_eq!(mlm_energy(&seq(&[0, 1]), &t).unwrap(), 2.0 * -ln(0.5), epsilon = 1e-12);
    }

    #[test]
    fn combined_cases() {
        struct Const(f64);
        impl Expert for Const {
            fn kind(&self) -> ExpertKind {
                ExpertKind::Remote
            }
            fn energy(&self, _: &Sequence) -> Result<f64> {
                Ok(self.0)
            }
        }
        let x = seq(&[2]);
        let mut m = EnergyModel::new();
        assert_eq!(combined_energy(&x, &m).unwrap().total, 0.0);
        m.push(Const(1.0), 2.0).unwrap();
        assert_eq!(combined_energy(&x, &m).unwrap().total, 2.0);
        m.push(Const(-1.0), 3.0).unwrap();
        let b = combined_energy(&x, &m).unwrap();
        assert_eq!(b.components, vec![1.0, -1.0]);
        assert_eq!(b.total, -1.0);
        assert_eq!(m.push(Const(0.0), f64::NAN), Err(Error::NonFinite("expert weight")));
    }

    #[test]
    fn combined_tags_failing_expert() {
        let mut m = EnergyModel::new();
        m.push(HammingExpert::new(seq(&[2, 3])), 1.0).unwrap();
        match combined_energy(&seq(&[2]), &m) {
            Err(Error::Expert { name, .. }) => assert_eq!(name, "hamming"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
