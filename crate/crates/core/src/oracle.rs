//! Exact enumeration of the Boltzmann distribution `p(x) = exp(-E(x)) / Z`
//! over all `V^L` sequences of a tiny space, plus the distances and kernel
//! checks that compare the sampler against it.
//!
//! States are indexed lexicographically by token id, position 0 most
//! significant.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::{combined_energy, EnergyModel};
use crate::math::{exp, log_sum_exp};
use crate::sampler::{accept_prob, AcceptFn};
use crate::text::{Sequence, TokenId};
use crate::toy::MaskedConditional;

/// Largest space [`enumerate_distribution`] will walk.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;
/// Largest space [`check_detailed_balance`] will walk.
pub const DETAILED_BALANCE_LIMIT: u128 = 10_000;

/// `V^L`, or an error if it does not fit in a `u128`.
pub fn state_count(vocab_size: usize, length: usize) -> Result<u128> {
    let mut n: u128 = 1;
    for _ in 0..length {
        n = n.checked_mul(vocab_size as u128).ok_or(Error::SpaceTooLarge { states: u128::MAX, limit: u128::MAX })?;
    }
    Ok(n)
}

pub fn state_index(ids: &[TokenId], vocab_size: usize) -> Result<usize> {
    let mut idx = 0usize;
    for &id in ids {
        if id as usize >= vocab_size {
            return Err(Error::InvalidTokenId { id, vocab_size });
        }
        idx = idx * vocab_size + id as usize;
    }
    Ok(idx)
}

pub fn state_ids(mut index: usize, vocab_size: usize, length: usize) -> Vec<TokenId> {
    let mut ids = vec![0; length];
    for slot in ids.iter_mut().rev() {
        *slot = (index % vocab_size) as TokenId;
        index /= vocab_size;
    }
    ids
}

fn guarded(vocab_size: usize, length: usize, limit: u128) -> Result<usize> {
    let n = state_count(vocab_size, length)?;
    if n > limit {
        return Err(Error::SpaceTooLarge { states: n, limit });
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactDistribution {
    pub vocab_size: usize,
    pub length: usize,
    /// `ln Z`
    pub log_z: f64,
    /// `Z`; may under- or overflow where `log_z` does not.
    pub z: f64,
    pub energy: Vec<f64>,
    pub prob: Vec<f64>,
}

impl ExactDistribution {
    pub fn prob_of(&self, ids: &[TokenId]) -> Result<f64> {
        Ok(self.prob[state_index(ids, self.vocab_size)?])
    }
}

/// Computes every state's total energy and normalizes with log-sum-exp.
pub fn enumerate_distribution(energy: &EnergyModel, vocab_size: usize, length: usize) -> Result<ExactDistribution> {
    let n = guarded(vocab_size, length, ENUMERATION_LIMIT)?;
    let mut energies = Vec::with_capacity(n);
    for idx in 0..n {
        let x = Sequence::new(state_ids(idx, vocab_size, length));
        let e = combined_energy(&x, energy)?.total;
        if !e.is_finite() {
            return Err(Error::NonFinite("state energy"));
        }
        energies.push(e);
    }
    let neg: Vec<f64> = energies.iter().map(|e| -e).collect();
    let log_z = log_sum_exp(&neg);
    let prob = neg.iter().map(|&l| exp(l - log_z)).collect();
    Ok(ExactDistribution { vocab_size, length, log_z, z: exp(log_z), energy: energies, prob })
}

/// `½ Σ |p − q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    for d in [p, q] {
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidDistribution(alloc::format!("mass sums to {s}")));
        }
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Normalized visit counts over the full `V^L` index set.
pub fn empirical_distribution<'a, I>(samples: I, vocab_size: usize, length: usize) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [TokenId]>,
{
    let n = guarded(vocab_size, length, ENUMERATION_LIMIT)?;
    let mut counts = vec![0u64; n];
    let mut total = 0u64;
    for s in samples {
        if s.len() != length {
            return Err(Error::LengthMismatch { left: s.len(), right: length });
        }
        counts[state_index(s, vocab_size)?] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::EmptySamples);
    }
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}

/// Largest `|π(x) T(x→y) − π(y) T(y→x)|` over ordered pairs differing in one
/// position, where `T` picks a position uniformly, proposes from the
/// conditional and accepts with MH.
pub fn check_detailed_balance<P: MaskedConditional + ?Sized>(
    energy: &EnergyModel,
    proposal: &P,
    vocab_size: usize,
    length: usize,
) -> Result<f64> {
    check_detailed_balance_with(energy, proposal, vocab_size, length, accept_prob)
}

/// [`check_detailed_balance`] with a substitute acceptance rule.
pub fn check_detailed_balance_with<P: MaskedConditional + ?Sized>(
    energy: &EnergyModel,
    proposal: &P,
    vocab_size: usize,
    length: usize,
    accept: AcceptFn,
) -> Result<f64> {
    guarded(vocab_size, length, DETAILED_BALANCE_LIMIT)?;
    let exact = enumerate_distribution(energy, vocab_size, length)?;
    let n = exact.prob.len();
    let pos_weight = 1.0 / length as f64;

    let transition = |from: usize, x: &[TokenId], i: usize, v: TokenId| -> Result<f64> {
        let cond = proposal.conditional(x, i)?;
        let mut y = x.to_vec();
        y[i] = v;
        let to = state_index(&y, vocab_size)?;
        let a = accept(exact.energy[from], exact.energy[to], cond.log_prob(v), cond.log_prob(x[i]))?;
        Ok(pos_weight * cond.prob(v) * a)
    };

    let mut worst = 0.0f64;
    for from in 0..n {
        let x = state_ids(from, vocab_size, length);
        for i in 0..length {
            for v in 0..vocab_size as TokenId {
                if v == x[i] {
                    continue;
                }
                let mut y = x.clone();
                y[i] = v;
                let to = state_index(&y, vocab_size)?;
                let forward = exact.prob[from] * transition(from, &x, i, v)?;
                let backward = exact.prob[to] * transition(to, &y, i, x[i])?;
                worst = worst.max((forward - backward).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::{Expert, ExpertKind};
    use approx::assert_relative_eq;

    struct TableEnergy(Vec<f64>, usize);
    impl Expert for TableEnergy {
        fn kind(&self) -> ExpertKind {
            ExpertKind::Remote
        }
        fn energy(&self, x: &Sequence) -> Result<f64> {
            Ok(self.0[state_index(x.ids(), self.1)?])
        }
    }

    #[test]
    fn indexing_round_trips() {
        for idx in 0..27 {
            assert_eq!(state_index(&state_ids(idx, 3, 3), 3).unwrap(), idx);
        }
        assert_eq!(state_ids(1, 2, 2), vec![0, 1]);
    }

    #[test]
    fn constant_energy_is_uniform() {
        let mut m = EnergyModel::new();
        m.push(TableEnergy(vec![3.0; 8], 2), 1.0).unwrap();
        let d = enumerate_distribution(&m, 2, 3).unwrap();
        for &p in &d.prob {
            assert_relative_eq!(p, 0.125, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_state_energies() {
        let mut m = EnergyModel::new();
        m.push(TableEnergy(vec![0.0, core::f64::consts::LN_2], 2), 1.0).unwrap();
        let d = enumerate_distribution(&m, 2, 1).unwrap();
        assert_relative_eq!(d.prob[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(d.prob[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(d.z, 1.5, epsilon = 1e-15);
    }

    #[test]
    fn enumeration_guard() {
        let m = EnergyModel::new();
        assert_eq!(
            enumerate_distribution(&m, 10, 7).unwrap_err(),
            Error::SpaceTooLarge { states: 10_000_000, limit: ENUMERATION_LIMIT }
        );
    }

    #[test]
    fn tv_cases() {
        assert_eq!(tv_distance(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(tv_distance(&[0.6, 0.4], &[0.5, 0.5]).unwrap(), 0.1, epsilon = 1e-15);
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn empirical_cases() {
        let aa: &[TokenId] = &[0, 0];
        assert_eq!(empirical_distribution([aa, aa], 2, 2).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        let all: Vec<Vec<TokenId>> = (0..4).map(|i| state_ids(i, 2, 2)).collect();
        assert_eq!(empirical_distribution(all.iter().map(Vec::as_slice), 2, 2).unwrap(), vec![0.25; 4]);
        assert_eq!(empirical_distribution(core::iter::empty::<&[TokenId]>(), 2, 2), Err(Error::EmptySamples));
        let short: &[TokenId] = &[0];
        assert!(empirical_distribution([short], 2, 2).is_err());
    }
}
