//! Single-site Metropolis-Hastings over token sequences.
//!
//! Each step masks one non-frozen position, draws a replacement from the
//! proposal model's conditional at that slot, and accepts it with probability
//! `min(1, exp(E(x) - E(x')) * q(old) / q(new))`. Both proposal terms come from
//! the same conditional, since `x` and `x'` share every other position.
//!
//! Randomness comes from one ChaCha8 stream per chain. Each step consumes
//! exactly two uniforms, proposal draw first and acceptance draw second. Epochs
//! in permutation order additionally consume a shuffle before their first step.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::{combined_energy, EnergyModel};
use crate::math::exp;
use crate::text::{Sequence, TokenId, MASK};
use crate::toy::MaskedConditional;

pub type ChainRng = ChaCha8Rng;

pub fn chain_rng(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One proposed single-token substitution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalMove {
    pub position: usize,
    pub old_id: TokenId,
    pub new_id: TokenId,
    /// `ln q(new | context)`
    pub log_q_fwd: f64,
    /// `ln q(old | context)`
    pub log_q_rev: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionOrder {
    /// Every non-frozen position once per epoch, in a fresh random order.
    #[default]
    Permutation,
    /// Positions drawn uniformly with replacement, as many per epoch as there
    /// are non-frozen positions.
    WithReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub order: PositionOrder,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidEpochs);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub position: usize,
    pub old_id: TokenId,
    pub new_id: TokenId,
    /// Proposed minus current total energy.
    pub delta_e: f64,
    pub accept_prob: f64,
    pub accepted: bool,
    /// Total energy of the chain state after this step.
    pub total_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub sequence: Sequence,
    pub trace: Vec<TraceRecord>,
    pub acceptance_rate: f64,
}

impl ChainResult {
    /// Total energy of the final state (the initial energy if no step ran).
    pub fn final_energy(&self) -> Option<f64> {
        self.trace.last().map(|r| r.total_e)
    }
}

/// MH acceptance probability, evaluated in log space. The exponent is clamped
/// at zero, so the result lies in `(0, 1]`.
pub fn accept_prob(e_cur: f64, e_prop: f64, log_q_fwd: f64, log_q_rev: f64) -> Result<f64> {
    for (v, what) in
        [(e_cur, "current energy"), (e_prop, "proposed energy"), (log_q_fwd, "log q_fwd"), (log_q_rev, "log q_rev")]
    {
        if !v.is_finite() {
            return Err(Error::NonFinite(what));
        }
    }
    let log_ratio = (e_cur - e_prop) + log_q_rev - log_q_fwd;
    if log_ratio >= 0.0 {
        return Ok(1.0);
    }
    Ok(exp(log_ratio).max(f64::MIN_POSITIVE))
}

/// Signature of an acceptance rule; lets verification swap in fixtures.
pub type AcceptFn = fn(f64, f64, f64, f64) -> Result<f64>;

/// Seeds a prompted-generation chain: prompt tokens copied and frozen, the
/// remaining `length - |prompt|` positions set to MASK and left free.
pub fn init_prompted(prompt: &Sequence, length: usize) -> Result<Sequence> {
    if prompt.len() >= length {
        return Err(Error::PromptTooLong { prompt: prompt.len(), length });
    }
    let mut ids = prompt.ids().to_vec();
    ids.resize(length, MASK);
    let mut frozen = vec![true; prompt.len()];
    frozen.resize(length, false);
    Sequence::with_frozen(ids, frozen)
}

/// Seeds a revision chain from `source`. With `frozen_positions`, exactly
/// those positions are frozen; otherwise every position is revisable.
pub fn init_revision(source: &Sequence, frozen_positions: Option<&[usize]>) -> Result<Sequence> {
    if source.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut frozen = vec![false; source.len()];
    if let Some(positions) = frozen_positions {
        for &p in positions {
            *frozen.get_mut(p).ok_or(Error::PositionOutOfRange { position: p, len: source.len() })? = true;
        }
    }
    let seq = Sequence::with_frozen(source.ids().to_vec(), frozen)?;
    if !seq.is_sampleable() {
        return Err(Error::NoRevisablePosition);
    }
    Ok(seq)
}

/// Freezes everything except `position`, for single-slot replacement.
pub fn init_single_slot(source: &Sequence, position: usize) -> Result<Sequence> {
    if position >= source.len() {
        return Err(Error::PositionOutOfRange { position, len: source.len() });
    }
    let frozen: Vec<usize> = (0..source.len()).filter(|&p| p != position).collect();
    init_revision(source, Some(&frozen))
}

/// Draws a proposal at `i` using one uniform from `rng`.
pub fn propose<P: MaskedConditional + ?Sized>(
    x: &Sequence,
    i: usize,
    proposal: &P,
    rng: &mut ChainRng,
) -> Result<ProposalMove> {
    let conditional = proposal.conditional(x.ids(), i)?;
    let u: f64 = rng.random();
    let new_id = conditional.sample_with(u);
    let old_id = x.ids()[i];
    Ok(ProposalMove {
        position: i,
        old_id,
        new_id,
        log_q_fwd: conditional.log_prob(new_id),
        log_q_rev: conditional.log_prob(old_id),
    })
}

/// Sampler state for one chain: current sequence, its cached total energy and
/// the RNG stream.
pub struct Chain<'a, P: MaskedConditional + ?Sized> {
    energy: &'a EnergyModel,
    proposal: &'a P,
    accept: AcceptFn,
    rng: ChainRng,
    current: Sequence,
    current_energy: f64,
    steps: usize,
    accepted: usize,
}

impl<'a, P: MaskedConditional + ?Sized> Chain<'a, P> {
    pub fn new(init: Sequence, seed: u64, energy: &'a EnergyModel, proposal: &'a P) -> Result<Self> {
        Self::with_accept(init, seed, energy, proposal, accept_prob)
    }

    pub fn with_accept(
        init: Sequence,
        seed: u64,
        energy: &'a EnergyModel,
        proposal: &'a P,
        accept: AcceptFn,
    ) -> Result<Self> {
        if init.is_empty() {
            return Err(Error::EmptySequence);
        }
        if !init.is_sampleable() {
            return Err(Error::NoRevisablePosition);
        }
        init.validate(proposal.vocab_size())?;
        let current_energy = combined_energy(&init, energy)?.total;
        Ok(Self {
            energy,
            proposal,
            accept,
            rng: chain_rng(seed),
            current: init,
            current_energy,
            steps: 0,
            accepted: 0,
        })
    }

    pub fn current(&self) -> &Sequence {
        &self.current
    }

    pub fn current_energy(&self) -> f64 {
        self.current_energy
    }

    pub fn rng_mut(&mut self) -> &mut ChainRng {
        &mut self.rng
    }

    /// One MH update at position `i`.
    pub fn step_at(&mut self, i: usize) -> Result<TraceRecord> {
        if i >= self.current.len() {
            return Err(Error::PositionOutOfRange { position: i, len: self.current.len() });
        }
        if self.current.is_frozen(i) {
            return Err(Error::FrozenPosition(i));
        }
        let mv = propose(&self.current, i, self.proposal, &mut self.rng)?;
        let u: f64 = self.rng.random();
        let e_cur = self.current_energy;
        let (e_prop, prob) = if mv.new_id == mv.old_id {
            (self.current_energy, 1.0)
        } else {
            let candidate = self.current.replaced(i, mv.new_id)?;
            let e_prop = combined_energy(&candidate, self.energy)?.total;
            let prob = (self.accept)(self.current_energy, e_prop, mv.log_q_fwd, mv.log_q_rev)?;
            (e_prop, prob)
        };
        let accepted = u < prob;
        if accepted {
            self.current.set(i, mv.new_id)?;
            self.current_energy = e_prop;
            self.accepted += 1;
        }
        let record = TraceRecord {
            step: self.steps,
            position: i,
            old_id: mv.old_id,
            new_id: mv.new_id,
            delta_e: e_prop - e_cur,
            accept_prob: prob,
            accepted,
            total_e: self.current_energy,
        };
        self.steps += 1;
        Ok(record)
    }

    /// Position schedule for one epoch.
    pub fn epoch_positions(&mut self, order: PositionOrder) -> Vec<usize> {
        let free = self.current.free_positions();
        match order {
            PositionOrder::Permutation => {
                let mut p = free;
                p.shuffle(&mut self.rng);
                p
            }
            PositionOrder::WithReplacement => {
                (0..free.len()).map(|_| free[self.rng.random_range(0..free.len())]).collect()
            }
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }

    pub fn into_sequence(self) -> Sequence {
        self.current
    }
}

/// One MH step at position `i` starting from `x`. Returns the next state and
/// the step's record.
pub fn step<P: MaskedConditional + ?Sized>(
    x: &Sequence,
    i: usize,
    energy: &EnergyModel,
    proposal: &P,
    rng: &mut ChainRng,
) -> Result<(Sequence, TraceRecord)> {
    if i >= x.len() {
        return Err(Error::PositionOutOfRange { position: i, len: x.len() });
    }
    if x.is_frozen(i) {
        return Err(Error::FrozenPosition(i));
    }
    let mut chain = Chain::new(x.clone(), 0, energy, proposal)?;
    core::mem::swap(&mut chain.rng, rng);
    let out = chain.step_at(i);
    core::mem::swap(&mut chain.rng, rng);
    let record = out?;
    Ok((chain.into_sequence(), record))
}

pub fn run_chain<P: MaskedConditional + ?Sized>(
    init: &Sequence,
    config: &SamplerConfig,
    energy: &EnergyModel,
    proposal: &P,
) -> Result<ChainResult> {
    run_chain_observed(init, config, energy, proposal, |_, _| {})
}

/// [`run_chain`] with a callback invoked with the state after every epoch.
pub fn run_chain_observed<P, F>(
    init: &Sequence,
    config: &SamplerConfig,
    energy: &EnergyModel,
    proposal: &P,
    mut on_epoch: F,
) -> Result<ChainResult>
where
    P: MaskedConditional + ?Sized,
    F: FnMut(usize, &Sequence),
{
    config.validate()?;
    let mut chain = Chain::new(init.clone(), config.seed, energy, proposal)?;
    let mut trace = Vec::with_capacity(config.epochs * init.free_positions().len());
    for epoch in 0..config.epochs {
        for i in chain.epoch_positions(config.order) {
            trace.push(chain.step_at(i)?);
        }
        on_epoch(epoch, chain.current());
    }
    let acceptance_rate = chain.acceptance_rate();
    Ok(ChainResult { sequence: chain.into_sequence(), trace, acceptance_rate })
}

/// `n_chains` independent chains per initial sequence. Chain `c` (counting
/// across inits, init-major) uses seed `config.seed + c`.
pub fn run_ensemble<P: MaskedConditional + ?Sized>(
    inits: &[Sequence],
    config: &SamplerConfig,
    n_chains: usize,
    energy: &EnergyModel,
    proposal: &P,
) -> Result<Vec<ChainResult>> {
    if n_chains == 0 {
        return Err(Error::InvalidChainCount);
    }
    let mut out = Vec::with_capacity(inits.len() * n_chains);
    for (c, init) in ensemble_jobs(inits, n_chains) {
        let cfg = SamplerConfig { seed: chain_seed(config.seed, c), ..*config };
        out.push(run_chain(init, &cfg, energy, proposal)?);
    }
    Ok(out)
}

pub fn chain_seed(base: u64, chain_index: usize) -> u64 {
    base.wrapping_add(chain_index as u64)
}

/// `(chain index, init)` pairs in ensemble order.
pub fn ensemble_jobs(inits: &[Sequence], n_chains: usize) -> impl Iterator<Item = (usize, &Sequence)> {
    inits.iter().flat_map(move |init| core::iter::repeat_n(init, n_chains)).enumerate()
}
