//! Oracle-backed self-checks of the sampler, runnable from the CLI.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mixmatch_core::experts::{EnergyModel, Expert, ExpertKind, HammingExpert, JointExpert, LexiconExpert, MlmExpert};
use mixmatch_core::oracle::{
    check_detailed_balance_with, empirical_distribution, enumerate_distribution, state_count, state_ids, state_index,
    tv_distance, ENUMERATION_LIMIT,
};
use mixmatch_core::sampler::{accept_prob, AcceptFn, Chain, PositionOrder};
use mixmatch_core::text::{Corpus, Sequence, TokenId};
use mixmatch_core::toy::{fit_neighbor_mlm, MaskedConditional, NeighborMlm, TabularJoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub const GIBBS_LIMIT_TOL: f64 = 1e-9;
pub const DETAILED_BALANCE_TOL: f64 = 1e-9;
pub const MUTATION_MIN_VIOLATION: f64 = 1e-3;
pub const TV_THRESHOLD: f64 = 0.05;
/// Epochs dropped from the start of a TV run before thinning.
pub const TV_BURN_IN_EPOCHS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Tiny,
    Small,
}

impl Scale {
    /// Vocabulary size, length and total steps of the TV run.
    pub fn tv_params(self) -> (usize, usize, usize) {
        match self {
            Scale::Tiny => (3, 3, 60_000),
            Scale::Small => (4, 4, 200_000),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub scale: Scale,
    pub seed: u64,
    pub vocab_size: Option<usize>,
    pub length: Option<usize>,
    pub steps: Option<usize>,
    /// Swap in the sign-flipped acceptance rule everywhere the real one is
    /// used, to show the suite notices.
    pub corrupt_acceptance: bool,
}

impl VerifyOptions {
    pub fn new(scale: Scale) -> Self {
        Self { scale, seed: 0, vocab_size: None, length: None, steps: None, corrupt_acceptance: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Comparison {
    AtMost,
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub comparison: Comparison,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, value: f64, comparison: Comparison, threshold: f64, detail: String) -> Self {
        let passed = match comparison {
            Comparison::AtMost => value <= threshold,
            Comparison::Above => value > threshold,
        };
        Self { name, value, comparison, threshold, passed, detail }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.comparison {
            Comparison::AtMost => "<=",
            Comparison::Above => ">",
        };
        write!(
            f,
            "{} {:<18} {:.3e} {op} {:.1e}  ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Acceptance with the energy difference negated: the classic sign bug.
pub fn sign_flipped_accept(e_cur: f64, e_prop: f64, log_q_fwd: f64, log_q_rev: f64) -> mixmatch_core::Result<f64> {
    accept_prob(e_prop, e_cur, log_q_fwd, log_q_rev)
}

/// An energy given explicitly per state.
#[derive(Debug, Clone)]
pub struct TableEnergy {
    vocab_size: usize,
    energies: Vec<f64>,
}

impl TableEnergy {
    pub fn new(vocab_size: usize, energies: Vec<f64>) -> Self {
        Self { vocab_size, energies }
    }
}

impl Expert for TableEnergy {
    fn kind(&self) -> ExpertKind {
        ExpertKind::Joint
    }

    fn name(&self) -> &str {
        "table"
    }

    fn energy(&self, x: &Sequence) -> mixmatch_core::Result<f64> {
        Ok(self.energies[state_index(x.ids(), self.vocab_size)?])
    }
}

pub fn random_joint(vocab_size: usize, length: usize, rng: &mut ChaCha8Rng) -> Result<TabularJoint> {
    let n = vocab_size.pow(length as u32);
    Ok(TabularJoint::from_weights(vocab_size, length, (0..n).map(|_| rng.random_range(0.05..1.0)).collect())?)
}

/// Largest `|a - 1|` over every single-site move when the energy is
/// `-ln p` and proposals are p's own conditionals.
pub fn gibbs_limit_violation(accept: AcceptFn, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for v in 2..=3usize {
        for l in 2..=3usize {
            let joint = Arc::new(random_joint(v, l, &mut rng)?);
            let mut energy = EnergyModel::new();
            energy.push(JointExpert::new(joint.clone()), 1.0)?;
            for idx in 0..v.pow(l as u32) {
                let x = state_ids(idx, v, l);
                let e_x = energy.total(&Sequence::new(x.clone()))?;
                for i in 0..l {
                    let cond = joint.conditional(&x, i)?;
                    for new in 0..v as TokenId {
                        let mut y = x.clone();
                        y[i] = new;
                        let e_y = energy.total(&Sequence::new(y))?;
                        let a = accept(e_x, e_y, cond.log_prob(new), cond.log_prob(x[i]))?;
                        worst = worst.max((a - 1.0).abs());
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Worst detailed-balance violation over several random energies and
/// proposals on two binary positions.
pub fn detailed_balance_violation(accept: AcceptFn, seed: u64, trials: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let energies = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut energy = EnergyModel::new();
        energy.push(TableEnergy::new(2, energies), 1.0)?;
        let proposal = random_joint(2, 2, &mut rng)?;
        worst = worst.max(check_detailed_balance_with(&energy, &proposal, 2, 2, accept)?);
    }
    Ok(worst)
}

/// A random target and proposal over `vocab_size^length` states.
pub struct TvSetup {
    pub vocab_size: usize,
    pub length: usize,
    pub energy: EnergyModel,
    pub proposal: NeighborMlm,
}

/// Energy: tabular-MLM pseudo-likelihood + hamming to a random reference +
/// a one-token lexicon, with random weights. Proposal: a neighbor MLM fit on
/// random lines.
pub fn tv_setup(vocab_size: usize, length: usize, seed: u64) -> Result<TvSetup> {
    let states = state_count(vocab_size, length)?;
    if states > ENUMERATION_LIMIT {
        return Err(Error::Config(vec![format!(
            "{vocab_size}^{length} = {states} states exceeds the enumeration limit of {ENUMERATION_LIMIT}"
        )]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = vocab_size as TokenId;
    let joint = Arc::new(random_joint(vocab_size, length, &mut rng)?);
    let reference = Sequence::new((0..length).map(|_| rng.random_range(0..v)).collect());
    let lexicon = [rng.random_range(0..v)];
    let mut energy = EnergyModel::new();
    energy.push(MlmExpert::new(joint as Arc<dyn MaskedConditional>), rng.random_range(0.5..1.0))?;
    energy.push(HammingExpert::new(reference), rng.random_range(0.2..0.8))?;
    energy.push(LexiconExpert::new(lexicon), rng.random_range(0.2..0.8))?;
    let lines =
        (0..40).map(|_| (0..rng.random_range(2..=length + 2)).map(|_| rng.random_range(0..v)).collect()).collect();
    let proposal = fit_neighbor_mlm(&Corpus { lines, labels: None }, vocab_size, 0.5)?;
    Ok(TvSetup { vocab_size, length, energy, proposal })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvOutcome {
    pub tv: f64,
    pub samples: usize,
    pub steps: usize,
    pub acceptance_rate: f64,
    pub elapsed: Duration,
}

/// Runs one chain for `steps` steps, keeps the state at the end of each epoch
/// after burn-in, and compares the histogram with the enumerated target.
pub fn tv_run(setup: &TvSetup, steps: usize, seed: u64, accept: AcceptFn) -> Result<TvOutcome> {
    let start = Instant::now();
    let exact = enumerate_distribution(&setup.energy, setup.vocab_size, setup.length)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Sequence::new((0..setup.length).map(|_| rng.random_range(0..setup.vocab_size as TokenId)).collect());
    let mut chain = Chain::with_accept(init, seed, &setup.energy, &setup.proposal, accept)?;
    let epochs = steps / setup.length;
    let mut kept: Vec<Vec<TokenId>> = Vec::with_capacity(epochs.saturating_sub(TV_BURN_IN_EPOCHS));
    for epoch in 0..epochs {
        for i in chain.epoch_positions(PositionOrder::Permutation) {
            chain.step_at(i)?;
        }
        if epoch >= TV_BURN_IN_EPOCHS {
            kept.push(chain.current().ids().to_vec());
        }
    }
    let empirical = empirical_distribution(kept.iter().map(Vec::as_slice), setup.vocab_size, setup.length)?;
    Ok(TvOutcome {
        tv: tv_distance(&empirical, &exact.prob)?,
        samples: kept.len(),
        steps: epochs * setup.length,
        acceptance_rate: chain.acceptance_rate(),
        elapsed: start.elapsed(),
    })
}

/// Number of trace records that differ between two identically seeded runs.
pub fn determinism_mismatches(setup: &TvSetup, steps: usize, seed: u64) -> Result<usize> {
    let run = || -> Result<Vec<u64>> {
        let init = Sequence::new(vec![0; setup.length]);
        let mut chain = Chain::new(init, seed, &setup.energy, &setup.proposal)?;
        let mut bits = Vec::new();
        while bits.len() < steps {
            for i in chain.epoch_positions(PositionOrder::Permutation) {
                let r = chain.step_at(i)?;
                bits.push(r.total_e.to_bits() ^ ((r.new_id as u64) << 32) ^ r.position as u64);
            }
        }
        Ok(bits)
    };
    let (a, b) = (run()?, run()?);
    Ok(a.iter().zip(&b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len()))
}

pub fn cmd_verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let (v0, l0, s0) = opts.scale.tv_params();
    let (v, l) = (opts.vocab_size.unwrap_or(v0), opts.length.unwrap_or(l0));
    let steps = opts.steps.unwrap_or(s0);
    let mut errs = Vec::new();
    if v < 2 {
        errs.push(format!("vocabulary size must be at least 2, got {v}"));
    }
    if l == 0 {
        errs.push("length must be at least 1".into());
    }
    if steps == 0 {
        errs.push("steps must be at least 1".into());
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    // Fail on the guard before spending time on the other checks.
    let setup = tv_setup(v, l, opts.seed)?;
    let accept: AcceptFn = if opts.corrupt_acceptance { sign_flipped_accept } else { accept_prob };
    let mut checks = Vec::new();

    let g = gibbs_limit_violation(accept, opts.seed)?;
    checks.push(CheckResult::new(
        "gibbs-limit",
        g,
        Comparison::AtMost,
        GIBBS_LIMIT_TOL,
        "V=2..3, L=2..3, max |a-1|".into(),
    ));

    let db = detailed_balance_violation(accept, opts.seed, 5)?;
    checks.push(CheckResult::new(
        "detailed-balance",
        db,
        Comparison::AtMost,
        DETAILED_BALANCE_TOL,
        "V=2, L=2, 5 random targets".into(),
    ));

    let m = detailed_balance_violation(sign_flipped_accept, opts.seed, 5)?;
    checks.push(CheckResult::new(
        "mutation-detected",
        m,
        Comparison::Above,
        MUTATION_MIN_VIOLATION,
        "sign-flipped acceptance must break balance".into(),
    ));

    let tv = tv_run(&setup, steps, opts.seed, accept)?;
    checks.push(CheckResult::new(
        "tv-convergence",
        tv.tv,
        Comparison::AtMost,
        TV_THRESHOLD,
        format!(
            "V={v}, L={l}, {} steps, {} samples, acceptance {:.3}, {:.1}s",
            tv.steps,
            tv.samples,
            tv.acceptance_rate,
            tv.elapsed.as_secs_f64()
        ),
    ));

    let d = determinism_mismatches(&setup, 2_000.min(steps).max(l), opts.seed)?;
    checks.push(CheckResult::new(
        "determinism",
        d as f64,
        Comparison::AtMost,
        0.0,
        "two identically seeded chains".into(),
    ));

    Ok(VerifyReport { checks })
}
