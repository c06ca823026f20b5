//! Product-of-experts energy models over fixed-length token sequences, sampled
//! with single-site Metropolis-Hastings moves proposed by a masked conditional
//! model.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the algorithmic
//! pieces: vocabulary and sequence types, the expert energies and their weighted
//! sum, desk-scale count models, the sampler, an exact-enumeration oracle for
//! tiny state spaces, and corpus-level evaluation metrics. File formats, the
//! remote-expert client and the CLI live in the `mixmatch` crate.
//!
//! ```
//! use mixmatch_core::experts::{EnergyModel, HammingExpert};
//! use mixmatch_core::sampler::{run_chain, PositionOrder, SamplerConfig};
//! use mixmatch_core::text::{build_vocab, tokenize, Corpus};
//! use mixmatch_core::toy::fit_neighbor_mlm;
//!
//! let lines = ["the food was great", "the food was bad"];
//! let vocab = build_vocab(lines.iter().copied(), 1).unwrap();
//! let corpus = Corpus::from_lines(lines.iter().copied(), &vocab);
//! let mlm = fit_neighbor_mlm(&corpus, vocab.len(), 0.1).unwrap();
//!
//! let source = tokenize("the food was bad", &vocab);
//! let mut energy = EnergyModel::new();
//! energy.push(HammingExpert::new(source.clone()), 2.0);
//!
//! let config = SamplerConfig { epochs: 4, seed: 7, order: PositionOrder::Permutation };
//! let result = run_chain(&source, &config, &energy, &mlm).unwrap();
//! assert_eq!(result.trace.len(), 16);
//! ```
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod experts;
pub mod math;
pub mod metrics;
pub mod oracle;
pub mod sampler;
pub mod text;
pub mod toy;

pub use error::{Error, Result};
pub use experts::{EnergyBreakdown, EnergyModel, Expert, ExpertKind};
pub use sampler::{ChainResult, PositionOrder, SamplerConfig, TraceRecord};
pub use text::{Corpus, Sequence, TokenId, Vocabulary};
pub use toy::{Classifier, Distribution, MaskedConditional};
