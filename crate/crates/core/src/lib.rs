//! Speculative decoding with a tolerance-relaxed acceptance rule.
//!
//! A cheap draft model proposes several tokens, an expensive target model
//! scores them in one verification step, and a relaxed rejection-sampling rule
//! decides how many to keep. The crate works over abstract autoregressive
//! models ([`models::SequenceModel`]) with tabular Markov models as the
//! concrete implementation, and ships exact enumeration oracles
//! ([`oracle`]) plus a unit-cost latency simulator ([`bench`]).
//!
//! Probabilities are generic over [`Probability`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod models;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod ssd;
pub mod verify;

pub use models::{
    ar_decode, cross_entropy, derive_draft, fit_tabular, sample_token, Corpus, ModelError, SequenceModel, TokenId,
};
pub use oracle::{
    analytic_acceptance_prob, exact_ar_distribution, exact_ssd_distribution, step_emission_distribution, tv_distance,
    OracleError,
};
pub use rng::{RandomStream, UniformSource};
pub use scalar::Probability;
pub use ssd::{ssd_cycle, ssd_decode, ssd_decode_seeded, SsdConfig, SsdError};

pub type Distribution = models::Distribution<f64>;
pub type Distribution32 = models::Distribution<f32>;
pub type TabularModel = models::TabularMarkovModel<f64>;
pub type TabularModel32 = models::TabularMarkovModel<f32>;
pub type CycleTrace = ssd::CycleTrace<f64>;
pub type DecodeResult = ssd::DecodeResult<f64>;
pub type DecodeResult32 = ssd::DecodeResult<f32>;
pub type SequenceDistribution = oracle::SequenceDistribution<f64>;
