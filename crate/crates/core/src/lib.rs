//! User-level differentially private PAC learning over finite concept
//! classes, built on correlated sampling from shared public randomness.
//!
//! The crate provides:
//!
//! - deterministic substream derivation ([`randomness`]), so independent
//!   simulated users reconstruct identical public randomness;
//! - finite domains, hypotheses, concept classes, and realizable data
//!   ([`concepts`]);
//! - correlated sampling with multiplicative error 2 over enumerable outcome
//!   spaces ([`sampling`]);
//! - selection and histogram mechanisms in the central, local, and shuffle
//!   models ([`select`], [`shuffle`]);
//! - pseudo-globally stable learners: the representation-based learner, the
//!   list-stability booster, and the statistical-query reduction
//!   ([`stability`], [`sq`]);
//! - end-to-end user-level learners in all four models and the
//!   representation-from-learner construction ([`learners`]);
//! - an experiment harness with JSON configs and CSV/JSON reports
//!   ([`harness`]).

pub mod concepts;
pub mod error;
pub mod harness;
pub mod learners;
pub mod oracles;
pub mod randomness;
pub mod sampling;
pub mod select;
pub mod shuffle;
pub mod sq;
pub mod stability;

pub use concepts::{
    draw_samples, err_dist, err_emp, standard_class, ConceptClass, Domain, Hypothesis,
    LabeledSample, RealizableDistribution, StandardClass,
};
pub use error::{Error, Result};
pub use randomness::{derive, label, tags, RandomStream, SeedRoot, SubstreamLabel};
pub use sampling::{
    cs_sample, tv_distance, CsOptions, FiniteDistribution, FullHypothesisSpace, GridPoint,
    HypothesisList, OutcomeSpace, UnitGrid,
};
pub use select::{
    approx_select, group_privacy, local_aggregate, local_randomize, pure_select, Noise,
    PrivacyParams, VoteSet,
};
pub use shuffle::{
    nb_sample, shuffle_histogram, shuffle_select, shuffle_sum_over, shuffle_sum_under, NBParams,
    ShuffleOptions,
};
