//! Quantal response equilibrium models of learning in the four-stage
//! centipede game.
//!
//! The crate covers the game tree and its outcome distribution, the logit
//! QRE family with learning, heterogeneous, altruistic, ordered-probit and
//! random-effects variants, maximum-likelihood fits, Metropolis and
//! hierarchical Gibbs-within-Metropolis samplers, Latin-square
//! randomization tests, posterior predictive tests and synthetic data.
//!
//! ```
//! use centipede_qre::{decision_profile_two_type, outcome_distribution, PayoffTable};
//!
//! let table = PayoffTable::default();
//! let profile = decision_profile_two_type(&table, 3.275, 1.082, 0.034, 1).unwrap();
//! let theta = outcome_distribution(&profile).unwrap();
//! assert!((theta.sum() - 1.0).abs() < 1e-12);
//! ```

pub mod bayes;
pub mod data;
mod error;
pub mod game;
pub mod inference;
pub mod models;
pub mod optim;
pub mod resampling;

pub use bayes::{
    diagnostics, metropolis_fixed, posterior_summary, sampler_random_effects, PosteriorSamples,
    PriorSpec, SamplerConfig,
};
pub use data::{
    generate_synthetic, parse_dataset, validate_design, Dataset, DesignSpec, GameRecord,
    PopulationParams, SyntheticModel,
};
pub use error::{Error, Result};
pub use game::{outcome_distribution, DecisionProfile, OutcomeDistribution, PayoffTable, Role};
pub use inference::{bic, compare_models, fit_mle, log_likelihood, FitConfig, FitResult};
pub use models::{
    decision_profile_random_effects, decision_profile_two_type, logistic_take_prob,
    outcome_distribution_for, BeliefMeans, ModelFamily, ModelSpec, SubjectParams,
};
pub use resampling::{
    permute_session, posterior_predictive_test, randomization_test, simulate_replicate,
    RandomizationStatistic, SessionSquare, Statistic, TestOutcome,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/game.md")]
    mod game {}
    #[doc = include_str!("../../../book/src/qre.md")]
    mod qre {}
    #[doc = include_str!("../../../book/src/random-effects.md")]
    mod random_effects {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/bayes.md")]
    mod bayes {}
    #[doc = include_str!("../../../book/src/testing.md")]
    mod testing {}
    #[doc = include_str!("../../../book/src/ppc.md")]
    mod ppc {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
