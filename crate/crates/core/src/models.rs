//! Logit quantal response models of play in the centipede game.
//!
//! Every QRE family resolves the four decision probabilities by backward
//! induction: B's stage-4 choice first, then A's stage-3 choice given it, and
//! so on. A player with precision `k` takes with probability
//! `1 / (1 + exp(-k * d))`, where `d` is the expected gain from taking.
//!
//! The families differ in where the precision comes from:
//!
//! * one-parameter: a single `lambda` for everyone;
//! * learning: `lambda * exp(beta * t)` in game number `t`;
//! * hetero learning: separate `lambda_A`, `lambda_B` with a shared `beta`;
//! * random effects: `exp(delta + beta * t)` per subject, with opponents'
//!   behavior evaluated at session belief means (see [`BeliefMeans`]).
//!
//! The altruistic mixture and the ordered probit produce outcome
//! distributions directly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MatchContext};
use crate::error::{domain, usage, Result};
use crate::game::{
    outcome_distribution_unchecked, DecisionProfile, OutcomeDistribution, PayoffTable, Role,
};

/// Precisions above this are clamped before entering the logistic.
pub const PRECISION_CAP: f64 = 1e30;

/// Logistic take probability for expected gain `utility_diff` at `precision`.
pub fn logistic_take_prob(utility_diff: f64, precision: f64) -> Result<f64> {
    if !utility_diff.is_finite() || precision.is_nan() {
        return Err(domain("logistic inputs must be finite"));
    }
    if precision < 0.0 {
        return Err(domain(format!(
            "precision must be non-negative, got {precision}"
        )));
    }
    Ok(logistic(utility_diff, precision.min(PRECISION_CAP)))
}

#[inline]
pub(crate) fn logistic(diff: f64, precision: f64) -> f64 {
    if precision == 0.0 {
        return 0.5;
    }
    let z = precision * diff;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn scaled_precision(lambda: f64, beta: f64, t: u32) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    (lambda * (beta * t as f64).exp()).min(PRECISION_CAP)
}

#[inline]
pub(crate) fn log_precision(delta: f64, beta: f64, t: u32) -> f64 {
    (delta + beta * t as f64).exp().min(PRECISION_CAP)
}

/// Backward induction when both sides know each other's precision.
#[inline]
pub(crate) fn profile_from_precisions(
    table: &PayoffTable,
    kappa_a: f64,
    kappa_b: f64,
) -> DecisionProfile {
    let q2 = logistic(table.take_advantage_q2(), kappa_b);
    let p2 = logistic(table.take_advantage_p2(q2), kappa_a);
    let q1 = logistic(table.take_advantage_q1(p2, q2), kappa_b);
    let p1 = logistic(table.take_advantage_p1(q1, p2, q2), kappa_a);
    DecisionProfile { p1, q1, p2, q2 }
}

fn check_t(t: u32) -> Result<()> {
    if t < 1 {
        return Err(domain("game number must be at least 1"));
    }
    Ok(())
}

/// Decision profile with type precisions `lambda_a`, `lambda_b` growing at
/// rate `beta` in game number `t`.
pub fn decision_profile_two_type(
    table: &PayoffTable,
    lambda_a: f64,
    lambda_b: f64,
    beta: f64,
    t: u32,
) -> Result<DecisionProfile> {
    check_t(t)?;
    for (name, v) in [("lambda_A", lambda_a), ("lambda_B", lambda_b)] {
        if !(v >= 0.0) || v.is_infinite() {
            return Err(domain(format!(
                "{name} must be a finite non-negative precision, got {v}"
            )));
        }
    }
    if !beta.is_finite() {
        return Err(domain("beta must be finite"));
    }
    Ok(profile_from_precisions(
        table,
        scaled_precision(lambda_a, beta, t),
        scaled_precision(lambda_b, beta, t),
    ))
}

/// Log-precision intercept and learning slope of one subject.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectParams {
    pub delta: f64,
    pub beta: f64,
}

/// Session averages of the opposing types' `(delta, beta)`, used in place of
/// the unknown parameters of the actual opponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefMeans {
    pub delta_bar_a: f64,
    pub beta_bar_a: f64,
    pub delta_bar_b: f64,
    pub beta_bar_b: f64,
}

impl BeliefMeans {
    fn validate(&self) -> Result<()> {
        if [
            self.delta_bar_a,
            self.beta_bar_a,
            self.delta_bar_b,
            self.beta_bar_b,
        ]
        .iter()
        .all(|v| v.is_finite())
        {
            Ok(())
        } else {
            Err(domain("belief means must be finite"))
        }
    }
}

/// Decision profile of subject pair `(a, b)` in the random-effects model.
///
/// Each subject uses its own precision for its own choices and the belief
/// means for any choice of the opponent. A subject's own later choice is
/// known to it unless it sits inside a believed opponent choice.
pub fn decision_profile_random_effects(
    table: &PayoffTable,
    a: SubjectParams,
    b: SubjectParams,
    beliefs: &BeliefMeans,
    t: u32,
) -> Result<DecisionProfile> {
    check_t(t)?;
    beliefs.validate()?;
    for v in [a.delta, a.beta, b.delta, b.beta] {
        if v.is_nan() || v == f64::INFINITY {
            return Err(domain("subject parameters must be finite or -inf"));
        }
    }
    Ok(random_effects_profile(table, a, b, beliefs, t))
}

#[inline]
pub(crate) fn random_effects_profile(
    table: &PayoffTable,
    a: SubjectParams,
    b: SubjectParams,
    beliefs: &BeliefMeans,
    t: u32,
) -> DecisionProfile {
    let kappa_a = log_precision(a.delta, a.beta, t);
    let kappa_b = log_precision(b.delta, b.beta, t);
    let kappa_a_bar = log_precision(beliefs.delta_bar_a, beliefs.beta_bar_a, t);
    let kappa_b_bar = log_precision(beliefs.delta_bar_b, beliefs.beta_bar_b, t);

    let q2 = logistic(table.take_advantage_q2(), kappa_b);
    let q2_bar = logistic(table.take_advantage_q2(), kappa_b_bar);
    let p2 = logistic(table.take_advantage_p2(q2_bar), kappa_a);
    let p2_bar = logistic(table.take_advantage_p2(q2_bar), kappa_a_bar);
    let q1 = logistic(table.take_advantage_q1(p2_bar, q2), kappa_b);
    let q1_bar = logistic(table.take_advantage_q1(p2_bar, q2_bar), kappa_b_bar);
    let p1 = logistic(table.take_advantage_p1(q1_bar, p2, q2_bar), kappa_a);
    DecisionProfile { p1, q1, p2, q2 }
}

/// One-parameter QRE mixed with players who pass at every node.
///
/// Each player is independently altruistic with probability `q_alt`.
/// Non-altruistic players play the one-parameter QRE at precision `lambda`
/// and do not account for altruists.
pub fn outcome_distribution_altruistic(
    table: &PayoffTable,
    lambda: f64,
    q_alt: f64,
) -> Result<OutcomeDistribution> {
    if !(0.0..=1.0).contains(&q_alt) {
        return Err(domain(format!(
            "altruism probability must be in [0, 1], got {q_alt}"
        )));
    }
    let qre = decision_profile_two_type(table, lambda, lambda, 0.0, 1)?;
    Ok(altruistic_mixture(&qre, q_alt))
}

fn altruistic_mixture(qre: &DecisionProfile, q: f64) -> OutcomeDistribution {
    let both = outcome_distribution_unchecked(qre);
    let a_passes = outcome_distribution_unchecked(&DecisionProfile {
        p1: 0.0,
        p2: 0.0,
        ..*qre
    });
    let b_passes = outcome_distribution_unchecked(&DecisionProfile {
        q1: 0.0,
        q2: 0.0,
        ..*qre
    });
    let w_both = (1.0 - q) * (1.0 - q);
    let w_one = q * (1.0 - q);
    let mut theta = [0.0; 5];
    for k in 0..5 {
        theta[k] = w_both * both.theta[k] + w_one * (a_passes.theta[k] + b_passes.theta[k]);
    }
    theta[4] += q * q;
    OutcomeDistribution { theta }
}

#[inline]
fn std_normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
    }
}

/// Ordered probit: `P(y <= k) = Phi(alpha_k - beta * t)`.
pub fn outcome_distribution_ordered_probit(
    alpha: &[f64; 4],
    beta: f64,
    t: u32,
) -> Result<OutcomeDistribution> {
    check_thresholds(alpha)?;
    if !beta.is_finite() {
        return Err(domain("beta must be finite"));
    }
    Ok(ordered_probit(alpha, beta, t))
}

fn check_thresholds(alpha: &[f64; 4]) -> Result<()> {
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(domain("probit thresholds must be finite"));
    }
    if alpha.windows(2).any(|w| w[1] <= w[0]) {
        return Err(domain(format!(
            "probit thresholds must be strictly increasing, got {alpha:?}"
        )));
    }
    Ok(())
}

fn ordered_probit(alpha: &[f64; 4], beta: f64, t: u32) -> OutcomeDistribution {
    let shift = beta * t as f64;
    let mut prev = 0.0;
    let mut theta = [0.0; 5];
    for k in 0..4 {
        let c = std_normal_cdf(alpha[k] - shift);
        theta[k] = c - prev;
        prev = c;
    }
    theta[4] = 1.0 - prev;
    OutcomeDistribution { theta }
}

/// The model families that can be fitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    /// Precision grows with game number; one precision for both types.
    Learning,
    /// Precision grows with game number; separate precisions per type.
    #[serde(rename = "hetero")]
    HeteroLearning,
    /// Single constant precision.
    OneParam,
    Altruistic,
    #[serde(rename = "probit")]
    OrderedProbit,
    RandomEffects,
}

impl ModelFamily {
    /// The five families fitted by maximum likelihood.
    pub const MLE: [ModelFamily; 5] = [
        ModelFamily::Learning,
        ModelFamily::HeteroLearning,
        ModelFamily::OneParam,
        ModelFamily::Altruistic,
        ModelFamily::OrderedProbit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::OneParam => "one-param",
            ModelFamily::Learning => "learning",
            ModelFamily::HeteroLearning => "hetero",
            ModelFamily::Altruistic => "altruistic",
            ModelFamily::OrderedProbit => "probit",
            ModelFamily::RandomEffects => "random-effects",
        }
    }

    /// Free parameters, or `None` when it depends on the number of subjects.
    pub fn n_params(self) -> Option<usize> {
        match self {
            ModelFamily::OneParam => Some(1),
            ModelFamily::Learning | ModelFamily::Altruistic => Some(2),
            ModelFamily::HeteroLearning => Some(3),
            ModelFamily::OrderedProbit => Some(5),
            ModelFamily::RandomEffects => None,
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ModelFamily::OneParam,
            ModelFamily::Learning,
            ModelFamily::HeteroLearning,
            ModelFamily::Altruistic,
            ModelFamily::OrderedProbit,
            ModelFamily::RandomEffects,
        ]
        .into_iter()
        .find(|f| f.name() == s)
        .ok_or_else(|| usage(format!("unknown model family {s:?}")))
    }
}

/// A fully parameterized model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelSpec {
    OneParam {
        lambda: f64,
    },
    Learning {
        lambda: f64,
        beta: f64,
    },
    #[serde(rename = "hetero")]
    HeteroLearning {
        lambda_a: f64,
        lambda_b: f64,
        beta: f64,
    },
    Altruistic {
        lambda: f64,
        q_alt: f64,
    },
    #[serde(rename = "probit")]
    OrderedProbit {
        alpha: [f64; 4],
        beta: f64,
    },
    /// Per-subject parameters indexed by global subject index.
    RandomEffects {
        delta_a: Vec<f64>,
        beta_a: Vec<f64>,
        delta_b: Vec<f64>,
        beta_b: Vec<f64>,
    },
}

fn check_precision(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(domain(format!(
            "{name} must be a positive finite precision, got {v}"
        )))
    }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("{name} must be finite, got {v}")))
    }
}

impl ModelSpec {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelSpec::OneParam { .. } => ModelFamily::OneParam,
            ModelSpec::Learning { .. } => ModelFamily::Learning,
            ModelSpec::HeteroLearning { .. } => ModelFamily::HeteroLearning,
            ModelSpec::Altruistic { .. } => ModelFamily::Altruistic,
            ModelSpec::OrderedProbit { .. } => ModelFamily::OrderedProbit,
            ModelSpec::RandomEffects { .. } => ModelFamily::RandomEffects,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::OneParam { lambda } => check_precision("lambda", *lambda),
            ModelSpec::Learning { lambda, beta } => {
                check_precision("lambda", *lambda)?;
                check_finite("beta", *beta)
            }
            ModelSpec::HeteroLearning {
                lambda_a,
                lambda_b,
                beta,
            } => {
                check_precision("lambda_A", *lambda_a)?;
                check_precision("lambda_B", *lambda_b)?;
                check_finite("beta", *beta)
            }
            ModelSpec::Altruistic { lambda, q_alt } => {
                check_precision("lambda", *lambda)?;
                if (0.0..=1.0).contains(q_alt) {
                    Ok(())
                } else {
                    Err(domain(format!(
                        "altruism probability must be in [0, 1], got {q_alt}"
                    )))
                }
            }
            ModelSpec::OrderedProbit { alpha, beta } => {
                check_thresholds(alpha)?;
                check_finite("beta", *beta)
            }
            ModelSpec::RandomEffects {
                delta_a,
                beta_a,
                delta_b,
                beta_b,
            } => {
                if delta_a.len() != beta_a.len() || delta_b.len() != beta_b.len() {
                    return Err(domain(
                        "random-effects delta and beta vectors differ in length",
                    ));
                }
                for v in delta_a.iter().chain(beta_a).chain(delta_b).chain(beta_b) {
                    check_finite("subject parameter", *v)?;
                }
                Ok(())
            }
        }
    }

    /// Validates the model and, for random effects, that it has one entry
    /// per subject of `data`.
    pub fn validate_for(&self, data: &Dataset) -> Result<()> {
        self.validate()?;
        if let ModelSpec::RandomEffects {
            delta_a, delta_b, ..
        } = self
        {
            let (na, nb) = (data.subjects(Role::A).len(), data.subjects(Role::B).len());
            if delta_a.len() != na || delta_b.len() != nb {
                return Err(usage(format!(
                    "random-effects model has {}/{} subjects, data has {na}/{nb}",
                    delta_a.len(),
                    delta_b.len()
                )));
            }
        }
        Ok(())
    }

    /// Outcome distribution for game number `t` when it does not depend on
    /// who is playing; `None` for random effects.
    #[inline]
    pub fn distribution_at(&self, table: &PayoffTable, t: u32) -> Option<OutcomeDistribution> {
        let profile = |la: f64, lb: f64, beta: f64| {
            outcome_distribution_unchecked(&profile_from_precisions(
                table,
                scaled_precision(la, beta, t),
                scaled_precision(lb, beta, t),
            ))
        };
        Some(match self {
            ModelSpec::OneParam { lambda } => profile(*lambda, *lambda, 0.0),
            ModelSpec::Learning { lambda, beta } => profile(*lambda, *lambda, *beta),
            ModelSpec::HeteroLearning {
                lambda_a,
                lambda_b,
                beta,
            } => profile(*lambda_a, *lambda_b, *beta),
            ModelSpec::Altruistic { lambda, q_alt } => {
                let k = lambda.min(PRECISION_CAP);
                let qre = profile_from_precisions(table, k, k);
                altruistic_mixture(&qre, *q_alt)
            }
            ModelSpec::OrderedProbit { alpha, beta } => ordered_probit(alpha, *beta, t),
            ModelSpec::RandomEffects { .. } => return None,
        })
    }

    pub(crate) fn subject(&self, role: Role, k: usize) -> Option<SubjectParams> {
        match (self, role) {
            (
                ModelSpec::RandomEffects {
                    delta_a, beta_a, ..
                },
                Role::A,
            ) => Some(SubjectParams {
                delta: delta_a[k],
                beta: beta_a[k],
            }),
            (
                ModelSpec::RandomEffects {
                    delta_b, beta_b, ..
                },
                Role::B,
            ) => Some(SubjectParams {
                delta: delta_b[k],
                beta: beta_b[k],
            }),
            _ => None,
        }
    }
}

/// Outcome distribution of one game under `model`.
///
/// `beliefs` are the belief means for the game's session and are required
/// for random-effects models.
pub fn outcome_distribution_for(
    table: &PayoffTable,
    model: &ModelSpec,
    ctx: &MatchContext,
    beliefs: Option<&BeliefMeans>,
) -> Result<OutcomeDistribution> {
    model.validate()?;
    check_t(ctx.t)?;
    if let Some(d) = model.distribution_at(table, ctx.t) {
        return Ok(d);
    }
    let beliefs = beliefs.ok_or_else(|| usage("random-effects model needs belief means"))?;
    let ModelSpec::RandomEffects {
        delta_a, delta_b, ..
    } = model
    else {
        unreachable!()
    };
    if ctx.a >= delta_a.len() || ctx.b >= delta_b.len() {
        return Err(usage(
            "subject index outside the random-effects parameter vectors",
        ));
    }
    let a = model.subject(Role::A, ctx.a).unwrap();
    let b = model.subject(Role::B, ctx.b).unwrap();
    Ok(outcome_distribution_unchecked(
        &decision_profile_random_effects(table, a, b, beliefs, ctx.t)?,
    ))
}

/// Belief means for every session of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionBeliefs(pub Vec<BeliefMeans>);

impl SessionBeliefs {
    /// Arithmetic means of each type's `(delta, beta)` within each session.
    pub fn from_model(model: &ModelSpec, data: &Dataset) -> Result<Self> {
        let ModelSpec::RandomEffects {
            delta_a,
            beta_a,
            delta_b,
            beta_b,
        } = model
        else {
            return Err(usage(
                "belief means are defined for random-effects models only",
            ));
        };
        model.validate_for(data)?;
        Ok(Self::from_parts(
            &data.subjects_by_session(Role::A),
            &data.subjects_by_session(Role::B),
            delta_a,
            beta_a,
            delta_b,
            beta_b,
        ))
    }

    pub(crate) fn from_parts(
        a_by_session: &[Vec<usize>],
        b_by_session: &[Vec<usize>],
        delta_a: &[f64],
        beta_a: &[f64],
        delta_b: &[f64],
        beta_b: &[f64],
    ) -> Self {
        let mean =
            |idx: &[usize], v: &[f64]| idx.iter().map(|&k| v[k]).sum::<f64>() / idx.len() as f64;
        SessionBeliefs(
            a_by_session
                .iter()
                .zip(b_by_session)
                .map(|(a, b)| BeliefMeans {
                    delta_bar_a: mean(a, delta_a),
                    beta_bar_a: mean(a, beta_a),
                    delta_bar_b: mean(b, delta_b),
                    beta_bar_b: mean(b, beta_b),
                })
                .collect(),
        )
    }

    pub fn session(&self, pos: usize) -> &BeliefMeans {
        &self.0[pos]
    }
}
