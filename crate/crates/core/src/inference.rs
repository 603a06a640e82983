//! Multinomial log-likelihood, maximum-likelihood fits and BIC.
//!
//! Every family except random effects depends on a game only through its game
//! number, so the likelihood is evaluated from outcome counts per game number.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, GameCounts};
use crate::error::{domain, usage, Result};
use crate::game::{outcome_distribution_unchecked, PayoffTable, Role};
use crate::models::{random_effects_profile, ModelFamily, ModelSpec, SessionBeliefs};
use crate::optim::{minimize, NelderMeadConfig};

/// Sum over records of `ln theta[y]`.
///
/// For random-effects models `beliefs` gives the belief means of each
/// session; when omitted they are the session means of the model's own
/// subject parameters.
pub fn log_likelihood(
    table: &PayoffTable,
    model: &ModelSpec,
    data: &Dataset,
    beliefs: Option<&SessionBeliefs>,
) -> Result<f64> {
    if data.is_empty() {
        return Err(domain("no records"));
    }
    model.validate_for(data)?;
    if model.family() != ModelFamily::RandomEffects {
        return Ok(counts_log_likelihood(table, model, &data.counts_by_game()));
    }
    let owned;
    let beliefs = match beliefs {
        Some(b) => {
            if b.0.len() != data.sessions().len() {
                return Err(usage("one belief entry is needed per session"));
            }
            b
        }
        None => {
            owned = SessionBeliefs::from_model(model, data)?;
            &owned
        }
    };
    let mut ll = 0.0;
    for (r, c) in data.records().iter().zip(data.contexts()) {
        let a = model.subject(Role::A, c.a).unwrap();
        let b = model.subject(Role::B, c.b).unwrap();
        let theta = outcome_distribution_unchecked(&random_effects_profile(
            table,
            a,
            b,
            beliefs.session(c.session),
            c.t,
        ));
        ll += theta.prob(r.outcome).ln();
    }
    Ok(ll)
}

pub(crate) fn counts_log_likelihood(
    table: &PayoffTable,
    model: &ModelSpec,
    counts: &GameCounts,
) -> f64 {
    let mut ll = 0.0;
    for (t, row) in &counts.rows {
        let theta = model
            .distribution_at(table, *t)
            .expect("family depends on game number only");
        for (k, &n) in row.iter().enumerate() {
            if n > 0 {
                ll += n as f64 * theta.theta[k].ln();
            }
        }
    }
    ll
}

/// BIC with the sign convention `2 LL - k ln n`; larger is better.
pub fn bic(log_lik: f64, n_params: usize, n_obs: usize) -> Result<f64> {
    if n_params < 1 || n_obs < 1 {
        return Err(domain(
            "BIC needs at least one parameter and one observation",
        ));
    }
    Ok(2.0 * log_lik - n_params as f64 * (n_obs as f64).ln())
}

/// Textbook BIC, `-2 LL + k ln n`; smaller is better.
pub fn bic_textbook(log_lik: f64, n_params: usize, n_obs: usize) -> Result<f64> {
    bic(log_lik, n_params, n_obs).map(|b| -b)
}

/// Settings for [`fit_mle`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitConfig {
    pub starts: usize,
    pub max_iterations: usize,
    pub x_tolerance: f64,
    /// Range of `ln lambda` the starts are spread over.
    pub log_lambda_range: (f64, f64),
    pub beta_range: (f64, f64),
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            starts: 8,
            max_iterations: 20_000,
            x_tolerance: 1e-8,
            log_lambda_range: (-2.0, 3.0),
            beta_range: (-0.5, 0.5),
        }
    }
}

/// A maximum-likelihood fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: ModelFamily,
    pub model: ModelSpec,
    pub log_lik: f64,
    /// `2 LL - k ln n`.
    pub bic: f64,
    /// `-2 LL + k ln n`.
    pub bic_textbook: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Several starts reached the best likelihood at clearly different
    /// parameter values, or the likelihood is flat at the optimum.
    pub weakly_identified: bool,
}

impl FitResult {
    /// Fitted parameters on their natural scale, in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match &self.model {
            ModelSpec::OneParam { lambda } => vec![("lambda", *lambda)],
            ModelSpec::Learning { lambda, beta } => vec![("lambda", *lambda), ("beta", *beta)],
            ModelSpec::HeteroLearning {
                lambda_a,
                lambda_b,
                beta,
            } => {
                vec![
                    ("lambda_A", *lambda_a),
                    ("lambda_B", *lambda_b),
                    ("beta", *beta),
                ]
            }
            ModelSpec::Altruistic { lambda, q_alt } => vec![("lambda", *lambda), ("q", *q_alt)],
            ModelSpec::OrderedProbit { alpha, beta } => vec![
                ("alpha_1", alpha[0]),
                ("alpha_2", alpha[1]),
                ("alpha_3", alpha[2]),
                ("alpha_4", alpha[3]),
                ("beta", *beta),
            ],
            ModelSpec::RandomEffects { .. } => Vec::new(),
        }
    }

    /// `{family, params, log_lik, bic, n_params, n_obs, converged, ...}`.
    pub fn to_json(&self) -> Result<String> {
        let params: serde_json::Map<String, serde_json::Value> = self
            .params()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.into()))
            .collect();
        let v = serde_json::json!({
            "family": self.family,
            "params": params,
            "log_lik": self.log_lik,
            "bic": self.bic,
            "bic_textbook": self.bic_textbook,
            "n_params": self.n_params,
            "n_obs": self.n_obs,
            "converged": self.converged,
            "iterations": self.iterations,
            "weakly_identified": self.weakly_identified,
        });
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// Maps unconstrained optimizer coordinates to a model and back.
pub(crate) fn decode(family: ModelFamily, x: &[f64]) -> ModelSpec {
    match family {
        ModelFamily::OneParam => ModelSpec::OneParam { lambda: x[0].exp() },
        ModelFamily::Learning => ModelSpec::Learning {
            lambda: x[0].exp(),
            beta: x[1],
        },
        ModelFamily::HeteroLearning => ModelSpec::HeteroLearning {
            lambda_a: x[0].exp(),
            lambda_b: x[1].exp(),
            beta: x[2],
        },
        ModelFamily::Altruistic => ModelSpec::Altruistic {
            lambda: x[0].exp(),
            q_alt: 1.0 / (1.0 + (-x[1]).exp()),
        },
        ModelFamily::OrderedProbit => {
            let a1 = x[0];
            let a2 = a1 + x[1].exp();
            let a3 = a2 + x[2].exp();
            let a4 = a3 + x[3].exp();
            ModelSpec::OrderedProbit {
                alpha: [a1, a2, a3, a4],
                beta: x[4],
            }
        }
        ModelFamily::RandomEffects => {
            unreachable!("random effects are not fitted by maximum likelihood")
        }
    }
}

fn starts(
    family: ModelFamily,
    counts: &GameCounts,
    config: &FitConfig,
    seed: u64,
) -> Vec<Vec<f64>> {
    let k = config.starts.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Stratified draw over [lo, hi]: one point per stratum, strata shuffled.
    let mut strata = |lo: f64, hi: f64| -> Vec<f64> {
        let mut v: Vec<f64> = (0..k)
            .map(|i| lo + (hi - lo) * (i as f64 + rng.random::<f64>()) / k as f64)
            .collect();
        for i in (1..v.len()).rev() {
            v.swap(i, rng.random_range(0..=i));
        }
        v
    };
    let (ll, lh) = config.log_lambda_range;
    let (bl, bh) = config.beta_range;
    match family {
        ModelFamily::OneParam => strata(ll, lh).into_iter().map(|a| vec![a]).collect(),
        ModelFamily::Learning => {
            let (a, b) = (strata(ll, lh), strata(bl, bh));
            a.into_iter().zip(b).map(|(a, b)| vec![a, b]).collect()
        }
        ModelFamily::HeteroLearning => {
            let (a, b, c) = (strata(ll, lh), strata(ll, lh), strata(bl, bh));
            a.into_iter()
                .zip(b)
                .zip(c)
                .map(|((a, b), c)| vec![a, b, c])
                .collect()
        }
        ModelFamily::Altruistic => {
            let (a, q) = (strata(ll, lh), strata(-5.0, 0.0));
            a.into_iter().zip(q).map(|(a, q)| vec![a, q]).collect()
        }
        ModelFamily::OrderedProbit => {
            // Thresholds from pooled cumulative frequencies, with a small
            // floor so empty categories still give increasing thresholds.
            let mut freq = [0.0; 5];
            for (_, row) in &counts.rows {
                for (f, &n) in freq.iter_mut().zip(row) {
                    *f += n as f64 + 0.5;
                }
            }
            let total: f64 = freq.iter().sum();
            let normal = Normal::standard();
            let mut cum = 0.0;
            let mut alpha = [0.0; 4];
            for k in 0..4 {
                cum += freq[k] / total;
                alpha[k] = normal.inverse_cdf(cum);
            }
            let t_mean = counts
                .rows
                .iter()
                .map(|(t, r)| *t as f64 * r.iter().sum::<u32>() as f64)
                .sum::<f64>()
                / counts
                    .rows
                    .iter()
                    .map(|(_, r)| r.iter().sum::<u32>() as f64)
                    .sum::<f64>();
            strata(bl, bh)
                .into_iter()
                .map(|b| {
                    let base = alpha[0] + b * t_mean;
                    vec![
                        base,
                        (alpha[1] - alpha[0]).ln(),
                        (alpha[2] - alpha[1]).ln(),
                        (alpha[3] - alpha[2]).ln(),
                        b,
                    ]
                })
                .collect()
        }
        ModelFamily::RandomEffects => unreachable!(),
    }
}

/// Fits `family` to `data` by multi-start Nelder–Mead. Deterministic given
/// `(data, config, seed)`.
pub fn fit_mle(
    table: &PayoffTable,
    family: ModelFamily,
    data: &Dataset,
    config: &FitConfig,
    seed: u64,
) -> Result<FitResult> {
    if family == ModelFamily::RandomEffects {
        return Err(usage("the random-effects model is estimated by MCMC only"));
    }
    if data.is_empty() {
        return Err(domain("no records"));
    }
    let counts = data.counts_by_game();
    let objective = |x: &[f64]| {
        let m = decode(family, x);
        if m.validate().is_err() {
            return f64::INFINITY;
        }
        -counts_log_likelihood(table, &m, &counts)
    };
    let nm = NelderMeadConfig {
        max_iterations: config.max_iterations,
        x_tolerance: config.x_tolerance,
        initial_step: 0.5,
    };
    let runs: Vec<_> = starts(family, &counts, config, seed)
        .par_iter()
        .map(|s| minimize(objective, s, &nm))
        .collect();

    let best = runs
        .iter()
        .filter(|r| r.value.is_finite())
        .min_by(|a, b| {
            a.value
                .total_cmp(&b.value)
                .then_with(|| lexicographic(&a.x, &b.x))
        })
        .ok_or_else(|| domain("the likelihood is zero at every start"))?;
    let model = decode(family, &best.x);
    let log_lik = -best.value;
    let n_params = family.n_params().unwrap();
    let n_obs = data.len();
    let weakly_identified = runs.iter().any(|r| {
        r.value.is_finite()
            && (r.value - best.value).abs() < 1e-6
            && r.x.iter().zip(&best.x).any(|(a, b)| (a - b).abs() > 1e-2)
    });
    Ok(FitResult {
        family,
        model,
        log_lik,
        bic: bic(log_lik, n_params, n_obs)?,
        bic_textbook: bic_textbook(log_lik, n_params, n_obs)?,
        n_params,
        n_obs,
        converged: best.converged,
        iterations: runs.iter().map(|r| r.iterations).sum(),
        weakly_identified,
    })
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Fits every maximum-likelihood family and sorts by BIC, best first.
pub fn compare_models(
    table: &PayoffTable,
    data: &Dataset,
    config: &FitConfig,
    seed: u64,
) -> Result<Vec<FitResult>> {
    let mut fits = ModelFamily::MLE
        .iter()
        .map(|&f| fit_mle(table, f, data, config, seed))
        .collect::<Result<Vec<_>>>()?;
    fits.sort_by(|a, b| b.bic.total_cmp(&a.bic));
    Ok(fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, DesignSpec, GameRecord, SessionDesign, SyntheticModel};
    use crate::models::outcome_distribution_for;

    fn table() -> PayoffTable {
        PayoffTable::default()
    }

    // Recomputes theta from scratch for every record.
    fn brute_force_ll(model: &ModelSpec, data: &Dataset) -> f64 {
        let beliefs = match model {
            ModelSpec::RandomEffects { .. } => {
                Some(SessionBeliefs::from_model(model, data).unwrap())
            }
            _ => None,
        };
        data.records()
            .iter()
            .zip(data.contexts())
            .map(|(r, c)| {
                let b = beliefs.as_ref().map(|b| b.session(c.session));
                outcome_distribution_for(&table(), model, c, b)
                    .unwrap()
                    .prob(r.outcome)
                    .ln()
            })
            .sum()
    }

    #[test]
    fn bic_reproduces_table_arithmetic() {
        assert!((bic(-380.195, 3, 281).unwrap() - -777.31).abs() <= 0.01);
        assert!((bic(-424.91, 1, 281).unwrap() - -855.46).abs() <= 0.02);
        assert!((bic(-417.81, 2, 281).unwrap() - -846.90).abs() <= 0.01);
        assert!((bic_textbook(-380.195, 3, 281).unwrap() - 777.305_064).abs() < 1e-5);
        assert!(bic(-1.0, 0, 10).is_err());
    }

    #[test]
    fn single_record_likelihood() {
        let data = Dataset::new(vec![GameRecord {
            session: 1,
            a_id: 1,
            b_id: 1,
            game: 1,
            outcome: 1,
        }])
        .unwrap();
        let ll = log_likelihood(
            &table(),
            &ModelSpec::OneParam { lambda: 1e-300 },
            &data,
            None,
        )
        .unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn zero_precision_likelihood_is_closed_form() {
        let exp = generate_synthetic(
            &DesignSpec::standard(),
            &SyntheticModel::Fixed(ModelSpec::Learning {
                lambda: 1.0,
                beta: 0.05,
            }),
            &table(),
            5,
        )
        .unwrap();
        let fixed = [0.5f64, 0.25, 0.125, 0.0625, 0.0625];
        let want: f64 = exp
            .data
            .records()
            .iter()
            .map(|r| fixed[r.outcome as usize - 1].ln())
            .sum();
        let ll = log_likelihood(
            &table(),
            &ModelSpec::OneParam { lambda: 1e-300 },
            &exp.data,
            None,
        )
        .unwrap();
        assert!((ll - want).abs() < 1e-10);
    }

    #[test]
    fn likelihood_matches_brute_force_and_ignores_order() {
        let exp = generate_synthetic(
            &DesignSpec::standard(),
            &SyntheticModel::Fixed(ModelSpec::HeteroLearning {
                lambda_a: 3.275,
                lambda_b: 1.082,
                beta: 0.034,
            }),
            &table(),
            9,
        )
        .unwrap();
        let models = [
            ModelSpec::OneParam { lambda: 0.7 },
            ModelSpec::Learning {
                lambda: 1.2,
                beta: 0.03,
            },
            ModelSpec::HeteroLearning {
                lambda_a: 3.0,
                lambda_b: 1.0,
                beta: 0.05,
            },
            ModelSpec::Altruistic {
                lambda: 1.5,
                q_alt: 0.1,
            },
            ModelSpec::OrderedProbit {
                alpha: [-1.0, 0.0, 0.8, 1.6],
                beta: -0.05,
            },
        ];
        let mut reversed = exp.data.records().to_vec();
        reversed.reverse();
        let reversed = Dataset::new(reversed).unwrap();
        for m in &models {
            let fast = log_likelihood(&table(), m, &exp.data, None).unwrap();
            assert!((fast - brute_force_ll(m, &exp.data)).abs() < 1e-10, "{m:?}");
            let rev = log_likelihood(&table(), m, &reversed, None).unwrap();
            assert!((fast - rev).abs() < 1e-10);
        }
        let n = exp.data.subjects(Role::A).len();
        let re = ModelSpec::RandomEffects {
            delta_a: (0..n).map(|k| 0.5 + 0.05 * k as f64).collect(),
            beta_a: vec![0.02; n],
            delta_b: (0..n).map(|k| -0.2 + 0.03 * k as f64).collect(),
            beta_b: vec![0.01; n],
        };
        let fast = log_likelihood(&table(), &re, &exp.data, None).unwrap();
        assert!((fast - brute_force_ll(&re, &exp.data)).abs() < 1e-10);
    }

    #[test]
    fn impossible_outcome_gives_negative_infinity() {
        let data = Dataset::new(vec![GameRecord {
            session: 1,
            a_id: 1,
            b_id: 1,
            game: 1,
            outcome: 5,
        }])
        .unwrap();
        let ll = log_likelihood(
            &table(),
            &ModelSpec::Altruistic {
                lambda: 1e30,
                q_alt: 0.0,
            },
            &data,
            None,
        )
        .unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn random_effects_cannot_be_fitted_by_mle() {
        let data = DesignSpec::standard().skeleton().unwrap();
        let err = fit_mle(
            &table(),
            ModelFamily::RandomEffects,
            &data,
            &FitConfig::default(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, crate::Error::Usage(_)));
    }

    fn big_design(sessions: usize) -> DesignSpec {
        DesignSpec {
            sessions: (0..sessions)
                .map(|s| SessionDesign::cyclic(s as u32 + 1, 10))
                .collect(),
        }
    }

    #[test]
    fn recovers_one_param_precision() {
        let exp = generate_synthetic(
            &big_design(100),
            &SyntheticModel::Fixed(ModelSpec::OneParam { lambda: 2.0 }),
            &table(),
            11,
        )
        .unwrap();
        assert_eq!(exp.data.len(), 10_000);
        let fit = fit_mle(
            &table(),
            ModelFamily::OneParam,
            &exp.data,
            &FitConfig::default(),
            1,
        )
        .unwrap();
        let ModelSpec::OneParam { lambda } = fit.model else {
            panic!()
        };
        assert!((lambda - 2.0).abs() / 2.0 < 0.05, "lambda = {lambda}");
        assert!(fit.converged);
        let truth = log_likelihood(
            &table(),
            &ModelSpec::OneParam { lambda: 2.0 },
            &exp.data,
            None,
        )
        .unwrap();
        assert!(fit.log_lik >= truth - 1e-9);
    }

    #[test]
    fn fit_is_deterministic_and_nested_likelihoods_are_ordered() {
        let exp = generate_synthetic(
            &DesignSpec::standard(),
            &SyntheticModel::Fixed(ModelSpec::HeteroLearning {
                lambda_a: 3.275,
                lambda_b: 1.082,
                beta: 0.034,
            }),
            &table(),
            21,
        )
        .unwrap();
        let cfg = FitConfig::default();
        let fit = |f| fit_mle(&table(), f, &exp.data, &cfg, 4).unwrap();
        let one = fit(ModelFamily::OneParam);
        let learning = fit(ModelFamily::Learning);
        let hetero = fit(ModelFamily::HeteroLearning);
        assert_eq!(hetero, fit(ModelFamily::HeteroLearning));
        assert!(learning.log_lik >= one.log_lik - 1e-4);
        assert!(hetero.log_lik >= learning.log_lik - 1e-4);
        assert!(hetero.converged);
        assert_eq!(hetero.n_obs, 281);
        assert!((hetero.bic - (2.0 * hetero.log_lik - 3.0 * 281f64.ln())).abs() < 1e-12);
        let json = hetero.to_json().unwrap();
        assert!(json.contains("\"lambda_A\""));
        assert!(json.contains("\"family\": \"hetero\""));
    }

    #[test]
    fn mle_dominates_its_own_expected_sample() {
        // Outcome counts proportional to the model's own distribution.
        let truth = ModelSpec::Learning {
            lambda: 1.4,
            beta: 0.06,
        };
        let mut records = Vec::new();
        let mut a = 0;
        for t in 1..=10u32 {
            let theta = truth.distribution_at(&table(), t).unwrap();
            for (k, p) in theta.theta.iter().enumerate() {
                for _ in 0..(p * 200.0).round() as usize {
                    a += 1;
                    records.push(GameRecord {
                        session: 1,
                        a_id: a,
                        b_id: a,
                        game: t,
                        outcome: k as u8 + 1,
                    });
                }
            }
        }
        let data = Dataset::new(records).unwrap();
        let fit = fit_mle(
            &table(),
            ModelFamily::Learning,
            &data,
            &FitConfig::default(),
            2,
        )
        .unwrap();
        assert!(fit.log_lik >= log_likelihood(&table(), &truth, &data, None).unwrap() - 1e-9);
    }

    #[test]
    fn every_family_fits() {
        let exp = generate_synthetic(
            &DesignSpec::standard(),
            &SyntheticModel::Fixed(ModelSpec::HeteroLearning {
                lambda_a: 3.275,
                lambda_b: 1.082,
                beta: 0.034,
            }),
            &table(),
            33,
        )
        .unwrap();
        let fits = compare_models(&table(), &exp.data, &FitConfig::default(), 8).unwrap();
        assert_eq!(fits.len(), 5);
        for w in fits.windows(2) {
            assert!(w[0].bic >= w[1].bic);
        }
        for f in &fits {
            assert!(f.log_lik.is_finite());
            assert!(f.model.validate().is_ok());
        }
    }
}
