//! Gibbs-within-Metropolis for the random-effects model.
//!
//! Each scan draws the population means and variances from their conjugate
//! conditionals and then updates every subject's `delta` and `beta` by
//! random-walk Metropolis. A subject enters the belief means of its session,
//! so each subject move recomputes those means and is accepted against the
//! likelihood of every game in the session. Optional block-shift moves then
//! translate a population mean together with all of its subjects and are
//! accepted against the full likelihood.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use super::{
    hierarchical_names, normal_log_kernel, PosteriorSamples, PriorSpec, Proposal, SamplerConfig,
    SamplerKind, BLOCKS,
};
use crate::data::Dataset;
use crate::error::{domain, usage, Error, Result};
use crate::game::{outcome_distribution_unchecked, DecisionProfile, PayoffTable, Role};
use crate::inference::{fit_mle, FitConfig};
use crate::models::{log_precision, logistic, BeliefMeans, ModelFamily, ModelSpec};
use crate::resampling::substream;

const DEFAULT_SCALES: [f64; 4] = [0.3, 0.3, 0.05, 0.05];

/// Mean and variance of a normal mean given `values ~ N(mu, sigma2)` and a
/// `N(prior_mean, prior_var)` prior.
pub fn mu_conditional(prior_mean: f64, prior_var: f64, values: &[f64], sigma2: f64) -> (f64, f64) {
    let precision = 1.0 / prior_var + values.len() as f64 / sigma2;
    let var = 1.0 / precision;
    let sum: f64 = values.iter().sum();
    (var * (prior_mean / prior_var + sum / sigma2), var)
}

/// Shape and rate of the inverse-gamma conditional of a variance given
/// `values ~ N(mu, sigma2)` and an inverse-gamma `(shape, rate)` prior.
pub fn sigma2_conditional(shape: f64, rate: f64, values: &[f64], mu: f64) -> (f64, f64) {
    let ss: f64 = values.iter().map(|v| (v - mu) * (v - mu)).sum();
    (shape + values.len() as f64 / 2.0, rate + ss / 2.0)
}

pub fn sample_mu_conditional(
    prior_mean: f64,
    prior_var: f64,
    values: &[f64],
    sigma2: f64,
    rng: &mut impl Rng,
) -> f64 {
    let (m, v) = mu_conditional(prior_mean, prior_var, values, sigma2);
    let z: f64 = rng.sample(StandardNormal);
    m + v.sqrt() * z
}

pub fn sample_sigma2_conditional(
    shape: f64,
    rate: f64,
    values: &[f64],
    mu: f64,
    rng: &mut impl Rng,
) -> f64 {
    let (a, b) = sigma2_conditional(shape, rate, values, mu);
    let g = Gamma::new(a, 1.0 / b).expect("shape and rate are positive");
    1.0 / g.sample(rng)
}

/// Samples the random-effects model. Deterministic given `config.seed`.
pub fn sampler_random_effects(
    table: &PayoffTable,
    data: &Dataset,
    priors: &PriorSpec,
    config: &SamplerConfig,
) -> Result<PosteriorSamples> {
    let start = initial_state(table, data, priors, config)?;
    run_chain(table, data, priors, config, start, 0)
}

/// Runs `n_chains` chains in parallel from the same start, chain `c` on
/// random stream `c`, and merges them.
pub fn sampler_random_effects_chains(
    table: &PayoffTable,
    data: &Dataset,
    priors: &PriorSpec,
    config: &SamplerConfig,
    n_chains: usize,
) -> Result<PosteriorSamples> {
    if n_chains == 0 {
        return Err(usage("at least one chain is needed"));
    }
    let start = initial_state(table, data, priors, config)?;
    let chains = (0..n_chains)
        .into_par_iter()
        .map(|c| run_chain(table, data, priors, config, start.clone(), c as u64))
        .collect::<Result<Vec<_>>>()?;
    PosteriorSamples::merge(chains)
}

/// Sampler state. Subject vectors follow [`BLOCKS`]: `delta_A`, `delta_B`,
/// `beta_A`, `beta_B`.
#[derive(Clone, Debug)]
struct State {
    mu: [f64; 4],
    sigma2: [f64; 4],
    values: [Vec<f64>; 4],
}

impl State {
    fn from_row(row: &[f64], na: usize, nb: usize) -> Self {
        let s = &row[8..];
        State {
            mu: row[0..4].try_into().unwrap(),
            sigma2: row[4..8].try_into().unwrap(),
            values: [
                s[0..na].to_vec(),
                s[2 * na..2 * na + nb].to_vec(),
                s[na..2 * na].to_vec(),
                s[2 * na + nb..].to_vec(),
            ],
        }
    }

    /// Row in column order: means, variances, then `delta_A`, `beta_A`,
    /// `delta_B`, `beta_B`.
    fn row(&self) -> Vec<f64> {
        let mut r = Vec::with_capacity(8 + self.values.iter().map(Vec::len).sum::<usize>());
        r.extend(self.mu);
        r.extend(self.sigma2);
        for b in [0, 2, 1, 3] {
            r.extend(&self.values[b]);
        }
        r
    }
}

fn initial_state(
    table: &PayoffTable,
    data: &Dataset,
    priors: &PriorSpec,
    config: &SamplerConfig,
) -> Result<State> {
    config.validate()?;
    priors.validate()?;
    if data.is_empty() {
        return Err(domain("no records"));
    }
    if !config.proposal_scales.is_empty() && config.proposal_scales.len() != 4 {
        return Err(usage(
            "the random-effects sampler takes four proposal scales, one per block",
        ));
    }
    let (na, nb) = (data.subjects(Role::A).len(), data.subjects(Role::B).len());
    if let Some(init) = &config.initial {
        if init.len() != 8 + 2 * (na + nb) {
            return Err(usage(format!(
                "the random-effects sampler takes {} initial values",
                8 + 2 * (na + nb)
            )));
        }
        return Ok(State::from_row(init, na, nb));
    }
    let (da, db) = if config.use_likelihood {
        let fit = fit_mle(
            table,
            ModelFamily::HeteroLearning,
            data,
            &FitConfig::default(),
            config.seed,
        )?;
        let ModelSpec::HeteroLearning {
            lambda_a, lambda_b, ..
        } = fit.model
        else {
            unreachable!()
        };
        (lambda_a.ln(), lambda_b.ln())
    } else {
        (priors.mu_mean[0], priors.mu_mean[1])
    };
    let sigma2 = std::array::from_fn(|b| priors.sigma2_rate[b] / (priors.sigma2_shape[b] + 1.0));
    Ok(State {
        mu: [da, db, 0.0, 0.0],
        sigma2,
        values: [vec![da; na], vec![db; nb], vec![0.0; na], vec![0.0; nb]],
    })
}

/// One game reduced to what the likelihood needs.
#[derive(Clone, Copy)]
struct Game {
    a: usize,
    b: usize,
    t: u32,
    y: u8,
}

/// Precisions `exp(delta + beta t)` of every subject for `t = 1..=t_max`,
/// kept in step with the state.
struct Kappas {
    t_max: usize,
    rows: [Vec<f64>; 2],
}

impl Kappas {
    fn new(s: &State, t_max: usize) -> Self {
        let mut k = Kappas {
            t_max,
            rows: [
                vec![0.0; s.values[0].len() * t_max],
                vec![0.0; s.values[1].len() * t_max],
            ],
        };
        k.fill_role(s, 0);
        k.fill_role(s, 1);
        k
    }

    /// Recomputes subject `k` of role `r` (0 for A, 1 for B).
    fn fill(&mut self, s: &State, r: usize, k: usize) {
        let (delta, beta) = (s.values[r][k], s.values[r + 2][k]);
        for (j, v) in self.rows[r][k * self.t_max..(k + 1) * self.t_max]
            .iter_mut()
            .enumerate()
        {
            *v = log_precision(delta, beta, j as u32 + 1);
        }
    }

    fn fill_role(&mut self, s: &State, r: usize) {
        for k in 0..s.values[r].len() {
            self.fill(s, r, k);
        }
    }

    #[inline]
    fn get(&self, r: usize, k: usize, t: u32) -> f64 {
        self.rows[r][k * self.t_max + t as usize - 1]
    }
}

struct Model<'a> {
    table: &'a PayoffTable,
    a_by_session: Vec<Vec<usize>>,
    b_by_session: Vec<Vec<usize>>,
    /// Session position of every subject, by role.
    session_of: [Vec<usize>; 2],
    session_games: Vec<Vec<Game>>,
    t_max: usize,
    use_likelihood: bool,
}

impl<'a> Model<'a> {
    fn new(table: &'a PayoffTable, data: &Dataset, use_likelihood: bool) -> Self {
        let a_by_session = data.subjects_by_session(Role::A);
        let b_by_session = data.subjects_by_session(Role::B);
        let session_of = [&a_by_session, &b_by_session].map(|by| {
            let mut of = vec![0; by.iter().map(Vec::len).sum()];
            for (pos, members) in by.iter().enumerate() {
                members.iter().for_each(|&k| of[k] = pos);
            }
            of
        });
        let mut session_games = vec![Vec::new(); a_by_session.len()];
        for (r, c) in data.records().iter().zip(data.contexts()) {
            session_games[c.session].push(Game {
                a: c.a,
                b: c.b,
                t: c.t,
                y: r.outcome,
            });
        }
        let t_max = data
            .contexts()
            .iter()
            .map(|c| c.t as usize)
            .max()
            .unwrap_or(1);
        Model {
            table,
            a_by_session,
            b_by_session,
            session_of,
            session_games,
            t_max,
            use_likelihood,
        }
    }

    #[cfg(test)]
    fn beliefs(&self, s: &State) -> crate::models::SessionBeliefs {
        crate::models::SessionBeliefs::from_parts(
            &self.a_by_session,
            &self.b_by_session,
            &s.values[0],
            &s.values[2],
            &s.values[1],
            &s.values[3],
        )
    }

    fn session_beliefs(&self, s: &State, pos: usize) -> BeliefMeans {
        let mean =
            |idx: &[usize], v: &[f64]| idx.iter().map(|&k| v[k]).sum::<f64>() / idx.len() as f64;
        let (a, b) = (&self.a_by_session[pos], &self.b_by_session[pos]);
        BeliefMeans {
            delta_bar_a: mean(a, &s.values[0]),
            beta_bar_a: mean(a, &s.values[2]),
            delta_bar_b: mean(b, &s.values[1]),
            beta_bar_b: mean(b, &s.values[3]),
        }
    }

    /// Log-likelihood of the games of session `pos`. Matches
    /// `random_effects_profile` game by game, with the parts that depend
    /// only on the belief means computed once per game number.
    fn session_log_lik(&self, s: &State, kappas: &Kappas, pos: usize) -> f64 {
        if !self.use_likelihood {
            return 0.0;
        }
        let table = self.table;
        let bel = self.session_beliefs(s, pos);
        let adv_q2 = table.take_advantage_q2();
        // Per game number: (A's stage-3 gain, q2_bar, p2_bar, q1_bar).
        let believed: Vec<[f64; 4]> = (1..=self.t_max as u32)
            .map(|t| {
                let kappa_a_bar = log_precision(bel.delta_bar_a, bel.beta_bar_a, t);
                let kappa_b_bar = log_precision(bel.delta_bar_b, bel.beta_bar_b, t);
                let q2_bar = logistic(adv_q2, kappa_b_bar);
                let adv_p2 = table.take_advantage_p2(q2_bar);
                let p2_bar = logistic(adv_p2, kappa_a_bar);
                let q1_bar = logistic(table.take_advantage_q1(p2_bar, q2_bar), kappa_b_bar);
                [adv_p2, q2_bar, p2_bar, q1_bar]
            })
            .collect();
        self.session_games[pos]
            .iter()
            .map(|g| {
                let [adv_p2, q2_bar, p2_bar, q1_bar] = believed[g.t as usize - 1];
                let (kappa_a, kappa_b) = (kappas.get(0, g.a, g.t), kappas.get(1, g.b, g.t));
                let q2 = logistic(adv_q2, kappa_b);
                let p2 = logistic(adv_p2, kappa_a);
                let q1 = logistic(table.take_advantage_q1(p2_bar, q2), kappa_b);
                let p1 = logistic(table.take_advantage_p1(q1_bar, p2, q2_bar), kappa_a);
                outcome_distribution_unchecked(&DecisionProfile { p1, q1, p2, q2 })
                    .prob(g.y)
                    .ln()
            })
            .sum()
    }

    fn session_log_liks(&self, s: &State, kappas: &Kappas) -> Vec<f64> {
        (0..self.session_games.len())
            .map(|pos| self.session_log_lik(s, kappas, pos))
            .collect()
    }

    fn full_log_lik(&self, s: &State, kappas: &Kappas) -> f64 {
        self.session_log_liks(s, kappas).iter().sum()
    }

    fn log_posterior(&self, s: &State, priors: &PriorSpec) -> f64 {
        let mut lp = self.full_log_lik(s, &Kappas::new(s, self.t_max));
        for b in 0..4 {
            lp += normal_log_kernel(s.mu[b], priors.mu_mean[b], priors.mu_var[b]);
            let (a, r) = (priors.sigma2_shape[b], priors.sigma2_rate[b]);
            lp += -(a + 1.0) * s.sigma2[b].ln() - r / s.sigma2[b];
            for v in &s.values[b] {
                lp += normal_log_kernel(*v, s.mu[b], s.sigma2[b]) - 0.5 * s.sigma2[b].ln();
            }
        }
        lp
    }
}

fn metropolis_accept(rng: &mut impl Rng, log_ratio: f64) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

fn run_chain(
    table: &PayoffTable,
    data: &Dataset,
    priors: &PriorSpec,
    config: &SamplerConfig,
    mut s: State,
    chain: u64,
) -> Result<PosteriorSamples> {
    let model = Model::new(table, data, config.use_likelihood);
    let lp0 = model.log_posterior(&s, priors);
    if !lp0.is_finite() || s.sigma2.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Initialization(format!(
            "log-posterior is {lp0} at the initial state; try a different starting point"
        )));
    }

    let scales = if config.proposal_scales.is_empty() {
        DEFAULT_SCALES.to_vec()
    } else {
        config.proposal_scales.clone()
    };
    let mut proposals: [Vec<Proposal>; 4] =
        std::array::from_fn(|b| vec![Proposal::new(scales[b]); s.values[b].len()]);
    let mut shifts: Vec<Proposal> = (0..4).map(|b| Proposal::new(scales[b] / 4.0)).collect();
    let mut rng = substream(config.seed, chain);
    let mut kappas = Kappas::new(&s, model.t_max);

    let names = hierarchical_names(data);
    let mut samples = PosteriorSamples::new(SamplerKind::RandomEffects, names);
    samples.draws.reserve(config.retained());

    for k in 0..config.total_iterations {
        let burning = k < config.burn_in;

        for b in 0..4 {
            s.mu[b] = sample_mu_conditional(
                priors.mu_mean[b],
                priors.mu_var[b],
                &s.values[b],
                s.sigma2[b],
                &mut rng,
            );
        }
        for b in 0..4 {
            s.sigma2[b] = sample_sigma2_conditional(
                priors.sigma2_shape[b],
                priors.sigma2_rate[b],
                &s.values[b],
                s.mu[b],
                &mut rng,
            );
        }

        let mut session_ll = model.session_log_liks(&s, &kappas);
        for role in [Role::A, Role::B] {
            let (blocks, r) = if role == Role::A {
                ([0, 2], 0)
            } else {
                ([1, 3], 1)
            };
            for i in 0..s.values[blocks[0]].len() {
                let pos = model.session_of[r][i];
                for b in blocks {
                    let old = s.values[b][i];
                    let z: f64 = rng.sample(StandardNormal);
                    let new = old + proposals[b][i].scale * z;
                    s.values[b][i] = new;
                    kappas.fill(&s, r, i);
                    let ll_new = model.session_log_lik(&s, &kappas, pos);
                    let log_ratio = ll_new - session_ll[pos]
                        + normal_log_kernel(new, s.mu[b], s.sigma2[b])
                        - normal_log_kernel(old, s.mu[b], s.sigma2[b]);
                    let accept = ll_new.is_finite() && metropolis_accept(&mut rng, log_ratio);
                    if accept {
                        session_ll[pos] = ll_new;
                    } else {
                        s.values[b][i] = old;
                        kappas.fill(&s, r, i);
                    }
                    proposals[b][i].record(accept, burning, config.adapt_during_burnin);
                }
            }
        }

        if config.block_shift {
            let mut ll: f64 = session_ll.iter().sum();
            for b in 0..4 {
                let z: f64 = rng.sample(StandardNormal);
                let eps = shifts[b].scale * z;
                let old = s.clone();
                s.mu[b] += eps;
                s.values[b].iter_mut().for_each(|v| *v += eps);
                kappas.fill_role(&s, b % 2);
                let ll_new = model.full_log_lik(&s, &kappas);
                let log_ratio = ll_new - ll
                    + normal_log_kernel(s.mu[b], priors.mu_mean[b], priors.mu_var[b])
                    - normal_log_kernel(old.mu[b], priors.mu_mean[b], priors.mu_var[b]);
                let accept = ll_new.is_finite() && metropolis_accept(&mut rng, log_ratio);
                if accept {
                    ll = ll_new;
                } else {
                    s = old;
                    kappas.fill_role(&s, b % 2);
                }
                shifts[b].record(accept, burning, config.adapt_during_burnin);
            }
        }

        if config.keeps(k) {
            samples.draws.push(s.row());
        }
    }

    samples.chain_lengths = vec![samples.draws.len()];
    let mut rates: Vec<Option<f64>> = vec![Some(1.0); 8];
    for b in [0, 2, 1, 3] {
        rates.extend(proposals[b].iter().map(|p| Some(p.rate())));
    }
    samples.stalled = samples
        .names
        .iter()
        .zip(&rates)
        .filter(|(_, r)| r.is_some_and(|r| r < 0.01))
        .map(|(n, _)| n.clone())
        .collect();
    samples.acceptance_rates = rates;
    if config.block_shift {
        samples.move_acceptance = BLOCKS
            .iter()
            .zip(&shifts)
            .map(|(n, p)| (format!("shift_{n}"), p.rate()))
            .collect();
        samples.stalled.extend(
            samples
                .move_acceptance
                .iter()
                .filter(|(_, r)| *r < 0.01)
                .map(|(n, _)| n.clone()),
        );
    }
    samples.config = Some(config.clone());
    samples.priors = Some(priors.clone());
    Ok(samples)
}
