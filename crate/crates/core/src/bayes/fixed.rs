//! Single-site random-walk Metropolis for `(ln lambda_A, ln lambda_B, beta)`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{
    normal_log_kernel, PosteriorSamples, PriorSpec, Proposal, SamplerConfig, SamplerKind,
    FIXED_NAMES,
};
use crate::data::Dataset;
use crate::error::{domain, usage, Error, Result};
use crate::game::PayoffTable;
use crate::inference::{counts_log_likelihood, fit_mle, FitConfig};
use crate::models::{ModelFamily, ModelSpec};
use crate::resampling::substream;

const DEFAULT_SCALES: [f64; 3] = [0.1, 0.1, 0.01];

/// Samples the heterogeneous learning model. Starts at its MLE unless
/// `config.initial` is set. Deterministic given `config.seed`.
pub fn metropolis_fixed(
    table: &PayoffTable,
    data: &Dataset,
    priors: &PriorSpec,
    config: &SamplerConfig,
) -> Result<PosteriorSamples> {
    run_chain(
        table,
        data,
        priors,
        config,
        &initial_state(table, data, priors, config)?,
        0,
    )
}

/// Runs `n_chains` chains in parallel from the same start, chain `c` on
/// random stream `c`, and merges them.
pub fn metropolis_fixed_chains(
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
        .map(|c| run_chain(table, data, priors, config, &start, c as u64))
        .collect::<Result<Vec<_>>>()?;
    PosteriorSamples::merge(chains)
}

fn initial_state(
    table: &PayoffTable,
    data: &Dataset,
    priors: &PriorSpec,
    config: &SamplerConfig,
) -> Result<[f64; 3]> {
    config.validate()?;
    priors.validate()?;
    if data.is_empty() {
        return Err(domain("no records"));
    }
    if !config.proposal_scales.is_empty() && config.proposal_scales.len() != 3 {
        return Err(usage(
            "the fixed-effects sampler takes three proposal scales",
        ));
    }
    if let Some(init) = &config.initial {
        return <[f64; 3]>::try_from(init.as_slice())
            .map_err(|_| usage("the fixed-effects sampler takes three initial values"));
    }
    if !config.use_likelihood {
        return Ok(priors.fixed_mean);
    }
    let fit = fit_mle(
        table,
        ModelFamily::HeteroLearning,
        data,
        &FitConfig::default(),
        config.seed,
    )?;
    let ModelSpec::HeteroLearning {
        lambda_a,
        lambda_b,
        beta,
    } = fit.model
    else {
        unreachable!()
    };
    Ok([lambda_a.ln(), lambda_b.ln(), beta])
}

fn run_chain(
    table: &PayoffTable,
    data: &Dataset,
    priors: &PriorSpec,
    config: &SamplerConfig,
    start: &[f64; 3],
    chain: u64,
) -> Result<PosteriorSamples> {
    let counts = data.counts_by_game();
    let log_post = |x: &[f64; 3]| {
        let prior: f64 = (0..3)
            .map(|i| normal_log_kernel(x[i], priors.fixed_mean[i], priors.fixed_var[i]))
            .sum();
        if !config.use_likelihood {
            return prior;
        }
        let m = ModelSpec::HeteroLearning {
            lambda_a: x[0].exp(),
            lambda_b: x[1].exp(),
            beta: x[2],
        };
        if m.validate().is_err() {
            return f64::NEG_INFINITY;
        }
        prior + counts_log_likelihood(table, &m, &counts)
    };

    let mut x = *start;
    let mut lp = log_post(&x);
    if !lp.is_finite() {
        return Err(Error::Initialization(format!(
            "log-posterior is {lp} at {x:?}; try a different starting point"
        )));
    }
    let scales = if config.proposal_scales.is_empty() {
        DEFAULT_SCALES.to_vec()
    } else {
        config.proposal_scales.clone()
    };
    let mut proposals: Vec<Proposal> = scales.into_iter().map(Proposal::new).collect();
    let mut rng = substream(config.seed, chain);

    let mut samples = PosteriorSamples::new(
        SamplerKind::FixedEffects,
        FIXED_NAMES.iter().map(|s| s.to_string()).collect(),
    );
    samples.draws.reserve(config.retained());
    for k in 0..config.total_iterations {
        let burning = k < config.burn_in;
        for i in 0..3 {
            let mut y = x;
            let z: f64 = rng.sample(StandardNormal);
            y[i] += proposals[i].scale * z;
            let lp_new = log_post(&y);
            let accept =
                lp_new.is_finite() && (lp_new >= lp || rng.random::<f64>().ln() < lp_new - lp);
            if accept {
                x = y;
                lp = lp_new;
            }
            proposals[i].record(accept, burning, config.adapt_during_burnin);
        }
        if config.keeps(k) {
            samples.draws.push(x.to_vec());
        }
    }
    samples.chain_lengths = vec![samples.draws.len()];
    samples.acceptance_rates = proposals.iter().map(|p| Some(p.rate())).collect();
    samples.stalled = FIXED_NAMES
        .iter()
        .zip(&proposals)
        .filter(|(_, p)| p.rate() < 0.01)
        .map(|(n, _)| n.to_string())
        .collect();
    samples.config = Some(config.clone());
    samples.priors = Some(priors.clone());
    Ok(samples)
}
