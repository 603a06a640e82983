use centipede_qre::bayes::{
    diagnostics, effective_sample_size, metropolis_fixed, metropolis_fixed_chains,
    posterior_summary, sampler_random_effects, PriorSpec, SamplerConfig,
};
use centipede_qre::data::{
    generate_synthetic, Dataset, DesignSpec, PopulationParams, SyntheticModel,
};
use centipede_qre::game::{PayoffTable, Role};
use centipede_qre::inference::log_likelihood;
use centipede_qre::models::{ModelFamily, ModelSpec};
use centipede_qre::optim::{minimize, NelderMeadConfig};

fn table() -> PayoffTable {
    PayoffTable::default()
}

fn standard_data(seed: u64) -> Dataset {
    let m = ModelSpec::HeteroLearning {
        lambda_a: 3.275,
        lambda_b: 1.082,
        beta: 0.034,
    };
    generate_synthetic(
        &DesignSpec::standard(),
        &SyntheticModel::Fixed(m),
        &table(),
        seed,
    )
    .unwrap()
    .data
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn mc_se(x: &[f64]) -> f64 {
    (var(x) / effective_sample_size(&[x])).sqrt()
}

#[test]
fn normal_target_moments() {
    // Prior only: each coordinate is an independent normal.
    let priors = PriorSpec {
        fixed_mean: [2.0, -1.0, 0.5],
        fixed_var: [0.25, 4.0, 0.01],
        ..PriorSpec::default()
    };
    let cfg = SamplerConfig {
        total_iterations: 60_000,
        burn_in: 5_000,
        thin: 2,
        seed: 11,
        use_likelihood: false,
        ..Default::default()
    };
    let s = metropolis_fixed(&table(), &standard_data(1), &priors, &cfg).unwrap();
    for j in 0..3 {
        let x = s.column(j);
        let z = (mean(&x) - priors.fixed_mean[j]) / mc_se(&x);
        assert!(z.abs() < 3.0, "{}: mean {} (z {z})", s.names[j], mean(&x));
        let dev: Vec<f64> = x
            .iter()
            .map(|v| (v - priors.fixed_mean[j]).powi(2))
            .collect();
        let z = (mean(&dev) - priors.fixed_var[j]) / mc_se(&dev);
        assert!(
            z.abs() < 3.0,
            "{}: variance {} (z {z})",
            s.names[j],
            mean(&dev)
        );
        let rate = s.acceptance_rates[j].unwrap();
        assert!((0.2..0.6).contains(&rate), "acceptance {rate}");
    }
}

#[test]
fn chains_agree_on_synthetic_data() {
    let cfg = SamplerConfig {
        total_iterations: 20_000,
        burn_in: 2_000,
        thin: 5,
        seed: 3,
        ..Default::default()
    };
    let s =
        metropolis_fixed_chains(&table(), &standard_data(2), &PriorSpec::default(), &cfg, 3).unwrap();
    let report = diagnostics(&s).unwrap();
    for p in &report.params {
        assert!(p.r_hat < 1.05, "{}: R-hat {}", p.name, p.r_hat);
        assert!(p.ess > 300.0, "{}: ESS {}", p.name, p.ess);
    }
    assert!(report.stalled.is_empty());
    let sum = posterior_summary(&s).unwrap();
    let la = s.index_of("log_lambda_A").unwrap();
    let lb = s.index_of("log_lambda_B").unwrap();
    assert!(s.probability(|r| r[lb] < r[la]) > 0.95);
    assert!(sum[2].prob_positive > 0.9);
}

/// Log-likelihood of the random-effects model with every subject of a role
/// sharing `(delta, beta)`.
fn pooled_log_lik(data: &Dataset, x: &[f64]) -> f64 {
    let (na, nb) = (data.subjects(Role::A).len(), data.subjects(Role::B).len());
    let m = ModelSpec::RandomEffects {
        delta_a: vec![x[0]; na],
        beta_a: vec![x[2]; na],
        delta_b: vec![x[1]; nb],
        beta_b: vec![x[3]; nb],
    };
    log_likelihood(&table(), &m, data, None).unwrap()
}

#[test]
fn degenerate_hierarchy_approaches_the_pooled_fit() {
    let data = standard_data(5);
    let nm = NelderMeadConfig::default();
    let mle = minimize(|x| -pooled_log_lik(&data, x), &[1.0, 0.0, 0.03, 0.03], &nm);
    assert!(mle.converged);

    let priors = PriorSpec {
        sigma2_shape: [1000.0; 4],
        sigma2_rate: [1e-3; 4],
        ..PriorSpec::default()
    };
    let cfg = SamplerConfig {
        total_iterations: 12_000,
        burn_in: 2_000,
        thin: 5,
        seed: 9,
        ..SamplerConfig::random_effects()
    };
    let s = sampler_random_effects(&table(), &data, &priors, &cfg).unwrap();
    for (j, name) in ["mu_delta_A", "mu_delta_B", "mu_beta_A", "mu_beta_B"]
        .iter()
        .enumerate()
    {
        let x = s.column_by_name(name).unwrap();
        let sd = var(&x).sqrt();
        assert!(
            (mean(&x) - mle.x[j]).abs() < 0.5 * sd,
            "{name}: posterior mean {} vs MLE {} (sd {sd})",
            mean(&x),
            mle.x[j]
        );
    }
    // Subjects stay on their population means.
    let mu = s.index_of("mu_delta_A").unwrap();
    let first = s
        .names
        .iter()
        .position(|n| n.starts_with("delta_A["))
        .unwrap();
    assert!(s.draws.iter().all(|r| (r[first] - r[mu]).abs() < 0.01));
}

#[test]
fn random_effects_prior_recovery_of_population_means() {
    let priors = PriorSpec {
        mu_mean: [1.0, -1.0, 0.5, 0.0],
        mu_var: [0.5, 2.0, 1.0, 0.25],
        ..PriorSpec::default()
    };
    let cfg = SamplerConfig {
        total_iterations: 6_000,
        burn_in: 1_000,
        thin: 1,
        seed: 4,
        use_likelihood: false,
        block_shift: false,
        ..SamplerConfig::random_effects()
    };
    let s = sampler_random_effects(&table(), &standard_data(6), &priors, &cfg).unwrap();
    for b in 0..4 {
        let x = s.column(b);
        let z = (mean(&x) - priors.mu_mean[b]) / mc_se(&x);
        assert!(z.abs() < 3.5, "{}: mean {} (z {z})", s.names[b], mean(&x));
    }
}

#[test]
fn random_effects_draws_stay_in_the_support_and_recover_the_population() {
    let pop = PopulationParams {
        mu_delta_a: 1.2,
        mu_delta_b: 0.1,
        mu_beta_a: 0.03,
        mu_beta_b: 0.03,
        sigma2_delta_a: 0.2,
        sigma2_delta_b: 0.2,
        sigma2_beta_a: 0.001,
        sigma2_beta_b: 0.001,
    };
    let design = DesignSpec::standard().replicated(2);
    let data = generate_synthetic(&design, &SyntheticModel::Hierarchical(pop), &table(), 21)
        .unwrap()
        .data;
    let cfg = SamplerConfig {
        total_iterations: 6_000,
        burn_in: 2_000,
        thin: 10,
        seed: 2,
        ..SamplerConfig::random_effects()
    };
    let s = sampler_random_effects(&table(), &data, &PriorSpec::default(), &cfg).unwrap();
    for k in 0..s.n_draws() {
        let m = s
            .model_for_draw(k, ModelFamily::RandomEffects, &data)
            .unwrap();
        let ll = log_likelihood(&table(), &m, &data, None).unwrap();
        assert!(ll.is_finite(), "draw {k}: log-likelihood {ll}");
    }
    for (name, truth) in [
        ("mu_delta_A", 1.2),
        ("mu_delta_B", 0.1),
        ("mu_beta_A", 0.03),
        ("mu_beta_B", 0.03),
    ] {
        let x = s.column_by_name(name).unwrap();
        let z = (mean(&x) - truth) / var(&x).sqrt();
        assert!(z.abs() < 3.0, "{name}: posterior mean {} (z {z})", mean(&x));
    }
}
