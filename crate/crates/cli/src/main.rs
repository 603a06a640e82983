//! `centipede`: fit, sample, test and simulate QRE learning models of the
//! centipede game.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use centipede_qre::bayes::{
    diagnostics, metropolis_fixed_chains, posterior_summary, sampler_random_effects_chains,
    PosteriorSamples, PriorSpec, SamplerConfig,
};
use centipede_qre::data::{
    generate_synthetic, parse_dataset_path, validate_design, Dataset, DesignSpec, SyntheticModel,
};
use centipede_qre::game::PayoffTable;
use centipede_qre::inference::{compare_models, fit_mle, FitConfig, FitResult};
use centipede_qre::models::{ModelFamily, ModelSpec};
use centipede_qre::resampling::{
    posterior_predictive_tests, randomization_test, RandomizationStatistic, Statistic, TestOutcome,
};
use centipede_qre::Error;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use manifest::{Manifest, Outputs};

#[derive(Parser, Debug, Serialize)]
#[command(
    name = "centipede",
    version,
    about = "QRE learning models for the centipede game"
)]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (0 uses all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Directory receiving all outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Payoff table JSON replacing the default schedule.
    #[arg(long, global = true)]
    payoffs: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Maximum-likelihood fits and BIC comparison.
    Fit(FitArgs),
    /// Posterior sampling for the hetero or random-effects model.
    Mcmc(McmcArgs),
    /// Latin-square randomization test.
    Randtest(RandtestArgs),
    /// Posterior predictive tests from saved draws.
    Ppc(PpcArgs),
    /// Synthetic experiment on a Latin-square design.
    Simulate(SimulateArgs),
    /// Checks a data file against the Latin-square design.
    Validate(ValidateArgs),
    /// Reruns the command recorded in a manifest and compares outputs.
    Replay(ReplayArgs),
}

fn family(s: &str) -> Result<ModelFamily, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn statistic(s: &str) -> Result<Statistic, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// one-param, learning, hetero, altruistic or probit.
    #[arg(long, value_parser = family, required_unless_present = "all", conflicts_with = "all")]
    model: Option<ModelFamily>,
    /// Fit every model and write a comparison sorted by BIC.
    #[arg(long)]
    all: bool,
    /// Also write outcome probabilities for game numbers 1..=N.
    #[arg(long)]
    curves: Option<u32>,
    #[arg(long, default_value_t = 8)]
    starts: usize,
}

#[derive(Args, Debug, Serialize)]
struct McmcArgs {
    #[arg(long)]
    data: PathBuf,
    /// hetero or random-effects.
    #[arg(long, value_parser = family)]
    model: ModelFamily,
    /// Total iterations (scans); defaults depend on the model.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Prior JSON overriding the defaults.
    #[arg(long)]
    priors: Option<PathBuf>,
    /// Sample the prior only.
    #[arg(long)]
    prior_only: bool,
    /// Disable the joint population shift moves.
    #[arg(long)]
    no_block_shift: bool,
}

#[derive(Args, Debug, Serialize)]
struct RandtestArgs {
    #[arg(long)]
    data: PathBuf,
    /// slope, f-players-a or f-players-b.
    #[arg(long, value_parser = statistic)]
    stat: Statistic,
    #[arg(long, default_value_t = 1000)]
    nperm: usize,
    /// Also report (k + 1) / (n + 1).
    #[arg(long)]
    corrected: bool,
}

#[derive(Args, Debug, Serialize)]
struct PpcArgs {
    #[arg(long)]
    data: PathBuf,
    /// Draws written by `mcmc`.
    #[arg(long)]
    samples: PathBuf,
    /// hetero or random-effects; inferred from the draws when omitted.
    #[arg(long, value_parser = family)]
    model: Option<ModelFamily>,
    /// Statistics to test; all four when omitted.
    #[arg(long, value_parser = statistic, num_args = 1..)]
    stat: Vec<Statistic>,
    /// Design JSON; taken from the data when omitted.
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long)]
    corrected: bool,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// `standard` or a design JSON file.
    #[arg(long, default_value = "standard")]
    design: String,
    /// Number of copies of the design's sessions.
    #[arg(long, default_value_t = 1)]
    copies: usize,
    /// Generating model JSON; the hetero model at (3.275, 1.082, 0.034) when
    /// omitted.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ValidateArgs {
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ReplayArgs {
    manifest: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match run(&cli, &argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: &Cli, argv: &[String]) -> Result<ExitCode, Error> {
    if cli.threads > 0 {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    if let Command::Replay(args) = &cli.command {
        return manifest::replay(&args.manifest, &cli.out_dir);
    }
    fs::create_dir_all(&cli.out_dir)?;
    let table = match &cli.payoffs {
        Some(p) => PayoffTable::from_json_path(p)?,
        None => PayoffTable::default(),
    };
    let mut out = Outputs::new(&cli.out_dir);
    let mut inputs: Vec<PathBuf> = cli.payoffs.iter().cloned().collect();
    let code = match &cli.command {
        Command::Fit(a) => {
            inputs.push(a.data.clone());
            cmd_fit(a, &table, cli.seed, &mut out)?
        }
        Command::Mcmc(a) => {
            inputs.push(a.data.clone());
            inputs.extend(a.priors.clone());
            cmd_mcmc(a, &table, cli.seed, &mut out)?
        }
        Command::Randtest(a) => {
            inputs.push(a.data.clone());
            cmd_randtest(a, cli.seed, &mut out)?
        }
        Command::Ppc(a) => {
            inputs.extend([a.data.clone(), a.samples.clone()]);
            inputs.extend(a.design.clone());
            cmd_ppc(a, &table, cli.seed, &mut out)?
        }
        Command::Simulate(a) => {
            if a.design != "standard" {
                inputs.push(PathBuf::from(&a.design));
            }
            inputs.extend(a.truth.clone());
            cmd_simulate(a, &table, cli.seed, &mut out)?
        }
        Command::Validate(a) => {
            inputs.push(a.data.clone());
            cmd_validate(a, &mut out)?
        }
        Command::Replay(_) => unreachable!(),
    };
    let m = Manifest::new(cli, argv, &inputs, &out)?;
    m.write(&cli.out_dir)?;
    Ok(code)
}

fn load_data(path: &Path) -> Result<Dataset, Error> {
    parse_dataset_path(path).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        e => e,
    })
}

fn cmd_fit(
    a: &FitArgs,
    table: &PayoffTable,
    seed: u64,
    out: &mut Outputs,
) -> Result<ExitCode, Error> {
    let data = load_data(&a.data)?;
    let config = FitConfig {
        starts: a.starts,
        ..FitConfig::default()
    };
    let fits: Vec<FitResult> = if a.all {
        compare_models(table, &data, &config, seed)?
    } else {
        vec![fit_mle(table, a.model.unwrap(), &data, &config, seed)?]
    };
    for f in &fits {
        out.write(&format!("fit-{}.json", f.family), f.to_json()?)?;
        println!(
            "{:<10} LL {:>10.3}  k {}  BIC {:>10.3}{}",
            f.family.name(),
            f.log_lik,
            f.n_params,
            f.bic,
            if f.converged { "" } else { "  (not converged)" }
        );
    }
    if a.all {
        let mut csv = String::from("model,log_lik,n_params,n_obs,bic,bic_textbook,converged\n");
        for f in &fits {
            csv += &format!(
                "{},{},{},{},{},{},{}\n",
                f.family, f.log_lik, f.n_params, f.n_obs, f.bic, f.bic_textbook, f.converged
            );
        }
        out.write("comparison.csv", csv)?;
    }
    if let Some(n) = a.curves {
        for f in &fits {
            let mut csv = String::from("t,theta1,theta2,theta3,theta4,theta5\n");
            for t in 1..=n {
                let theta = f
                    .model
                    .distribution_at(table, t)
                    .expect("fixed-parameter model");
                let cols: Vec<String> = theta.theta.iter().map(|v| v.to_string()).collect();
                csv += &format!("{t},{}\n", cols.join(","));
            }
            out.write(&format!("curve-{}.csv", f.family), csv)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_mcmc(
    a: &McmcArgs,
    table: &PayoffTable,
    seed: u64,
    out: &mut Outputs,
) -> Result<ExitCode, Error> {
    let base = match a.model {
        ModelFamily::HeteroLearning => SamplerConfig::fixed_effects(),
        ModelFamily::RandomEffects => SamplerConfig::random_effects(),
        f => {
            return Err(Error::Usage(format!(
                "mcmc supports hetero and random-effects, not {f}"
            )))
        }
    };
    let config = SamplerConfig {
        total_iterations: a.iters.unwrap_or(base.total_iterations),
        burn_in: a.burn.unwrap_or(base.burn_in),
        thin: a.thin.unwrap_or(base.thin),
        seed,
        use_likelihood: !a.prior_only,
        block_shift: !a.no_block_shift,
        ..base
    };
    config.validate()?;
    let priors: PriorSpec = match &a.priors {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => PriorSpec::default(),
    };
    priors.validate()?;
    let data = load_data(&a.data)?;
    let samples = match a.model {
        ModelFamily::HeteroLearning => {
            metropolis_fixed_chains(table, &data, &priors, &config, a.chains)?
        }
        _ => sampler_random_effects_chains(table, &data, &priors, &config, a.chains)?,
    };
    let mut csv = Vec::new();
    samples.write_csv(&mut csv)?;
    out.write("samples.csv", csv)?;
    out.write("samples.json", samples.sidecar_json()?)?;
    let summary = posterior_summary(&samples);
    match &summary {
        Ok(s) => out.write("summary.json", serde_json::to_string_pretty(s)?)?,
        Err(e) => eprintln!("warning: no summary: {e}"),
    }
    match diagnostics(&samples) {
        Ok(d) => out.write("diagnostics.json", serde_json::to_string_pretty(&d)?)?,
        Err(e) => eprintln!("warning: no diagnostics: {e}"),
    }
    if let Ok(s) = &summary {
        for p in s.iter().take(if a.model == ModelFamily::RandomEffects {
            8
        } else {
            3
        }) {
            println!(
                "{:<16} mean {:>9.4}  median {:>9.4}  95% [{:>9.4}, {:>9.4}]  P(>0) {:.3}",
                p.name, p.mean, p.median, p.lower, p.upper, p.prob_positive
            );
        }
    }
    if !samples.stalled.is_empty() {
        eprintln!(
            "error: sampler stalled (acceptance below 1% after burn-in): {}",
            samples.stalled.join(", ")
        );
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn write_test(
    out: &mut Outputs,
    prefix: &str,
    t: &TestOutcome,
    corrected: bool,
) -> Result<(), Error> {
    out.write(
        &format!("{prefix}-{}.json", t.statistic),
        t.to_json(corrected)?,
    )?;
    let mut csv = Vec::new();
    t.write_values_csv(&mut csv)?;
    out.write(&format!("{prefix}-{}-null.csv", t.statistic), csv)?;
    print!(
        "{:<12} observed {:>10.5}  p = {:.4}",
        t.statistic.name(),
        t.observed,
        t.p_value
    );
    if corrected {
        print!("  corrected p = {:.4}", t.corrected_p_value());
    }
    println!();
    Ok(())
}

fn cmd_randtest(a: &RandtestArgs, seed: u64, out: &mut Outputs) -> Result<ExitCode, Error> {
    let stat = RandomizationStatistic::try_from(a.stat)?;
    let data = load_data(&a.data)?;
    let t = randomization_test(&data, stat, a.nperm, seed)?;
    write_test(out, "randtest", &t, a.corrected)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_ppc(
    a: &PpcArgs,
    table: &PayoffTable,
    seed: u64,
    out: &mut Outputs,
) -> Result<ExitCode, Error> {
    let data = load_data(&a.data)?;
    let samples = PosteriorSamples::read_csv(fs::File::open(&a.samples)?)?;
    let family = a
        .model
        .unwrap_or(if samples.index_of("mu_delta_A").is_some() {
            ModelFamily::RandomEffects
        } else {
            ModelFamily::HeteroLearning
        });
    let design = match &a.design {
        Some(p) => DesignSpec::from_json_reader(fs::File::open(p)?)?,
        None => DesignSpec::from_dataset(&data)?,
    };
    let stats = if a.stat.is_empty() {
        Statistic::ALL.to_vec()
    } else {
        a.stat.clone()
    };
    for t in posterior_predictive_tests(&samples, family, &design, &data, &stats, table, seed)? {
        write_test(out, "ppc", &t, a.corrected)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(
    a: &SimulateArgs,
    table: &PayoffTable,
    seed: u64,
    out: &mut Outputs,
) -> Result<ExitCode, Error> {
    let design = if a.design == "standard" {
        DesignSpec::standard()
    } else {
        DesignSpec::from_json_reader(fs::File::open(&a.design)?)?
    };
    if a.copies == 0 {
        return Err(Error::Usage("--copies must be at least 1".into()));
    }
    let design = design.replicated(a.copies);
    let model: SyntheticModel = match &a.truth {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => SyntheticModel::Fixed(ModelSpec::HeteroLearning {
            lambda_a: 3.275,
            lambda_b: 1.082,
            beta: 0.034,
        }),
    };
    let exp = generate_synthetic(&design, &model, table, seed)?;
    out.write("data.csv", exp.data.to_csv_string()?)?;
    out.write("truth.json", exp.truth_json()?)?;
    out.write("design.json", design.to_json()?)?;
    println!(
        "simulated {} games in {} sessions",
        exp.data.len(),
        design.sessions.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(a: &ValidateArgs, out: &mut Outputs) -> Result<ExitCode, Error> {
    let data = load_data(&a.data)?;
    let report = validate_design(&data);
    out.write("validation.json", serde_json::to_string_pretty(&report)?)?;
    for v in &report.violations {
        println!("{v}");
    }
    if report.valid {
        println!(
            "valid: {} games in {} sessions",
            data.len(),
            report.sessions.len()
        );
        Ok(ExitCode::SUCCESS)
    } else {
        println!("invalid: {} violation(s)", report.violations.len());
        Ok(ExitCode::from(1))
    }
}
