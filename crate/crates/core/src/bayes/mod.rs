//! Posterior sampling for the heterogeneous learning model and the
//! hierarchical random-effects model, with summaries and diagnostics.

mod fixed;
mod hierarchical;
mod summary;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{domain, usage, Result};
use crate::game::Role;
use crate::models::{ModelFamily, ModelSpec};

pub use fixed::{metropolis_fixed, metropolis_fixed_chains};
pub use hierarchical::{
    mu_conditional, sample_mu_conditional, sample_sigma2_conditional, sampler_random_effects,
    sampler_random_effects_chains, sigma2_conditional,
};
pub use summary::{
    diagnostics, effective_sample_size, posterior_summary, split_r_hat, DiagnosticReport,
    ParamDiagnostics, ParamSummary,
};

/// Column names of the fixed-effects sampler.
pub const FIXED_NAMES: [&str; 3] = ["log_lambda_A", "log_lambda_B", "beta"];

/// Population blocks of the hierarchical model, in column order.
pub const BLOCKS: [&str; 4] = ["delta_A", "delta_B", "beta_A", "beta_B"];

/// Prior distributions. Hierarchical arrays follow [`BLOCKS`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Normal prior means of `(ln lambda_A, ln lambda_B, beta)`.
    pub fixed_mean: [f64; 3],
    pub fixed_var: [f64; 3],
    /// Normal priors on the population means.
    pub mu_mean: [f64; 4],
    pub mu_var: [f64; 4],
    /// Inverse-gamma priors on the population variances.
    pub sigma2_shape: [f64; 4],
    pub sigma2_rate: [f64; 4],
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            fixed_mean: [0.0; 3],
            fixed_var: [100.0; 3],
            mu_mean: [0.0; 4],
            mu_var: [100.0; 4],
            sigma2_shape: [1.0; 4],
            sigma2_rate: [1.0; 4],
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = self
            .fixed_mean
            .iter()
            .chain(&self.mu_mean)
            .all(|v| v.is_finite());
        let positive = self
            .fixed_var
            .iter()
            .chain(&self.mu_var)
            .chain(&self.sigma2_shape)
            .chain(&self.sigma2_rate)
            .all(|&v| v > 0.0 && v.is_finite());
        if !finite {
            return Err(domain("prior means must be finite"));
        }
        if !positive {
            return Err(domain(
                "prior variances and inverse-gamma shape and rate must be positive",
            ));
        }
        Ok(())
    }
}

/// Settings shared by both samplers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub total_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Initial random-walk standard deviations. Fixed effects take one per
    /// parameter; the hierarchical sampler takes one per block, shared by
    /// the block's subjects. Empty selects the defaults.
    pub proposal_scales: Vec<f64>,
    pub seed: u64,
    pub adapt_during_burnin: bool,
    /// When false the target is the prior alone.
    pub use_likelihood: bool,
    /// Starting state in column order; `None` starts from the MLE.
    pub initial: Option<Vec<f64>>,
    /// Adds joint moves that shift a population mean and all of its
    /// subjects by the same amount (hierarchical sampler only).
    pub block_shift: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::fixed_effects()
    }
}

impl SamplerConfig {
    /// 500,000 iterations, 20,000 burn-in, every 25th kept.
    pub fn fixed_effects() -> Self {
        SamplerConfig {
            total_iterations: 500_000,
            burn_in: 20_000,
            thin: 25,
            proposal_scales: Vec::new(),
            seed: 0,
            adapt_during_burnin: true,
            use_likelihood: true,
            initial: None,
            block_shift: true,
        }
    }

    /// 20 million scans, 5 million burn-in, every 1000th kept.
    pub fn random_effects() -> Self {
        SamplerConfig {
            total_iterations: 20_000_000,
            burn_in: 5_000_000,
            thin: 1000,
            ..SamplerConfig::fixed_effects()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.total_iterations {
            return Err(usage(format!(
                "burn-in ({}) must be smaller than the total iterations ({})",
                self.burn_in, self.total_iterations
            )));
        }
        if self.thin == 0 {
            return Err(usage("thin must be at least 1"));
        }
        if self.retained() == 0 {
            return Err(usage("the configuration retains no draws"));
        }
        if self
            .proposal_scales
            .iter()
            .any(|&s| !(s > 0.0 && s.is_finite()))
        {
            return Err(usage("proposal scales must be positive"));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        retained_count(self.total_iterations, self.burn_in, self.thin)
    }

    /// Whether iteration `k` (0-based) is stored.
    pub(crate) fn keeps(&self, k: usize) -> bool {
        k >= self.burn_in && (k - self.burn_in + 1) % self.thin == 0
    }
}

/// `floor((total - burn_in) / thin)`.
pub fn retained_count(total: usize, burn_in: usize, thin: usize) -> usize {
    total.saturating_sub(burn_in) / thin.max(1)
}

/// Where a set of draws came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    FixedEffects,
    RandomEffects,
    PointMass,
    Imported,
}

/// Retained draws of one or more chains, stored chain after chain.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PosteriorSamples {
    pub kind: SamplerKind,
    pub names: Vec<String>,
    /// One row per retained draw.
    pub draws: Vec<Vec<f64>>,
    /// Number of draws contributed by each chain.
    pub chain_lengths: Vec<usize>,
    /// Post-burn-in acceptance rate of each column; 1 for Gibbs updates,
    /// `None` when unknown.
    pub acceptance_rates: Vec<Option<f64>>,
    /// Acceptance of moves that update several columns at once.
    pub move_acceptance: Vec<(String, f64)>,
    /// Parameters and moves accepting fewer than 1% of proposals after
    /// burn-in.
    pub stalled: Vec<String>,
    pub config: Option<SamplerConfig>,
    pub priors: Option<PriorSpec>,
}

impl PosteriorSamples {
    pub(crate) fn new(kind: SamplerKind, names: Vec<String>) -> Self {
        let n = names.len();
        PosteriorSamples {
            kind,
            names,
            draws: Vec::new(),
            chain_lengths: Vec::new(),
            acceptance_rates: vec![None; n],
            move_acceptance: Vec::new(),
            stalled: Vec::new(),
            config: None,
            priors: None,
        }
    }

    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|r| r[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.index_of(name).map(|j| self.column(j))
    }

    /// Column `j` split by chain.
    pub fn chains_of(&self, j: usize) -> Vec<Vec<f64>> {
        let mut start = 0;
        self.chain_lengths
            .iter()
            .map(|&len| {
                let c = self.draws[start..start + len]
                    .iter()
                    .map(|r| r[j])
                    .collect();
                start += len;
                c
            })
            .collect()
    }

    /// Fraction of draws satisfying `pred`.
    pub fn probability(&self, pred: impl Fn(&[f64]) -> bool) -> f64 {
        self.draws.iter().filter(|r| pred(r)).count() as f64 / self.draws.len() as f64
    }

    /// `n` identical draws of a fixed model.
    pub fn point_mass(model: &ModelSpec, data: &Dataset, n: usize) -> Result<Self> {
        model.validate_for(data)?;
        let (names, row) =
            match model {
                ModelSpec::HeteroLearning {
                    lambda_a,
                    lambda_b,
                    beta,
                } => (
                    FIXED_NAMES.iter().map(|s| s.to_string()).collect(),
                    vec![lambda_a.ln(), lambda_b.ln(), *beta],
                ),
                ModelSpec::RandomEffects {
                    delta_a,
                    beta_a,
                    delta_b,
                    beta_b,
                } => {
                    let mut row = vec![f64::NAN; 8];
                    row.extend(delta_a.iter().chain(beta_a).chain(delta_b).chain(beta_b));
                    (hierarchical_names(data), row)
                }
                _ => return Err(usage(
                    "point-mass posteriors are available for the hetero and random-effects models",
                )),
            };
        let mut s = PosteriorSamples::new(SamplerKind::PointMass, names);
        s.draws = vec![row; n];
        s.chain_lengths = vec![n];
        Ok(s)
    }

    /// Concatenates chains with identical columns.
    pub fn merge(chains: Vec<PosteriorSamples>) -> Result<Self> {
        let mut iter = chains.into_iter();
        let mut out = iter.next().ok_or_else(|| usage("no chains to merge"))?;
        let mut weights = vec![out.n_draws() as f64];
        let mut rates = vec![out.acceptance_rates.clone()];
        let mut moves = vec![out.move_acceptance.clone()];
        for c in iter {
            if c.names != out.names || c.kind != out.kind {
                return Err(usage("chains have different parameters"));
            }
            weights.push(c.n_draws() as f64);
            rates.push(c.acceptance_rates);
            moves.push(c.move_acceptance);
            out.draws.extend(c.draws);
            out.chain_lengths.extend(c.chain_lengths);
            for s in c.stalled {
                if !out.stalled.contains(&s) {
                    out.stalled.push(s);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        out.acceptance_rates = (0..out.names.len())
            .map(|j| {
                rates
                    .iter()
                    .zip(&weights)
                    .map(|(r, w)| r[j].map(|v| v * w))
                    .sum::<Option<f64>>()
                    .map(|s| s / total)
            })
            .collect();
        out.move_acceptance = (0..out.move_acceptance.len())
            .map(|k| {
                let name = out.move_acceptance[k].0.clone();
                (
                    name,
                    moves
                        .iter()
                        .zip(&weights)
                        .map(|(m, w)| m[k].1 * w)
                        .sum::<f64>()
                        / total,
                )
            })
            .collect();
        Ok(out)
    }

    /// Model of draw `k` for simulating replicates of `data`.
    pub fn model_for_draw(
        &self,
        k: usize,
        family: ModelFamily,
        data: &Dataset,
    ) -> Result<ModelSpec> {
        let row = self
            .draws
            .get(k)
            .ok_or_else(|| usage(format!("draw {k} out of range")))?;
        match family {
            ModelFamily::HeteroLearning => {
                let col = |name: &str| {
                    self.index_of(name)
                        .map(|j| row[j])
                        .ok_or_else(|| usage(format!("samples have no column {name}")))
                };
                Ok(ModelSpec::HeteroLearning {
                    lambda_a: col(FIXED_NAMES[0])?.exp(),
                    lambda_b: col(FIXED_NAMES[1])?.exp(),
                    beta: col(FIXED_NAMES[2])?,
                })
            }
            ModelFamily::RandomEffects => {
                let (na, nb) = (data.subjects(Role::A).len(), data.subjects(Role::B).len());
                let start = self
                    .names
                    .iter()
                    .position(|n| n.starts_with("delta_A["))
                    .ok_or_else(|| usage("samples have no subject columns"))?;
                let expected = hierarchical_names(data);
                if self.names.len() != expected.len() || self.names[start..] != expected[8..] {
                    return Err(usage(
                        "sample columns do not match the subjects of the data",
                    ));
                }
                let take = |from: usize, n: usize| row[start + from..start + from + n].to_vec();
                Ok(ModelSpec::RandomEffects {
                    delta_a: take(0, na),
                    beta_a: take(na, na),
                    delta_b: take(2 * na, nb),
                    beta_b: take(2 * na + nb, nb),
                })
            }
            f => Err(usage(format!(
                "posterior predictive replicates are not available for the {f} model"
            ))),
        }
    }

    /// Columnar CSV with a header row.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.names)?;
        for row in &self.draws {
            out.write_record(row.iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads draws written by [`write_csv`](Self::write_csv) as one chain.
    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if names.is_empty() {
            return Err(usage("samples file has no columns"));
        }
        let kind = if names.iter().any(|n| n.starts_with("delta_A[")) {
            SamplerKind::RandomEffects
        } else {
            SamplerKind::Imported
        };
        let mut s = PosteriorSamples::new(kind, names);
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| crate::Error::Parse {
                    line: i as u64 + 2,
                    message: e.to_string(),
                })?;
            s.draws.push(row);
        }
        s.chain_lengths = vec![s.draws.len()];
        Ok(s)
    }

    /// Sidecar describing how the draws were produced.
    pub fn sidecar_json(&self) -> Result<String> {
        let rates: serde_json::Map<String, serde_json::Value> = self
            .names
            .iter()
            .zip(&self.acceptance_rates)
            .filter_map(|(n, r)| r.map(|r| (n.clone(), r.into())))
            .collect();
        let moves: serde_json::Map<String, serde_json::Value> = self
            .move_acceptance
            .iter()
            .map(|(n, r)| (n.clone(), (*r).into()))
            .collect();
        let v = serde_json::json!({
            "kind": self.kind,
            "retained": self.n_draws(),
            "chain_lengths": self.chain_lengths,
            "seed": self.config.as_ref().map(|c| c.seed),
            "config": self.config,
            "priors": self.priors,
            "acceptance_rates": rates,
            "move_acceptance": moves,
            "stalled": self.stalled,
        });
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// Column names of the hierarchical sampler for `data`.
pub fn hierarchical_names(data: &Dataset) -> Vec<String> {
    let mut names: Vec<String> = BLOCKS.iter().map(|b| format!("mu_{b}")).collect();
    names.extend(BLOCKS.iter().map(|b| format!("sigma2_{b}")));
    for (block, role) in [
        ("delta_A", Role::A),
        ("beta_A", Role::A),
        ("delta_B", Role::B),
        ("beta_B", Role::B),
    ] {
        names.extend(data.subjects(role).iter().map(|s| format!("{block}[{s}]")));
    }
    names
}

/// Random-walk scale tuned toward 30–45% acceptance during burn-in.
#[derive(Clone, Debug)]
pub(crate) struct Proposal {
    pub scale: f64,
    window_accepted: u32,
    window_tried: u32,
    accepted: u64,
    tried: u64,
}

const ADAPT_WINDOW: u32 = 50;

impl Proposal {
    pub fn new(scale: f64) -> Self {
        Proposal {
            scale,
            window_accepted: 0,
            window_tried: 0,
            accepted: 0,
            tried: 0,
        }
    }

    /// Records one proposal. Adapts the scale during burn-in, counts
    /// acceptance afterwards.
    pub fn record(&mut self, accepted: bool, burning: bool, adapt: bool) {
        if burning {
            if !adapt {
                return;
            }
            self.window_tried += 1;
            self.window_accepted += accepted as u32;
            if self.window_tried == ADAPT_WINDOW {
                let rate = self.window_accepted as f64 / ADAPT_WINDOW as f64;
                if rate < 0.30 {
                    self.scale *= 0.8;
                } else if rate > 0.45 {
                    self.scale *= 1.25;
                }
                self.window_tried = 0;
                self.window_accepted = 0;
            }
        } else {
            self.tried += 1;
            self.accepted += accepted as u64;
        }
    }

    pub fn rate(&self) -> f64 {
        if self.tried == 0 {
            0.0
        } else {
            self.accepted as f64 / self.tried as f64
        }
    }
}

/// `ln N(x; mean, var)` without the constant.
#[inline]
pub(crate) fn normal_log_kernel(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (x - mean) * (x - mean) / var
}
