//! Posterior summaries and convergence diagnostics.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use super::PosteriorSamples;
use crate::error::{usage, Result};

/// Per-parameter posterior summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    /// 2.5% quantile.
    pub lower: f64,
    /// 97.5% quantile.
    pub upper: f64,
    pub prob_positive: f64,
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, median, central 95% interval and `P(param > 0)` of every column.
pub fn posterior_summary(samples: &PosteriorSamples) -> Result<Vec<ParamSummary>> {
    if samples.n_draws() < 100 {
        return Err(usage(format!(
            "a summary needs at least 100 draws, got {}",
            samples.n_draws()
        )));
    }
    Ok((0..samples.n_params())
        .map(|j| {
            let mut col = samples.column(j);
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let prob_positive = col.iter().filter(|&&v| v > 0.0).count() as f64 / n;
            col.sort_by(f64::total_cmp);
            ParamSummary {
                name: samples.names[j].clone(),
                mean,
                median: quantile(&col, 0.5),
                lower: quantile(&col, 0.025),
                upper: quantile(&col, 0.975),
                prob_positive,
            }
        })
        .collect())
}

/// Convergence diagnostics of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub ess: f64,
    pub r_hat: f64,
    pub acceptance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub n_chains: usize,
    pub n_draws: usize,
    pub params: Vec<ParamDiagnostics>,
    pub move_acceptance: Vec<(String, f64)>,
    pub stalled: Vec<String>,
}

/// Effective sample sizes, split-chain scale reduction and acceptance rates.
pub fn diagnostics(samples: &PosteriorSamples) -> Result<DiagnosticReport> {
    let chains = samples.chain_lengths.len();
    if !(chains >= 2 || samples.n_draws() >= 200) {
        return Err(usage(format!(
            "diagnostics need two chains or 200 draws, got {chains} chain(s) and {} draws",
            samples.n_draws()
        )));
    }
    if samples.chain_lengths.iter().any(|&n| n < 4) {
        return Err(usage("every chain needs at least four draws"));
    }
    let params = (0..samples.n_params())
        .map(|j| {
            let per_chain = samples.chains_of(j);
            let refs: Vec<&[f64]> = per_chain.iter().map(Vec::as_slice).collect();
            ParamDiagnostics {
                name: samples.names[j].clone(),
                ess: effective_sample_size(&refs),
                r_hat: split_r_hat(&refs),
                acceptance: samples.acceptance_rates[j],
            }
        })
        .collect();
    Ok(DiagnosticReport {
        n_chains: chains,
        n_draws: samples.n_draws(),
        params,
        move_acceptance: samples.move_acceptance.clone(),
        stalled: samples.stalled.clone(),
    })
}

/// Sum over chains of the initial-monotone-sequence ESS. A constant chain
/// counts at its length.
pub fn effective_sample_size(chains: &[&[f64]]) -> f64 {
    chains.iter().map(|c| chain_ess(c)).sum()
}

fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n]
        .iter()
        .map(|c| c.re / (size as f64 * n as f64))
        .collect()
}

fn chain_ess(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let acov = autocovariance(x);
    if !(acov[0] > 1e-300) {
        return n as f64;
    }
    let rho = |k: usize| acov[k] / acov[0];
    // Sums of adjacent autocorrelation pairs, kept while positive and made
    // non-increasing.
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let mut pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / (n as f64).log10());
    n as f64 / tau
}

/// Gelman–Rubin statistic over the halves of every chain.
pub fn split_r_hat(chains: &[&[f64]]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .collect();
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0);
    if n < 2 {
        return f64::NAN;
    }
    let m = halves.len() as f64;
    let means: Vec<f64> = halves
        .iter()
        .map(|h| h[..n].iter().sum::<f64>() / n as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n as f64 / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h[..n].iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    (var_plus / w).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::SamplerKind;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn samples(cols: Vec<Vec<f64>>, chain_lengths: Vec<usize>) -> PosteriorSamples {
        let names = (0..cols.len()).map(|j| format!("x{j}")).collect();
        let mut s = PosteriorSamples::new(SamplerKind::Imported, names);
        s.draws = (0..cols[0].len())
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect();
        s.chain_lengths = chain_lengths;
        s
    }

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = crate::resampling::substream(seed, 0);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn constant_and_alternating_columns() {
        let n = 200;
        let s = samples(
            vec![
                vec![2.5; n],
                (0..n)
                    .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
                    .collect(),
            ],
            vec![n],
        );
        let sum = posterior_summary(&s).unwrap();
        assert_eq!(
            (sum[0].mean, sum[0].median, sum[0].lower, sum[0].upper),
            (2.5, 2.5, 2.5, 2.5)
        );
        assert_eq!(sum[1].prob_positive, 0.5);
    }

    #[test]
    fn summary_needs_100_draws() {
        assert!(posterior_summary(&samples(vec![vec![0.0; 99]], vec![99])).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v: Vec<f64> = (1..=5).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.025), 1.1);
        assert!((quantile(&v, 0.975) - 4.9).abs() < 1e-12);
    }

    #[test]
    fn independent_draws_have_nominal_ess() {
        let x = normals(1, 4000);
        let ess = effective_sample_size(&[&x]);
        assert!((ess - 4000.0).abs() < 800.0, "{ess}");
    }

    #[test]
    fn autocorrelated_draws_lose_ess() {
        // AR(1) with phi = 0.9 has tau = 19.
        let z = normals(2, 20_000);
        let mut x = vec![0.0; z.len()];
        for i in 1..z.len() {
            x[i] = 0.9 * x[i - 1] + z[i];
        }
        let ess = effective_sample_size(&[&x]);
        assert!(
            (ess - 20_000.0 / 19.0).abs() < 0.25 * 20_000.0 / 19.0,
            "{ess}"
        );
    }

    #[test]
    fn autocovariance_matches_direct_sum() {
        let x = normals(3, 37);
        let acov = autocovariance(&x);
        let m = x.iter().sum::<f64>() / 37.0;
        for k in [0, 1, 5, 36] {
            let direct: f64 = (0..37 - k)
                .map(|i| (x[i] - m) * (x[i + k] - m))
                .sum::<f64>()
                / 37.0;
            assert!((acov[k] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn r_hat_cases() {
        let x = normals(4, 500);
        let doubled: Vec<f64> = x.iter().chain(&x).copied().collect();
        assert!((split_r_hat(&[&doubled]) - 1.0).abs() < 0.01);
        let shifted: Vec<f64> = x.iter().map(|v| v + 4.0).collect();
        assert!(split_r_hat(&[&x, &shifted]) > 1.2);
    }

    #[test]
    fn diagnostics_preconditions() {
        assert!(diagnostics(&samples(vec![vec![0.0; 150]], vec![150])).is_err());
        let r = diagnostics(&samples(vec![normals(5, 150)], vec![75, 75])).unwrap();
        assert_eq!(r.n_chains, 2);
        assert!(r.params[0].ess > 0.0);
    }
}
