//! Monte Carlo oracle: Rician channel realizations, GSV spectra, and
//! empirical functionals.
//!
//! GSVs of a pair {H1, H2} are the eigenvalues of
//! `L = H1 (H3^H H3)^{-1} H1^H` where H3 is H2 itself (full column rank) or
//! H2 with an eps-scaled partial identity stacked beneath it (augmented).
//! Forming the Gram matrix explicitly squares its condition number and
//! destroys the small eigenvalues precisely in the augmented regime, so the
//! extraction goes through a QR factor instead: with `H3 = Q R`,
//! `L = W W^H` for `W = H1 R^{-1}`, and the eigenvalues are the squared
//! singular values of W. The small GSVs then come out with absolute error
//! on the order of `||W|| * eps_machine` even when the augmented spectrum
//! spans ten orders of magnitude.
//!
//! Trials draw from counter-based RNG streams: one ChaCha stream per
//! (seed, channel role, resample attempt), with the trial index selecting
//! the stream counter. Results are therefore bit-identical for any worker
//! count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use std::time::Instant;

use crate::model::{classify_regime, subchannel_count, Regime, SystemConfig};
use crate::rates::{Method, RateReport, RunMeta};
use crate::{C64, CMatrix};

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("gram matrix numerically singular (condition estimate {cond:.3e}) in trial {trial}")]
    SingularGram { trial: u64, cond: f64 },
    #[error("trial {trial} still singular after {retries} resamples")]
    ResamplesExhausted { trial: u64, retries: u32 },
    #[error("regime {0} not sampleable: {1}")]
    InvalidRegime(Regime, String),
    #[error("empty sample set")]
    EmptySamples,
    #[error("invalid histogram request: {0}")]
    InvalidHistogram(String),
}

/// What to do when a realization's Gram matrix is numerically singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SingularPolicy {
    /// Redraw the realization from a fresh stream (counted, bounded).
    #[default]
    Resample,
    /// Abort the run.
    Fail,
}

/// GSVs of one trial: exactly S entries, sorted ascending.
#[derive(Debug, Clone)]
pub struct SpectrumSample {
    pub trial: u64,
    pub gsvs: Vec<f64>,
    pub regime: Regime,
}

/// Output of a Monte Carlo run over the trial grid.
#[derive(Debug, Clone)]
pub struct MonteCarloRun {
    pub samples: Vec<SpectrumSample>,
    /// Number of singular-Gram redraws across all trials.
    pub resamples: u64,
}

impl MonteCarloRun {
    /// All GSVs pooled across trials, in trial order.
    pub fn pooled(&self) -> Vec<f64> {
        self.samples.iter().flat_map(|s| s.gsvs.iter().copied()).collect()
    }
}

// ---------------------------------------------------------------------------
// Channel sampling
// ---------------------------------------------------------------------------

/// SplitMix64 step; used to derive independent per-role seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for channel role `role` (0 = H1, 1 = H2) at resample `retry`.
fn role_seed(seed: u64, role: u64, retry: u32) -> u64 {
    splitmix64(seed ^ splitmix64(role.wrapping_add(2 * retry as u64 + 1)))
}

/// Draw `Hbar + Htilde` with i.i.d. CN(0, 1) noise entries (real and
/// imaginary parts of variance 1/2 each). Deterministic in
/// (seed, trial_index): the seed keys the ChaCha stream family and the
/// trial index selects the stream counter.
pub fn sample_channel(hbar: &CMatrix, trial_index: u64, seed: u64) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_index);
    let comp = 1.0 / 2f64.sqrt();
    let mut h = hbar.clone();
    for v in h.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += C64::new(re * comp, im * comp);
    }
    h
}

// ---------------------------------------------------------------------------
// GSV extraction
// ---------------------------------------------------------------------------

/// Gram condition proxy beyond which a realization counts as singular.
const GRAM_COND_LIMIT: f64 = 1e14;
const MAX_RESAMPLES: u32 = 8;

/// All M1 eigenvalues of `H1 (H3^H H3)^{-1} H1^H`, ascending.
fn l_spectrum(h1: &CMatrix, h3: &CMatrix, trial: u64) -> Result<Vec<f64>, SampleError> {
    let m1 = h1.nrows();
    let r = h3.clone().qr().r();
    let (mut dmin, mut dmax) = (f64::INFINITY, 0.0f64);
    for i in 0..r.nrows() {
        let d = r[(i, i)].norm();
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    let cond = dmax / dmin;
    if !cond.is_finite() || cond > GRAM_COND_LIMIT {
        return Err(SampleError::SingularGram { trial, cond });
    }
    // W = H1 R^{-1} via the adjoint triangular solve R^H W^H = H1^H
    let wh = r
        .ad_solve_upper_triangular(&h1.adjoint())
        .ok_or(SampleError::SingularGram { trial, cond: f64::INFINITY })?;
    let w = wh.adjoint();
    let svd = w
        .try_svd(false, false, f64::EPSILON, 0)
        .ok_or(SampleError::SingularGram { trial, cond })?;
    let mut lambdas: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
    lambdas.resize(m1.max(lambdas.len()), 0.0); // rank(L) <= N: pad exact zeros
    lambdas.sort_by(f64::total_cmp);
    Ok(lambdas)
}

/// All M1 eigenvalues of the (possibly eps-augmented) L matrix, ascending.
/// The empirical counterpart of the deterministic-equivalent `G_L`; only
/// meaningful in the FullColumnRank and Augmented regimes.
pub fn l_eigenvalues(
    h1: &CMatrix,
    h2: &CMatrix,
    regime: Regime,
    epsilon: f64,
) -> Result<Vec<f64>, SampleError> {
    match regime {
        Regime::FullColumnRank => l_spectrum(h1, h2, 0),
        Regime::Augmented => {
            let h3 = crate::freedet::build_augmented_mean(h2, epsilon).map_err(|e| {
                SampleError::InvalidRegime(regime, e.to_string())
            })?;
            l_spectrum(h1, &h3, 0)
        }
        other => Err(SampleError::InvalidRegime(
            other,
            "L eigenvalues need a normalized non-degenerate pair".to_string(),
        )),
    }
}

/// The S GSVs of the realization {h1, h2}, sorted ascending.
///
/// Full column rank keeps the S largest eigenvalues of L (the rest are the
/// zero tail); augmented keeps the S smallest of the eps-augmented L (the
/// rest diverge as eps -> 0); a swapped pair is extracted with the roles
/// exchanged and the results inverted.
pub fn gsv_extract(
    h1: &CMatrix,
    h2: &CMatrix,
    regime: Regime,
    epsilon: f64,
) -> Result<Vec<f64>, SampleError> {
    let (m1, n) = (h1.nrows(), h1.ncols());
    let m2 = h2.nrows();
    let s = subchannel_count(m1, m2, n);
    match regime {
        Regime::Degenerate => Err(SampleError::InvalidRegime(
            regime,
            "degenerate pairs have a deterministic spectrum".to_string(),
        )),
        Regime::Swapped => {
            let swapped = gsv_extract(h2, h1, classify_regime(m2, m1, n), epsilon)?;
            let mut inv: Vec<f64> = swapped.iter().rev().map(|w| 1.0 / w).collect();
            inv.sort_by(f64::total_cmp);
            Ok(inv)
        }
        Regime::FullColumnRank => {
            let lambdas = l_spectrum(h1, h2, 0)?;
            let kept = lambdas[m1 - s..].to_vec();
            debug_assert!(
                m1 == s || lambdas[m1 - s - 1] <= 1e-10 * kept.last().copied().unwrap_or(1.0).max(1.0),
                "zero tail above threshold: {:e}",
                lambdas[m1 - s - 1]
            );
            Ok(kept.iter().map(|w| w.max(0.0)).collect())
        }
        Regime::Augmented => {
            let h3 = crate::freedet::build_augmented_mean(h2, epsilon)
                .map_err(|e| SampleError::InvalidRegime(regime, e.to_string()))?;
            let lambdas = l_spectrum(h1, &h3, 0)?;
            Ok(lambdas[..s].iter().map(|w| w.max(0.0)).collect())
        }
    }
}

// ---------------------------------------------------------------------------
// Trial runner
// ---------------------------------------------------------------------------

fn run_over_trials<T, F>(
    config: &SystemConfig,
    h1bar: &CMatrix,
    h2bar: &CMatrix,
    policy: SingularPolicy,
    extract: F,
) -> Result<(Vec<T>, u64), SampleError>
where
    T: Send,
    F: Fn(&CMatrix, &CMatrix, u64) -> Result<T, SampleError> + Sync,
{
    let results: Vec<Result<(T, u64), SampleError>> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let mut redraws = 0u64;
            for retry in 0..MAX_RESAMPLES {
                let h1 = sample_channel(h1bar, trial, role_seed(config.seed, 0, retry));
                let h2 = sample_channel(h2bar, trial, role_seed(config.seed, 1, retry));
                match extract(&h1, &h2, trial) {
                    Ok(v) => return Ok((v, redraws)),
                    Err(SampleError::SingularGram { .. }) if policy == SingularPolicy::Resample => {
                        redraws += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(SampleError::ResamplesExhausted { trial, retries: MAX_RESAMPLES })
        })
        .collect();

    let mut out = Vec::with_capacity(results.len());
    let mut resamples = 0;
    for r in results {
        let (v, redraws) = r?;
        resamples += redraws;
        out.push(v);
    }
    Ok((out, resamples))
}

/// Draw `config.trials` GSV spectra. Deterministic in (seed, trials)
/// regardless of worker count; trial order is by trial index.
pub fn run_trials(
    config: &SystemConfig,
    h1bar: &CMatrix,
    h2bar: &CMatrix,
    policy: SingularPolicy,
) -> Result<MonteCarloRun, SampleError> {
    let regime = config.regime();
    if regime == Regime::Degenerate {
        return Err(SampleError::InvalidRegime(
            regime,
            "degenerate configurations are rejected".to_string(),
        ));
    }
    let (samples, resamples) = run_over_trials(config, h1bar, h2bar, policy, |h1, h2, trial| {
        gsv_extract(h1, h2, regime, config.epsilon).map(|gsvs| SpectrumSample {
            trial,
            gsvs,
            regime,
        })
    })?;
    Ok(MonteCarloRun { samples, resamples })
}

/// Per-trial full L spectra (all M1 eigenvalues), for empirical estimates of
/// `G_L` with honest per-trial standard errors.
pub fn run_l_spectra(
    config: &SystemConfig,
    h1bar: &CMatrix,
    h2bar: &CMatrix,
    policy: SingularPolicy,
) -> Result<Vec<Vec<f64>>, SampleError> {
    let regime = config.regime();
    let (spectra, _) = run_over_trials(config, h1bar, h2bar, policy, |h1, h2, _trial| {
        l_eigenvalues(h1, h2, regime, config.epsilon)
    })?;
    Ok(spectra)
}

// ---------------------------------------------------------------------------
// Empirical functionals
// ---------------------------------------------------------------------------

/// Empirical Cauchy transform: mean of `1/(z - x)` over the samples.
pub fn empirical_cauchy(samples: &[f64], z: C64) -> C64 {
    let sum: C64 = samples.iter().map(|&x| (z - C64::new(x, 0.0)).inv()).sum();
    sum / samples.len() as f64
}

/// Pooled spectrum with a density-normalized histogram and an ECDF.
#[derive(Debug, Clone)]
pub struct EmpiricalSpectrum {
    sorted: Vec<f64>,
    pub bin_edges: Vec<f64>,
    pub densities: Vec<f64>,
}

impl EmpiricalSpectrum {
    pub fn from_samples(pooled: &[f64], bin_count: usize) -> Result<Self, SampleError> {
        if pooled.is_empty() {
            return Err(SampleError::EmptySamples);
        }
        if bin_count < 1 {
            return Err(SampleError::InvalidHistogram("bin_count must be >= 1".to_string()));
        }
        let mut sorted = pooled.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (mut lo, mut hi) = (sorted[0], *sorted.last().unwrap());
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bin_count as f64;
        let mut counts = vec![0usize; bin_count];
        for &x in &sorted {
            let idx = (((x - lo) / width) as usize).min(bin_count - 1);
            counts[idx] += 1;
        }
        let n = sorted.len() as f64;
        let densities = counts.iter().map(|&c| c as f64 / (n * width)).collect();
        let bin_edges = (0..=bin_count).map(|i| lo + width * i as f64).collect();
        Ok(EmpiricalSpectrum { sorted, bin_edges, densities })
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// Right-continuous ECDF: fraction of samples <= x.
    pub fn ecdf(&self, x: f64) -> f64 {
        let k = self.sorted.partition_point(|&s| s <= x);
        k as f64 / self.sorted.len() as f64
    }

    /// Total histogram mass (should be 1 up to rounding).
    pub fn histogram_mass(&self) -> f64 {
        self.densities
            .iter()
            .zip(self.bin_edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum()
    }
}

/// Histogram + ECDF over the pooled GSVs of a run.
pub fn empirical_spectrum(
    run: &MonteCarloRun,
    bin_count: usize,
) -> Result<EmpiricalSpectrum, SampleError> {
    EmpiricalSpectrum::from_samples(&run.pooled(), bin_count)
}

// ---------------------------------------------------------------------------
// Empirical rates
// ---------------------------------------------------------------------------

/// Per-subchannel NOMA rate terms at GSV `w` (natural log).
pub(crate) fn noma_rate_terms(w: f64, config: &SystemConfig) -> (f64, f64) {
    let rho = config.rho();
    let a1 = config.l1 * rho / (config.t * config.d1.powf(config.tau));
    let r1 = (w / (1.0 + w) * a1).ln_1p();
    let r2 = (config.l2() / (config.l1 + (1.0 + w) * config.t * config.d2.powf(config.tau) / rho))
        .ln_1p();
    (r1, r2)
}

fn mean_and_se(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Average NOMA user rates from sampled spectra (nats). Totals are
/// per-trial sums of subchannel rates, averaged over trials; the per-trial
/// spread gives the Monte Carlo standard errors in the metadata.
pub fn empirical_rates(run: &MonteCarloRun, config: &SystemConfig) -> RateReport {
    let started = Instant::now();
    let per_trial: Vec<(f64, f64)> = run
        .samples
        .iter()
        .map(|s| {
            s.gsvs.iter().fold((0.0, 0.0), |(a, b), &w| {
                let (r1, r2) = noma_rate_terms(w, config);
                (a + r1, b + r2)
            })
        })
        .collect();
    report_from_trials(&per_trial, run, config, started)
}

/// Time-division OMA baseline: each user gets half the channel uses at full
/// power on its own GSVD subchannels.
/// `R_i = (S/2) E[log(1 + sigma_i^2(w) rho / (t d_i^tau))]`.
pub fn oma_baseline_rates(run: &MonteCarloRun, config: &SystemConfig) -> RateReport {
    let started = Instant::now();
    let rho = config.rho();
    let c1 = rho / (config.t * config.d1.powf(config.tau));
    let c2 = rho / (config.t * config.d2.powf(config.tau));
    let per_trial: Vec<(f64, f64)> = run
        .samples
        .iter()
        .map(|s| {
            s.gsvs.iter().fold((0.0, 0.0), |(a, b), &w| {
                (
                    a + 0.5 * (w / (1.0 + w) * c1).ln_1p(),
                    b + 0.5 * (c2 / (1.0 + w)).ln_1p(),
                )
            })
        })
        .collect();
    report_from_trials(&per_trial, run, config, started)
}

fn report_from_trials(
    per_trial: &[(f64, f64)],
    run: &MonteCarloRun,
    config: &SystemConfig,
    started: Instant,
) -> RateReport {
    let r1s: Vec<f64> = per_trial.iter().map(|p| p.0).collect();
    let r2s: Vec<f64> = per_trial.iter().map(|p| p.1).collect();
    let (r1, r1_se) = mean_and_se(&r1s);
    let (r2, r2_se) = mean_and_se(&r2s);
    let sums: Vec<f64> = per_trial.iter().map(|p| p.0 + p.1).collect();
    let (_, sum_se) = mean_and_se(&sums);
    RateReport::new(
        r1.max(0.0),
        r2.max(0.0),
        Method::MonteCarlo,
        RunMeta {
            trials: Some(config.trials),
            tolerance: None,
            runtime_ms: started.elapsed().as_millis() as u64,
            r1_se,
            r2_se,
            sum_se,
            resamples: Some(run.resamples),
        },
    )
}
