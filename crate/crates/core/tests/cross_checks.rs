//! Cross-method consistency checks: the Monte Carlo oracle against the
//! deterministic-equivalent solver and the closed forms, at desk scale.

use gsvnoma::freedet::{cauchy_l, FixedPointSolver, SolveOptions};
use gsvnoma::model::{build_mean_matrices, MeanSpec, Regime, SystemConfig};
use gsvnoma::rates::{freedet_rates, rate_user1, rate_user2, FreedetTransform};
use gsvnoma::sampler::{self, SingularPolicy};
use gsvnoma::C64;

/// Mean and standard error of the per-trial means of `1/(z - lambda)` over
/// full L spectra.
fn empirical_g_l_with_se(spectra: &[Vec<f64>], z: f64) -> (f64, f64) {
    let per_trial: Vec<f64> = spectra
        .iter()
        .map(|lams| lams.iter().map(|l| 1.0 / (z - l)).sum::<f64>() / lams.len() as f64)
        .collect();
    let n = per_trial.len() as f64;
    let mean = per_trial.iter().sum::<f64>() / n;
    let var = per_trial.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn freedet_matches_monte_carlo_for_small_rician_pair() {
    // all-ones means, (2,2,3), eps = 1e-5, z = -2. At M1 = 2 the
    // deterministic equivalent carries a measurable finite-dimension bias
    // (~2e-3 here, checked against a 1e5-trial reference), so the bound is
    // an absolute allowance rather than the Monte Carlo noise band; the
    // noise-band contract at usable dimensions is acceptance criterion 3.
    let config = SystemConfig {
        m1: 2,
        m2: 2,
        n: 3,
        epsilon: 1e-5,
        trials: 10_000,
        seed: 21,
        ..Default::default()
    };
    let (h1, h2) = build_mean_matrices(&MeanSpec::AllOnes, &config).unwrap();

    let solver = FixedPointSolver::new(&h1, &h2, Regime::Augmented, config.epsilon).unwrap();
    let state = solver.solve(C64::new(-2.0, 0.0), &SolveOptions::default()).unwrap();
    let g_l = cauchy_l(&state, config.m1).unwrap().re;

    let spectra = sampler::run_l_spectra(&config, &h1, &h2, SingularPolicy::Resample).unwrap();
    let (mc, se) = empirical_g_l_with_se(&spectra, -2.0);
    let allowance = (3.0 * se).max(5e-3);
    assert!(
        (g_l - mc).abs() < allowance,
        "freedet {g_l} vs monte-carlo {mc} (allowance {allowance:.3e})"
    );
}

#[test]
fn empirical_cauchy_hits_the_closed_branch_value_at_minus_one() {
    // Rayleigh (2,3,2): G_L(-1) = -(M1+M2-N)/(M1+M2) = -0.6
    let config =
        SystemConfig { m1: 2, m2: 3, n: 2, trials: 10_000, seed: 3, ..Default::default() };
    let (h1, h2) = build_mean_matrices(&MeanSpec::Zero, &config).unwrap();
    let spectra = sampler::run_l_spectra(&config, &h1, &h2, SingularPolicy::Resample).unwrap();
    let pooled: Vec<f64> = spectra.iter().flatten().copied().collect();
    let g = sampler::empirical_cauchy(&pooled, C64::new(-1.0, 0.0));
    assert!((g.re + 0.6).abs() < 0.02, "empirical G_L(-1) = {}", g.re);
    assert!(g.im.abs() < 1e-12);
}

#[test]
fn deterministic_equivalent_gap_shrinks_with_dimension() {
    // pattern (2mu, 2mu, 3mu) at mu = 5 vs mu = 20, all-ones means, z = -1.5:
    // the freedet-vs-Monte-Carlo gap shrinks as dims scale x4
    let z = -1.5;
    let gap_at = |mu: usize, trials: u64, seed: u64| {
        let config = SystemConfig {
            m1: 2 * mu,
            m2: 2 * mu,
            n: 3 * mu,
            epsilon: 1e-5,
            trials,
            seed,
            ..Default::default()
        };
        let (h1, h2) = build_mean_matrices(&MeanSpec::AllOnes, &config).unwrap();
        let solver =
            FixedPointSolver::new(&h1, &h2, Regime::Augmented, config.epsilon).unwrap();
        let state = solver.solve(C64::new(z, 0.0), &SolveOptions::default()).unwrap();
        let g_l = cauchy_l(&state, config.m1).unwrap().re;
        let spectra =
            sampler::run_l_spectra(&config, &h1, &h2, SingularPolicy::Resample).unwrap();
        let (mc, se) = empirical_g_l_with_se(&spectra, z);
        ((g_l - mc).abs(), se)
    };
    let (gap_small, _) = gap_at(5, 8000, 11);
    let (gap_large, se_large) = gap_at(20, 2000, 12);
    // the large-dimension gap must shrink, or at least sit inside noise
    assert!(
        gap_large < gap_small || gap_large < 3.0 * se_large,
        "gap did not shrink: mu=5 -> {gap_small:.3e}, mu=20 -> {gap_large:.3e} (3 SE {:.1e})",
        3.0 * se_large
    );
}

#[test]
fn quadrature_rates_match_monte_carlo_at_high_allocation() {
    // (24,24,36) all-ones, l1 = 0.9: deterministic-equivalent quadrature
    // within 2% of the sampled rates at desk-scale trials
    let config = SystemConfig {
        m1: 24,
        m2: 24,
        n: 36,
        l1: 0.9,
        epsilon: 1e-5,
        trials: 1000,
        seed: 14,
        ..Default::default()
    };
    let (h1, h2) = build_mean_matrices(&MeanSpec::AllOnes, &config).unwrap();

    let analytic = freedet_rates(&h1, &h2, &config).unwrap();
    let run = sampler::run_trials(&config, &h1, &h2, SingularPolicy::Resample).unwrap();
    let mc = sampler::empirical_rates(&run, &config);

    let rel1 = (analytic.r1 - mc.r1).abs() / mc.r1;
    let rel2 = (analytic.r2 - mc.r2).abs() / mc.r2;
    assert!(rel1 < 0.02, "R1 relative gap {rel1:.4}");
    assert!(rel2 < 0.02, "R2 relative gap {rel2:.4}");
}

#[test]
fn noma_beats_oma_at_high_power() {
    let config = SystemConfig {
        m1: 24,
        m2: 24,
        n: 36,
        l1: 0.9,
        p_dbm: 40.0,
        trials: 500,
        seed: 8,
        epsilon: 1e-5,
        ..Default::default()
    };
    let spec = MeanSpec::SeededGaussian { scale: 1.0, seed: 99 };
    let (h1, h2) = build_mean_matrices(&spec, &config).unwrap();
    let run = sampler::run_trials(&config, &h1, &h2, SingularPolicy::Resample).unwrap();
    let noma = sampler::empirical_rates(&run, &config);
    let oma = sampler::oma_baseline_rates(&run, &config);
    assert!(noma.sum > oma.sum, "NOMA {} vs OMA {}", noma.sum, oma.sum);
}

#[test]
fn continuation_and_cold_start_give_the_same_rates() {
    // the continuation cache inside the transform must not change results
    let config = SystemConfig {
        m1: 3,
        m2: 4,
        n: 5,
        l1: 0.3,
        epsilon: 1e-4,
        ..Default::default()
    };
    let (h1, h2) = build_mean_matrices(&MeanSpec::AllOnes, &config).unwrap();
    let make = || {
        let solver =
            FixedPointSolver::new(&h1, &h2, config.regime(), config.epsilon).unwrap();
        FreedetTransform::new(solver, SolveOptions::default())
    };
    // user-2 then user-1 on one transform (warm cache crossing intervals)
    let warm = make();
    let r2_warm = rate_user2(&warm, &config).unwrap();
    let r1_warm = rate_user1(&warm, &config).unwrap();
    // fresh transforms per integral
    let r1_cold = rate_user1(&make(), &config).unwrap();
    let r2_cold = rate_user2(&make(), &config).unwrap();
    assert!((r1_warm - r1_cold).abs() < 1e-8, "{r1_warm} vs {r1_cold}");
    assert!((r2_warm - r2_cold).abs() < 1e-8, "{r2_warm} vs {r2_cold}");
}
