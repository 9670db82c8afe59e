//! Average user rates from a Cauchy-transform evaluator.
//!
//! For any probability law of the GSV `w` with transform `G_w`, the two
//! per-subchannel average rates reduce to one-dimensional integrals of `G_w`
//! along the negative real axis:
//!
//! ```text
//! r1 = log(1 + a) + \int_0^a (y+1)^{-2} G_w(-(y+1)^{-1}) dy ,  a = l1 rho / (t d1^tau)
//! r2 = \int_0^b [ -G_w(-(1+y)) + l1 G_w(-(1+l1 y)) ] dy ,      b = rho / (t d2^tau)
//! ```
//!
//! Totals multiply by the subchannel count S, which pins all three methods
//! (Monte Carlo ECDF, deterministic equivalent, Rayleigh closed form) to the
//! same convention; the path-equivalence test against the ECDF route keeps
//! that honest.

use std::fmt;
use std::sync::Mutex;
use std::time::Instant;

use thiserror::Error;

use crate::freedet::{cauchy_omega, FixedPointSolver, SolveError, SolveOptions};
use crate::model::SystemConfig;
use crate::quad::{self, QuadratureError};
use crate::rayleigh::{closed_cauchy_l_real, Dims, RayleighError};
use crate::sampler::{noma_rate_terms, EmpiricalSpectrum};
use crate::C64;

#[derive(Debug, Error)]
pub enum RateError {
    #[error("quadrature failed for {which}: {detail}")]
    QuadratureFailure { which: &'static str, detail: String },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Rayleigh(#[from] RayleighError),
}

/// Producer of a rate figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    MonteCarlo,
    Freedet,
    RayleighClosed,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::MonteCarlo => "monte-carlo",
            Method::Freedet => "freedet",
            Method::RayleighClosed => "rayleigh-closed",
        };
        f.write_str(s)
    }
}

/// Run metadata attached to a rate report.
#[derive(Debug, Clone, Default)]
pub struct RunMeta {
    pub trials: Option<u64>,
    pub tolerance: Option<f64>,
    pub runtime_ms: u64,
    /// Monte Carlo standard errors (per-trial spread / sqrt(trials)).
    pub r1_se: Option<f64>,
    pub r2_se: Option<f64>,
    pub sum_se: Option<f64>,
    pub resamples: Option<u64>,
}

/// Average user rates in nats.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub r1: f64,
    pub r2: f64,
    pub sum: f64,
    pub method: Method,
    pub meta: RunMeta,
}

impl RateReport {
    pub fn new(r1: f64, r2: f64, method: Method, meta: RunMeta) -> Self {
        RateReport { r1, r2, sum: r1 + r2, method, meta }
    }
}

// ---------------------------------------------------------------------------
// Cauchy-transform evaluators
// ---------------------------------------------------------------------------

/// Evaluator of the GSV Cauchy transform on the negative real axis.
pub trait GsvTransform: Sync {
    fn g_omega(&self, z: f64) -> Result<f64, RateError>;
}

/// Closed-form Rayleigh transform.
pub struct RayleighTransform {
    dims: Dims,
}

impl RayleighTransform {
    pub fn new(dims: Dims) -> Self {
        RayleighTransform { dims }
    }
}

impl GsvTransform for RayleighTransform {
    fn g_omega(&self, z: f64) -> Result<f64, RateError> {
        let g_l = closed_cauchy_l_real(z, &self.dims)?;
        let (m1, s) = (self.dims.m1 as f64, self.dims.s as f64);
        Ok(if self.dims.m2 >= self.dims.n {
            m1 / s * g_l - (m1 - s) / (s * z)
        } else {
            m1 / s * g_l
        })
    }
}

/// Deterministic-equivalent transform backed by the fixed-point solver.
/// Successive evaluations reuse the previous converged traces as the next
/// initial point (continuation along the quadrature's z path).
pub struct FreedetTransform {
    solver: FixedPointSolver,
    opts: SolveOptions,
    last_traces: Mutex<Option<[C64; 3]>>,
}

impl FreedetTransform {
    pub fn new(solver: FixedPointSolver, opts: SolveOptions) -> Self {
        FreedetTransform { solver, opts, last_traces: Mutex::new(None) }
    }

    pub fn solver(&self) -> &FixedPointSolver {
        &self.solver
    }
}

impl GsvTransform for FreedetTransform {
    fn g_omega(&self, z: f64) -> Result<f64, RateError> {
        let zc = C64::new(z, 0.0);
        let mut opts = self.opts.clone();
        if opts.init.is_none() {
            opts.init = *self.last_traces.lock().unwrap();
        }
        let state = match self.solver.solve(zc, &opts) {
            Ok(state) => state,
            // a stale continuation point can sit in the wrong basin; retry cold
            Err(SolveError::NoConvergence { .. }) if opts.init.is_some() => {
                self.solver.solve(zc, &SolveOptions { init: None, ..self.opts.clone() })?
            }
            Err(e) => return Err(e.into()),
        };
        *self.last_traces.lock().unwrap() = Some(state.traces());
        let g_l = state.tr11 / self.solver.m1() as f64;
        let g_w = cauchy_omega(g_l, zc, self.solver.m1(), self.solver.subchannels(), self.solver.regime());
        Ok(g_w.re)
    }
}

// ---------------------------------------------------------------------------
// Rate integrals
// ---------------------------------------------------------------------------

/// Quadrature controls for the rate integrals.
const RATE_QUAD_TOL: f64 = 1e-9;
const RATE_QUAD_PANELS: usize = 10_000;

fn quad_err<E: fmt::Display>(which: &'static str) -> impl FnOnce(QuadratureError<E>) -> RateError {
    move |e| match e {
        QuadratureError::Integrand(inner) => RateError::QuadratureFailure {
            which,
            detail: format!("integrand failed: {inner}"),
        },
        other => RateError::QuadratureFailure { which, detail: other.to_string() },
    }
}

/// Total average rate of user 1 (nats): `S *` the transform integral.
pub fn rate_user1(transform: &dyn GsvTransform, config: &SystemConfig) -> Result<f64, RateError> {
    let a = config.l1 * config.rho() / (config.t * config.d1.powf(config.tau));
    if a <= 0.0 {
        return Ok(0.0);
    }
    let s = config.subchannels() as f64;
    let integral = quad::integrate(
        |y| {
            let u = y + 1.0;
            transform.g_omega(-1.0 / u).map(|g| g / (u * u))
        },
        0.0,
        a,
        RATE_QUAD_TOL,
        RATE_QUAD_PANELS,
    )
    .map_err(quad_err("user-1 rate integral"))?;
    Ok((s * (a.ln_1p() + integral.value)).max(0.0))
}

/// Total average rate of user 2 (nats).
pub fn rate_user2(transform: &dyn GsvTransform, config: &SystemConfig) -> Result<f64, RateError> {
    let b = config.rho() / (config.t * config.d2.powf(config.tau));
    if b <= 0.0 || config.l1 >= 1.0 {
        return Ok(0.0);
    }
    let l1 = config.l1;
    let s = config.subchannels() as f64;
    let integral = quad::integrate(
        |y| {
            let g_full = transform.g_omega(-(1.0 + y))?;
            let g_partial = transform.g_omega(-(1.0 + l1 * y))?;
            Ok::<f64, RateError>(-g_full + l1 * g_partial)
        },
        0.0,
        b,
        RATE_QUAD_TOL,
        RATE_QUAD_PANELS,
    )
    .map_err(quad_err("user-2 rate integral"))?;
    Ok((s * integral.value).max(0.0))
}

/// Both rates from one transform, packaged with the method tag.
pub fn rates_from_transform(
    transform: &dyn GsvTransform,
    config: &SystemConfig,
    method: Method,
) -> Result<RateReport, RateError> {
    let started = Instant::now();
    let r1 = rate_user1(transform, config)?;
    let r2 = rate_user2(transform, config)?;
    Ok(RateReport::new(
        r1,
        r2,
        method,
        RunMeta {
            tolerance: Some(RATE_QUAD_TOL),
            runtime_ms: started.elapsed().as_millis() as u64,
            ..RunMeta::default()
        },
    ))
}

/// Deterministic-equivalent rates for the given means. Builds the solver,
/// wires the continuation evaluator, and integrates.
pub fn freedet_rates(
    h1bar: &crate::CMatrix,
    h2bar: &crate::CMatrix,
    config: &SystemConfig,
) -> Result<RateReport, RateError> {
    let solver = FixedPointSolver::new(h1bar, h2bar, config.regime(), config.epsilon)?;
    let transform = FreedetTransform::new(solver, SolveOptions::default());
    rates_from_transform(&transform, config, Method::Freedet)
}

/// Rates as a Stieltjes integral directly against the ECDF: a second code
/// path over the same pooled samples, equal to the per-trial average route
/// to floating-point reordering.
pub fn rates_from_cdf(spectrum: &EmpiricalSpectrum, config: &SystemConfig) -> RateReport {
    let started = Instant::now();
    let samples = spectrum.samples();
    let n = samples.len() as f64;
    let s = config.subchannels() as f64;
    let (mut r1, mut r2) = (0.0, 0.0);
    // dF has weight 1/n at every sample point
    for &w in samples {
        let (t1, t2) = noma_rate_terms(w, config);
        r1 += t1;
        r2 += t2;
    }
    r1 *= s / n;
    r2 *= s / n;
    RateReport::new(
        r1.max(0.0),
        r2.max(0.0),
        Method::MonteCarlo,
        RunMeta { runtime_ms: started.elapsed().as_millis() as u64, ..RunMeta::default() },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_mean_matrices, MeanSpec};
    use crate::sampler::{empirical_rates, empirical_spectrum, run_trials, SingularPolicy};
    use approx::assert_abs_diff_eq;

    /// Point mass at w0: G(z) = 1/(z - w0).
    struct Atom(f64);
    impl GsvTransform for Atom {
        fn g_omega(&self, z: f64) -> Result<f64, RateError> {
            Ok(1.0 / (z - self.0))
        }
    }

    #[test]
    fn zero_snr_or_allocation_gives_zero_rates() {
        let config = SystemConfig { m1: 2, m2: 3, n: 2, l1: 1e-18, ..Default::default() };
        let r1 = rate_user1(&Atom(1.0), &config).unwrap();
        assert!(r1 < 1e-12);

        let full = SystemConfig { m1: 2, m2: 3, n: 2, l1: 1.0, ..Default::default() };
        assert_eq!(rate_user2(&Atom(1.0), &full).unwrap(), 0.0);
    }

    #[test]
    fn point_mass_at_zero_carries_no_user1_signal() {
        // G = 1/z: R1 = log(1+a) - \int_0^a dy/(y+1) = 0
        let config = SystemConfig { m1: 2, m2: 2, n: 2, l1: 0.5, ..Default::default() };
        let r1 = rate_user1(&Atom(0.0), &config).unwrap();
        assert_abs_diff_eq!(r1, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn atom_transform_reproduces_subchannel_rates() {
        // single GSV w0: both quadratures must equal the per-subchannel logs
        let config = SystemConfig {
            m1: 2,
            m2: 3,
            n: 2,
            l1: 0.7,
            p_dbm: 30.0,
            ..Default::default()
        };
        let w0 = 1.8;
        let s = config.subchannels() as f64;
        let (t1, t2) = crate::sampler::noma_rate_terms(w0, &config);
        let r1 = rate_user1(&Atom(w0), &config).unwrap();
        let r2 = rate_user2(&Atom(w0), &config).unwrap();
        assert_abs_diff_eq!(r1, s * t1, epsilon = 1e-7);
        assert_abs_diff_eq!(r2, s * t2, epsilon = 1e-7);
    }

    #[test]
    fn single_sample_cdf_rate_is_the_formula() {
        let config = SystemConfig { m1: 1, m2: 1, n: 1, l1: 0.6, ..Default::default() };
        let spec = EmpiricalSpectrum::from_samples(&[1.0], 1).unwrap();
        let report = rates_from_cdf(&spec, &config);
        let a = config.l1 * config.rho() / (config.t * config.d1.powf(config.tau));
        assert_abs_diff_eq!(report.r1, (0.5 * a).ln_1p(), epsilon = 1e-12);

        // duplicated sample changes nothing
        let spec2 = EmpiricalSpectrum::from_samples(&[1.0, 1.0], 1).unwrap();
        let report2 = rates_from_cdf(&spec2, &config);
        assert_abs_diff_eq!(report.r1, report2.r1, epsilon = 1e-15);
        assert_abs_diff_eq!(report.r2, report2.r2, epsilon = 1e-15);
    }

    #[test]
    fn cdf_route_equals_trial_average_route() {
        // path equivalence: S * pooled mean == mean of per-trial sums
        let config = SystemConfig { m1: 3, m2: 4, n: 5, trials: 64, seed: 9, ..Default::default() };
        let (h1, h2) = build_mean_matrices(&MeanSpec::AllOnes, &config).unwrap();
        let run = run_trials(&config, &h1, &h2, SingularPolicy::Resample).unwrap();
        let direct = empirical_rates(&run, &config);
        let spectrum = empirical_spectrum(&run, 16).unwrap();
        let via_cdf = rates_from_cdf(&spectrum, &config);
        assert_abs_diff_eq!(direct.r1, via_cdf.r1, epsilon = 1e-12);
        assert_abs_diff_eq!(direct.r2, via_cdf.r2, epsilon = 1e-12);
        assert_abs_diff_eq!(via_cdf.sum, via_cdf.r1 + via_cdf.r2, epsilon = 1e-12);
    }

    #[test]
    fn rayleigh_transform_monotonicity_in_l1_and_rho() {
        // R1 nondecreasing in l1 and rho; R2 nonincreasing in l1, nondecreasing in rho
        let dims = Dims::new(3, 4, 5).unwrap();
        let transform = RayleighTransform::new(dims);
        let base = SystemConfig { m1: 3, m2: 4, n: 5, ..Default::default() };

        let ladder = [0.05, 0.25, 0.5, 0.75, 0.95];
        let mut prev_r1 = -1.0;
        let mut prev_r2 = f64::INFINITY;
        for l1 in ladder {
            let config = SystemConfig { l1, ..base.clone() };
            let r1 = rate_user1(&transform, &config).unwrap();
            let r2 = rate_user2(&transform, &config).unwrap();
            assert!(r1 >= prev_r1 - 1e-10, "R1 not nondecreasing in l1 at {l1}");
            assert!(r2 <= prev_r2 + 1e-10, "R2 not nonincreasing in l1 at {l1}");
            prev_r1 = r1;
            prev_r2 = r2;
        }

        let mut prev = (-1.0, -1.0);
        for p_dbm in [10.0, 20.0, 30.0, 40.0, 50.0] {
            let config = SystemConfig { p_dbm, l1: 0.6, ..base.clone() };
            let r1 = rate_user1(&transform, &config).unwrap();
            let r2 = rate_user2(&transform, &config).unwrap();
            assert!(r1 >= prev.0 - 1e-10 && r2 >= prev.1 - 1e-10, "rates not nondecreasing in rho");
            prev = (r1, r2);
        }
    }

    #[test]
    fn freedet_transform_matches_rayleigh_closed_at_zero_mean() {
        let config = SystemConfig { m1: 2, m2: 3, n: 2, l1: 0.3, ..Default::default() };
        let (h1, h2) = build_mean_matrices(&MeanSpec::Zero, &config).unwrap();
        let fd = freedet_rates(&h1, &h2, &config).unwrap();
        let closed = crate::rayleigh::closed_rates(&config).unwrap();
        assert_abs_diff_eq!(fd.r1, closed.r1, epsilon = 1e-6);
        assert_abs_diff_eq!(fd.r2, closed.r2, epsilon = 1e-6);
        assert_eq!(fd.method, Method::Freedet);
        assert_eq!(closed.method, Method::RayleighClosed);
    }
}
