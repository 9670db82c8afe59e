//! Deterministic-equivalent solver for the Cauchy transform of the GSV
//! spectrum under Rician fading.
//!
//! The resolvent of the linearized channel polynomial block-decomposes into
//! diagonal blocks that couple only through three scalar traces
//! `tr11 = Tr{E11}`, `tr12 = Tr{E12}`, `tr22 = Tr{E22}` (the last one taken
//! on the top-left M2 x M2 block in the augmented regime). One sweep maps
//! current traces to new ones through two N x N auxiliary matrices:
//!
//! ```text
//! A1 = (1 + tr12)^-1 H2b^H H2b  [+ eps^2 F^H F]  - (tr22 + tr11) I
//! A2 = (z - tr12)^-1 H1b^H H1b                   + (tr22 + tr11) I
//! tr11' = Tr{ ((z - tr12) I - H1b A1^-1 H1b^H)^-1 }
//! tr12' = Tr{ (A1 - (z - tr12)^-1 H1b^H H1b)^-1 }
//! tr22' = Tr{ (H2b A2^-1 H2b^H - (1 + tr12) I  [- eps^2 correction])^-1 }
//! ```
//!
//! where the bracketed terms appear only when H2 lacks full column rank and
//! an `eps`-scaled partial identity F (the first N - M2 rows of I_N) is
//! stacked beneath it. The damped iteration of this sweep converges to the
//! coupled fixed point; `G_L(z) = tr11 / M1` and the GSV transform follows
//! by removing the zero/escaping eigenvalue mass.
//!
//! For real `z` and real-valued means the whole iteration is carried in real
//! arithmetic; the complex path is identical code over a different scalar.

use nalgebra::{ComplexField, DMatrix};
use thiserror::Error;

use crate::model::Regime;
use crate::rayleigh::{closed_cauchy_l, Dims};
use crate::{C64, CMatrix};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("fixed point did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular inner matrix during sweep: {factor} (condition estimate {cond:.3e})")]
    SingularInnerMatrix { factor: &'static str, cond: f64 },
    #[error("invalid solver input: {0}")]
    InvalidInput(String),
    #[error("state not converged")]
    NotConverged,
}

/// Iteration controls. `damping` is the fraction of the fresh sweep mixed
/// into the state each step; on failure to converge the solver retries twice
/// with the damping halved.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub damping: f64,
    pub max_iter: usize,
    /// Optional initial traces (tr11, tr12, tr22); defaults to the Rayleigh
    /// closed-form solution at the same z.
    pub init: Option<[C64; 3]>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, damping: 0.5, max_iter: 2000, init: None }
    }
}

/// Converged (or final) traces of one fixed-point solve.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointState {
    pub tr11: C64,
    pub tr12: C64,
    pub tr22: C64,
    /// Max absolute change of the three traces under one undamped sweep.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FixedPointState {
    pub fn traces(&self) -> [C64; 3] {
        [self.tr11, self.tr12, self.tr22]
    }
}

/// One evaluated point of the Cauchy transforms.
#[derive(Debug, Clone, Copy)]
pub struct CauchyPoint {
    pub z: C64,
    pub g_l: C64,
    pub g_omega: C64,
    pub state: FixedPointState,
}

/// `G_L(z) = Tr{E11} / M1` from a converged state.
pub fn cauchy_l(state: &FixedPointState, m1: usize) -> Result<C64, SolveError> {
    if !state.converged {
        return Err(SolveError::NotConverged);
    }
    Ok(state.tr11 / m1 as f64)
}

/// GSV transform from the L transform.
///
/// Full column rank: `G_w = (M1/S) G_L - (M1-S)/(S z)` (removes the zero
/// eigenvalues of L). Augmented: `G_w = (M1/S) G_L` (the escaping
/// eigenvalues carry no transform mass).
///
/// # Panics
/// On `Swapped` or `Degenerate` regimes; normalize the pair first.
pub fn cauchy_omega(g_l: C64, z: C64, m1: usize, s: usize, regime: Regime) -> C64 {
    let (m1f, sf) = (m1 as f64, s as f64);
    match regime {
        Regime::FullColumnRank => g_l * (m1f / sf) - C64::new((m1f - sf) / sf, 0.0) / z,
        Regime::Augmented => g_l * (m1f / sf),
        Regime::Swapped | Regime::Degenerate => {
            panic!("cauchy_omega requires the FullColumnRank or Augmented regime")
        }
    }
}

/// Stack `eps * F` (F = first `N - M2` rows of I_N) beneath a mean matrix,
/// producing the N x N augmented mean.
pub fn build_augmented_mean(h2bar: &CMatrix, epsilon: f64) -> Result<CMatrix, SolveError> {
    let (m2, n) = (h2bar.nrows(), h2bar.ncols());
    if m2 >= n {
        return Err(SolveError::InvalidInput(format!(
            "augmentation needs M2 < N, got M2 = {m2}, N = {n}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(SolveError::InvalidInput(format!("epsilon must be > 0, got {epsilon}")));
    }
    let mut h3 = DMatrix::zeros(n, n);
    h3.view_mut((0, 0), (m2, n)).copy_from(h2bar);
    for i in 0..n - m2 {
        h3[(m2 + i, i)] = C64::new(epsilon, 0.0);
    }
    Ok(h3)
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

/// Condition-estimate threshold beyond which an inner factor is declared
/// singular.
const COND_LIMIT: f64 = 1e12;

struct Context<T: ComplexField<RealField = f64> + Copy> {
    h1: DMatrix<T>,
    h2: DMatrix<T>,
    /// H1bar^H H1bar
    g1: DMatrix<T>,
    /// H2bar^H H2bar
    g2: DMatrix<T>,
    m1: usize,
    m2: usize,
    n: usize,
    /// Rows of the eps-scaled partial identity; zero outside the augmented
    /// regime (and in its M2 = N limit, where the equations coincide with
    /// the full-column-rank ones).
    k: usize,
    eps2: f64,
    /// Means are exactly zero: the sweep reduces to scalar recursions.
    zero_mean: bool,
}

impl<T: ComplexField<RealField = f64> + Copy> Context<T> {
    /// Trace of the inverse with a singularity/condition guard.
    fn trace_of_inverse(m: DMatrix<T>, factor: &'static str) -> Result<T, SolveError> {
        let norm = m.norm();
        let inv = m
            .try_inverse()
            .ok_or(SolveError::SingularInnerMatrix { factor, cond: f64::INFINITY })?;
        let cond = norm * inv.norm();
        if !cond.is_finite() || cond > COND_LIMIT {
            return Err(SolveError::SingularInnerMatrix { factor, cond });
        }
        Ok(inv.diagonal().iter().fold(T::zero(), |acc, d| acc + *d))
    }

    /// One undamped sweep of the coupled trace equations.
    fn sweep(&self, z: T, tr: [T; 3]) -> Result<[T; 3], SolveError> {
        let [t11, t12, t22] = tr;
        let pivot = z - t12;
        let shift = t12 + T::one();
        let tiny = 1e-300;
        if pivot.modulus() < tiny {
            return Err(SolveError::SingularInnerMatrix { factor: "z - Tr{E12} pivot", cond: f64::INFINITY });
        }
        if shift.modulus() < tiny {
            return Err(SolveError::SingularInnerMatrix { factor: "1 + Tr{E12} pivot", cond: f64::INFINITY });
        }
        let coupling = t22 + t11;

        if self.zero_mean {
            // exact zero-mean reduction of the same equations
            let t11_next = T::from_subset(&(self.m1 as f64)) / pivot;
            let t12_next = if self.k == 0 {
                -T::from_subset(&(self.n as f64)) / coupling
            } else {
                -T::from_subset(&(self.m2 as f64)) / coupling
                    - T::from_subset(&((self.n - self.m2) as f64))
                        / (coupling - T::from_subset(&self.eps2))
            };
            let t22_next = -T::from_subset(&(self.m2 as f64)) / shift;
            return Ok([t11_next, t12_next, t22_next]);
        }

        let n = self.n;
        let inv_shift = T::one() / shift;
        let inv_pivot = T::one() / pivot;

        // A1 = (1+t12)^-1 G2 + eps^2 F^H F - (t22+t11) I
        let mut a1 = &self.g2 * inv_shift;
        for i in 0..self.k {
            a1[(i, i)] += T::from_subset(&self.eps2);
        }
        for i in 0..n {
            a1[(i, i)] -= coupling;
        }

        // A2 = (z-t12)^-1 G1 + (t22+t11) I
        let mut a2 = &self.g1 * inv_pivot;
        for i in 0..n {
            a2[(i, i)] += coupling;
        }

        let a1_norm = a1.norm();
        let a1_inv = a1
            .clone()
            .try_inverse()
            .ok_or(SolveError::SingularInnerMatrix { factor: "A1", cond: f64::INFINITY })?;
        let a1_cond = a1_norm * a1_inv.norm();
        if !a1_cond.is_finite() || a1_cond > COND_LIMIT {
            return Err(SolveError::SingularInnerMatrix { factor: "A1", cond: a1_cond });
        }

        // tr11' = Tr{ ((z-t12) I_M1 - H1 A1^-1 H1^H)^-1 }
        let mut inner11 = -(&self.h1 * &a1_inv * self.h1.adjoint());
        for i in 0..self.m1 {
            inner11[(i, i)] += pivot;
        }
        let t11_next = Self::trace_of_inverse(inner11, "(z - Tr{E12}) I - H1 A1^-1 H1^H")?;

        // tr12' = Tr{ (A1 - (z-t12)^-1 G1)^-1 }
        let inner12 = a1 - &self.g1 * inv_pivot;
        let t12_next = Self::trace_of_inverse(inner12, "A1 - (z - Tr{E12})^-1 H1^H H1")?;

        let a2_norm = a2.norm();
        let a2_inv = a2
            .try_inverse()
            .ok_or(SolveError::SingularInnerMatrix { factor: "A2", cond: f64::INFINITY })?;
        let a2_cond = a2_norm * a2_inv.norm();
        if !a2_cond.is_finite() || a2_cond > COND_LIMIT {
            return Err(SolveError::SingularInnerMatrix { factor: "A2", cond: a2_cond });
        }

        // tr22' = Tr{ (H2 A2^-1 H2^H - (1+t12) I_M2 - eps^2 correction)^-1 }
        let mut inner22 = &self.h2 * &a2_inv * self.h2.adjoint();
        for i in 0..self.m2 {
            inner22[(i, i)] -= shift;
        }
        if self.k > 0 {
            let eps2 = T::from_subset(&self.eps2);
            let w_left = a2_inv.view((0, 0), (self.n, self.k));
            let w_top = a2_inv.view((0, 0), (self.k, self.n));
            let mut core = w_left.view((0, 0), (self.k, self.k)).clone_owned() * eps2;
            for i in 0..self.k {
                core[(i, i)] -= T::one();
            }
            let core_inv = core.try_inverse().ok_or(SolveError::SingularInnerMatrix {
                factor: "eps^2 F A2^-1 F^H - I",
                cond: f64::INFINITY,
            })?;
            let d1 = &self.h2 * w_left;
            let d2 = w_top * self.h2.adjoint();
            inner22 -= d1 * core_inv * d2 * eps2;
        }
        let t22_next =
            Self::trace_of_inverse(inner22, "H2 A2^-1 H2^H - (1 + Tr{E12}) I - correction")?;

        Ok([t11_next, t12_next, t22_next])
    }

    fn iterate(
        &self,
        z: T,
        init: [T; 3],
        tol: f64,
        damping: f64,
        max_iter: usize,
    ) -> Result<([T; 3], f64, usize, bool), SolveError> {
        let mut x = init;
        let mut residual = f64::INFINITY;
        for iter in 1..=max_iter {
            let y = self.sweep(z, x)?;
            residual = (y[0] - x[0])
                .modulus()
                .max((y[1] - x[1]).modulus())
                .max((y[2] - x[2]).modulus());
            if residual <= tol {
                return Ok((y, residual, iter, true));
            }
            let alpha = T::from_subset(&damping);
            let keep = T::one() - alpha;
            for i in 0..3 {
                x[i] = x[i] * keep + y[i] * alpha;
            }
        }
        Ok((x, residual, max_iter, false))
    }
}

/// Fixed-point solver bound to one pair of mean matrices. Cheap to query at
/// many z; reuse one instance per configuration.
pub struct FixedPointSolver {
    complex_ctx: Context<C64>,
    real_ctx: Option<Context<f64>>,
    regime: Regime,
    m1: usize,
    s: usize,
}

impl FixedPointSolver {
    /// `h2bar` is the raw M2 x N mean; for the augmented regime the solver
    /// applies the eps-scaled partial identity internally.
    pub fn new(
        h1bar: &CMatrix,
        h2bar: &CMatrix,
        regime: Regime,
        epsilon: f64,
    ) -> Result<Self, SolveError> {
        let (m1, n) = (h1bar.nrows(), h1bar.ncols());
        let m2 = h2bar.nrows();
        if h2bar.ncols() != n {
            return Err(SolveError::InvalidInput(format!(
                "mean matrices must share N: H1bar is {m1}x{n}, H2bar is {m2}x{}",
                h2bar.ncols()
            )));
        }
        let k = match regime {
            Regime::FullColumnRank => {
                if m2 < n {
                    return Err(SolveError::InvalidInput(format!(
                        "full-column-rank regime needs M2 >= N, got M2 = {m2}, N = {n}"
                    )));
                }
                0
            }
            Regime::Augmented => {
                if m2 > n || m1 + m2 <= n {
                    return Err(SolveError::InvalidInput(format!(
                        "augmented regime needs M2 <= N < M1 + M2, got ({m1}, {m2}, {n})"
                    )));
                }
                if !(epsilon > 0.0) {
                    return Err(SolveError::InvalidInput(format!(
                        "augmented regime needs epsilon > 0, got {epsilon}"
                    )));
                }
                n - m2
            }
            Regime::Swapped | Regime::Degenerate => {
                return Err(SolveError::InvalidInput(format!(
                    "regime {regime} is not solvable; swap the pair or reject the configuration"
                )));
            }
        };

        let zero_mean = h1bar.iter().all(|v| *v == C64::new(0.0, 0.0))
            && h2bar.iter().all(|v| *v == C64::new(0.0, 0.0));
        let eps2 = if k > 0 { epsilon * epsilon } else { 0.0 };

        let complex_ctx = Context {
            h1: h1bar.clone(),
            h2: h2bar.clone(),
            g1: h1bar.adjoint() * h1bar,
            g2: h2bar.adjoint() * h2bar,
            m1,
            m2,
            n,
            k,
            eps2,
            zero_mean,
        };

        let all_real =
            h1bar.iter().all(|v| v.im == 0.0) && h2bar.iter().all(|v| v.im == 0.0);
        let real_ctx = all_real.then(|| {
            let h1r = h1bar.map(|v| v.re);
            let h2r = h2bar.map(|v| v.re);
            Context {
                g1: h1r.transpose() * &h1r,
                g2: h2r.transpose() * &h2r,
                h1: h1r,
                h2: h2r,
                m1,
                m2,
                n,
                k,
                eps2,
                zero_mean,
            }
        });

        Ok(FixedPointSolver { complex_ctx, real_ctx, regime, m1, s: m1.min(n) + m2.min(n) - (m1 + m2).min(n) })
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn subchannels(&self) -> usize {
        self.s
    }

    /// Default initialization: the Rayleigh closed-form solution at the same
    /// z, falling back to `(M1/z, -N/z, -M2)` when unavailable.
    pub fn default_init(&self, z: C64) -> [C64; 3] {
        let ctx = &self.complex_ctx;
        let fallback = [
            C64::new(ctx.m1 as f64, 0.0) / z,
            C64::new(-(ctx.n as f64), 0.0) / z,
            C64::new(-(ctx.m2 as f64), 0.0),
        ];
        let Ok(dims) = Dims::new(ctx.m1, ctx.m2, ctx.n) else {
            return fallback;
        };
        let Ok(g) = closed_cauchy_l(z, &dims) else {
            return fallback;
        };
        let tr11 = g * ctx.m1 as f64;
        if tr11.norm() < 1e-300 {
            return fallback;
        }
        let tr12 = z - C64::new(ctx.m1 as f64, 0.0) / tr11;
        let one_plus = tr12 + C64::new(1.0, 0.0);
        if one_plus.norm() < 1e-300 {
            return fallback;
        }
        let tr22 = C64::new(-(ctx.m2 as f64), 0.0) / one_plus;
        let init = [tr11, tr12, tr22];
        if init.iter().all(|t| t.re.is_finite() && t.im.is_finite()) {
            init
        } else {
            fallback
        }
    }

    /// One undamped sweep at `z` from the given traces (complex path).
    pub fn sweep(&self, z: C64, traces: [C64; 3]) -> Result<[C64; 3], SolveError> {
        self.complex_ctx.sweep(z, traces)
    }

    /// Damped fixed-point iteration at `z` (`Re z < 0`).
    pub fn solve(&self, z: C64, opts: &SolveOptions) -> Result<FixedPointState, SolveError> {
        if !(z.re < 0.0) {
            return Err(SolveError::InvalidInput(format!("requires Re(z) < 0, got z = {z}")));
        }
        let init = opts.init.unwrap_or_else(|| self.default_init(z));

        let mut last: Option<(usize, f64)> = None;
        for attempt in 0..3 {
            let damping = opts.damping / 2f64.powi(attempt);
            let outcome = if z.im == 0.0 && self.real_ctx.is_some() {
                let ctx = self.real_ctx.as_ref().unwrap();
                let init_r = [init[0].re, init[1].re, init[2].re];
                ctx.iterate(z.re, init_r, opts.tol, damping, opts.max_iter)?
                    .into_complex()
            } else {
                let (tr, residual, iterations, converged) =
                    self.complex_ctx.iterate(z, init, opts.tol, damping, opts.max_iter)?;
                (tr, residual, iterations, converged)
            };
            let (tr, residual, iterations, converged) = outcome;
            if converged {
                return Ok(FixedPointState {
                    tr11: tr[0],
                    tr12: tr[1],
                    tr22: tr[2],
                    residual,
                    iterations,
                    converged,
                });
            }
            last = Some((iterations, residual));
        }
        let (iterations, residual) = last.expect("at least one attempt ran");
        Err(SolveError::NoConvergence { iterations, residual })
    }

    /// Solve and package the two Cauchy transforms at `z`.
    pub fn cauchy_point(&self, z: C64, opts: &SolveOptions) -> Result<CauchyPoint, SolveError> {
        let state = self.solve(z, opts)?;
        let g_l = cauchy_l(&state, self.m1)?;
        let g_omega = cauchy_omega(g_l, z, self.m1, self.s, self.regime);
        Ok(CauchyPoint { z, g_l, g_omega, state })
    }
}

/// Helper to lift real iteration results into the complex state space.
trait IntoComplexOutcome {
    fn into_complex(self) -> ([C64; 3], f64, usize, bool);
}

impl IntoComplexOutcome for ([f64; 3], f64, usize, bool) {
    fn into_complex(self) -> ([C64; 3], f64, usize, bool) {
        let (tr, residual, iterations, converged) = self;
        (
            [C64::new(tr[0], 0.0), C64::new(tr[1], 0.0), C64::new(tr[2], 0.0)],
            residual,
            iterations,
            converged,
        )
    }
}

/// Convenience one-shot solve; prefer [`FixedPointSolver`] for grids.
pub fn solve_fixed_point(
    h1bar: &CMatrix,
    h2bar: &CMatrix,
    regime: Regime,
    epsilon: f64,
    z: C64,
    opts: &SolveOptions,
) -> Result<FixedPointState, SolveError> {
    FixedPointSolver::new(h1bar, h2bar, regime, epsilon)?.solve(z, opts)
}
