//! Closed forms for the Rayleigh (zero-mean) special case.
//!
//! With `H1bar = H2bar = 0` the three-trace fixed point collapses to a
//! quadratic in the Cauchy transform `G_L(z)`:
//!
//! ```text
//! M1 z (z+1) G^2 - [(2 M1 + M2 - N) z + (M1 - N)] G + (M1 + M2 - N) = 0
//! ```
//!
//! whose physical root (negative on the real axis left of the spectrum,
//! `z G -> mass` at infinity) gives the closed Cauchy transform. Its
//! antiderivative `I(a,b)` in log form yields closed-form user rates, and
//! Stieltjes inversion gives the density of the GSV distribution together
//! with its support edges.

use std::time::Instant;

use thiserror::Error;

use crate::model::{classify_regime, subchannel_count, Regime, SystemConfig};
use crate::quad;
use crate::rates::{Method, RateReport, RunMeta};
use crate::C64;

#[derive(Debug, Error)]
pub enum RayleighError {
    #[error("invalid dims (M1={m1}, M2={m2}, N={n}): {reason}")]
    InvalidDims { m1: usize, m2: usize, n: usize, reason: String },
    #[error("z = {z} lies on the spectral support [{x1}, {x2}]")]
    OnSupport { z: f64, x1: f64, x2: f64 },
    #[error("integration interval [{lo}, {hi}] crosses the support or the origin")]
    DomainCrossesSupport { lo: f64, hi: f64 },
}

/// Spectral support of the GSV distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    /// `x1 <= x <= x2` (the `M2 != N` case).
    Bounded(f64, f64),
    /// `x >= x1` (the `M2 = N` limit; the upper edge escapes to infinity).
    HalfLine(f64),
}

impl Support {
    pub fn lower(&self) -> f64 {
        match *self {
            Support::Bounded(x1, _) | Support::HalfLine(x1) => x1,
        }
    }

    pub fn upper(&self) -> Option<f64> {
        match *self {
            Support::Bounded(_, x2) => Some(x2),
            Support::HalfLine(_) => None,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Support::Bounded(x1, x2) => x >= x1 && x <= x2,
            Support::HalfLine(x1) => x >= x1,
        }
    }
}

/// Antenna triple with the derived constants of the closed forms.
///
/// Requires `M1 <= M2` (apply the swap rule first) and `M1 + M2 > N`.
#[derive(Debug, Clone, Copy)]
pub struct Dims {
    pub m1: usize,
    pub m2: usize,
    pub n: usize,
    pub s: usize,
    /// `Q = N M1 + N M2 + M1 M2 - N^2`
    pub q: f64,
    /// `Q1 = M1^2 + M1 M2 + N M2 - N M1`
    pub q1: f64,
    /// `Q2 = M2^2 + M1 M2 + N M1 - N M2`
    pub q2: f64,
}

impl Dims {
    pub fn new(m1: usize, m2: usize, n: usize) -> Result<Self, RayleighError> {
        let invalid = |reason: &str| RayleighError::InvalidDims {
            m1,
            m2,
            n,
            reason: reason.to_string(),
        };
        if m1 < 1 || m2 < 1 || n < 1 {
            return Err(invalid("all antenna counts must be >= 1"));
        }
        if m1 > m2 {
            return Err(invalid("requires M1 <= M2; swap the pair and invert the GSVs"));
        }
        if m1 + m2 <= n {
            return Err(invalid("degenerate regime M1 + M2 <= N has a deterministic spectrum"));
        }
        let (m1f, m2f, nf) = (m1 as f64, m2 as f64, n as f64);
        Ok(Dims {
            m1,
            m2,
            n,
            s: subchannel_count(m1, m2, n),
            q: nf * m1f + nf * m2f + m1f * m2f - nf * nf,
            q1: m1f * m1f + m1f * m2f + nf * m2f - nf * m1f,
            q2: m2f * m2f + m1f * m2f + nf * m1f - nf * m2f,
        })
    }

    pub fn from_config(config: &SystemConfig) -> Result<Self, RayleighError> {
        Dims::new(config.m1, config.m2, config.n)
    }

    fn m1f(&self) -> f64 {
        self.m1 as f64
    }

    /// Discriminant `Delta(z) = (M1-N)^2 - 2 Q z + (M2-N)^2 z^2`.
    pub fn delta(&self, z: C64) -> C64 {
        let a = (self.m1 as f64 - self.n as f64).powi(2);
        let c = (self.m2 as f64 - self.n as f64).powi(2);
        C64::new(a, 0.0) - z * 2.0 * self.q + z * z * c
    }

    pub fn delta_real(&self, x: f64) -> f64 {
        let a = (self.m1 as f64 - self.n as f64).powi(2);
        let c = (self.m2 as f64 - self.n as f64).powi(2);
        a - 2.0 * self.q * x + c * x * x
    }

    /// Fraction of the M1 eigenvalues of L that stays finite: 1 when
    /// `M2 >= N`, otherwise `S / M1` (the rest escape as the augmentation
    /// parameter vanishes).
    pub fn visible_mass(&self) -> f64 {
        if self.m2 >= self.n {
            1.0
        } else {
            self.s as f64 / self.m1 as f64
        }
    }

    /// Support edges of the GSV density. `M2 = N` collapses the quadratic
    /// edge equation to a half-line starting at `(M1-N)^2 / (2Q)`.
    pub fn support(&self) -> Support {
        let a = (self.m1 as f64 - self.n as f64).powi(2);
        if self.m2 == self.n {
            Support::HalfLine(a / (2.0 * self.q))
        } else {
            let c = (self.m2 as f64 - self.n as f64).powi(2);
            let m1m2 = (self.m1 * self.m2) as f64;
            let inner = m1m2 * (self.n as f64) * ((self.m1 + self.m2 - self.n) as f64);
            let root = 2.0 * inner.sqrt();
            Support::Bounded((self.q - root) / c, (self.q + root) / c)
        }
    }
}

/// Guard band around the removable singularity at z = -1.
const Z_MINUS_ONE_BAND: f64 = 1e-9;

/// Closed-form Cauchy transform of the eigenvalues of L at `z` off the
/// support. The square-root branch is fixed by `z G_L(z) -> visible mass`
/// for large |z| on the real axis and by the Herglotz property
/// (`sign Im G = -sign Im z`) off it.
pub fn closed_cauchy_l(z: C64, dims: &Dims) -> Result<C64, RayleighError> {
    let (m1, m2, n) = (dims.m1 as f64, dims.m2 as f64, dims.n as f64);
    if (z + C64::new(1.0, 0.0)).norm() < Z_MINUS_ONE_BAND {
        return Ok(C64::new(-(m1 + m2 - n) / (m1 + m2), 0.0));
    }
    let num = C64::new(m1 - n, 0.0) + z * (2.0 * m1 + m2 - n);
    let den = z * (z + 1.0) * 2.0 * m1;
    let root = dims.delta(z).sqrt();
    let g_plus = (num + root) / den;
    let g_minus = (num - root) / den;

    if z.im.abs() > 1e-13 * z.norm().max(1.0) {
        // Off the real axis exactly one candidate maps C+ to C- (and
        // conjugate-symmetrically for C-).
        let ok_plus = g_plus.im * z.im < 0.0;
        let ok_minus = g_minus.im * z.im < 0.0;
        if ok_plus != ok_minus {
            return Ok(if ok_plus { g_plus } else { g_minus });
        }
        // fall through to the mass criterion on (near-)real degenerate cases
    } else {
        let x = z.re;
        if dims.support().contains(x) || x == 0.0 {
            let (x1, x2) = match dims.support() {
                Support::Bounded(a, b) => (a, b),
                Support::HalfLine(a) => (a, f64::INFINITY),
            };
            return Err(RayleighError::OnSupport { z: x, x1, x2 });
        }
    }

    let mass = dims.visible_mass();
    let miss = |g: C64| (z * g - mass).norm();
    Ok(if miss(g_plus) <= miss(g_minus) { g_plus } else { g_minus })
}

/// Real-axis convenience wrapper: `closed_cauchy_l` at real `x` off the
/// support, carried in real arithmetic.
pub fn closed_cauchy_l_real(x: f64, dims: &Dims) -> Result<f64, RayleighError> {
    let (m1, m2, n) = (dims.m1 as f64, dims.m2 as f64, dims.n as f64);
    if (x + 1.0).abs() < Z_MINUS_ONE_BAND {
        return Ok(-(m1 + m2 - n) / (m1 + m2));
    }
    if dims.support().contains(x) || x == 0.0 {
        let (x1, x2) = match dims.support() {
            Support::Bounded(a, b) => (a, b),
            Support::HalfLine(a) => (a, f64::INFINITY),
        };
        return Err(RayleighError::OnSupport { z: x, x1, x2 });
    }
    let num = (m1 - n) + (2.0 * m1 + m2 - n) * x;
    let den = 2.0 * m1 * x * (x + 1.0);
    let root = dims.delta_real(x).max(0.0).sqrt();
    let g_plus = (num + root) / den;
    let g_minus = (num - root) / den;
    let mass = dims.visible_mass();
    Ok(if (x * g_plus - mass).abs() <= (x * g_minus - mass).abs() {
        g_plus
    } else {
        g_minus
    })
}

/// Antiderivative of the closed Cauchy transform:
/// `I(a, b) = \int_a^b G_L(z) dz` in closed log form.
///
/// Both endpoints must lie on the negative real axis away from the support
/// (all rate uses satisfy this). Terms with a vanishing prefactor
/// (`M1 = N` or `M2 = N`) are dropped as exact limits.
pub fn integral_i(a: f64, b: f64, dims: &Dims) -> Result<f64, RayleighError> {
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if !(hi < 0.0) || !lo.is_finite() {
        return Err(RayleighError::DomainCrossesSupport { lo, hi });
    }

    let (m1, m2, n) = (dims.m1 as f64, dims.m2 as f64, dims.n as f64);
    let q = dims.q;
    let sd_a = dims.delta_real(a).max(0.0).sqrt();
    let sd_b = dims.delta_real(b).max(0.0).sqrt();

    let leading = (m1 - n) / (2.0 * m1) * (b / a).ln();

    let i1 = if dims.m1 == dims.n {
        0.0
    } else {
        let k = (m1 - n).abs();
        let top = (m1 - n).powi(2) - q * b + k * sd_b;
        let bot = (m1 - n).powi(2) - q * a + k * sd_a;
        -k * ((a / b) * (top / bot)).ln()
    };

    let i2 = if dims.m2 == dims.n {
        0.0
    } else {
        let k = (m2 - n).abs();
        let top = q - (m2 - n).powi(2) * b + k * sd_b;
        let bot = q - (m2 - n).powi(2) * a + k * sd_a;
        -k * (top / bot).ln()
    };

    let i3 = {
        let k = m1 + m2;
        let top = dims.q1 - dims.q2 * b + k * sd_b;
        let bot = dims.q1 - dims.q2 * a + k * sd_a;
        k * (top / bot).ln()
    };

    Ok(leading + (i1 + i2 + i3) / (2.0 * m1))
}

/// Closed-form average user rates (nats) for Rayleigh fading.
///
/// Totals follow the ECDF convention `R_i = S * E[per-subchannel rate]`; the
/// distance terms use `t * d^tau` in both regimes.
pub fn closed_rates(config: &SystemConfig) -> Result<RateReport, RayleighError> {
    let started = Instant::now();
    let dims = Dims::from_config(config)?;
    let (m1f, sf) = (dims.m1f(), dims.s as f64);
    let rho = config.rho();
    let a = config.l1 * rho / (config.t * config.d1.powf(config.tau));
    let b = rho / (config.t * config.d2.powf(config.tau));

    let r1 = if a == 0.0 {
        0.0
    } else {
        let c = 1.0 / (1.0 + a);
        let i_r1 = integral_i(-1.0, -c, &dims)?;
        match dims_regime(&dims) {
            Regime::FullColumnRank => m1f * (a.ln_1p() + i_r1),
            _ => sf * a.ln_1p() + m1f * i_r1,
        }
    };

    let r2 = if b == 0.0 || config.l1 >= 1.0 {
        0.0
    } else {
        let i_r2 = integral_i(-1.0 - config.l1 * b, -1.0 - b, &dims)?;
        match dims_regime(&dims) {
            Regime::FullColumnRank => {
                let log_term = ((1.0 + b) / (1.0 + config.l1 * b)).ln();
                m1f * i_r2 - (m1f - sf) * log_term
            }
            _ => m1f * i_r2,
        }
    };

    Ok(RateReport::new(
        r1.max(0.0),
        r2.max(0.0),
        Method::RayleighClosed,
        RunMeta { trials: None, tolerance: None, runtime_ms: started.elapsed().as_millis() as u64, ..RunMeta::default() },
    ))
}

fn dims_regime(dims: &Dims) -> Regime {
    classify_regime(dims.m1, dims.m2, dims.n)
}

/// Density of the GSV distribution at `x` (Theorem-style Stieltjes
/// inversion of the closed transform). Zero outside the open support.
pub fn pdf_omega(x: f64, dims: &Dims) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let radicand = -dims.delta_real(x);
    if radicand <= 0.0 {
        return 0.0;
    }
    radicand.sqrt() / (2.0 * std::f64::consts::PI * dims.s as f64 * x * (x + 1.0))
}

/// Total mass of [`pdf_omega`] by adaptive quadrature with edge-flattening
/// substitutions (the density has inverse-square-root edges).
pub fn pdf_mass(dims: &Dims) -> f64 {
    match dims.support() {
        Support::Bounded(x1, x2) => {
            let x1 = x1.max(0.0);
            // x = x1 + (x2-x1) sin^2(theta) removes both edge singularities
            let width = x2 - x1;
            quad::integrate_fn(
                |theta| {
                    let s = theta.sin();
                    let x = x1 + width * s * s;
                    pdf_omega(x, dims) * width * (2.0 * theta).sin()
                },
                0.0,
                std::f64::consts::FRAC_PI_2,
                1e-10,
                10_000,
            )
            .map(|r| r.value)
            .unwrap_or(f64::NAN)
        }
        Support::HalfLine(x1) => {
            let x1 = x1.max(0.0);
            // x = x1 + (v/(1-v))^2 flattens the left edge and compactifies
            // the x^{-3/2} tail
            quad::integrate_fn(
                |v| {
                    let w = v / (1.0 - v);
                    let x = x1 + w * w;
                    pdf_omega(x, dims) * 2.0 * w / ((1.0 - v) * (1.0 - v))
                },
                0.0,
                1.0,
                1e-10,
                10_000,
            )
            .map(|r| r.value)
            .unwrap_or(f64::NAN)
        }
    }
}
