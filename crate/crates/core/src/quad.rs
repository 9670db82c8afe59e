//! Adaptive Gauss–Kronrod quadrature.
//!
//! A 7-point Gauss / 15-point Kronrod pair drives a global-error adaptive
//! bisection: the panel with the largest error estimate is split until the
//! summed estimate drops below the absolute tolerance or the panel budget
//! runs out. Integrands are fallible so that evaluator-backed integrands
//! (fixed-point solves) can abort the quadrature cleanly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

/// Abscissae of the 15-point Kronrod rule on [-1, 1] (non-negative half).
/// Odd indices are the embedded 7-point Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_813,
    0.949_107_912_342_759,
    0.864_864_423_359_769,
    0.741_531_185_599_394,
    0.586_087_235_467_691,
    0.405_845_151_377_397,
    0.207_784_955_007_898,
    0.0,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022_935_322_010_529,
    0.063_092_092_629_979,
    0.104_790_010_322_250,
    0.140_653_259_715_525,
    0.169_004_726_639_267,
    0.190_350_578_064_785,
    0.204_432_940_075_298,
    0.209_482_141_084_728,
];

/// Gauss weights for the nodes at odd indices of `XGK`.
const WG: [f64; 4] = [
    0.129_484_966_168_870,
    0.279_705_391_489_277,
    0.381_830_050_505_119,
    0.417_959_183_673_469,
];

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    /// Summed Kronrod error estimate over the final panel set.
    pub error: f64,
    /// Number of panels in the final subdivision.
    pub panels: usize,
}

#[derive(Debug, Error)]
pub enum QuadratureError<E> {
    /// Panel budget exhausted before the error estimate met the tolerance.
    #[error("quadrature tolerance {tol:.3e} not met: estimated error {error:.3e} after {panels} panels")]
    ToleranceNotMet { tol: f64, error: f64, panels: usize },
    /// The integrand itself failed at some abscissa.
    #[error("integrand evaluation failed")]
    Integrand(#[source] E),
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on error estimate; tie-break on interval start for determinism
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

/// One Gauss–Kronrod G7/K15 evaluation over [a, b].
///
/// Returns the Kronrod value and the QUADPACK-style error estimate.
fn gk15<E>(f: &mut impl FnMut(f64) -> Result<f64, E>, a: f64, b: f64) -> Result<(f64, f64), E> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);

    let fc = f(mid)?;
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    let mut abs_integral = WGK[7] * fc.abs();

    for i in 0..7 {
        let dx = half * XGK[i];
        let f_lo = f(mid - dx)?;
        let f_hi = f(mid + dx)?;
        let sum = f_lo + f_hi;
        kronrod += WGK[i] * sum;
        abs_integral += WGK[i] * (f_lo.abs() + f_hi.abs());
        if i % 2 == 1 {
            gauss += WG[i / 2] * sum;
        }
    }

    let value = kronrod * half;
    let abs_half = half.abs();
    let raw = ((kronrod - gauss) * half).abs();
    // QUADPACK sharpening of the raw Gauss-Kronrod difference
    let scale = abs_integral * abs_half;
    let error = if scale > 0.0 && raw > 0.0 {
        (raw * ((200.0 * raw / scale).min(1.0).powf(1.5))).min(raw)
    } else {
        raw
    };
    Ok((value, error.max(f64::EPSILON * scale)))
}

/// Integrate `f` over [a, b] to absolute tolerance `abs_tol`.
///
/// `max_panels` caps the number of bisections; exceeding it with the error
/// estimate still above tolerance is an error rather than a silent result.
pub fn integrate<E>(
    mut f: impl FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_panels: usize,
) -> Result<Quadrature, QuadratureError<E>> {
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0, panels: 0 });
    }

    let (v, e) = gk15(&mut f, a, b).map_err(QuadratureError::Integrand)?;
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value: v, error: e });
    let mut total_error = e;

    while total_error > abs_tol && heap.len() < max_panels {
        let worst = heap.pop().expect("heap nonempty while error positive");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a.min(worst.b) || mid >= worst.a.max(worst.b) {
            // interval no longer splittable in f64; keep it and stop refining it
            total_error -= worst.error;
            heap.push(Panel { error: 0.0, ..worst });
            continue;
        }
        let (vl, el) = gk15(&mut f, worst.a, mid).map_err(QuadratureError::Integrand)?;
        let (vr, er) = gk15(&mut f, mid, worst.b).map_err(QuadratureError::Integrand)?;
        total_error += el + er - worst.error;
        heap.push(Panel { a: worst.a, b: mid, value: vl, error: el });
        heap.push(Panel { a: mid, b: worst.b, value: vr, error: er });
    }

    let panels = heap.len();
    let mut parts: Vec<Panel> = heap.into_vec();
    // fixed summation order so the result does not depend on heap layout
    parts.sort_by(|p, q| p.a.total_cmp(&q.a));
    let value = parts.iter().map(|p| p.value).sum();
    let error: f64 = parts.iter().map(|p| p.error).sum();

    if error > abs_tol {
        return Err(QuadratureError::ToleranceNotMet { tol: abs_tol, error, panels });
    }
    Ok(Quadrature { value, error, panels })
}

/// Convenience wrapper for infallible integrands.
pub fn integrate_fn(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_panels: usize,
) -> Result<Quadrature, QuadratureError<std::convert::Infallible>> {
    integrate(|x| Ok(f(x)), a, b, abs_tol, max_panels)
}
