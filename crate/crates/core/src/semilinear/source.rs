//! Nonlinear source terms `f`, their convex minorants `h`, interval
//! Lipschitz constants and Osgood-type tail integrals.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::SolveError;

/// A scalar function on `[0, ∞)`.
#[derive(Clone)]
pub enum ScalarFn {
    Zero,
    /// `a·s`
    Linear { a: f64 },
    /// `coef·s^p`
    Power { coef: f64, p: f64 },
    /// `a·s + b·s^p`
    LinearPlusPower { a: f64, b: f64, p: f64 },
    /// `a·min(s, cap)`
    ClampedLinear { a: f64, cap: f64 },
    /// Piecewise-linear interpolation of `(s, value)` knots, extended with
    /// the last slope to the right.
    Table { knots: Vec<(f64, f64)> },
    Custom { name: String, f: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Zero => write!(f, "0"),
            ScalarFn::Linear { a } => write!(f, "{a}*u"),
            ScalarFn::Power { coef, p } => write!(f, "{coef}*u^{p}"),
            ScalarFn::LinearPlusPower { a, b, p } => write!(f, "{a}*u+{b}*u^{p}"),
            ScalarFn::ClampedLinear { a, cap } => write!(f, "{a}*min(u,{cap})"),
            ScalarFn::Table { knots } => write!(f, "table[{}]", knots.len()),
            ScalarFn::Custom { name, .. } => write!(f, "{name}"),
        }
    }
}

impl ScalarFn {
    pub fn custom(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFn::Custom { name: name.into(), f: Arc::new(f) }
    }

    pub fn table(mut knots: Vec<(f64, f64)>) -> Self {
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        ScalarFn::Table { knots }
    }

    pub fn value(&self, s: f64) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Linear { a } => a * s,
            ScalarFn::Power { coef, p } => coef * s.powf(*p),
            ScalarFn::LinearPlusPower { a, b, p } => a * s + b * s.powf(*p),
            ScalarFn::ClampedLinear { a, cap } => a * s.min(*cap),
            ScalarFn::Table { knots } => table_value(knots, s),
            ScalarFn::Custom { f, .. } => f(s),
        }
    }

    /// Closed-form `sup_{[0,δ]} f'` when the family admits one.
    pub fn max_slope_closed(&self, delta: f64) -> Option<f64> {
        match self {
            ScalarFn::Zero => Some(0.0),
            ScalarFn::Linear { a } => Some(a.abs()),
            ScalarFn::Power { coef, p } if *p >= 1.0 && *coef >= 0.0 => Some(coef * p * delta.powf(p - 1.0)),
            ScalarFn::Power { coef, p } if *p < 1.0 && *coef > 0.0 => Some(f64::INFINITY),
            ScalarFn::LinearPlusPower { a, b, p } if *p >= 1.0 && *a >= 0.0 && *b >= 0.0 => {
                Some(a + b * p * delta.powf(p - 1.0))
            }
            ScalarFn::ClampedLinear { a, cap } if *cap > 0.0 => Some(a.abs()),
            ScalarFn::Table { knots } => {
                let mut best = 0.0_f64;
                for w in knots.windows(2) {
                    if w[0].0 < delta {
                        best = best.max(((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs());
                    }
                }
                if let Some(last) = knots.last() {
                    if last.0 < delta && knots.len() >= 2 {
                        let w = &knots[knots.len() - 2..];
                        best = best.max(((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs());
                    }
                }
                Some(best)
            }
            _ => None,
        }
    }

    /// Closed-form right derivative at 0.
    pub fn derivative_at_zero_closed(&self) -> Option<f64> {
        match self {
            ScalarFn::Zero => Some(0.0),
            ScalarFn::Linear { a } => Some(*a),
            ScalarFn::Power { coef, p } if *p > 1.0 => Some(0.0 * coef),
            ScalarFn::Power { coef, p } if *p == 1.0 => Some(*coef),
            ScalarFn::LinearPlusPower { a, p, .. } if *p > 1.0 => Some(*a),
            ScalarFn::ClampedLinear { a, cap } if *cap > 0.0 => Some(*a),
            ScalarFn::Table { knots } if knots.len() >= 2 && knots[0].0 <= 0.0 => {
                let w = &knots[..2];
                Some((w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            }
            _ => None,
        }
    }

    /// Closed-form convexity on `[0, ∞)`, when known.
    pub fn is_convex_closed(&self) -> Option<bool> {
        match self {
            ScalarFn::Zero | ScalarFn::Linear { .. } => Some(true),
            ScalarFn::Power { coef, p } => Some(*coef >= 0.0 && *p >= 1.0),
            ScalarFn::LinearPlusPower { b, p, .. } => Some(*b >= 0.0 && *p >= 1.0),
            ScalarFn::ClampedLinear { a, .. } => Some(*a <= 0.0),
            _ => None,
        }
    }
}

fn table_value(knots: &[(f64, f64)], s: f64) -> f64 {
    match knots.len() {
        0 => 0.0,
        1 => knots[0].1,
        _ => {
            let idx = knots.partition_point(|k| k.0 <= s);
            let (a, b) = if idx == 0 {
                (knots[0], knots[1])
            } else if idx >= knots.len() {
                (knots[knots.len() - 2], knots[knots.len() - 1])
            } else {
                (knots[idx - 1], knots[idx])
            };
            a.1 + (b.1 - a.1) * (s - a.0) / (b.0 - a.0)
        }
    }
}

/// The source `f` together with an optional convex minorant `h`.
#[derive(Debug, Clone)]
pub struct NonlinearSource {
    pub f: ScalarFn,
    pub h: Option<ScalarFn>,
}

/// Result of `∫_a^∞ ds / g(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum TailIntegral {
    Finite(f64),
    Divergent,
}

impl TailIntegral {
    pub fn value(&self) -> Option<f64> {
        match self {
            TailIntegral::Finite(v) => Some(*v),
            TailIntegral::Divergent => None,
        }
    }
}

/// Divergence threshold on the measured log-slope of `1/g`.
pub const OSGOOD_SLOPE_THRESHOLD: f64 = -1.0 - 1e-3;

const SAMPLE_GRID: usize = 257;

impl NonlinearSource {
    pub fn new(f: ScalarFn) -> Self {
        Self { f, h: None }
    }

    pub fn with_minorant(f: ScalarFn, h: ScalarFn) -> Self {
        Self { f, h: Some(h) }
    }

    /// `f = h` for convex sources.
    pub fn self_minorant(f: ScalarFn) -> Self {
        Self { h: Some(f.clone()), f }
    }

    pub fn zero() -> Self {
        Self::new(ScalarFn::Zero)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.f.value(s)
    }

    /// Lipschitz constant `L(f, δ)` of `f` on `[0, δ]`.
    pub fn lipschitz(&self, delta: f64) -> Result<f64, SolveError> {
        lipschitz_on_interval(&self.f, delta)
    }

    /// `α = h'(0)`.
    pub fn alpha(&self) -> Option<f64> {
        self.h.as_ref().map(right_derivative_at_zero)
    }

    /// `∫_1^∞ ds/h(s)`.
    pub fn osgood(&self) -> Option<Result<TailIntegral, SolveError>> {
        self.h.as_ref().map(|h| tail_integral(h, 1.0))
    }

    /// `F(t) = ∫_t^∞ ds/f(s)`, reported only.
    pub fn f_tail(&self, t: f64) -> Result<TailIntegral, SolveError> {
        tail_integral(&self.f, t)
    }

    /// Sampled shape checks on `[0, upto]`.
    pub fn shape_checks(&self, upto: f64) -> ShapeChecks {
        let xs: Vec<f64> = (0..SAMPLE_GRID).map(|k| upto * k as f64 / (SAMPLE_GRID - 1) as f64).collect();
        let fs: Vec<f64> = xs.iter().map(|&x| self.f.value(x)).collect();
        let f_zero = fs[0] == 0.0;
        let f_nonnegative = fs.iter().all(|v| *v >= 0.0);
        let f_nondecreasing = fs.windows(2).all(|w| w[1] >= w[0] - 1e-14 * w[0].abs());
        let (h_zero, h_increasing, h_convex, h_below_f) = match &self.h {
            None => (None, None, None, None),
            Some(h) => {
                let hs: Vec<f64> = xs.iter().map(|&x| h.value(x)).collect();
                let inc = hs.windows(2).all(|w| w[1] > w[0]);
                let convex = h.is_convex_closed().unwrap_or_else(|| {
                    hs.windows(3).all(|w| w[0] + w[2] - 2.0 * w[1] >= -1e-12 * w[1].abs().max(1.0))
                });
                let below = hs.iter().zip(&fs).all(|(h, f)| *h <= f + 1e-12 * f.abs().max(1.0));
                (Some(hs[0] == 0.0), Some(inc), Some(convex), Some(below))
            }
        };
        ShapeChecks { f_zero, f_nonnegative, f_nondecreasing, h_zero, h_increasing, h_convex, h_below_f }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeChecks {
    pub f_zero: bool,
    pub f_nonnegative: bool,
    pub f_nondecreasing: bool,
    pub h_zero: Option<bool>,
    pub h_increasing: Option<bool>,
    pub h_convex: Option<bool>,
    pub h_below_f: Option<bool>,
}

/// `sup_{0≤s<s'≤δ} (f(s') − f(s))/(s' − s)`.
///
/// Exact for families with a closed-form derivative; otherwise the largest
/// consecutive difference quotient on a uniform grid, refined until the
/// value is stable to `1e-8` relative.
pub fn lipschitz_on_interval(f: &ScalarFn, delta: f64) -> Result<f64, SolveError> {
    if !(delta > 0.0) {
        return Err(SolveError::InvalidInput(format!("delta must be positive, got {delta}")));
    }
    if let Some(l) = f.max_slope_closed(delta) {
        return Ok(l);
    }
    let quotient = |n: usize| -> Result<f64, SolveError> {
        let mut best = 0.0_f64;
        let mut prev = f.value(0.0);
        if !prev.is_finite() {
            return Err(SolveError::NonFiniteSource(0.0));
        }
        for k in 1..=n {
            let s = delta * k as f64 / n as f64;
            let v = f.value(s);
            if !v.is_finite() {
                return Err(SolveError::NonFiniteSource(s));
            }
            best = best.max(((v - prev) / (delta / n as f64)).abs());
            prev = v;
        }
        Ok(best)
    };
    let mut n = 64;
    let mut last = quotient(n)?;
    while n < 1 << 22 {
        n *= 2;
        let next = quotient(n)?;
        if (next - last).abs() <= 1e-8 * next.abs().max(f64::MIN_POSITIVE) {
            return Ok(next);
        }
        last = next;
    }
    Ok(last)
}

/// Right derivative at 0: closed form when registered, otherwise a
/// difference quotient with step halving until successive values agree to
/// `1e-10`.
pub fn right_derivative_at_zero(g: &ScalarFn) -> f64 {
    if let Some(d) = g.derivative_at_zero_closed() {
        return d;
    }
    let g0 = g.value(0.0);
    let mut step = 1e-2;
    let mut last = (g.value(step) - g0) / step;
    for _ in 0..60 {
        step *= 0.5;
        let next = (g.value(step) - g0) / step;
        if (next - last).abs() <= 1e-10 {
            return next;
        }
        last = next;
    }
    last
}

fn simpson(g: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (g(lm), g(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson(g, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(g, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `g` on `[a, b]`.
pub fn adaptive_simpson(g: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb) = (g(a), g(b));
    let fm = g(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(g, a, b, fa, fm, fb, whole, tol, 40)
}

/// `∫_from^∞ ds / g(s)` by adaptive quadrature on dyadic intervals with a
/// power-law tail extrapolation. Declared divergent when the measured
/// log-slope of `1/g` is `≥ −1 − 1e-3`.
pub fn tail_integral(g: &ScalarFn, from: f64) -> Result<TailIntegral, SolveError> {
    if !(from > 0.0) {
        return Err(SolveError::InvalidInput(format!("tail integral needs a positive lower limit, got {from}")));
    }
    let recip = |s: f64| -> f64 { 1.0 / g.value(s) };
    let mut a = from;
    let mut sum = 0.0;
    loop {
        let b = 2.0 * a;
        for s in [a, 1.5 * a, b] {
            let v = g.value(s);
            if !(v > 0.0) {
                return Err(SolveError::VanishingMinorant(s));
            }
        }
        sum += adaptive_simpson(&recip, a, b, 1e-14 * (b - a) * recip(a));
        let (gb, g2b) = (g.value(b), g.value(2.0 * b));
        if !g2b.is_finite() {
            // 1/g vanishes numerically beyond this point
            return Ok(TailIntegral::Finite(sum));
        }
        let slope = -(g2b.ln() - gb.ln()) / std::f64::consts::LN_2;
        if b >= 1e3 * from && slope >= OSGOOD_SLOPE_THRESHOLD {
            return Ok(TailIntegral::Divergent);
        }
        if slope < OSGOOD_SLOPE_THRESHOLD {
            // ∫_b^∞ (b/s)^{-slope} ds / g(b)
            let tail = b / (gb * (-slope - 1.0));
            if tail <= 1e-12 * sum || b > 1e300 {
                return Ok(TailIntegral::Finite(sum + tail));
            }
        } else if b > 1e300 {
            return Ok(TailIntegral::Divergent);
        }
        a = b;
    }
}
