//! The backward-kernel functional `Φ_x(t) = Σ_z p(x,z,T−t) u(z,t) μ(z)`,
//! comparison bounds for `y' = h(y)`, the hypothesis classifier and a
//! numerical blow-up detector.

use serde::{Deserialize, Serialize};

use crate::graph::VertexFunction;
use crate::io::CsvTable;
use crate::semilinear::{
    supersolution_path, tail_integral, BallStepper, NonlinearSource, ScalarFn, SolutionPath,
    SolveError, SolverConfig, TailIntegral,
};
use crate::spectral::{least_squares_fit, uniform_kernel_bound, SpectralEstimate, TruncatedGenerator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiTrace {
    pub x: String,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub phi0: f64,
}

impl PhiTrace {
    /// Largest drop between consecutive values.
    pub fn max_decrease(&self) -> f64 {
        self.values.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["t", "phi"]);
        for (a, b) in self.times.iter().zip(&self.values) {
            t.push(vec![a.to_string(), b.to_string()]);
        }
        t
    }
}

fn path_prefix(path: &SolutionPath, horizon: f64) -> Result<usize, SolveError> {
    let last = *path.times.last().ok_or_else(|| SolveError::InvalidInput("empty path".into()))?;
    if path.times[0] != 0.0 || last < horizon * (1.0 - 1e-12) || !(horizon > 0.0) {
        return Err(SolveError::InvalidInput(format!("path covers [0, {last}], need [0, {horizon}]")));
    }
    Ok(path.times.iter().take_while(|t| **t <= horizon * (1.0 + 1e-12)).count())
}

/// `Φ_x^T` on the path's grid restricted to `[0, T]`; `x` is ball-local.
pub fn phi_trace(gen: &TruncatedGenerator, path: &SolutionPath, x: usize, horizon: f64) -> Result<PhiTrace, SolveError> {
    if x >= gen.len() {
        return Err(SolveError::InvalidInput(format!("vertex index {x} outside the truncation")));
    }
    let n = path_prefix(path, horizon)?;
    let mut values = Vec::with_capacity(n);
    for (t, u) in path.times[..n].iter().zip(&path.states) {
        let s = horizon - t;
        values.push(if s <= 1e-14 * horizon {
            u[x]
        } else {
            // p is symmetric, so column x holds p(x, ·, s)
            let col = gen.kernel_column(x, s)?;
            col.iter().zip(&u.0).zip(gen.mu()).map(|((p, u), m)| p * u * m).sum()
        });
    }
    let phi0 = gen.semigroup_apply(&path.states[0], horizon)?[x];
    Ok(PhiTrace { x: gen.ids()[x].clone(), horizon, times: path.times[..n].to_vec(), values, phi0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JensenCheck {
    /// Smallest `Σ p h(u) μ − m h(Φ/m)` over the grid.
    pub min_margin: f64,
    /// Largest mass defect `1 − m` seen.
    pub max_defect: f64,
    pub skipped: usize,
}

/// `Σ_y p(x,y,T−t) h(u(y,t)) μ(y) ≥ m h(Φ_x(t)/m)` with `m` the kernel
/// mass, which reduces to plain Jensen when `m = 1`.
pub fn jensen_check(
    gen: &TruncatedGenerator,
    path: &SolutionPath,
    x: usize,
    horizon: f64,
    h: &ScalarFn,
) -> Result<JensenCheck, SolveError> {
    let n = path_prefix(path, horizon)?;
    let mut out = JensenCheck { min_margin: f64::INFINITY, max_defect: 0.0, skipped: 0 };
    for (t, u) in path.times[..n].iter().zip(&path.states) {
        let s = horizon - t;
        if s <= 1e-14 * horizon {
            continue;
        }
        let col = gen.kernel_column(x, s)?;
        let (mut mass, mut phi, mut lhs) = (0.0, 0.0, 0.0);
        for ((p, u), m) in col.iter().zip(&u.0).zip(gen.mu()) {
            mass += p * m;
            phi += p * u * m;
            lhs += p * h.value(*u) * m;
        }
        if !(mass > 0.0) {
            out.skipped += 1;
            log::info!("Jensen check skipped at t = {t}: zero kernel mass");
            continue;
        }
        out.max_defect = out.max_defect.max(1.0 - mass);
        out.min_margin = out.min_margin.min(lhs - mass * h.value(phi / mass));
    }
    Ok(out)
}

pub fn osgood_integral(src: &NonlinearSource) -> Result<TailIntegral, SolveError> {
    let h = src.h.as_ref().ok_or_else(|| SolveError::InvalidInput("no minorant h registered".into()))?;
    tail_integral(h, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonBound {
    pub alpha: f64,
    /// Time for `Φ` to reach `δ` from `phi0` at rate `α`.
    pub t_bar: f64,
    /// `∫_{max(δ, phi0)}^∞ dz / h(z)`.
    pub h_integral: Option<f64>,
    pub tstar_upper: Option<f64>,
    pub applicable: bool,
    pub note: String,
}

/// Upper bound `t̄ + ∫_δ^∞ dz/h` on the blow-up time of `y' = h(y)`,
/// `y(0) = phi0`.
pub fn ode_comparison_bound(src: &NonlinearSource, phi0: f64, delta: f64) -> Result<ComparisonBound, SolveError> {
    let h = src.h.as_ref().ok_or_else(|| SolveError::InvalidInput("no minorant h registered".into()))?;
    if !(phi0 > 0.0) || !(delta > 0.0) {
        return Err(SolveError::InvalidInput("phi0 and delta must be positive".into()));
    }
    let alpha = crate::semilinear::right_derivative_at_zero(h);
    let t_bar = if phi0 >= delta {
        0.0
    } else if alpha > 0.0 {
        (delta.ln() - phi0.ln()) / alpha
    } else {
        return Ok(ComparisonBound {
            alpha,
            t_bar: f64::NAN,
            h_integral: None,
            tstar_upper: None,
            applicable: false,
            note: format!("alpha = {alpha} is not positive; bound inapplicable"),
        });
    };
    let tail = tail_integral(h, phi0.max(delta))?;
    let (h_integral, note) = match tail {
        TailIntegral::Finite(v) => (Some(v), String::new()),
        TailIntegral::Divergent => (None, "Osgood integral diverges".to_string()),
    };
    Ok(ComparisonBound {
        alpha,
        t_bar,
        h_integral,
        tstar_upper: h_integral.map(|v| t_bar + v),
        applicable: true,
        note,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    BlowupAllData,
    GlobalSmallData,
    CriticalGlobalSmallData,
    OutOfTheory,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::BlowupAllData => "blowup_all_data",
            Verdict::GlobalSmallData => "global_small_data",
            Verdict::CriticalGlobalSmallData => "critical_global_small_data",
            Verdict::OutOfTheory => "out_of_theory",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub name: String,
    pub passed: bool,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub note: String,
}

fn hyp(name: &str, passed: bool, value: Option<f64>, threshold: Option<f64>) -> Hypothesis {
    Hypothesis { name: name.into(), passed, value, threshold, note: String::new() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    pub checked_hypotheses: Vec<Hypothesis>,
    pub notes: Vec<String>,
}

impl Classification {
    pub fn hypothesis(&self, name: &str) -> Option<&Hypothesis> {
        self.checked_hypotheses.iter().find(|h| h.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    /// Relative tolerance for `L = λ₁`.
    pub crit_tol: f64,
    pub mass_defect_tol: f64,
    /// Times at which the mass defect is measured.
    pub test_times: Vec<f64>,
    /// `t̲` in the small-data bounds.
    pub t_under: f64,
    /// `C̲`; measured on `test_times` when absent.
    pub c_under: Option<f64>,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self { crit_tol: 1e-6, mass_defect_tol: 0.01, test_times: vec![0.5, 1.0, 2.0, 5.0], t_under: 1.0, c_under: None }
    }
}

/// Decision table over the measured hypotheses. `u0` is ball-local.
pub fn classify(
    gen: &TruncatedGenerator,
    src: &NonlinearSource,
    u0: &VertexFunction,
    lambda1: &SpectralEstimate,
    delta: f64,
    opts: &ClassifyOptions,
) -> Result<Classification, SolveError> {
    if u0.len() != gen.len() {
        return Err(SolveError::InvalidInput("datum does not match the truncation".into()));
    }
    let lam = lambda1.lambda1;
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    let sup = u0.sup_norm();
    let nonzero = sup > 0.0;
    checks.push(hyp("datum_nonzero", nonzero, Some(sup), None));
    let shape = src.shape_checks((10.0 * delta.max(sup)).max(10.0));
    checks.push(hyp("f_zero_at_zero", shape.f_zero, Some(src.eval(0.0)), None));

    // (a)
    let blowup = match &src.h {
        None => {
            checks.push(Hypothesis { note: "no minorant registered".into(), ..hyp("h_present", false, None, None) });
            false
        }
        Some(h) => {
            checks.push(hyp("h_present", true, None, None));
            let h_zero = shape.h_zero.unwrap_or(false);
            checks.push(hyp("h_zero_at_zero", h_zero, Some(h.value(0.0)), None));
            let inc = shape.h_increasing.unwrap_or(false);
            checks.push(hyp("h_increasing", inc, None, None));
            let convex = shape.h_convex.unwrap_or(false);
            checks.push(hyp("h_convex", convex, None, None));
            let below = shape.h_below_f.unwrap_or(false);
            checks.push(hyp("h_below_f", below, None, None));
            let osgood = osgood_integral(src);
            let finite = match &osgood {
                Ok(TailIntegral::Finite(v)) => {
                    checks.push(hyp("osgood_finite", true, Some(*v), None));
                    true
                }
                Ok(TailIntegral::Divergent) => {
                    checks.push(hyp("osgood_finite", false, None, None));
                    false
                }
                Err(e) => {
                    checks.push(Hypothesis { note: e.to_string(), ..hyp("osgood_finite", false, None, None) });
                    false
                }
            };
            let alpha = src.alpha().unwrap_or(f64::NAN);
            let alpha_ok = alpha > lam;
            checks.push(hyp("alpha_above_lambda1", alpha_ok, Some(alpha), Some(lam)));
            let x0 = gen.local(gen.ball().center).unwrap_or(0);
            let mut defect = 0.0_f64;
            for &t in &opts.test_times {
                defect = defect.max(gen.mass_defect(x0, t)?);
            }
            let conserving = defect <= opts.mass_defect_tol;
            let mut h = hyp("mass_conserving", conserving, Some(defect), Some(opts.mass_defect_tol));
            if !conserving {
                h.note = "hypothesis unverifiable at this truncation".into();
            }
            checks.push(h);
            h_zero && inc && convex && below && finite && alpha_ok && nonzero && conserving
        }
    };

    let l = src.lipschitz(delta)?;
    let sup_ok = sup <= delta;
    // (b)
    let sub = l < lam;
    checks.push(hyp("lipschitz_below_lambda1", sub, Some(l), Some(lam)));
    checks.push(hyp("datum_sup_below_delta", sup_ok, Some(sup), Some(delta)));
    // (c)
    let critical = (l - lam).abs() <= opts.crit_tol * lam.abs();
    checks.push(hyp("lipschitz_equals_lambda1", critical, Some(l), Some(lam)));
    let sup_bound = delta * (-l * opts.t_under).exp();
    let sup_small = sup <= sup_bound;
    checks.push(hyp("datum_sup_below_delta_decayed", sup_small, Some(sup), Some(sup_bound)));
    let c_under = match opts.c_under {
        Some(c) => c,
        None => {
            let grid: Vec<f64> = opts.test_times.iter().copied().filter(|t| *t >= opts.t_under).collect();
            let grid = if grid.is_empty() { vec![opts.t_under] } else { grid };
            uniform_kernel_bound(gen, lam, opts.t_under, &grid)?
        }
    };
    let l1 = u0.l1_norm_weighted(gen.mu());
    let l1_ok = l1 <= delta / c_under;
    checks.push(hyp("datum_l1_below_delta_over_c", l1_ok, Some(l1), Some(delta / c_under)));

    let verdict = if blowup {
        Verdict::BlowupAllData
    } else if sub && sup_ok && shape.f_zero {
        Verdict::GlobalSmallData
    } else if critical && sup_small && l1_ok && shape.f_zero {
        Verdict::CriticalGlobalSmallData
    } else {
        Verdict::OutOfTheory
    };
    if !lambda1.is_monotone(1e-10) {
        notes.push("λ₁ trace is not monotone in R".into());
    }
    Ok(Classification { verdict, checked_hypotheses: checks, notes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMode {
    Theoretical,
    Numerical,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupCertificate {
    pub mode: CertificateMode,
    pub alpha: Option<f64>,
    pub lambda1: f64,
    pub tstar_upper: Option<f64>,
    /// `u0(x0) μ(x0)`
    pub c1: Option<f64>,
    pub evidence: Vec<String>,
}

/// Combines the classifier verdict, a comparison bound and the detector.
pub fn certificate(
    class: &Classification,
    src: &NonlinearSource,
    lambda1: f64,
    bound: Option<&ComparisonBound>,
    detection: Option<&Detection>,
    c1: Option<f64>,
) -> BlowupCertificate {
    let mut evidence = Vec::new();
    let mode = if class.verdict == Verdict::BlowupAllData {
        evidence.push("classification: blowup_all_data".into());
        CertificateMode::Theoretical
    } else if let Some(Outcome::Blowup { t_est, .. }) = detection.map(|d| &d.outcome) {
        evidence.push(format!("detector: reciprocal norm vanishes near t = {t_est}"));
        CertificateMode::Numerical
    } else {
        CertificateMode::None
    };
    let tstar_upper = match mode {
        CertificateMode::Theoretical => bound.and_then(|b| b.tstar_upper),
        _ => None,
    };
    if let Some(t) = tstar_upper {
        evidence.push(format!("comparison bound: T* ≤ {t}"));
    }
    BlowupCertificate { mode, alpha: src.alpha(), lambda1, tstar_upper, c1, evidence }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub solver: SolverConfig,
    /// Level defining `L(f, δ)` for the supersolution; `‖u0‖_∞` by default.
    pub delta: Option<f64>,
    pub tol: f64,
    pub fit_points: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { solver: SolverConfig::default(), delta: None, tol: 1e-6, fit_points: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Blowup { t_est: f64, half_width: f64 },
    Bounded { sup_norm: f64 },
    Inconclusive { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub outcome: Outcome,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    /// `sup ū` over the segment endpoints, when computed.
    pub supersolution_sup: Option<f64>,
    pub lipschitz: Option<f64>,
    pub segments: usize,
}

impl Detection {
    /// `t,norm,reciprocal,t_extrapolated` with the last column the zero of
    /// the secant of `1/‖u‖` through the previous point.
    pub fn reciprocal_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(&["t", "norm", "reciprocal", "t_extrapolated"]);
        for i in 0..self.times.len() {
            let r = 1.0 / self.norms[i];
            let ext = if i == 0 {
                String::new()
            } else {
                let r0 = 1.0 / self.norms[i - 1];
                let slope = (r - r0) / (self.times[i] - self.times[i - 1]);
                if slope < 0.0 { (self.times[i] - r / slope).to_string() } else { String::new() }
            };
            table.push(vec![self.times[i].to_string(), self.norms[i].to_string(), r.to_string(), ext]);
        }
        table
    }

    pub fn norm_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(&["t", "sup_norm"]);
        for (t, n) in self.times.iter().zip(&self.norms) {
            table.push(vec![t.to_string(), n.to_string()]);
        }
        table
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectError {
    pub error: SolveError,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
}

impl std::fmt::Display for DetectError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} trace points)", self.error, self.times.len())
    }
}

impl std::error::Error for DetectError {}

/// Runs chained ball segments up to `horizon` or until `‖u‖_∞ > cap`.
pub fn detect_blowup(
    gen: &TruncatedGenerator,
    src: &NonlinearSource,
    u0: &VertexFunction,
    horizon: f64,
    cap: f64,
    cfg: &DetectorConfig,
) -> Result<Detection, DetectError> {
    let fail = |error: SolveError, times: &[f64], norms: &[f64]| DetectError {
        error,
        times: times.to_vec(),
        norms: norms.to_vec(),
    };
    let sup0 = u0.sup_norm();
    if !(horizon > 0.0) || !(cap > 10.0 * sup0) {
        return Err(fail(SolveError::InvalidInput("need horizon > 0 and cap > 10·‖u0‖_∞".into()), &[], &[]));
    }
    let mut stepper = BallStepper::new(gen, src, u0, cfg.solver, None).map_err(|e| fail(e, &[], &[]))?;
    let mut times = vec![0.0];
    let mut norms = vec![sup0];
    while stepper.t < horizon {
        if let Err(e) = stepper.step(horizon) {
            return Err(fail(e, &times, &norms));
        }
        times.push(stepper.t);
        norms.push(stepper.state.sup_norm());
        if *norms.last().unwrap() > cap {
            let k = cfg.fit_points.max(2).min(times.len());
            let pts: Vec<(f64, f64)> = times[times.len() - k..]
                .iter()
                .zip(&norms[norms.len() - k..])
                .map(|(t, n)| (*t, 1.0 / n))
                .collect();
            let (a, b) = least_squares_fit(&pts);
            let segments = stepper.segments.len();
            let outcome = if b < 0.0 {
                let resid = pts.iter().map(|(t, r)| (r - a - b * t).abs()).fold(0.0, f64::max);
                Outcome::Blowup { t_est: -a / b, half_width: resid / -b }
            } else {
                Outcome::Inconclusive { reason: "norm exceeded cap but 1/‖u‖ is not decreasing".into() }
            };
            return Ok(Detection { outcome, times, norms, supersolution_sup: None, lipschitz: None, segments });
        }
    }
    let delta = cfg.delta.unwrap_or(sup0);
    let segments = stepper.segments.len();
    if sup0 == 0.0 {
        let outcome = Outcome::Bounded { sup_norm: norms.iter().copied().fold(0.0, f64::max) };
        return Ok(Detection { outcome, times, norms, supersolution_sup: Some(0.0), lipschitz: None, segments });
    }
    let l = src.lipschitz(delta).map_err(|e| fail(e, &times, &norms))?;
    let bar = supersolution_path(gen, u0, &times, l, None).map_err(|e| fail(e, &times, &norms))?;
    let bar_sup = bar.path.sup_norm();
    let sup = norms.iter().copied().fold(0.0, f64::max);
    let outcome = if sup <= bar_sup + cfg.tol {
        Outcome::Bounded { sup_norm: sup }
    } else {
        Outcome::Inconclusive { reason: format!("max ‖u‖ = {sup} exceeds sup ū = {bar_sup}") }
    };
    Ok(Detection { outcome, times, norms, supersolution_sup: Some(bar_sup), lipschitz: Some(l), segments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_graph, GraphFamily};
    use crate::semilinear::{picard_solve, PicardMode};
    use crate::spectral::{dirichlet_generator, lambda1_estimate, EigenOptions};

    fn cycle4() -> TruncatedGenerator {
        let g = generate_graph(&GraphFamily::Cycle { n: 4 }).unwrap();
        dirichlet_generator(&g, &g.whole()).unwrap()
    }

    fn square() -> NonlinearSource {
        NonlinearSource::self_minorant(ScalarFn::Power { coef: 1.0, p: 2.0 })
    }

    #[test]
    fn phi_of_linear_flow_is_constant() {
        let gen = cycle4();
        let u0 = VertexFunction(vec![1.0, 0.0, 2.0, 0.5]);
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.3).collect();
        let (path, _) = picard_solve(
            &gen,
            &NonlinearSource::zero(),
            &u0,
            &times,
            &PicardMode::BallSup { segment: None },
            &SolverConfig::default(),
        )
        .unwrap();
        let tr = phi_trace(&gen, &path, 1, 3.0).unwrap();
        for v in &tr.values {
            assert!((v - tr.phi0).abs() < 1e-8);
        }
        assert!((tr.values.last().unwrap() - path.final_state()[1]).abs() < 1e-14);
        let zero = SolutionPath::new(times.clone(), vec![VertexFunction::zeros(4); 11], vec![1]);
        assert!(phi_trace(&gen, &zero, 0, 3.0).unwrap().values.iter().all(|v| *v == 0.0));
        assert!(phi_trace(&gen, &zero, 0, 4.0).is_err());
    }

    #[test]
    fn phi_increases_and_jensen_holds() {
        let gen = cycle4();
        let u0 = VertexFunction(vec![0.4, 0.1, 0.0, 0.2]);
        let times: Vec<f64> = (0..=16).map(|i| i as f64 * 0.1).collect();
        let src = square();
        let (path, _) =
            picard_solve(&gen, &src, &u0, &times, &PicardMode::BallSup { segment: None }, &SolverConfig::default())
                .unwrap();
        let tr = phi_trace(&gen, &path, 0, 1.6).unwrap();
        assert!(tr.max_decrease() <= 1e-6);
        let j = jensen_check(&gen, &path, 0, 1.6, src.h.as_ref().unwrap()).unwrap();
        assert!(j.min_margin >= -1e-8 && j.max_defect.abs() < 1e-12);
    }

    #[test]
    fn comparison_bound_examples() {
        let b = ode_comparison_bound(&square(), 1.0, 1.0).unwrap();
        assert!((b.tstar_upper.unwrap() - 1.0).abs() < 1e-10);
        let b = ode_comparison_bound(&square(), 0.5, 1.0).unwrap();
        assert!(!b.applicable && b.tstar_upper.is_none());
        let h = NonlinearSource::self_minorant(ScalarFn::LinearPlusPower { a: 1.0, b: 1.0, p: 2.0 });
        let b = ode_comparison_bound(&h, 0.5, 1.0).unwrap();
        assert!((b.tstar_upper.unwrap() - 2.0 * std::f64::consts::LN_2).abs() < 1e-9);
        let lin = NonlinearSource::self_minorant(ScalarFn::Linear { a: 1.0 });
        assert!(ode_comparison_bound(&lin, 0.5, 1.0).unwrap().tstar_upper.is_none());
    }

    #[test]
    fn detector_finds_ode_blowup() {
        let d = detect_blowup(&cycle4(), &square(), &VertexFunction::constant(4, 1.0), 2.0, 1e6, &Default::default())
            .unwrap();
        match d.outcome {
            Outcome::Blowup { t_est, .. } => assert!((t_est - 1.0).abs() < 0.02, "{t_est}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detector_bounded_for_zero_source() {
        let u0 = VertexFunction(vec![1.0, 0.0, 3.0, 0.5]);
        let d = detect_blowup(&cycle4(), &NonlinearSource::zero(), &u0, 5.0, 100.0, &Default::default()).unwrap();
        match d.outcome {
            Outcome::Bounded { sup_norm } => assert!(sup_norm <= 3.0 + 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detector_bounded_in_small_data_regime() {
        let g = generate_graph(&GraphFamily::RegularTree { degree: 3, depth: 4 }).unwrap();
        let gen = dirichlet_generator(&g, &g.ball(0, 4)).unwrap();
        let lam = gen.principal_eigenpair(&EigenOptions::default()).unwrap().lambda;
        let delta = lam / 8.0;
        let u0 = VertexFunction::constant(gen.len(), delta);
        let cfg = DetectorConfig { delta: Some(delta), ..Default::default() };
        let d = detect_blowup(&gen, &square(), &u0, 50.0 / lam, 1.0, &cfg).unwrap();
        assert!(matches!(d.outcome, Outcome::Bounded { .. }), "{:?}", d.outcome);
    }

    #[test]
    fn classifier_examples() {
        let g = generate_graph(&GraphFamily::RegularTree { degree: 3, depth: 4 }).unwrap();
        let gen = dirichlet_generator(&g, &g.ball(0, 4)).unwrap();
        let est = lambda1_estimate(&g, 0, &[4], &EigenOptions::default()).unwrap();
        let lam = est.lambda1;
        let opts = ClassifyOptions::default();
        let delta = lam / 10.0;
        let u0 = VertexFunction::constant(gen.len(), delta / 2.0);
        let c = classify(&gen, &square(), &u0, &est, delta, &opts).unwrap();
        assert_eq!(c.verdict, Verdict::GlobalSmallData);

        let lin = NonlinearSource::self_minorant(ScalarFn::Linear { a: 2.0 * lam });
        let c = classify(&gen, &lin, &u0, &est, delta, &opts).unwrap();
        assert_eq!(c.verdict, Verdict::OutOfTheory);
        assert!(!c.hypothesis("osgood_finite").unwrap().passed);

        let edge = NonlinearSource::self_minorant(ScalarFn::LinearPlusPower { a: lam, b: 1.0, p: 2.0 });
        let tiny = VertexFunction::constant(gen.len(), 1e-6);
        let c = classify(&gen, &edge, &tiny, &est, delta, &opts).unwrap();
        assert_eq!(c.verdict, Verdict::OutOfTheory);
        assert!(!c.hypothesis("alpha_above_lambda1").unwrap().passed);
        assert!(!c.hypothesis("lipschitz_below_lambda1").unwrap().passed);
    }
}
