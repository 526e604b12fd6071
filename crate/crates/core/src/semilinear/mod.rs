//! Mild solutions of `u_t = Δu + f(u)` on a Dirichlet truncation:
//!
//! ```text
//! u(t) = e^{−tA} u0 + ∫_0^t e^{−(t−s)A} f(u(s)) ds
//! ```
//!
//! The Duhamel integral is discretized with a product trapezoid rule: `f(u)`
//! is interpolated linearly in time between nodes and the exponential is
//! integrated exactly, mode by mode. Grids are refined by step doubling
//! until the Richardson estimate drops below a relative tolerance.

mod exhaust;
mod source;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, VertexFunction};
use crate::io::CsvTable;
use crate::spectral::{ModalView, SpectralError, TruncatedGenerator, UNDERFLOW_FLOOR};

pub use exhaust::{exhaust_solve, supersolution_path, Comparison, ExhaustOptions, Exhaustion, Supersolution, Violation};
pub use source::{
    adaptive_simpson, lipschitz_on_interval, right_derivative_at_zero, tail_integral, NonlinearSource, ScalarFn,
    ShapeChecks, TailIntegral, OSGOOD_SLOPE_THRESHOLD,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("{0}")]
    InvalidInput(String),
    #[error("source is not finite at s = {0}")]
    NonFiniteSource(f64),
    #[error("minorant vanishes or is negative at s = {0}")]
    VanishingMinorant(f64),
    #[error(
        "time step {dt} too coarse for stiffness {lambda_max} (λmax·Δt > {threshold}); use at least {suggested_substeps} substeps"
    )]
    TooStiff { dt: f64, lambda_max: f64, threshold: f64, suggested_substeps: usize },
    #[error("iterate left 𝓥_R at t = {t}, vertex `{vertex}`: value {value:e} outside [0, {bound:e}]")]
    LeftSpace { t: f64, vertex: String, value: f64, bound: f64 },
    #[error("Picard iteration did not converge in {iterations} iterations (last ratios {ratios:?})")]
    NotConverged { iterations: usize, ratios: Vec<f64> },
    #[error("quadrature estimate {estimate:e} above tolerance {tolerance:e} at {substeps} substeps")]
    QuadratureNotConverged { estimate: f64, tolerance: f64, substeps: usize },
    #[error("u_{smaller} exceeds u_{larger} by {excess:e} at t = {t}, vertex `{vertex}`")]
    MonotonicityViolation { smaller: usize, larger: usize, t: f64, vertex: String, excess: f64 },
    #[error("u_{radius} exceeds the supersolution by {excess:e} at t = {t}, vertex `{vertex}`")]
    ComparisonViolation { radius: usize, t: f64, vertex: String, excess: f64 },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Picard stops when the sup distance of successive iterates is below
    /// `picard_tol · ‖u‖_∞`.
    pub picard_tol: f64,
    pub max_iter: usize,
    /// Relative Richardson tolerance of the time quadrature.
    pub quad_tol: f64,
    pub max_refinements: usize,
    /// `psi_apply` refuses grids with `λmax·Δt` above this.
    pub stiffness_limit: f64,
    /// Initial substeps are chosen with `λmax·Δt ≤ substep_stiffness`.
    pub substep_stiffness: f64,
    pub min_substeps: usize,
    pub max_substeps: usize,
    /// Ball segments have length `segment_fraction / L`.
    pub segment_fraction: f64,
    pub max_segment: f64,
    pub ratio_margin: f64,
    /// `f` is extended linearly above `clamp_factor · M` (ball mode) or
    /// `clamp_factor · δ` (weighted mode).
    pub clamp_factor: f64,
    pub max_segments: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            picard_tol: 1e-12,
            max_iter: 500,
            quad_tol: 1e-8,
            max_refinements: 14,
            stiffness_limit: 2.0,
            substep_stiffness: 0.5,
            min_substeps: 4,
            max_substeps: 1 << 20,
            segment_fraction: 0.5,
            max_segment: f64::INFINITY,
            ratio_margin: 0.05,
            clamp_factor: 10.0,
            max_segments: 100_000,
        }
    }
}

/// Parameters of the weighted space `𝓜(M, γ, y₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MildSpaceParams {
    pub m: f64,
    pub gamma: f64,
    /// Ball-local anchor vertex.
    pub y0: usize,
    pub epsilon: f64,
}

pub const DEFAULT_GAMMA: f64 = 1.0;

/// Ball-local argmax of `u0`, lowest index on ties.
pub fn anchor_vertex(u0: &VertexFunction) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in u0.0.iter().enumerate() {
        if *v > 0.0 && best.is_none_or(|b| *v > u0[b]) {
            best = Some(i);
        }
    }
    best
}

impl MildSpaceParams {
    /// Smallest admissible `ε`, anchored at the argmax of `u0`, with
    /// `M = ε / (1 − L/λ₁)` when `L < λ₁` and `M = 2ε` otherwise.
    pub fn fit(
        gen: &TruncatedGenerator,
        src: &NonlinearSource,
        u0: &VertexFunction,
        lambda1: f64,
        delta: f64,
        gamma: f64,
    ) -> Result<Self, SolveError> {
        let y0 = anchor_vertex(u0).ok_or_else(|| SolveError::InvalidInput("datum has no positive value".into()))?;
        let epsilon = epsilon_min(gen, u0, y0, gamma)?
            .ok_or_else(|| SolveError::InvalidInput("datum is positive where the kernel column underflows".into()))?;
        let l = src.lipschitz(delta)?;
        let m = if l < lambda1 { epsilon / (1.0 - l / lambda1) } else { 2.0 * epsilon };
        Ok(Self { m, gamma, y0, epsilon })
    }
}

/// `max_x u0(x) / p(x, y0, γ)`; `None` when `u0 > 0` where the kernel
/// underflows.
pub fn epsilon_min(gen: &TruncatedGenerator, u0: &VertexFunction, y0: usize, gamma: f64) -> Result<Option<f64>, SolveError> {
    let col = gen.kernel_column(y0, gamma)?;
    let mut eps = 0.0_f64;
    for (u, p) in u0.0.iter().zip(col.iter()) {
        if *u > 0.0 {
            if *p < UNDERFLOW_FLOOR {
                return Ok(None);
            }
            eps = eps.max(u / p);
        }
    }
    Ok(Some(eps))
}

/// Measured hypotheses of the weighted-space construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub lipschitz: f64,
    pub lambda1: f64,
    pub contraction: bool,
    pub anchor_positive: bool,
    pub epsilon: f64,
    pub epsilon_min: Option<f64>,
    /// `(1 − L/λ₁) M`
    pub epsilon_max: f64,
    pub datum_ok: bool,
    /// `max p(x, y₀, t+γ) e^{λ₁(t+γ)}` over the grid.
    pub kernel_envelope: f64,
    /// `M · envelope · e^{−λ₁γ}`, compared with `δ`.
    pub amplitude: f64,
    pub amplitude_ok: bool,
    pub admissible: bool,
}

pub fn check_admissibility(
    gen: &TruncatedGenerator,
    src: &NonlinearSource,
    u0: &VertexFunction,
    params: &MildSpaceParams,
    lambda1: f64,
    delta: f64,
    t_grid: &[f64],
) -> Result<Admissibility, SolveError> {
    let l = src.lipschitz(delta)?;
    let contraction = l < lambda1;
    let anchor_positive = params.y0 < u0.len() && u0[params.y0] > 0.0;
    let eps_min = if anchor_positive { epsilon_min(gen, u0, params.y0, params.gamma)? } else { None };
    let epsilon_max = (1.0 - l / lambda1) * params.m;
    let datum_ok = eps_min.is_some_and(|e| e <= params.epsilon * (1.0 + 1e-12)) && params.epsilon <= epsilon_max;
    let mut envelope = 0.0_f64;
    for &t in t_grid {
        let col = gen.kernel_column(params.y0, t + params.gamma)?;
        let m = col.iter().fold(0.0_f64, |a, b| a.max(*b));
        envelope = envelope.max(m * (lambda1 * (t + params.gamma)).exp());
    }
    let amplitude = params.m * envelope * (-lambda1 * params.gamma).exp();
    let amplitude_ok = amplitude <= delta;
    Ok(Admissibility {
        lipschitz: l,
        lambda1,
        contraction,
        anchor_positive,
        epsilon: params.epsilon,
        epsilon_min: eps_min,
        epsilon_max,
        datum_ok,
        kernel_envelope: envelope,
        amplitude,
        amplitude_ok,
        admissible: contraction && anchor_positive && datum_ok && amplitude_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPath {
    pub times: Vec<f64>,
    pub states: Vec<VertexFunction>,
    /// Picard iterations per segment.
    pub iterations: Vec<usize>,
    pub norm_trace: Vec<f64>,
}

impl SolutionPath {
    pub fn new(times: Vec<f64>, states: Vec<VertexFunction>, iterations: Vec<usize>) -> Self {
        let norm_trace = states.iter().map(|s| s.sup_norm()).collect();
        Self { times, states, iterations, norm_trace }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &VertexFunction {
        self.states.last().expect("nonempty path")
    }

    pub fn sup_norm(&self) -> f64 {
        self.norm_trace.iter().copied().fold(0.0, f64::max)
    }

    /// `t,vertex,value` rows.
    pub fn to_csv(&self, ids: &[String]) -> CsvTable {
        let mut table = CsvTable::new(&["t", "vertex", "value"]);
        for (t, s) in self.times.iter().zip(&self.states) {
            for (id, v) in ids.iter().zip(&s.0) {
                table.push(vec![t.to_string(), id.clone(), v.to_string()]);
            }
        }
        table
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub t0: f64,
    pub t1: f64,
    pub epsilon: f64,
    pub m: f64,
    pub lipschitz: f64,
    pub substeps: usize,
    pub iterations: usize,
    pub ratios: Vec<f64>,
    pub quad_estimate: f64,
    pub residual: f64,
    /// `ε ≤ (1 − L T) M`
    pub space_hypothesis: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeUsed {
    GlobalWeighted,
    BallSup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub mode: ModeUsed,
    pub segments: Vec<SegmentReport>,
    /// `L/λ₁` or the largest `L·T` over segments.
    pub ratio_bound: f64,
    pub max_ratio: f64,
    pub ratio_violations: usize,
    pub residual: f64,
    pub quad_estimate: f64,
    pub clamp_events: usize,
    pub clamp_max_arg: f64,
    pub admissibility: Option<Admissibility>,
    pub warnings: Vec<String>,
}

impl SolveDiagnostics {
    fn new(mode: ModeUsed) -> Self {
        Self {
            mode,
            segments: Vec::new(),
            ratio_bound: 0.0,
            max_ratio: 0.0,
            ratio_violations: 0,
            residual: 0.0,
            quad_estimate: 0.0,
            clamp_events: 0,
            clamp_max_arg: 0.0,
            admissibility: None,
            warnings: Vec::new(),
        }
    }

    pub fn ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().flat_map(|s| s.ratios.iter().copied())
    }
}

/// `(e^{−z}, ∫_0^1 σ e^{−zσ} dσ, ∫_0^1 (1−σ) e^{−zσ} dσ)`.
fn step_weights(z: f64) -> (f64, f64, f64) {
    if z.abs() < 0.1 {
        let (mut phi1, mut g2) = (0.0, 0.0);
        let mut pow = 1.0;
        let mut fact = 1.0; // (n+1)!
        for n in 0..20 {
            fact *= (n + 1) as f64;
            phi1 += pow / fact;
            g2 += pow * (n + 1) as f64 / (fact * (n + 2) as f64);
            pow *= -z;
        }
        return ((-z).exp(), g2, phi1 - g2);
    }
    let e = (-z).exp();
    let phi1 = -(-z).exp_m1() / z;
    let g2 = (1.0 - e - z * e) / (z * z);
    (e, g2, phi1 - g2)
}

struct ModalWeights {
    decay: Vec<f64>,
    w_old: Vec<f64>,
    w_new: Vec<f64>,
}

/// Discrete Duhamel sweeps for one generator.
struct Engine<'g> {
    gen: &'g TruncatedGenerator,
    modal: Option<ModalView<'g>>,
    weights: HashMap<u64, Arc<ModalWeights>>,
}

impl<'g> Engine<'g> {
    fn new(gen: &'g TruncatedGenerator) -> Self {
        Self { gen, modal: gen.modal(), weights: HashMap::new() }
    }

    fn modal_weights(&mut self, dt: f64) -> Arc<ModalWeights> {
        if self.weights.len() > 256 {
            self.weights.clear();
        }
        let modal = self.modal.as_ref().expect("dense generator");
        self.weights
            .entry(dt.to_bits())
            .or_insert_with(|| {
                let n = modal.eigenvalues.len();
                let mut w = ModalWeights { decay: vec![0.0; n], w_old: vec![0.0; n], w_new: vec![0.0; n] };
                for (k, l) in modal.eigenvalues.iter().enumerate() {
                    let (e, a, b) = step_weights(dt * l);
                    w.decay[k] = e;
                    w.w_old[k] = dt * a;
                    w.w_new[k] = dt * b;
                }
                Arc::new(w)
            })
            .clone()
    }

    /// Discrete `Ψ` at every node of `times` (relative, `times[0] = 0`)
    /// given the start state and `f(u)` at the nodes.
    fn sweep(&mut self, start: &[f64], times: &[f64], f_nodes: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(times.len());
        out.push(start.to_vec());
        if self.modal.is_some() {
            let (mut y, fh) = {
                let modal = self.modal.as_ref().unwrap();
                let fh: Option<Vec<Vec<f64>>> = f_nodes.map(|f| f.iter().map(|v| modal.to_modal(v)).collect());
                (modal.to_modal(start), fh)
            };
            for i in 1..times.len() {
                let w = self.modal_weights(times[i] - times[i - 1]);
                match &fh {
                    Some(fh) => {
                        for k in 0..y.len() {
                            y[k] = w.decay[k] * y[k] + w.w_old[k] * fh[i - 1][k] + w.w_new[k] * fh[i][k];
                        }
                    }
                    None => {
                        for k in 0..y.len() {
                            y[k] *= w.decay[k];
                        }
                    }
                }
                out.push(self.modal.as_ref().unwrap().from_modal(&y));
            }
        } else {
            let mut v = start.to_vec();
            for i in 1..times.len() {
                let dt = times[i] - times[i - 1];
                v = self.gen.apply_fn(&v, &|l| (-dt * l).exp());
                if let Some(f) = f_nodes {
                    let a = self.gen.apply_fn(&f[i - 1], &|l| dt * step_weights(dt * l).1);
                    let b = self.gen.apply_fn(&f[i], &|l| dt * step_weights(dt * l).2);
                    for ((x, p), q) in v.iter_mut().zip(a).zip(b) {
                        *x += p + q;
                    }
                }
                out.push(v.clone());
            }
        }
        out
    }
}

/// `f` with a linear extension above `cap`.
struct Clamp<'s> {
    src: &'s NonlinearSource,
    cap: f64,
    slope: Option<f64>,
    events: usize,
    max_arg: f64,
}

impl<'s> Clamp<'s> {
    fn new(src: &'s NonlinearSource, cap: f64) -> Self {
        Self { src, cap, slope: None, events: 0, max_arg: 0.0 }
    }

    fn eval(&mut self, s: f64) -> f64 {
        let s = s.max(0.0);
        if s <= self.cap {
            return self.src.eval(s);
        }
        self.events += 1;
        self.max_arg = self.max_arg.max(s);
        let (src, cap) = (self.src, self.cap);
        let slope = *self.slope.get_or_insert_with(|| {
            src.lipschitz(cap).unwrap_or_else(|_| (src.eval(cap) - src.eval(0.5 * cap)) / (0.5 * cap))
        });
        self.src.eval(self.cap) + slope * (s - self.cap)
    }

    fn eval_nodes(&mut self, states: &[Vec<f64>], times: &[f64]) -> Result<Vec<Vec<f64>>, SolveError> {
        let mut out = Vec::with_capacity(states.len());
        for (state, _t) in states.iter().zip(times) {
            let mut row = Vec::with_capacity(state.len());
            for &s in state {
                let v = self.eval(s);
                if !v.is_finite() {
                    return Err(SolveError::NonFiniteSource(s));
                }
                row.push(v);
            }
            out.push(row);
        }
        Ok(out)
    }
}

enum NormKind {
    Sup,
    /// `|u(x,t)| / (p(x,y₀,t+γ) e^{λ t})`, absolute times `t0 + times`.
    Weighted { y0: usize, gamma: f64, lambda1: f64 },
}

struct GridSolve {
    states: Vec<Vec<f64>>,
    iterations: usize,
    ratios: Vec<f64>,
    residual: f64,
}

fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
}

fn sup_all(a: &[Vec<f64>]) -> f64 {
    a.iter().flat_map(|x| x.iter().map(|v| v.abs())).fold(0.0, f64::max)
}

struct Problem<'p, 'g, 's> {
    eng: &'p mut Engine<'g>,
    clamp: &'p mut Clamp<'s>,
    cfg: &'p SolverConfig,
}

impl Problem<'_, '_, '_> {
    /// Picard iteration on a fixed grid, started from the linear part.
    fn picard(
        &mut self,
        start: &[f64],
        t0: f64,
        times: &[f64],
        norm: &NormKind,
        bound: Option<f64>,
    ) -> Result<GridSolve, SolveError> {
        let weights: Option<Vec<Vec<f64>>> = match norm {
            NormKind::Sup => None,
            NormKind::Weighted { y0, gamma, lambda1 } => Some(
                times
                    .iter()
                    .map(|t| {
                        let col = self.eng.gen.kernel_column(*y0, t0 + t + gamma)?;
                        let e = (lambda1 * (t0 + t)).exp();
                        Ok(col.iter().map(|p| if *p < UNDERFLOW_FLOOR { 0.0 } else { p * e }).collect())
                    })
                    .collect::<Result<_, SolveError>>()?,
            ),
        };
        let measure = |d: &[Vec<f64>], u: &[Vec<f64>]| -> f64 {
            match &weights {
                None => sup_diff(d, u),
                Some(w) => d
                    .iter()
                    .zip(u)
                    .zip(w)
                    .flat_map(|((a, b), w)| {
                        a.iter().zip(b).zip(w).filter(|(_, w)| **w > 0.0).map(|((p, q), w)| (p - q).abs() / w)
                    })
                    .fold(0.0, f64::max),
            }
        };
        let mut u = self.eng.sweep(start, times, None);
        let zero: Vec<Vec<f64>> = u.iter().map(|s| vec![0.0; s.len()]).collect();
        let mut ratios = Vec::new();
        let mut prev: Option<f64> = None;
        for k in 1..=self.cfg.max_iter {
            let f = self.clamp.eval_nodes(&u, times)?;
            let next = self.eng.sweep(start, times, Some(&f));
            if let Some(m) = bound {
                self.check_space(&next, t0, times, m)?;
            }
            let d_sup = sup_diff(&next, &u);
            let d = measure(&next, &u);
            let scale = measure(&next, &zero);
            if let Some(p) = prev {
                if p > 1e-10 * scale {
                    ratios.push(d / p);
                }
            }
            u = next;
            if d_sup <= self.cfg.picard_tol * sup_all(&u).max(f64::MIN_POSITIVE) {
                let f = self.clamp.eval_nodes(&u, times)?;
                let check = self.eng.sweep(start, times, Some(&f));
                let residual = sup_diff(&check, &u);
                return Ok(GridSolve { states: u, iterations: k, ratios, residual });
            }
            prev = Some(d);
        }
        let tail = ratios[ratios.len().saturating_sub(10)..].to_vec();
        Err(SolveError::NotConverged { iterations: self.cfg.max_iter, ratios: tail })
    }

    fn check_space(&self, states: &[Vec<f64>], t0: f64, times: &[f64], m: f64) -> Result<(), SolveError> {
        let hi = m * (1.0 + 1e-9) + 1e-300;
        let lo = -1e-12 * m;
        for (s, t) in states.iter().zip(times) {
            for (i, v) in s.iter().enumerate() {
                if *v > hi || *v < lo || !v.is_finite() {
                    return Err(SolveError::LeftSpace {
                        t: t0 + t,
                        vertex: self.eng.gen.ids()[i].clone(),
                        value: *v,
                        bound: m,
                    });
                }
            }
        }
        Ok(())
    }

    /// Solves on `base` (relative nodes) subdivided uniformly, doubling
    /// the subdivision until the Richardson estimate at the base nodes is
    /// below `quad_tol · ‖u‖_∞`. Returns states at the base nodes.
    fn refined(
        &mut self,
        start: &[f64],
        t0: f64,
        base: &[f64],
        norm: &NormKind,
        bound: Option<f64>,
    ) -> Result<(GridSolve, usize, f64), SolveError> {
        let lmax = self.eng.gen.lambda_max();
        let widest = base.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let mut k = ((widest * lmax / self.cfg.substep_stiffness).ceil() as usize).max(self.cfg.min_substeps);
        let fine = |k: usize| -> Vec<f64> {
            let mut t = vec![0.0];
            for w in base.windows(2) {
                for j in 1..=k {
                    t.push(if j == k { w[1] } else { w[0] + (w[1] - w[0]) * j as f64 / k as f64 });
                }
            }
            t
        };
        let at_base = |sol: GridSolve, k: usize| -> GridSolve {
            let states = sol.states.into_iter().step_by(k).collect();
            GridSolve { states, ..sol }
        };
        let mut coarse = at_base(self.picard(start, t0, &fine(k), norm, bound)?, k);
        let mut estimate = f64::INFINITY;
        for _ in 0..self.cfg.max_refinements {
            if (2 * k) * (base.len() - 1) > self.cfg.max_substeps {
                break;
            }
            k *= 2;
            let sol = at_base(self.picard(start, t0, &fine(k), norm, bound)?, k);
            estimate = sup_diff(&sol.states, &coarse.states) / 3.0;
            let tol = self.cfg.quad_tol * sup_all(&sol.states).max(f64::MIN_POSITIVE);
            if estimate <= tol {
                return Ok((sol, k, estimate));
            }
            coarse = sol;
        }
        Err(SolveError::QuadratureNotConverged {
            estimate,
            tolerance: self.cfg.quad_tol * sup_all(&coarse.states),
            substeps: k,
        })
    }
}

fn check_grid(t_grid: &[f64]) -> Result<(), SolveError> {
    if t_grid.len() < 2 || t_grid[0] != 0.0 || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SolveError::InvalidInput("time grid must start at 0 and be strictly increasing".into()));
    }
    Ok(())
}

fn check_datum(gen: &TruncatedGenerator, u0: &VertexFunction) -> Result<(), SolveError> {
    if u0.len() != gen.len() {
        return Err(SpectralError::LengthMismatch { expected: gen.len(), got: u0.len() }.into());
    }
    if !u0.is_nonnegative() || u0.0.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::InvalidInput("datum must be finite and nonnegative".into()));
    }
    Ok(())
}

/// One application of the discrete Duhamel map on the path's own grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiImage {
    pub path: SolutionPath,
    /// Richardson estimate against every other node, when the grid has an
    /// odd number of nodes.
    pub quad_estimate: Option<f64>,
    pub clamp_events: usize,
}

pub fn psi_apply(
    gen: &TruncatedGenerator,
    src: &NonlinearSource,
    u0: &VertexFunction,
    u_path: &SolutionPath,
    cfg: &SolverConfig,
    clamp_cap: Option<f64>,
) -> Result<PsiImage, SolveError> {
    check_grid(&u_path.times)?;
    check_datum(gen, u0)?;
    let lmax = gen.lambda_max();
    for w in u_path.times.windows(2) {
        let dt = w[1] - w[0];
        if lmax * dt > cfg.stiffness_limit {
            return Err(SolveError::TooStiff {
                dt,
                lambda_max: lmax,
                threshold: cfg.stiffness_limit,
                suggested_substeps: (lmax * dt / cfg.substep_stiffness).ceil() as usize,
            });
        }
    }
    let states: Vec<Vec<f64>> = u_path.states.iter().map(|s| s.0.clone()).collect();
    let mut eng = Engine::new(gen);
    let mut clamp = Clamp::new(src, clamp_cap.unwrap_or(f64::INFINITY));
    let f = clamp.eval_nodes(&states, &u_path.times)?;
    let out = eng.sweep(&u0.0, &u_path.times, Some(&f));
    let quad_estimate = if u_path.times.len() >= 3 && u_path.times.len() % 2 == 1 {
        let times: Vec<f64> = u_path.times.iter().step_by(2).copied().collect();
        let fc: Vec<Vec<f64>> = f.iter().step_by(2).cloned().collect();
        let coarse = eng.sweep(&u0.0, &times, Some(&fc));
        let fine: Vec<Vec<f64>> = out.iter().step_by(2).cloned().collect();
        Some(sup_diff(&fine, &coarse) / 3.0)
    } else {
        None
    };
    let path = SolutionPath::new(
        u_path.times.clone(),
        out.into_iter().map(VertexFunction).collect(),
        vec![1],
    );
    Ok(PsiImage { path, quad_estimate, clamp_events: clamp.events })
}

/// Chained ball-mode segments on one truncation.
pub struct BallStepper<'g> {
    gen: &'g TruncatedGenerator,
    src: &'g NonlinearSource,
    cfg: SolverConfig,
    fixed_segment: Option<f64>,
    eng: Engine<'g>,
    pub t: f64,
    pub state: VertexFunction,
    pub segments: Vec<SegmentReport>,
    pub clamp_events: usize,
    pub clamp_max_arg: f64,
}

impl<'g> BallStepper<'g> {
    pub fn new(
        gen: &'g TruncatedGenerator,
        src: &'g NonlinearSource,
        u0: &VertexFunction,
        cfg: SolverConfig,
        fixed_segment: Option<f64>,
    ) -> Result<Self, SolveError> {
        check_datum(gen, u0)?;
        if let Some(t) = fixed_segment {
            if !(t > 0.0) {
                return Err(SolveError::InvalidInput(format!("segment length must be positive, got {t}")));
            }
        }
        Ok(Self {
            gen,
            src,
            cfg,
            fixed_segment,
            eng: Engine::new(gen),
            t: 0.0,
            state: u0.clone(),
            segments: Vec::new(),
            clamp_events: 0,
            clamp_max_arg: 0.0,
        })
    }

    /// Advances one segment, stopping at `t_max` at the latest.
    pub fn step(&mut self, t_max: f64) -> Result<&SegmentReport, SolveError> {
        if self.segments.len() >= self.cfg.max_segments {
            return Err(SolveError::InvalidInput(format!("more than {} segments", self.cfg.max_segments)));
        }
        let remaining = t_max - self.t;
        if !(remaining > 0.0) {
            return Err(SolveError::InvalidInput("step target is not ahead of the current time".into()));
        }
        let eps = self.state.sup_norm();
        if eps == 0.0 && self.src.eval(0.0) == 0.0 {
            self.segments.push(SegmentReport {
                t0: self.t,
                t1: t_max,
                epsilon: 0.0,
                m: 0.0,
                lipschitz: 0.0,
                substeps: 0,
                iterations: 1,
                ratios: Vec::new(),
                quad_estimate: 0.0,
                residual: 0.0,
                space_hypothesis: true,
            });
            self.t = t_max;
            return Ok(self.segments.last().unwrap());
        }
        let m = if eps > 0.0 { 2.0 * eps } else { 1.0 };
        let l = self.src.lipschitz(m)?;
        let natural = match self.fixed_segment {
            Some(t) => t,
            None if l > 0.0 => self.cfg.segment_fraction / l,
            None => f64::INFINITY,
        };
        let len = natural.min(self.cfg.max_segment);
        let (len, t1) = if len >= remaining { (remaining, t_max) } else { (len, self.t + len) };
        let mut clamp = Clamp::new(self.src, self.cfg.clamp_factor * m);
        let cfg = self.cfg;
        let mut problem = Problem { eng: &mut self.eng, clamp: &mut clamp, cfg: &cfg };
        let (sol, k, estimate) = problem.refined(&self.state.0, self.t, &[0.0, len], &NormKind::Sup, Some(m))?;
        let report = SegmentReport {
            t0: self.t,
            t1,
            epsilon: eps,
            m,
            lipschitz: l,
            substeps: k,
            iterations: sol.iterations,
            ratios: sol.ratios,
            quad_estimate: estimate,
            residual: sol.residual,
            space_hypothesis: eps <= (1.0 - l * len) * m,
        };
        self.clamp_events += clamp.events;
        self.clamp_max_arg = self.clamp_max_arg.max(clamp.max_arg);
        self.state = VertexFunction(sol.states.into_iter().last().unwrap());
        self.t = t1;
        self.segments.push(report);
        Ok(self.segments.last().unwrap())
    }

    pub fn generator(&self) -> &TruncatedGenerator {
        self.gen
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PicardMode {
    GlobalWeighted { params: MildSpaceParams, lambda1: f64, delta: f64 },
    /// Fixed segment length, or `segment_fraction / L` per segment.
    BallSup { segment: Option<f64> },
}

/// Picard iteration of the Duhamel map, returning states at `t_grid`.
pub fn picard_solve(
    gen: &TruncatedGenerator,
    src: &NonlinearSource,
    u0: &VertexFunction,
    t_grid: &[f64],
    mode: &PicardMode,
    cfg: &SolverConfig,
) -> Result<(SolutionPath, SolveDiagnostics), SolveError> {
    check_grid(t_grid)?;
    check_datum(gen, u0)?;
    match mode {
        PicardMode::BallSup { segment } => ball_solve(gen, src, u0, t_grid, *segment, cfg, Vec::new()),
        PicardMode::GlobalWeighted { params, lambda1, delta } => {
            let adm = check_admissibility(gen, src, u0, params, *lambda1, *delta, t_grid)?;
            let mut warnings = Vec::new();
            if adm.epsilon_min.is_none() {
                warnings.push("weighted mode inadmissible: datum positive where the kernel underflows; using ball mode".into());
                log::warn!("{}", warnings[0]);
                let (path, mut diag) = ball_solve(gen, src, u0, t_grid, None, cfg, warnings)?;
                diag.admissibility = Some(adm);
                return Ok((path, diag));
            }
            if !adm.admissible {
                let msg = format!(
                    "weighted-space hypotheses not met (L<λ₁: {}, datum: {}, amplitude: {}); iterating anyway",
                    adm.contraction, adm.datum_ok, adm.amplitude_ok
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            let mut eng = Engine::new(gen);
            let mut clamp = Clamp::new(src, cfg.clamp_factor * delta);
            let norm = NormKind::Weighted { y0: params.y0, gamma: params.gamma, lambda1: *lambda1 };
            let mut problem = Problem { eng: &mut eng, clamp: &mut clamp, cfg };
            let (sol, k, estimate) = problem.refined(&u0.0, 0.0, t_grid, &norm, None)?;
            let ratio_bound = adm.lipschitz / lambda1;
            let mut diag = SolveDiagnostics::new(ModeUsed::GlobalWeighted);
            diag.ratio_bound = ratio_bound;
            diag.max_ratio = sol.ratios.iter().copied().fold(0.0, f64::max);
            diag.ratio_violations = sol.ratios.iter().filter(|r| **r > ratio_bound + cfg.ratio_margin).count();
            diag.residual = sol.residual;
            diag.quad_estimate = estimate;
            diag.clamp_events = clamp.events;
            diag.clamp_max_arg = clamp.max_arg;
            diag.segments.push(SegmentReport {
                t0: 0.0,
                t1: *t_grid.last().unwrap(),
                epsilon: params.epsilon,
                m: params.m,
                lipschitz: adm.lipschitz,
                substeps: k,
                iterations: sol.iterations,
                ratios: sol.ratios,
                quad_estimate: estimate,
                residual: sol.residual,
                space_hypothesis: adm.datum_ok,
            });
            diag.admissibility = Some(adm);
            diag.warnings = warnings;
            let iterations = vec![sol.iterations];
            let path = SolutionPath::new(t_grid.to_vec(), sol.states.into_iter().map(VertexFunction).collect(), iterations);
            Ok((path, diag))
        }
    }
}

fn ball_solve(
    gen: &TruncatedGenerator,
    src: &NonlinearSource,
    u0: &VertexFunction,
    t_grid: &[f64],
    segment: Option<f64>,
    cfg: &SolverConfig,
    warnings: Vec<String>,
) -> Result<(SolutionPath, SolveDiagnostics), SolveError> {
    let mut stepper = BallStepper::new(gen, src, u0, *cfg, segment)?;
    let mut states = vec![u0.clone()];
    for &t in &t_grid[1..] {
        while stepper.t < t {
            stepper.step(t)?;
        }
        states.push(stepper.state.clone());
    }
    let mut diag = SolveDiagnostics::new(ModeUsed::BallSup);
    for s in &stepper.segments {
        let bound = s.lipschitz * (s.t1 - s.t0);
        diag.ratio_bound = diag.ratio_bound.max(bound);
        diag.ratio_violations += s.ratios.iter().filter(|r| **r > bound + cfg.ratio_margin).count();
        diag.max_ratio = s.ratios.iter().copied().fold(diag.max_ratio, f64::max);
        diag.residual = diag.residual.max(s.residual);
        diag.quad_estimate = diag.quad_estimate.max(s.quad_estimate);
    }
    diag.clamp_events = stepper.clamp_events;
    diag.clamp_max_arg = stepper.clamp_max_arg;
    diag.warnings = warnings;
    let iterations = stepper.segments.iter().map(|s| s.iterations).collect();
    diag.segments = stepper.segments;
    Ok((SolutionPath::new(t_grid.to_vec(), states, iterations), diag))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedNorm {
    pub value: f64,
    /// `(t, vertex)` points skipped because the kernel underflowed.
    pub excluded: Vec<(f64, String)>,
}

/// `sup |u(x,t)| / (p(x,y₀,t+γ) e^{λ₁ t})` over the path's grid.
pub fn weighted_norm(
    path: &SolutionPath,
    gen: &TruncatedGenerator,
    params: &MildSpaceParams,
    lambda1: f64,
) -> Result<WeightedNorm, SolveError> {
    let mut value = 0.0_f64;
    let mut excluded = Vec::new();
    for (t, s) in path.times.iter().zip(&path.states) {
        if s.len() != gen.len() {
            return Err(SpectralError::LengthMismatch { expected: gen.len(), got: s.len() }.into());
        }
        let col = gen.kernel_column(params.y0, t + params.gamma)?;
        let e = (lambda1 * t).exp();
        for (i, (u, p)) in s.0.iter().zip(col.iter()).enumerate() {
            if *p < UNDERFLOW_FLOOR {
                if *u != 0.0 {
                    excluded.push((*t, gen.ids()[i].clone()));
                }
                continue;
            }
            value = value.max(u.abs() / (p * e));
        }
    }
    Ok(WeightedNorm { value, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_graph, GraphBuilder, GraphFamily};
    use crate::spectral::{dirichlet_generator, EigenOptions};

    fn complete2() -> TruncatedGenerator {
        let g = generate_graph(&GraphFamily::Complete { n: 2 }).unwrap();
        dirichlet_generator(&g, &g.whole()).unwrap()
    }

    fn square() -> NonlinearSource {
        NonlinearSource::self_minorant(ScalarFn::Power { coef: 1.0, p: 2.0 })
    }

    fn uniform(t: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| t * i as f64 / n as f64).collect()
    }

    fn tree_ball(depth: usize, r: usize) -> TruncatedGenerator {
        let g = generate_graph(&GraphFamily::RegularTree { degree: 3, depth }).unwrap();
        dirichlet_generator(&g, &g.ball(0, r)).unwrap()
    }

    #[test]
    fn step_weights_series_matches_closed_form() {
        for z in [0.099, 0.1001] {
            let (e, a, b) = step_weights(z);
            let phi1 = -(-z).exp_m1() / z;
            let g2 = (1.0 - e - z * e) / (z * z);
            assert!((a - g2).abs() < 1e-12 && (a + b - phi1).abs() < 1e-12);
        }
        let (e, a, b) = step_weights(0.0);
        assert_eq!((e, a, b), (1.0, 0.5, 0.5));
    }

    #[test]
    fn zero_source_gives_linear_flow() {
        let gen = tree_ball(4, 3);
        let u0 = VertexFunction((0..gen.len()).map(|i| 1.0 / (1.0 + i as f64)).collect());
        let times = uniform(2.0, 8);
        let (path, diag) = picard_solve(
            &gen,
            &NonlinearSource::zero(),
            &u0,
            &times,
            &PicardMode::BallSup { segment: None },
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(diag.segments.iter().all(|s| s.iterations == 1));
        for (t, s) in times.iter().zip(&path.states) {
            let lin = gen.semigroup_apply(&u0, *t).unwrap();
            assert!(s.max_abs_diff(&lin) < 1e-12);
        }
        // any path, f ≡ 0
        let junk = SolutionPath::new(times.clone(), path.states.iter().map(|s| s.scaled(7.0)).collect(), vec![1]);
        let img = psi_apply(&gen, &NonlinearSource::zero(), &u0, &junk, &SolverConfig::default(), None).unwrap();
        assert!(img.path.final_state().max_abs_diff(path.final_state()) < 1e-12);
    }

    #[test]
    fn psi_matches_scalar_picard_iterate() {
        let gen = complete2();
        let c = 0.3;
        let times = uniform(1.0, 400);
        let v: Vec<VertexFunction> = times.iter().map(|t| VertexFunction::constant(2, c + c * c * t)).collect();
        let path = SolutionPath::new(times.clone(), v, vec![1]);
        let img = psi_apply(&gen, &square(), &VertexFunction::constant(2, c), &path, &SolverConfig::default(), None)
            .unwrap();
        for (t, s) in times.iter().zip(&img.path.states) {
            // c + ∫_0^t (c + c²s)² ds
            let exact = c + c * c * t + c * c * c * t * t + c.powi(4) * t.powi(3) / 3.0;
            assert!((s[0] - exact).abs() < 1e-6 && (s[1] - exact).abs() < 1e-6);
        }
        assert!(img.quad_estimate.unwrap() < 1e-6);
    }

    #[test]
    fn psi_refuses_stiff_grid() {
        let gen = complete2();
        let path = SolutionPath::new(vec![0.0, 5.0], vec![VertexFunction::zeros(2); 2], vec![1]);
        let err = psi_apply(&gen, &square(), &VertexFunction::zeros(2), &path, &SolverConfig::default(), None);
        assert!(matches!(err, Err(SolveError::TooStiff { suggested_substeps: 20, .. })), "{err:?}");
    }

    #[test]
    fn ball_mode_reproduces_scalar_ode() {
        let gen = complete2();
        let times = uniform(1.0, 4);
        let cfg = SolverConfig::default();
        let (path, diag) = picard_solve(
            &gen,
            &square(),
            &VertexFunction::constant(2, 0.1),
            &times,
            &PicardMode::BallSup { segment: None },
            &cfg,
        )
        .unwrap();
        for (t, s) in times.iter().zip(&path.states) {
            let exact = 0.1 / (1.0 - 0.1 * t);
            assert!((s[0] - exact).abs() < 1e-8, "{} vs {exact}", s[0]);
            assert!((s[0] - s[1]).abs() < 1e-12);
        }
        assert!(diag.max_ratio <= diag.ratio_bound + cfg.ratio_margin);
        assert!(diag.residual <= 10.0 * cfg.picard_tol * path.sup_norm());
    }

    #[test]
    fn weighted_mode_contracts_at_linear_rate() {
        let gen = tree_ball(5, 4);
        let lambda = gen.principal_eigenpair(&EigenOptions::default()).unwrap();
        let kappa = lambda.lambda / 2.0;
        let src = NonlinearSource::new(ScalarFn::Linear { a: kappa });
        let u0 = lambda.vector.scaled(0.01);
        let params = MildSpaceParams::fit(&gen, &src, &u0, lambda.lambda, 1.0, DEFAULT_GAMMA).unwrap();
        let times = uniform(10.0 / lambda.lambda, 10);
        let mode = PicardMode::GlobalWeighted { params, lambda1: lambda.lambda, delta: 1.0 };
        let (path, diag) = picard_solve(&gen, &src, &u0, &times, &mode, &SolverConfig::default()).unwrap();
        assert!(diag.max_ratio <= 0.55, "{diag:?}");
        assert_eq!(diag.ratio_violations, 0);
        // φ is an eigenfunction: u = e^{−(λ−κ)t} u0
        for (t, s) in times.iter().zip(&path.states) {
            let exact = u0.scaled((-(lambda.lambda - kappa) * t).exp());
            assert!(s.max_abs_diff(&exact) < 1e-8 * u0.sup_norm());
        }
        assert!(diag.admissibility.unwrap().contraction);
    }

    #[test]
    fn weighted_norm_examples() {
        let gen = tree_ball(4, 3);
        let params = MildSpaceParams { m: 1.0, gamma: 1.0, y0: 0, epsilon: 0.5 };
        let lambda = 0.3;
        let times = uniform(2.0, 4);
        let zero = SolutionPath::new(times.clone(), vec![VertexFunction::zeros(gen.len()); 5], vec![1]);
        assert_eq!(weighted_norm(&zero, &gen, &params, lambda).unwrap().value, 0.0);
        let states: Vec<VertexFunction> = times
            .iter()
            .map(|t| {
                let col = gen.kernel_column(0, t + 1.0).unwrap();
                VertexFunction(col.iter().map(|p| 2.5 * p * (lambda * t).exp()).collect())
            })
            .collect();
        let path = SolutionPath::new(times.clone(), states.clone(), vec![1]);
        let n = weighted_norm(&path, &gen, &params, lambda).unwrap().value;
        assert!((n - 2.5).abs() < 1e-12);
        let half = SolutionPath::new(times, states.iter().map(|s| s.scaled(0.5)).collect(), vec![1]);
        let h = weighted_norm(&half, &gen, &params, lambda).unwrap().value;
        assert!((h - n / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ball_mode_reports_escape() {
        // a source pushing the solution past M within one fixed segment
        let g = GraphBuilder::new().node("a", 1.0).node("b", 1.0).edge("a", "b", 1.0).build().unwrap();
        let gen = dirichlet_generator(&g, &g.whole()).unwrap();
        let src = NonlinearSource::new(ScalarFn::Linear { a: 5.0 });
        let err = picard_solve(
            &gen,
            &src,
            &VertexFunction::constant(2, 1.0),
            &[0.0, 1.0],
            &PicardMode::BallSup { segment: Some(1.0) },
            &SolverConfig::default(),
        );
        assert!(matches!(err, Err(SolveError::LeftSpace { .. })), "{err:?}");
    }

    #[test]
    fn anchor_ties_break_by_index() {
        let u = VertexFunction(vec![0.0, 2.0, 1.0, 2.0]);
        assert_eq!(anchor_vertex(&u), Some(1));
        assert_eq!(anchor_vertex(&VertexFunction::zeros(3)), None);
    }
}
