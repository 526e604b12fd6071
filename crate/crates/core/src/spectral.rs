//! Dirichlet truncations of `−Δ`, the heat semigroup they generate, heat
//! kernel entries and bottom-of-spectrum estimates.
//!
//! For a ball `B` the generator `A` acts on functions vanishing outside `B`:
//!
//! ```text
//! (A u)(x) = (1/μ(x)) Σ_{y∈G} (u(x) − u(y)) ω(x,y),   x ∈ B,  u = 0 off B.
//! ```
//!
//! `A` is self-adjoint in `ℓ²(B, μ)`, so all computations go through the
//! symmetric matrix `S = M^{1/2} A M^{-1/2}`. Small balls are diagonalized
//! densely once; large balls use a Lanczos approximation of `g(S) v`.
//! The kernel is `p_R(x,y,t) = [e^{−tS}]_{xy} / sqrt(μ(x) μ(y))`.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Ball, GraphError, VertexFunction, WeightedGraph};

/// Kernel values below this are treated as underflow.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("vertex `{0}` is not in the ball")]
    NotInBall(String),
    #[error("empty ball")]
    EmptyBall,
    #[error("function has {got} values, ball has {expected} vertices")]
    LengthMismatch { expected: usize, got: usize },
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("radii must be nonempty and strictly increasing")]
    BadRadii,
    #[error("time grid must be strictly increasing with at least {min} points")]
    BadGrid { min: usize },
    #[error("kernel underflow left only {0} usable points")]
    Underflow(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOptions {
    /// Balls up to this size are diagonalized densely.
    pub dense_limit: usize,
    /// Relative tolerance of one Krylov action.
    pub krylov_tol: f64,
    pub krylov_max_dim: usize,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        Self { dense_limit: 400, krylov_tol: 1e-10, krylov_max_dim: 120 }
    }
}

#[derive(Debug, Clone)]
struct SparseSym {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSym {
    fn mul(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(j, a)| a * v[j]).sum()).collect()
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.rows.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, a) in r {
                m[(i, j)] = a;
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
enum Propagator {
    Dense { evals: Vec<f64>, evecs: DMatrix<f64> },
    Krylov,
}

/// Eigen-coordinates of a densely diagonalized generator.
pub struct ModalView<'a> {
    pub eigenvalues: &'a [f64],
    pub eigenvectors: &'a DMatrix<f64>,
    pub sqrt_mu: &'a [f64],
}

impl ModalView<'_> {
    /// `Qᵀ M^{1/2} u`.
    pub fn to_modal(&self, u: &[f64]) -> Vec<f64> {
        let w = DVector::from_iterator(u.len(), u.iter().zip(self.sqrt_mu).map(|(a, s)| a * s));
        (self.eigenvectors.tr_mul(&w)).iter().copied().collect()
    }

    /// `M^{-1/2} Q c`.
    pub fn from_modal(&self, c: &[f64]) -> Vec<f64> {
        let c = DVector::from_column_slice(c);
        let w = self.eigenvectors * c;
        w.iter().zip(self.sqrt_mu).map(|(a, s)| a / s).collect()
    }
}

/// `−Δ` restricted to a ball with homogeneous Dirichlet condition outside.
pub struct TruncatedGenerator {
    ball: Ball,
    ids: Vec<String>,
    mu: Vec<f64>,
    sqrt_mu: Vec<f64>,
    /// Rows of `A` in ball-local indices.
    a_rows: Vec<Vec<(usize, f64)>>,
    sym: SparseSym,
    has_boundary: bool,
    opts: GeneratorOptions,
    propagator: OnceLock<Propagator>,
    columns: RwLock<HashMap<(usize, u64), Arc<Vec<f64>>>>,
}

impl std::fmt::Debug for TruncatedGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TruncatedGenerator")
            .field("size", &self.len())
            .field("radius", &self.ball.radius)
            .field("has_boundary", &self.has_boundary)
            .finish()
    }
}

const COLUMN_CACHE_LIMIT: usize = 50_000;

pub fn dirichlet_generator(g: &WeightedGraph, ball: &Ball) -> Result<TruncatedGenerator, SpectralError> {
    TruncatedGenerator::with_options(g, ball, GeneratorOptions::default())
}

impl TruncatedGenerator {
    pub fn with_options(g: &WeightedGraph, ball: &Ball, opts: GeneratorOptions) -> Result<Self, SpectralError> {
        if ball.is_empty() {
            return Err(SpectralError::EmptyBall);
        }
        let mu: Vec<f64> = ball.members.iter().map(|&i| g.mu()[i]).collect();
        let sqrt_mu: Vec<f64> = mu.iter().map(|m| m.sqrt()).collect();
        let mut has_boundary = false;
        let mut a_rows = Vec::with_capacity(ball.len());
        let mut s_rows = Vec::with_capacity(ball.len());
        for (p, &x) in ball.members.iter().enumerate() {
            let mut diag = 0.0;
            let mut row = Vec::new();
            let mut srow = Vec::new();
            for &(y, w) in g.neighbors(x) {
                if y == x {
                    continue;
                }
                diag += w;
                match ball.position(y) {
                    Some(q) => {
                        row.push((q, -w / mu[p]));
                        srow.push((q, -w / (sqrt_mu[p] * sqrt_mu[q])));
                    }
                    None => has_boundary = true,
                }
            }
            row.push((p, diag / mu[p]));
            srow.push((p, diag / mu[p]));
            row.sort_by_key(|e| e.0);
            srow.sort_by_key(|e| e.0);
            a_rows.push(row);
            s_rows.push(srow);
        }
        Ok(Self {
            ids: ball.members.iter().map(|&i| g.id(i).to_string()).collect(),
            ball: ball.clone(),
            mu,
            sqrt_mu,
            a_rows,
            sym: SparseSym { rows: s_rows },
            has_boundary,
            opts,
            propagator: OnceLock::new(),
            columns: RwLock::new(HashMap::new()),
        })
    }

    pub fn ball(&self) -> &Ball {
        &self.ball
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// True when some edge leaves the ball, i.e. mass can be lost.
    pub fn has_boundary(&self) -> bool {
        self.has_boundary
    }

    /// Ball-local position of a global vertex index.
    pub fn local(&self, x: usize) -> Option<usize> {
        self.ball.position(x)
    }

    pub fn local_of_id(&self, id: &str) -> Result<usize, SpectralError> {
        // ball members are sorted by index, hence by identifier
        self.ids
            .binary_search_by(|probe| probe.as_str().cmp(id))
            .ok()
            .ok_or_else(|| SpectralError::NotInBall(id.to_string()))
    }

    /// Dense matrix of `A` (ball-local indices).
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, r) in self.a_rows.iter().enumerate() {
            for &(j, a) in r {
                m[(i, j)] = a;
            }
        }
        m
    }

    /// Dense matrix of `S = M^{1/2} A M^{-1/2}`.
    pub fn symmetrized(&self) -> DMatrix<f64> {
        self.sym.to_dense()
    }

    /// `A u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.a_rows.iter().map(|r| r.iter().map(|&(j, a)| a * u[j]).sum()).collect()
    }

    /// Gershgorin upper bound on the spectrum of `A`.
    pub fn spectral_radius_bound(&self) -> f64 {
        self.sym.rows.iter().map(|r| r.iter().map(|(_, a)| a.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    fn propagator(&self) -> &Propagator {
        self.propagator.get_or_init(|| {
            if self.len() <= self.opts.dense_limit {
                let eig = SymmetricEigen::new(self.sym.to_dense());
                Propagator::Dense { evals: eig.eigenvalues.iter().copied().collect(), evecs: eig.eigenvectors }
            } else {
                Propagator::Krylov
            }
        })
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.propagator(), Propagator::Dense { .. })
    }

    /// Eigen-coordinates, when the generator was diagonalized densely.
    pub fn modal(&self) -> Option<ModalView<'_>> {
        match self.propagator() {
            Propagator::Dense { evals, evecs } => {
                Some(ModalView { eigenvalues: evals, eigenvectors: evecs, sqrt_mu: &self.sqrt_mu })
            }
            Propagator::Krylov => None,
        }
    }

    /// Largest eigenvalue of `A`: exact for dense generators, a Gershgorin
    /// bound otherwise.
    pub fn lambda_max(&self) -> f64 {
        match self.propagator() {
            Propagator::Dense { evals, .. } => evals.iter().copied().fold(0.0, f64::max),
            Propagator::Krylov => self.spectral_radius_bound(),
        }
    }

    /// `g(A) u` for a scalar function `g` of the eigenvalue.
    pub fn apply_fn(&self, u: &[f64], g: &dyn Fn(f64) -> f64) -> Vec<f64> {
        let w: Vec<f64> = u.iter().zip(&self.sqrt_mu).map(|(a, s)| a * s).collect();
        let out = match self.propagator() {
            Propagator::Dense { evals, evecs } => {
                let wv = DVector::from_vec(w);
                let mut c = evecs.tr_mul(&wv);
                for (ck, lk) in c.iter_mut().zip(evals) {
                    *ck *= g(*lk);
                }
                (evecs * c).iter().copied().collect()
            }
            Propagator::Krylov => lanczos_apply(&self.sym, &w, g, self.opts.krylov_tol, self.opts.krylov_max_dim),
        };
        out.iter().zip(&self.sqrt_mu).map(|(a, s)| a / s).collect()
    }

    fn exp_apply_raw(&self, u: &[f64], t: f64) -> Vec<f64> {
        if t == 0.0 {
            return u.to_vec();
        }
        match self.propagator() {
            Propagator::Dense { .. } => self.apply_fn(u, &|l| (-t * l).exp()),
            Propagator::Krylov => {
                // keep each Lanczos action well resolved
                let chunks = ((t * self.spectral_radius_bound()) / 10.0).ceil().max(1.0) as usize;
                let dt = t / chunks as f64;
                let mut v = u.to_vec();
                for _ in 0..chunks {
                    v = self.apply_fn(&v, &|l| (-dt * l).exp());
                }
                v
            }
        }
    }

    /// `e^{−tA} u0`, the Dirichlet heat flow on the ball.
    pub fn semigroup_apply(&self, u0: &VertexFunction, t: f64) -> Result<VertexFunction, SpectralError> {
        if !(t >= 0.0) {
            return Err(SpectralError::NegativeTime(t));
        }
        self.check_len(u0)?;
        Ok(VertexFunction(self.exp_apply_raw(&u0.0, t)))
    }

    fn check_len(&self, u: &VertexFunction) -> Result<(), SpectralError> {
        if u.len() != self.len() {
            return Err(SpectralError::LengthMismatch { expected: self.len(), got: u.len() });
        }
        Ok(())
    }

    /// Column `x ↦ p_R(x, y, t)` for ball-local `y`, cached per `(y, t)`.
    pub fn kernel_column(&self, y: usize, t: f64) -> Result<Arc<Vec<f64>>, SpectralError> {
        if !(t > 0.0) {
            return Err(SpectralError::NonPositiveTime(t));
        }
        let key = (y, t.to_bits());
        if let Some(c) = self.columns.read().unwrap().get(&key) {
            return Ok(c.clone());
        }
        let col = Arc::new(self.compute_column(y, t));
        let mut cache = self.columns.write().unwrap();
        if cache.len() >= COLUMN_CACHE_LIMIT {
            cache.clear();
        }
        Ok(cache.entry(key).or_insert(col).clone())
    }

    fn compute_column(&self, y: usize, t: f64) -> Vec<f64> {
        match self.propagator() {
            Propagator::Dense { evals, evecs } => {
                let scale = 1.0 / self.sqrt_mu[y];
                (0..self.len())
                    .map(|x| {
                        let s: f64 = (0..evals.len())
                            .map(|k| evecs[(x, k)] * evecs[(y, k)] * (-t * evals[k]).exp())
                            .sum();
                        s * scale / self.sqrt_mu[x]
                    })
                    .collect()
            }
            Propagator::Krylov => {
                let mut delta = vec![0.0; self.len()];
                delta[y] = 1.0 / self.mu[y];
                self.exp_apply_raw(&delta, t)
            }
        }
    }

    /// `p_R(x, y, t)` for global vertex indices.
    pub fn kernel_entry(&self, x: usize, y: usize, t: f64) -> Result<KernelEntry, SpectralError> {
        let lx = self.local(x).ok_or_else(|| SpectralError::NotInBall(x.to_string()))?;
        let ly = self.local(y).ok_or_else(|| SpectralError::NotInBall(y.to_string()))?;
        let value = self.kernel_column(ly, t)?[lx];
        Ok(KernelEntry { x: self.ids[lx].clone(), y: self.ids[ly].clone(), t, value })
    }

    /// `p_R(x, y, t)` for ball-local indices.
    pub fn kernel_local(&self, x: usize, y: usize, t: f64) -> Result<f64, SpectralError> {
        Ok(self.kernel_column(y, t)?[x])
    }

    /// `1 − Σ_y p_R(x,y,t) μ(y)` for ball-local `x`.
    pub fn mass_defect(&self, x: usize, t: f64) -> Result<f64, SpectralError> {
        if !(t > 0.0) {
            return Err(SpectralError::NonPositiveTime(t));
        }
        let col = self.kernel_column(x, t)?;
        // symmetry: Σ_y p(x,y,t) μ(y) = Σ_y p(y,x,t) μ(y)
        let mass: f64 = col.iter().zip(&self.mu).map(|(p, m)| p * m).sum();
        Ok((1.0 - mass).clamp(0.0, 1.0))
    }

    /// Smallest eigenvalue of `A` by shifted inverse iteration on `S`,
    /// seeded with the positive constant vector.
    pub fn principal_eigenpair(&self, opts: &EigenOptions) -> Result<Eigenpair, SpectralError> {
        let first = inverse_iteration(&self.sym, vec![1.0; self.len()], opts);
        let pair = match first {
            Ok(p) => p,
            Err(SpectralError::NotConverged { .. }) => {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                let seed: Vec<f64> = (0..self.len()).map(|_| rng.random_range(0.5..1.5)).collect();
                let retry = EigenOptions { max_iter: opts.max_iter * 2, ..*opts };
                inverse_iteration(&self.sym, seed, &retry)?
            }
            Err(e) => return Err(e),
        };
        let (lambda, v, residual, iterations) = pair;
        // back to original coordinates, signless and sup-normalized
        let mut phi: Vec<f64> = v.iter().zip(&self.sqrt_mu).map(|(a, s)| a / s).collect();
        let sign = if phi.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        let sup = phi.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
        for p in &mut phi {
            *p *= sign / sup;
        }
        Ok(Eigenpair { lambda, vector: VertexFunction(phi), residual, iterations })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEntry {
    pub x: String,
    pub y: String,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 20_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenpair {
    pub lambda: f64,
    /// Principal eigenfunction, positive, `sup = 1`.
    pub vector: VertexFunction,
    pub residual: f64,
    pub iterations: usize,
}

enum ShiftedSolver {
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Cg { shift: f64 },
}

const DENSE_FACTOR_LIMIT: usize = 3000;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conjugate_gradient(s: &SparseSym, shift: f64, b: &[f64], tol: f64) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = (tol * norm(b)).powi(2);
    for _ in 0..10 * n.max(10) {
        if rr <= target {
            break;
        }
        let mut ap = s.mul(&p);
        for (a, pi) in ap.iter_mut().zip(&p) {
            *a += shift * pi;
        }
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    x
}

/// Returns `(λ, unit eigenvector of S, residual, iterations)`.
fn inverse_iteration(
    s: &SparseSym,
    seed: Vec<f64>,
    opts: &EigenOptions,
) -> Result<(f64, Vec<f64>, f64, usize), SpectralError> {
    let n = seed.len();
    let scale = s.rows.iter().map(|r| r.iter().map(|(_, a)| a.abs()).sum::<f64>()).fold(0.0, f64::max);
    let shift = 1e-3 * scale.max(f64::MIN_POSITIVE);
    let solver = if n <= DENSE_FACTOR_LIMIT {
        let mut m = s.to_dense();
        for i in 0..n {
            m[(i, i)] += shift;
        }
        match m.cholesky() {
            Some(c) => ShiftedSolver::Dense(c),
            None => ShiftedSolver::Cg { shift },
        }
    } else {
        ShiftedSolver::Cg { shift }
    };
    let mut v = seed;
    let nv = norm(&v);
    v.iter_mut().for_each(|a| *a /= nv);
    let mut residual = f64::INFINITY;
    let mut rho = 0.0;
    for it in 1..=opts.max_iter {
        let mut w = match &solver {
            ShiftedSolver::Dense(c) => c.solve(&DVector::from_column_slice(&v)).iter().copied().collect(),
            ShiftedSolver::Cg { shift } => conjugate_gradient(s, *shift, &v, 1e-14),
        };
        let nw = norm(&w);
        w.iter_mut().for_each(|a| *a /= nw);
        let sw = s.mul(&w);
        rho = dot(&w, &sw);
        residual = sw.iter().zip(&w).map(|(a, b)| (a - rho * b).powi(2)).sum::<f64>().sqrt();
        v = w;
        if residual <= opts.tol * scale.max(1.0) {
            return Ok((rho.max(0.0), v, residual, it));
        }
    }
    let _ = rho;
    Err(SpectralError::NotConverged { iterations: opts.max_iter, residual })
}

/// Lanczos approximation of `g(S) w` with full reorthogonalization.
fn lanczos_apply(s: &SparseSym, w: &[f64], g: &dyn Fn(f64) -> f64, tol: f64, max_dim: usize) -> Vec<f64> {
    let n = w.len();
    let beta0 = norm(w);
    if beta0 == 0.0 {
        return vec![0.0; n];
    }
    let m_max = max_dim.min(n);
    let mut basis: Vec<Vec<f64>> = vec![w.iter().map(|a| a / beta0).collect()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut coeffs: Vec<f64> = Vec::new();
    for j in 0..m_max {
        let mut z = s.mul(&basis[j]);
        let alpha = dot(&basis[j], &z);
        alphas.push(alpha);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &z);
                z.iter_mut().zip(b).for_each(|(zi, bi)| *zi -= c * bi);
            }
        }
        let beta = norm(&z);
        let m = alphas.len();
        let t = DMatrix::from_fn(m, m, |r, c| {
            if r == c {
                alphas[r]
            } else if r + 1 == c {
                betas[r]
            } else if c + 1 == r {
                betas[c]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        coeffs = (0..m)
            .map(|r| (0..m).map(|k| eig.eigenvectors[(r, k)] * g(eig.eigenvalues[k]) * eig.eigenvectors[(0, k)]).sum())
            .collect();
        let cnorm = norm(&coeffs);
        let err = beta * coeffs[m - 1].abs();
        if beta <= 1e-14 * scale_hint(&alphas) || err <= tol * cnorm.max(f64::MIN_POSITIVE) || m == m_max {
            break;
        }
        betas.push(beta);
        basis.push(z.iter().map(|a| a / beta).collect());
    }
    let mut out = vec![0.0; n];
    for (c, b) in coeffs.iter().zip(&basis) {
        out.iter_mut().zip(b).for_each(|(o, bi)| *o += beta0 * c * bi);
    }
    out
}

fn scale_hint(alphas: &[f64]) -> f64 {
    alphas.iter().fold(1.0_f64, |m, a| m.max(a.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub radius: usize,
    pub lambda1: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub lambda1: f64,
    pub radius_used: usize,
    pub residual: f64,
    pub monotone_trace: Vec<TracePoint>,
}

impl SpectralEstimate {
    /// Whether `λ₁^{(R)}` is non-increasing along the trace within `tol`.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.monotone_trace.windows(2).all(|w| w[1].lambda1 <= w[0].lambda1 + tol)
    }

    /// `R,lambda1,residual` CSV.
    pub fn trace_csv(&self) -> crate::io::CsvTable {
        let mut t = crate::io::CsvTable::new(&["R", "lambda1", "residual"]);
        for p in &self.monotone_trace {
            t.push(vec![p.radius.to_string(), p.lambda1.to_string(), p.residual.to_string()]);
        }
        t
    }
}

/// Dirichlet bottom eigenvalue on `B_R(x0)` for each radius.
pub fn lambda1_estimate(
    g: &WeightedGraph,
    x0: usize,
    radii: &[usize],
    opts: &EigenOptions,
) -> Result<SpectralEstimate, SpectralError> {
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] == 0 {
        return Err(SpectralError::BadRadii);
    }
    let mut trace = Vec::with_capacity(radii.len());
    for &r in radii {
        let gen = dirichlet_generator(g, &g.ball(x0, r))?;
        let pair = gen.principal_eigenpair(opts)?;
        trace.push(TracePoint { radius: r, lambda1: pair.lambda, residual: pair.residual });
    }
    let last = trace.last().unwrap().clone();
    Ok(SpectralEstimate {
        lambda1: last.lambda1,
        radius_used: last.radius,
        residual: last.residual,
        monotone_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Least-squares slope of `log p` against `t` over the grid tail.
    pub slope: f64,
    /// Smallest `C` with `p(t) ≤ C e^{slope·t}` on the retained grid.
    pub c_under: f64,
    /// First retained grid time.
    pub t_under: f64,
    pub points: Vec<(f64, f64)>,
    pub dropped: usize,
    pub warnings: Vec<String>,
}

/// Fraction of the grid (from the end) used for the slope fit.
pub const DECAY_TAIL_FRACTION: f64 = 0.5;

pub fn decay_rate_fit(
    gen: &TruncatedGenerator,
    x: usize,
    y: usize,
    t_grid: &[f64],
) -> Result<DecayFit, SpectralError> {
    if t_grid.len() < 4 || t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid[0] <= 0.0 {
        return Err(SpectralError::BadGrid { min: 4 });
    }
    let mut points = Vec::with_capacity(t_grid.len());
    let mut dropped = 0;
    let mut warnings = Vec::new();
    for &t in t_grid {
        let p = gen.kernel_local(x, y, t)?;
        if p < UNDERFLOW_FLOOR {
            dropped += 1;
            continue;
        }
        points.push((t, p));
    }
    if dropped > 0 {
        let msg = format!("dropped {dropped} grid points below the underflow floor");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if points.len() < 2 {
        return Err(SpectralError::Underflow(points.len()));
    }
    let tail_len = ((points.len() as f64 * DECAY_TAIL_FRACTION).ceil() as usize).max(2);
    let tail = &points[points.len() - tail_len..];
    let slope = least_squares_slope(tail.iter().map(|(t, p)| (*t, p.ln())));
    let c_under = points.iter().map(|(t, p)| p * (-slope * t).exp()).fold(0.0, f64::max);
    Ok(DecayFit { slope, c_under, t_under: points[0].0, points, dropped, warnings })
}

/// Least-squares line `(intercept, slope)` through the points.
pub fn least_squares_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let slope = least_squares_slope(points.iter().copied());
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    (sy / n - slope * sx / n, slope)
}

pub(crate) fn least_squares_slope(data: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let n = data.clone().count() as f64;
    let (sx, sy) = data.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = data.fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx).powi(2)));
    num / den
}

/// Empirical `C̲ = max_{x,y, t∈grid, t≥t̲} p_R(x,y,t) e^{λ t}`.
pub fn uniform_kernel_bound(
    gen: &TruncatedGenerator,
    lambda: f64,
    t_under: f64,
    t_grid: &[f64],
) -> Result<f64, SpectralError> {
    let mut best = 0.0_f64;
    for &t in t_grid.iter().filter(|t| **t >= t_under) {
        for y in 0..gen.len() {
            let col = gen.kernel_column(y, t)?;
            let m = col.iter().fold(0.0_f64, |m, p| m.max(*p));
            best = best.max(m * (lambda * t).exp());
        }
    }
    Ok(best)
}

/// `t,x,y,p` CSV of kernel entries.
pub fn kernel_dump(entries: &[KernelEntry]) -> crate::io::CsvTable {
    let mut t = crate::io::CsvTable::new(&["t", "x", "y", "p"]);
    for e in entries {
        t.push(vec![e.t.to_string(), e.x.clone(), e.y.clone(), e.value.to_string()]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_graph, GraphBuilder, GraphFamily};

    fn path3() -> WeightedGraph {
        GraphBuilder::new()
            .node("a", 1.0)
            .node("b", 1.0)
            .node("c", 1.0)
            .edge("a", "b", 1.0)
            .edge("b", "c", 1.0)
            .build()
            .unwrap()
    }

    fn k2() -> WeightedGraph {
        generate_graph(&GraphFamily::Complete { n: 2 }).unwrap()
    }

    #[test]
    fn generator_examples() {
        let g = path3();
        let gen = dirichlet_generator(&g, &g.ball(1, 1)).unwrap();
        assert_eq!(gen.matrix(), DMatrix::from_row_slice(1, 1, &[2.0]));
        assert!(gen.has_boundary());

        let g = k2();
        let gen = dirichlet_generator(&g, &g.whole()).unwrap();
        assert_eq!(gen.matrix(), DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert!(!gen.has_boundary());
    }

    #[test]
    fn cycle_truncation_matches_hand_assembly() {
        let g = generate_graph(&GraphFamily::Cycle { n: 4 }).unwrap();
        let ball = crate::graph::Ball { center: 1, radius: Some(2), members: vec![0, 1, 2] };
        let gen = dirichlet_generator(&g, &ball).unwrap();
        // μ ≡ 2; every vertex has weighted degree 2
        let oracle = DMatrix::from_row_slice(3, 3, &[1.0, -0.5, 0.0, -0.5, 1.0, -0.5, 0.0, -0.5, 1.0]);
        assert_eq!(gen.matrix(), oracle);
        let mu_row_sums: Vec<f64> = (0..3).map(|i| (0..3).map(|j| oracle[(i, j)]).sum::<f64>() * 2.0).collect();
        assert!(mu_row_sums[0] > 0.0 && mu_row_sums[2] > 0.0 && mu_row_sums[1] == 0.0);
    }

    #[test]
    fn semigroup_examples() {
        let g = k2();
        let gen = dirichlet_generator(&g, &g.whole()).unwrap();
        let u0 = VertexFunction(vec![1.0, 0.0]);
        assert_eq!(gen.semigroup_apply(&u0, 0.0).unwrap(), u0);
        for t in [0.1, 1.0, 3.0] {
            let v = gen.semigroup_apply(&u0, t).unwrap();
            let e = (-2.0 * t).exp();
            assert!((v[0] - (1.0 + e) / 2.0).abs() < 1e-14);
            assert!((v[1] - (1.0 - e) / 2.0).abs() < 1e-14);
        }
        assert!(matches!(gen.semigroup_apply(&u0, -1.0), Err(SpectralError::NegativeTime(_))));

        let g = path3();
        let gen = dirichlet_generator(&g, &g.ball(1, 1)).unwrap();
        let v = gen.semigroup_apply(&VertexFunction(vec![1.0]), 1.0).unwrap();
        assert!((v[0] - (-2.0_f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn kernel_examples() {
        let g = k2();
        let gen = dirichlet_generator(&g, &g.whole()).unwrap();
        for t in [0.1, 1.0, 10.0] {
            let paa = gen.kernel_entry(0, 0, t).unwrap().value;
            assert!((paa - (1.0 + (-2.0 * t).exp()) / 2.0).abs() < 1e-14);
            let pab = gen.kernel_entry(0, 1, t).unwrap().value;
            let pba = gen.kernel_entry(1, 0, t).unwrap().value;
            assert!((pab - pba).abs() < 1e-15);
            assert!(gen.mass_defect(0, t).unwrap() < 1e-10);
        }
        assert!(gen.kernel_entry(0, 0, 0.0).is_err());
        let g = path3();
        let gen = dirichlet_generator(&g, &g.ball(1, 1)).unwrap();
        assert!(matches!(gen.kernel_entry(0, 1, 1.0), Err(SpectralError::NotInBall(_))));
    }

    #[test]
    fn mass_defect_examples() {
        let g = path3();
        let gen = dirichlet_generator(&g, &g.ball(1, 1)).unwrap();
        for t in [0.01, 0.5, 2.0] {
            let d = gen.mass_defect(0, t).unwrap();
            assert!((d - (1.0 - (-2.0 * t).exp())).abs() < 1e-14);
        }
        assert!(gen.mass_defect(0, 1e-9).unwrap() < 1e-8);
        let full = dirichlet_generator(&g, &g.whole()).unwrap();
        assert!(full.mass_defect(1, 3.0).unwrap() < 1e-10);
    }

    #[test]
    fn lambda1_examples() {
        let g = path3();
        let est = lambda1_estimate(&g, 1, &[1], &EigenOptions::default()).unwrap();
        assert!((est.lambda1 - 2.0).abs() < 1e-10);
        let g = k2();
        let est = lambda1_estimate(&g, 0, &[5], &EigenOptions::default()).unwrap();
        assert!(est.lambda1.abs() < 1e-10);
        assert!(lambda1_estimate(&g, 0, &[3, 2], &EigenOptions::default()).is_err());
        assert!(lambda1_estimate(&g, 0, &[], &EigenOptions::default()).is_err());
    }

    #[test]
    fn inverse_iteration_agrees_with_dense_eigensolver() {
        let g = generate_graph(&GraphFamily::RegularTree { degree: 3, depth: 6 }).unwrap();
        let gen = dirichlet_generator(&g, &g.ball(0, 5)).unwrap();
        let pair = gen.principal_eigenpair(&EigenOptions::default()).unwrap();
        let dense = SymmetricEigen::new(gen.symmetrized()).eigenvalues.min();
        assert!((pair.lambda - dense).abs() < 1e-9, "{} vs {dense}", pair.lambda);
        assert!(pair.vector.is_nonnegative());
        assert_eq!(pair.vector.sup_norm(), 1.0);
        let av = gen.apply(&pair.vector.0);
        for (a, v) in av.iter().zip(&pair.vector.0) {
            assert!((a - pair.lambda * v).abs() < 1e-8);
        }
    }

    #[test]
    fn tree_trace_decreases() {
        let g = generate_graph(&GraphFamily::RegularTree { degree: 3, depth: 8 }).unwrap();
        let est = lambda1_estimate(&g, 0, &[3, 5, 7, 8], &EigenOptions::default()).unwrap();
        assert!(est.is_monotone(1e-12));
        let w = est.monotone_trace.windows(2).all(|w| w[1].lambda1 < w[0].lambda1);
        assert!(w);
        // bottom of the spectrum of the infinite 3-regular tree
        let limit = 1.0 - 2.0 * 2.0_f64.sqrt() / 3.0;
        assert!(est.lambda1 > limit);
        assert!(est.monotone_trace.iter().all(|p| p.residual < 1e-9));
    }

    #[test]
    fn decay_fit_examples() {
        let g = path3();
        let gen = dirichlet_generator(&g, &g.ball(1, 1)).unwrap();
        let fit = decay_rate_fit(&gen, 0, 0, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.c_under - 1.0).abs() < 1e-12);

        let g = k2();
        let gen = dirichlet_generator(&g, &g.whole()).unwrap();
        let grid: Vec<f64> = (1..=20).map(|k| k as f64).collect();
        let fit = decay_rate_fit(&gen, 0, 0, &grid).unwrap();
        assert!(fit.slope.abs() < 1e-8);
        assert!(decay_rate_fit(&gen, 0, 0, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn decay_fit_drops_underflow() {
        let g = path3();
        let gen = dirichlet_generator(&g, &g.ball(1, 1)).unwrap();
        let fit = decay_rate_fit(&gen, 0, 0, &[1.0, 2.0, 3.0, 4.0, 400.0]).unwrap();
        assert_eq!(fit.dropped, 1);
        assert_eq!(fit.warnings.len(), 1);
        assert!((fit.slope + 2.0).abs() < 1e-12);
    }

    #[test]
    fn krylov_matches_dense() {
        let g = generate_graph(&GraphFamily::RegularTree { degree: 3, depth: 5 }).unwrap();
        let ball = g.ball(0, 5);
        let dense = dirichlet_generator(&g, &ball).unwrap();
        let opts = GeneratorOptions { dense_limit: 0, ..Default::default() };
        let kry = TruncatedGenerator::with_options(&g, &ball, opts).unwrap();
        assert!(dense.is_dense() && !kry.is_dense());
        let u0 = VertexFunction((0..ball.len()).map(|i| ((i * 7) % 5) as f64).collect());
        for t in [0.05, 1.0, 25.0] {
            let a = dense.semigroup_apply(&u0, t).unwrap();
            let b = kry.semigroup_apply(&u0, t).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-9 * u0.sup_norm(), "t={t}");
        }
        let pa = dense.kernel_local(3, 7, 2.0).unwrap();
        let pb = kry.kernel_local(3, 7, 2.0).unwrap();
        assert!((pa - pb).abs() < 1e-10);
    }
}
