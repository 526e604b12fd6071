//! The supersolution `ū = e^{Lt} e^{−tA} u0` and the exhaustion of the
//! graph by balls.

use serde::{Deserialize, Serialize};

use super::{picard_solve, NonlinearSource, PicardMode, SolutionPath, SolveDiagnostics, SolveError, SolverConfig};
use crate::graph::{Ball, VertexFunction, WeightedGraph};
use crate::spectral::{GeneratorOptions, TruncatedGenerator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub vertex: String,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Supersolution {
    pub path: SolutionPath,
    pub l: f64,
    pub first_violation: Option<Violation>,
}

/// `ū(t) = e^{Lt} e^{−tA} u0` on the grid; with `delta` the first point
/// where `ū > δ` is reported.
pub fn supersolution_path(
    gen: &TruncatedGenerator,
    u0: &VertexFunction,
    t_grid: &[f64],
    l: f64,
    delta: Option<f64>,
) -> Result<Supersolution, SolveError> {
    super::check_grid(t_grid)?;
    super::check_datum(gen, u0)?;
    let mut heat = u0.clone();
    let mut states = Vec::with_capacity(t_grid.len());
    let mut first_violation = None;
    for (i, &t) in t_grid.iter().enumerate() {
        if i > 0 {
            heat = gen.semigroup_apply(&heat, t - t_grid[i - 1])?;
        }
        let s = heat.scaled((l * t).exp());
        if let (Some(d), None) = (delta, &first_violation) {
            if let Some((x, v)) = s.0.iter().enumerate().find(|(_, v)| **v > d) {
                first_violation = Some(Violation { t, vertex: gen.ids()[x].clone(), value: *v, bound: d });
            }
        }
        states.push(s);
    }
    Ok(Supersolution { path: SolutionPath::new(t_grid.to_vec(), states, vec![0]), l, first_violation })
}

/// Reference truncation for the comparison `u_R ≤ ū`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// `None` uses the whole graph.
    pub radius: Option<usize>,
    pub l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExhaustOptions {
    pub solver: SolverConfig,
    pub generator: GeneratorOptions,
    pub comparison: Option<Comparison>,
    pub tol: f64,
}

impl Default for ExhaustOptions {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            generator: GeneratorOptions::default(),
            comparison: None,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exhaustion {
    pub radii: Vec<usize>,
    pub balls: Vec<Ball>,
    /// Ball-local paths, one per radius.
    pub paths: Vec<SolutionPath>,
    pub diagnostics: Vec<SolveDiagnostics>,
    /// `sup_{t,x} |u_{R_{k+1}} − u_{R_k}|` with both extended by zero.
    pub gaps: Vec<f64>,
    /// Largest `u_R − u_{R'}` over `R < R'`.
    pub monotonicity_margin: f64,
    pub supersolution: Option<Supersolution>,
    /// Largest `u_R − ū` over all radii.
    pub comparison_margin: Option<f64>,
    pub min_value: f64,
}

impl Exhaustion {
    /// The largest-radius solution extended by zero to the whole graph.
    pub fn global_path(&self, n: usize) -> SolutionPath {
        let (ball, path) = (self.balls.last().unwrap(), self.paths.last().unwrap());
        let states = path.states.iter().map(|s| ball.extend(s, n)).collect();
        SolutionPath::new(path.times.clone(), states, path.iterations.clone())
    }
}

/// Solves the ball problems with data `ζ_R u0` on `B_R(x0)` for each
/// radius and checks monotonicity in `R` and, optionally, the comparison
/// with the supersolution on a reference truncation.
pub fn exhaust_solve(
    g: &WeightedGraph,
    src: &NonlinearSource,
    u0: &VertexFunction,
    x0: usize,
    radii: &[usize],
    t_grid: &[f64],
    opts: &ExhaustOptions,
) -> Result<Exhaustion, SolveError> {
    if radii.is_empty() || radii[0] < 2 || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SolveError::InvalidInput("radii must be increasing and at least 2".into()));
    }
    if u0.len() != g.num_vertices() {
        return Err(SolveError::InvalidInput(format!(
            "datum has {} values, graph has {} vertices",
            u0.len(),
            g.num_vertices()
        )));
    }
    let n = g.num_vertices();
    let mut balls = Vec::new();
    let mut paths = Vec::new();
    let mut diagnostics = Vec::new();
    for &r in radii {
        let ball = g.ball(x0, r);
        let gen = TruncatedGenerator::with_options(g, &ball, opts.generator)?;
        let zeta = g.cutoff_zeta(x0, r);
        let datum = ball.restrict(&VertexFunction(u0.0.iter().zip(&zeta.0).map(|(u, z)| u * z).collect()));
        let (path, diag) =
            picard_solve(&gen, src, &datum, t_grid, &PicardMode::BallSup { segment: None }, &opts.solver)?;
        log::debug!("radius {r}: {} segments", diag.segments.len());
        balls.push(ball);
        paths.push(path);
        diagnostics.push(diag);
    }

    let min_value = paths.iter().flat_map(|p| p.states.iter().flat_map(|s| s.0.iter().copied())).fold(f64::INFINITY, f64::min);
    let mut gaps = Vec::new();
    let mut monotonicity_margin = f64::NEG_INFINITY;
    for k in 1..radii.len() {
        let (small, large) = (&balls[k - 1], &balls[k]);
        let mut gap = 0.0_f64;
        for (i, t) in t_grid.iter().enumerate() {
            let a = small.extend(&paths[k - 1].states[i], n);
            let b = large.extend(&paths[k].states[i], n);
            for &x in &large.members {
                gap = gap.max((b[x] - a[x]).abs());
            }
            for &x in &small.members {
                let excess = a[x] - b[x];
                monotonicity_margin = monotonicity_margin.max(excess);
                if excess > opts.tol {
                    return Err(SolveError::MonotonicityViolation {
                        smaller: radii[k - 1],
                        larger: radii[k],
                        t: *t,
                        vertex: g.id(x).to_string(),
                        excess,
                    });
                }
            }
        }
        gaps.push(gap);
    }

    let (supersolution, comparison_margin) = match opts.comparison {
        None => (None, None),
        Some(cmp) => {
            let reference = match cmp.radius {
                Some(r) => g.ball(x0, r),
                None => g.whole(),
            };
            let gen = TruncatedGenerator::with_options(g, &reference, opts.generator)?;
            let sup = supersolution_path(&gen, &reference.restrict(u0), t_grid, cmp.l, None)?;
            let mut margin = f64::NEG_INFINITY;
            for (k, ball) in balls.iter().enumerate() {
                for (i, t) in t_grid.iter().enumerate() {
                    for (p, &x) in ball.members.iter().enumerate() {
                        let q = reference.position(x).ok_or_else(|| {
                            SolveError::InvalidInput(format!("reference truncation does not contain B_{}", radii[k]))
                        })?;
                        let excess = paths[k].states[i][p] - sup.path.states[i][q];
                        margin = margin.max(excess);
                        if excess > opts.tol {
                            return Err(SolveError::ComparisonViolation {
                                radius: radii[k],
                                t: *t,
                                vertex: g.id(x).to_string(),
                                excess,
                            });
                        }
                    }
                }
            }
            (Some(sup), Some(margin))
        }
    };

    Ok(Exhaustion {
        radii: radii.to_vec(),
        balls,
        paths,
        diagnostics,
        gaps,
        monotonicity_margin: if radii.len() > 1 { monotonicity_margin } else { 0.0 },
        supersolution,
        comparison_margin,
        min_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_graph, GraphBuilder, GraphFamily};
    use crate::semilinear::ScalarFn;
    use crate::spectral::dirichlet_generator;

    #[test]
    fn supersolution_examples() {
        let g = GraphBuilder::new().node("a", 1.0).node("b", 1.0).edge("a", "b", 2.0).build().unwrap();
        // single Dirichlet vertex: A = [2]
        let gen = dirichlet_generator(&g, &g.ball(0, 1)).unwrap();
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.5).collect();
        let s = supersolution_path(&gen, &VertexFunction(vec![1.0]), &grid, 1.0, Some(1.0)).unwrap();
        for (t, v) in grid.iter().zip(&s.path.states) {
            assert!((v[0] - (-t).exp()).abs() < 1e-14);
        }
        assert!(s.first_violation.is_none());
        let s = supersolution_path(&gen, &VertexFunction(vec![0.0]), &grid, 3.0, Some(1.0)).unwrap();
        assert_eq!(s.path.sup_norm(), 0.0);
        let s = supersolution_path(&gen, &VertexFunction(vec![1.0]), &grid, 3.0, Some(1.0)).unwrap();
        assert_eq!(s.first_violation.unwrap().t, 0.5);
        let lin = supersolution_path(&gen, &VertexFunction(vec![1.0]), &grid, 0.0, None).unwrap();
        assert!((lin.path.final_state()[0] - (-10.0_f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn exhaustion_linear_flow_increases_with_radius() {
        let g = generate_graph(&GraphFamily::RegularTree { degree: 3, depth: 7 }).unwrap();
        let mut u0 = VertexFunction::zeros(g.num_vertices());
        u0.0[0] = 1.0;
        let grid: Vec<f64> = (0..=6).map(|i| i as f64).collect();
        let ex = exhaust_solve(&g, &NonlinearSource::zero(), &u0, 0, &[2, 4, 6], &grid, &ExhaustOptions::default())
            .unwrap();
        assert!(ex.monotonicity_margin <= 0.0);
        assert!(ex.gaps.windows(2).all(|w| w[1] < w[0]), "{:?}", ex.gaps);
        // cutoff plateau: u0 supported at the center
        assert_eq!(ex.paths[0].states[0][0], 1.0);
    }

    #[test]
    fn exhaustion_respects_supersolution() {
        let g = generate_graph(&GraphFamily::RegularTree { degree: 3, depth: 8 }).unwrap();
        let mut u0 = VertexFunction::zeros(g.num_vertices());
        u0.0[0] = 0.05;
        let src = NonlinearSource::new(ScalarFn::Power { coef: 0.25, p: 2.0 });
        let grid: Vec<f64> = (0..=8).map(|i| i as f64).collect();
        let opts = ExhaustOptions { comparison: Some(Comparison { radius: None, l: 0.025 }), ..Default::default() };
        let ex = exhaust_solve(&g, &src, &u0, 0, &[3, 5, 7], &grid, &opts).unwrap();
        assert!(ex.comparison_margin.unwrap() <= 1e-8);
        assert!(ex.gaps.windows(2).all(|w| w[1] < w[0]), "{:?}", ex.gaps);
        assert!(ex.min_value >= -1e-12);
    }
}
