use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use graphflame_core::blowup::{self, DetectorConfig, Outcome};
use graphflame_core::experiment::{self as exp, ExperimentConfig};
use graphflame_core::graph::{generate_graph, Ball, GraphFamily, VertexFunction, WeightedGraph};
use graphflame_core::io::{parse_graph, read_graph};
use graphflame_core::semilinear::{self as sl, NonlinearSource, PicardMode, ScalarFn, SolverConfig, TailIntegral};
use graphflame_core::spectral::{self, EigenOptions, TruncatedGenerator};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

#[pyclass(name = "Graph", module = "graphflame", frozen)]
struct PyGraph {
    inner: WeightedGraph,
}

impl PyGraph {
    fn index(&self, id: &str) -> PyResult<usize> {
        self.inner.index_of(id).map_err(|e| PyKeyError::new_err(e.to_string()))
    }

    fn truncation(&self, center: Option<&str>, radius: Option<usize>) -> PyResult<(usize, Ball)> {
        let x0 = match center {
            Some(id) => self.index(id)?,
            None => 0,
        };
        let ball = match radius {
            Some(r) => self.inner.ball(x0, r),
            None => self.inner.whole(),
        };
        Ok((x0, ball))
    }

    fn function(&self, values: Vec<f64>) -> PyResult<VertexFunction> {
        if values.len() != self.inner.num_vertices() {
            return Err(PyValueError::new_err(format!(
                "expected {} values, got {}",
                self.inner.num_vertices(),
                values.len()
            )));
        }
        Ok(VertexFunction(values))
    }
}

#[pymethods]
impl PyGraph {
    /// Generator spec such as `regular_tree(3,8)` or `cycle(4)`.
    #[staticmethod]
    fn family(spec: &str) -> PyResult<Self> {
        let f = GraphFamily::parse(spec).map_err(value_err)?;
        Ok(Self { inner: generate_graph(&f).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_file(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self { inner: read_graph(&path).map_err(value_err)? })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self { inner: parse_graph(text).map_err(value_err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.num_vertices()
    }

    fn __repr__(&self) -> String {
        format!("Graph(vertices={}, edges={})", self.inner.num_vertices(), self.inner.num_edges())
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids().to_vec()
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.inner.mu().to_vec()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    /// Violated axioms as strings; empty when valid.
    fn validate(&self) -> Vec<String> {
        self.inner.validate().violations.iter().map(|v| serde_json::to_string(v).unwrap()).collect()
    }

    fn laplacian(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.laplacian_apply(&self.function(u)?).map_err(value_err)?.0)
    }

    fn distance(&self, x: &str, y: &str) -> PyResult<usize> {
        self.inner.distance(self.index(x)?, self.index(y)?).map_err(value_err)
    }

    /// Vertex ids of `{x : d(x, center) < radius}`.
    fn ball(&self, center: &str, radius: usize) -> PyResult<Vec<String>> {
        let b = self.inner.ball(self.index(center)?, radius);
        Ok(b.members.iter().map(|&x| self.inner.id(x).to_string()).collect())
    }

    fn cutoff(&self, center: &str, radius: usize) -> PyResult<Vec<f64>> {
        if radius < 2 {
            return Err(PyValueError::new_err("radius must be at least 2"));
        }
        Ok(self.inner.cutoff_zeta(self.index(center)?, radius).0)
    }

    /// `p_R(x, y, t)` on the Dirichlet truncation, whole graph without `radius`.
    #[pyo3(signature = (x, y, t, center=None, radius=None))]
    fn heat_kernel(&self, x: &str, y: &str, t: f64, center: Option<&str>, radius: Option<usize>) -> PyResult<f64> {
        let (_, ball) = self.truncation(center, radius)?;
        let gen = TruncatedGenerator::with_options(&self.inner, &ball, Default::default()).map_err(runtime_err)?;
        let lx = gen.local(self.index(x)?).ok_or_else(|| PyValueError::new_err("x is outside the truncation"))?;
        let ly = gen.local(self.index(y)?).ok_or_else(|| PyValueError::new_err("y is outside the truncation"))?;
        Ok(gen.kernel_entry(lx, ly, t).map_err(runtime_err)?.value)
    }

    /// Dirichlet `λ₁` along a radius ladder: `(estimate, [(R, λ₁, residual)])`.
    #[pyo3(signature = (center, radii, seed=0))]
    fn lambda1(&self, center: &str, radii: Vec<usize>, seed: u64) -> PyResult<(f64, Vec<(usize, f64, f64)>)> {
        let est = spectral::lambda1_estimate(&self.inner, self.index(center)?, &radii, &EigenOptions { seed, ..Default::default() })
            .map_err(runtime_err)?;
        let trace = est.monotone_trace.iter().map(|p| (p.radius, p.lambda1, p.residual)).collect();
        Ok((est.lambda1, trace))
    }
}

#[pyclass(name = "Source", module = "graphflame", frozen)]
struct PySource {
    inner: NonlinearSource,
}

#[pymethods]
impl PySource {
    /// `coef · s^p`; the source is its own convex minorant.
    #[staticmethod]
    #[pyo3(signature = (p, coef=1.0))]
    fn power(p: f64, coef: f64) -> Self {
        Self { inner: NonlinearSource::self_minorant(ScalarFn::Power { coef, p }) }
    }

    #[staticmethod]
    fn linear(a: f64) -> Self {
        Self { inner: NonlinearSource::self_minorant(ScalarFn::Linear { a }) }
    }

    /// `a·s + b·s^p`.
    #[staticmethod]
    #[pyo3(signature = (a, p, b=1.0))]
    fn linear_plus_power(a: f64, p: f64, b: f64) -> Self {
        Self { inner: NonlinearSource::self_minorant(ScalarFn::LinearPlusPower { a, b, p }) }
    }

    #[staticmethod]
    fn clamped_linear(a: f64, cap: f64) -> Self {
        Self { inner: NonlinearSource::new(ScalarFn::ClampedLinear { a, cap }) }
    }

    /// Piecewise linear through `(s, f(s))` knots.
    #[staticmethod]
    fn table(knots: Vec<(f64, f64)>) -> PyResult<Self> {
        if knots.len() < 2 {
            return Err(PyValueError::new_err("need at least two knots"));
        }
        Ok(Self { inner: NonlinearSource::new(ScalarFn::table(knots)) })
    }

    #[staticmethod]
    fn zero() -> Self {
        Self { inner: NonlinearSource::zero() }
    }

    fn __call__(&self, s: f64) -> f64 {
        self.inner.eval(s)
    }

    fn __repr__(&self) -> String {
        format!("Source({})", self.inner.f)
    }

    /// `L(f, δ)`, the Lipschitz constant on `[0, δ]`.
    fn lipschitz(&self, delta: f64) -> PyResult<f64> {
        self.inner.lipschitz(delta).map_err(value_err)
    }

    /// `h'(0)`, or `None` without a minorant.
    fn alpha(&self) -> Option<f64> {
        self.inner.alpha()
    }

    /// `∫_1^∞ ds / h(s)`, or `None` when it diverges.
    fn osgood(&self) -> PyResult<Option<f64>> {
        match blowup::osgood_integral(&self.inner).map_err(value_err)? {
            TailIntegral::Finite(v) => Ok(Some(v)),
            TailIntegral::Divergent => Ok(None),
        }
    }

    /// Upper bound on the blow-up time of `y' = h(y)`, `y(0) = phi0`;
    /// `None` when inapplicable or when the tail integral diverges.
    fn comparison_bound(&self, phi0: f64, delta: f64) -> PyResult<Option<f64>> {
        let b = blowup::ode_comparison_bound(&self.inner, phi0, delta).map_err(value_err)?;
        Ok(if b.applicable { b.tstar_upper } else { None })
    }
}

/// Mild solution sampled on `times`; rows follow the truncation's vertex order.
#[pyfunction]
#[pyo3(signature = (graph, source, u0, times, center=None, radius=None))]
fn solve(
    graph: &PyGraph,
    source: &PySource,
    u0: Vec<f64>,
    times: Vec<f64>,
    center: Option<&str>,
    radius: Option<usize>,
) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
    let (_, ball) = graph.truncation(center, radius)?;
    let gen = TruncatedGenerator::with_options(&graph.inner, &ball, Default::default()).map_err(runtime_err)?;
    let u0 = ball.restrict(&graph.function(u0)?);
    let (path, _) = sl::picard_solve(
        &gen,
        &source.inner,
        &u0,
        &times,
        &PicardMode::BallSup { segment: None },
        &SolverConfig::default(),
    )
    .map_err(runtime_err)?;
    Ok((gen.ids().to_vec(), path.states.into_iter().map(|s| s.0).collect()))
}

/// Runs the detector; returns a dict with `kind` and the norm trace.
#[pyfunction]
#[pyo3(signature = (graph, source, u0, horizon, cap, center=None, radius=None, delta=None))]
#[allow(clippy::too_many_arguments)]
fn detect_blowup<'py>(
    py: Python<'py>,
    graph: &PyGraph,
    source: &PySource,
    u0: Vec<f64>,
    horizon: f64,
    cap: f64,
    center: Option<&str>,
    radius: Option<usize>,
    delta: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let (_, ball) = graph.truncation(center, radius)?;
    let gen = TruncatedGenerator::with_options(&graph.inner, &ball, Default::default()).map_err(runtime_err)?;
    let u0 = ball.restrict(&graph.function(u0)?);
    let cfg = DetectorConfig { delta, ..Default::default() };
    let det = blowup::detect_blowup(&gen, &source.inner, &u0, horizon, cap, &cfg).map_err(runtime_err)?;
    let d = PyDict::new(py);
    match det.outcome {
        Outcome::Blowup { t_est, half_width } => {
            d.set_item("kind", "blowup")?;
            d.set_item("t_est", t_est)?;
            d.set_item("half_width", half_width)?;
        }
        Outcome::Bounded { sup_norm } => {
            d.set_item("kind", "bounded")?;
            d.set_item("sup_norm", sup_norm)?;
        }
        Outcome::Inconclusive { reason } => {
            d.set_item("kind", "inconclusive")?;
            d.set_item("reason", reason)?;
        }
    }
    d.set_item("times", det.times)?;
    d.set_item("norms", det.norms)?;
    Ok(d)
}

/// Parses an experiment config, runs it and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (config, overrides=Vec::new(), out=None))]
fn run_experiment(config: &str, overrides: Vec<String>, out: Option<std::path::PathBuf>) -> PyResult<String> {
    let cfg = ExperimentConfig::parse_with_overrides(config, &overrides).map_err(value_err)?;
    let mut report = exp::run_experiment(&cfg);
    if let Some(dir) = out {
        exp::write_outputs(&mut report, &dir).map_err(runtime_err)?;
    }
    Ok(report.to_json())
}

#[pymodule]
fn graphflame(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PySource>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(detect_blowup, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
