//! Experiment configuration files and the batch pipeline.
//!
//! ```ini
//! [experiment]
//! name = square
//! seed = 0
//!
//! [graph]
//! family = cycle(4)
//!
//! [source]
//! kind = power
//! coef = 1
//! p = 2
//! minorant = self
//!
//! [datum]
//! kind = constant
//! value = 1
//!
//! [solver]
//! delta = 1
//! horizon = 2
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ini::Ini;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blowup::{
    certificate, classify, detect_blowup, ode_comparison_bound, phi_trace, BlowupCertificate, Classification,
    ClassifyOptions, Detection, DetectorConfig, Outcome, PhiTrace,
};
use crate::graph::{generate_graph, Ball, GraphFamily, VertexFunction, WeightedGraph};
use crate::io::{read_graph, CsvTable};
use crate::semilinear::{
    exhaust_solve, picard_solve, ExhaustOptions, NonlinearSource, PicardMode, ScalarFn, SolutionPath, SolverConfig,
};
use crate::spectral::{
    lambda1_estimate, EigenOptions, GeneratorOptions, SpectralEstimate, TracePoint, TruncatedGenerator,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("missing `{section}.{key}`")]
    Missing { section: String, key: String },
    #[error("invalid `{section}.{key}` = `{value}`: {reason}")]
    Invalid { section: String, key: String, value: String, reason: String },
    #[error("override `{0}` must look like section.key=value")]
    BadOverride(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GraphSpec {
    Family(GraphFamily),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SourceKind {
    Zero,
    Power { coef: f64, p: f64 },
    Linear { a: f64 },
    LinearPlusPower { a: f64, b: f64, p: f64 },
    ClampedLinear { a: f64, cap: f64 },
    Table { knots: Vec<(f64, f64)> },
}

impl SourceKind {
    pub fn scalar_fn(&self) -> ScalarFn {
        match self {
            SourceKind::Zero => ScalarFn::Zero,
            SourceKind::Power { coef, p } => ScalarFn::Power { coef: *coef, p: *p },
            SourceKind::Linear { a } => ScalarFn::Linear { a: *a },
            SourceKind::LinearPlusPower { a, b, p } => ScalarFn::LinearPlusPower { a: *a, b: *b, p: *p },
            SourceKind::ClampedLinear { a, cap } => ScalarFn::ClampedLinear { a: *a, cap: *cap },
            SourceKind::Table { knots } => ScalarFn::table(knots.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kind: SourceKind,
    /// Use `f` itself as the convex minorant.
    pub self_minorant: bool,
}

impl SourceSpec {
    pub fn build(&self) -> NonlinearSource {
        let f = self.kind.scalar_fn();
        if self.self_minorant {
            NonlinearSource::self_minorant(f)
        } else {
            NonlinearSource::new(f)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatumSpec {
    Constant(f64),
    Indicator { vertices: Vec<String>, value: f64 },
    /// Scaled principal Dirichlet eigenfunction (sup norm 1) of the truncation.
    Eigenfunction(f64),
    /// Lines `id,value`; unlisted vertices are 0.
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Ball,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub graph: GraphSpec,
    /// Center vertex id; first vertex when absent.
    pub center: Option<String>,
    /// Truncation radius; the whole graph when absent.
    pub radius: Option<usize>,
    /// Radius ladder for the spectral trace and exhaustion.
    pub radii: Vec<usize>,
    pub source: SourceSpec,
    pub datum: DatumSpec,
    pub delta: f64,
    pub gamma: f64,
    pub horizon: f64,
    /// Blow-up threshold; `1e6 · max(‖u0‖_∞, δ)` when absent.
    pub cap: Option<f64>,
    pub picard_tol: f64,
    pub quad_tol: f64,
    pub max_iter: usize,
    pub samples: usize,
    pub mode: SolveMode,
    pub phi_vertex: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            name: "experiment".into(),
            seed: 0,
            output: None,
            graph: GraphSpec::Family(GraphFamily::Complete { n: 2 }),
            center: None,
            radius: None,
            radii: Vec::new(),
            source: SourceSpec { kind: SourceKind::Zero, self_minorant: false },
            datum: DatumSpec::Constant(0.0),
            delta: 1.0,
            gamma: crate::semilinear::DEFAULT_GAMMA,
            horizon: 1.0,
            cap: None,
            picard_tol: solver.picard_tol,
            quad_tol: solver.quad_tol,
            max_iter: solver.max_iter,
            samples: 20,
            mode: SolveMode::Ball,
            phi_vertex: None,
        }
    }
}

struct Reader<'a> {
    ini: &'a Ini,
}

impl Reader<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini.section(Some(section)).and_then(|s| s.get(key)).map(str::trim)
    }

    fn required(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.raw(section, key)
            .ok_or_else(|| ConfigError::Missing { section: section.into(), key: key.into() })
    }

    fn invalid(section: &str, key: &str, value: &str, reason: impl ToString) -> ConfigError {
        ConfigError::Invalid { section: section.into(), key: key.into(), value: value.into(), reason: reason.to_string() }
    }

    fn parse<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| Self::invalid(section, key, v, e)),
        }
    }

    fn num(&self, section: &str, key: &str) -> Result<f64, ConfigError> {
        self.parse(section, key)?.ok_or_else(|| ConfigError::Missing { section: section.into(), key: key.into() })
    }

    fn list<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(section, key) {
            None | Some("") => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<T>().map_err(|e| Self::invalid(section, key, v, e)))
                .collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with_overrides(text, &[])
    }

    /// Parses after applying `section.key=value` overrides.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        for o in overrides {
            let (path, value) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            let (section, key) = path.trim().split_once('.').ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            ini.with_section(Some(section)).set(key, value.trim());
        }
        Self::from_ini(&ini)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse_with_overrides(&text, overrides)?;
        // relative file references resolve against the config's directory
        if let Some(dir) = path.parent() {
            if let GraphSpec::File(p) = &mut cfg.graph {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
            if let DatumSpec::File(p) = &mut cfg.datum {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    fn from_ini(ini: &Ini) -> Result<Self, ConfigError> {
        let r = Reader { ini };
        let d = Self::default();
        let graph = match (r.raw("graph", "family"), r.raw("graph", "file")) {
            (Some(f), None) => {
                GraphSpec::Family(GraphFamily::parse(f).map_err(|e| Reader::invalid("graph", "family", f, e))?)
            }
            (None, Some(p)) => GraphSpec::File(PathBuf::from(p)),
            (Some(_), Some(_)) => {
                return Err(Reader::invalid("graph", "file", "", "give either family or file, not both"))
            }
            (None, None) => return Err(ConfigError::Missing { section: "graph".into(), key: "family".into() }),
        };
        let kind = match r.required("source", "kind")? {
            "zero" => SourceKind::Zero,
            "power" => SourceKind::Power { coef: r.parse("source", "coef")?.unwrap_or(1.0), p: r.num("source", "p")? },
            "linear" => SourceKind::Linear { a: r.num("source", "a")? },
            "linear_plus_power" => SourceKind::LinearPlusPower {
                a: r.num("source", "a")?,
                b: r.parse("source", "b")?.unwrap_or(1.0),
                p: r.num("source", "p")?,
            },
            "clamped_linear" => SourceKind::ClampedLinear { a: r.num("source", "a")?, cap: r.num("source", "cap")? },
            "table" => {
                let raw = r.required("source", "knots")?;
                let knots = raw
                    .split(',')
                    .map(|k| {
                        let (s, v) = k.split_once(':').ok_or_else(|| Reader::invalid("source", "knots", raw, "expected s:value"))?;
                        let s = s.trim().parse::<f64>().map_err(|e| Reader::invalid("source", "knots", raw, e))?;
                        let v = v.trim().parse::<f64>().map_err(|e| Reader::invalid("source", "knots", raw, e))?;
                        Ok((s, v))
                    })
                    .collect::<Result<Vec<_>, ConfigError>>()?;
                if knots.len() < 2 {
                    return Err(Reader::invalid("source", "knots", raw, "need at least two knots"));
                }
                SourceKind::Table { knots }
            }
            other => return Err(Reader::invalid("source", "kind", other, "unknown source kind")),
        };
        let self_minorant = match r.raw("source", "minorant").unwrap_or("none") {
            "self" => true,
            "none" => false,
            other => return Err(Reader::invalid("source", "minorant", other, "expected self or none")),
        };
        let datum = match r.required("datum", "kind")? {
            "constant" => DatumSpec::Constant(r.num("datum", "value")?),
            "indicator" => DatumSpec::Indicator {
                vertices: r.list("datum", "vertices")?,
                value: r.parse("datum", "value")?.unwrap_or(1.0),
            },
            "eigenfunction" => DatumSpec::Eigenfunction(r.parse("datum", "value")?.unwrap_or(1.0)),
            "file" => DatumSpec::File(PathBuf::from(r.required("datum", "path")?)),
            other => return Err(Reader::invalid("datum", "kind", other, "unknown datum kind")),
        };
        let mode = match r.raw("solver", "mode").unwrap_or("ball") {
            "ball" => SolveMode::Ball,
            "weighted" => SolveMode::Weighted,
            other => return Err(Reader::invalid("solver", "mode", other, "expected ball or weighted")),
        };
        let cfg = Self {
            name: r.raw("experiment", "name").map(String::from).unwrap_or(d.name),
            seed: r.parse("experiment", "seed")?.unwrap_or(d.seed),
            output: r.raw("experiment", "output").map(PathBuf::from),
            graph,
            center: r.raw("graph", "center").map(String::from),
            radius: r.parse("graph", "radius")?,
            radii: r.list("graph", "radii")?,
            source: SourceSpec { kind, self_minorant },
            datum,
            delta: r.num("solver", "delta")?,
            gamma: r.parse("solver", "gamma")?.unwrap_or(d.gamma),
            horizon: r.num("solver", "horizon")?,
            cap: r.parse("solver", "cap")?,
            picard_tol: r.parse("solver", "picard_tol")?.unwrap_or(d.picard_tol),
            quad_tol: r.parse("solver", "quad_tol")?.unwrap_or(d.quad_tol),
            max_iter: r.parse("solver", "max_iter")?.unwrap_or(d.max_iter),
            samples: r.parse("solver", "samples")?.unwrap_or(d.samples),
            mode,
            phi_vertex: r.raw("solver", "phi_vertex").map(String::from),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        let bad = |s: &str, k: &str, v: String, why: &str| Err(Reader::invalid(s, k, &v, why));
        if !(self.horizon > 0.0) {
            return bad("solver", "horizon", self.horizon.to_string(), "must be positive");
        }
        if !(self.delta > 0.0) {
            return bad("solver", "delta", self.delta.to_string(), "must be positive");
        }
        if !(self.gamma > 0.0) {
            return bad("solver", "gamma", self.gamma.to_string(), "must be positive");
        }
        if self.radii.windows(2).any(|w| w[1] <= w[0]) || self.radii.first() == Some(&0) {
            return bad("graph", "radii", format!("{:?}", self.radii), "must be positive and increasing");
        }
        if !(self.picard_tol > 0.0) || !(self.quad_tol > 0.0) || self.max_iter == 0 {
            return bad("solver", "picard_tol", self.picard_tol.to_string(), "tolerances must be positive");
        }
        if self.samples < 2 {
            return bad("solver", "samples", self.samples.to_string(), "need at least 2");
        }
        if let GraphSpec::File(p) = &self.graph {
            if !p.exists() {
                log::debug!("graph file {} does not exist yet", p.display());
            }
        }
        Ok(())
    }

    pub fn to_ini(&self) -> Ini {
        let mut ini = Ini::new();
        let mut put = |section: &str, key: &str, value: String| {
            ini.with_section(Some(section)).set(key, value);
        };
        put("experiment", "name", self.name.clone());
        put("experiment", "seed", self.seed.to_string());
        if let Some(o) = &self.output {
            put("experiment", "output", o.display().to_string());
        }
        match &self.graph {
            GraphSpec::Family(f) => put("graph", "family", f.to_string()),
            GraphSpec::File(p) => put("graph", "file", p.display().to_string()),
        }
        if let Some(c) = &self.center {
            put("graph", "center", c.clone());
        }
        if let Some(r) = self.radius {
            put("graph", "radius", r.to_string());
        }
        if !self.radii.is_empty() {
            put("graph", "radii", join(&self.radii));
        }
        match &self.source.kind {
            SourceKind::Zero => put("source", "kind", "zero".into()),
            SourceKind::Power { coef, p } => {
                put("source", "kind", "power".into());
                put("source", "coef", coef.to_string());
                put("source", "p", p.to_string());
            }
            SourceKind::Linear { a } => {
                put("source", "kind", "linear".into());
                put("source", "a", a.to_string());
            }
            SourceKind::LinearPlusPower { a, b, p } => {
                put("source", "kind", "linear_plus_power".into());
                put("source", "a", a.to_string());
                put("source", "b", b.to_string());
                put("source", "p", p.to_string());
            }
            SourceKind::ClampedLinear { a, cap } => {
                put("source", "kind", "clamped_linear".into());
                put("source", "a", a.to_string());
                put("source", "cap", cap.to_string());
            }
            SourceKind::Table { knots } => {
                put("source", "kind", "table".into());
                let k: Vec<String> = knots.iter().map(|(s, v)| format!("{s}:{v}")).collect();
                put("source", "knots", k.join(","));
            }
        }
        put("source", "minorant", if self.source.self_minorant { "self" } else { "none" }.into());
        match &self.datum {
            DatumSpec::Constant(c) => {
                put("datum", "kind", "constant".into());
                put("datum", "value", c.to_string());
            }
            DatumSpec::Indicator { vertices, value } => {
                put("datum", "kind", "indicator".into());
                put("datum", "vertices", vertices.join(","));
                put("datum", "value", value.to_string());
            }
            DatumSpec::Eigenfunction(s) => {
                put("datum", "kind", "eigenfunction".into());
                put("datum", "value", s.to_string());
            }
            DatumSpec::File(p) => {
                put("datum", "kind", "file".into());
                put("datum", "path", p.display().to_string());
            }
        }
        put("solver", "delta", self.delta.to_string());
        put("solver", "gamma", self.gamma.to_string());
        put("solver", "horizon", self.horizon.to_string());
        if let Some(c) = self.cap {
            put("solver", "cap", c.to_string());
        }
        put("solver", "picard_tol", self.picard_tol.to_string());
        put("solver", "quad_tol", self.quad_tol.to_string());
        put("solver", "max_iter", self.max_iter.to_string());
        put("solver", "samples", self.samples.to_string());
        put("solver", "mode", match self.mode {
            SolveMode::Ball => "ball".into(),
            SolveMode::Weighted => "weighted".into(),
        });
        if let Some(x) = &self.phi_vertex {
            put("solver", "phi_vertex", x.clone());
        }
        ini
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.to_ini().write_to(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig { picard_tol: self.picard_tol, quad_tol: self.quad_tol, max_iter: self.max_iter, ..Default::default() }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("out").join(&self.name))
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",")
}

pub fn load_graph(spec: &GraphSpec) -> Result<WeightedGraph, String> {
    match spec {
        GraphSpec::Family(f) => generate_graph(f).map_err(|e| e.to_string()),
        GraphSpec::File(p) => read_graph(p).map_err(|e| format!("{}: {e}", p.display())),
    }
}

fn parse_datum_file(path: &Path, g: &WeightedGraph) -> Result<VertexFunction, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut u = VertexFunction::zeros(g.num_vertices());
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == "vertex,value" {
            continue;
        }
        let (id, v) = line.split_once(',').ok_or_else(|| format!("{}:{}: expected id,value", path.display(), n + 1))?;
        let i = g.index_of(id.trim()).map_err(|e| format!("{}:{}: {e}", path.display(), n + 1))?;
        u.0[i] = v.trim().parse().map_err(|_| format!("{}:{}: bad value `{v}`", path.display(), n + 1))?;
    }
    Ok(u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub vertices: usize,
    pub edges: usize,
    pub truncation: usize,
    pub center: String,
    pub radius: Option<usize>,
    pub has_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub method: String,
    pub horizon: f64,
    pub final_sup_norm: f64,
    pub sup_norm: f64,
    pub max_ratio: f64,
    pub ratio_bound: f64,
    pub residual: f64,
    pub clamp_events: usize,
    /// Inter-radius gaps, for exhaustion runs.
    pub gaps: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub kind: String,
    pub path: Option<String>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: String,
    pub failure: Option<StageFailure>,
    pub graph: Option<GraphSummary>,
    pub spectral: Option<SpectralEstimate>,
    pub classification: Option<Classification>,
    pub detection: Option<Outcome>,
    pub certificate: Option<BlowupCertificate>,
    pub solver: Option<SolverSummary>,
    pub timings: BTreeMap<String, f64>,
    pub manifest: Vec<ManifestEntry>,
    #[serde(skip)]
    pub data: RunData,
}

/// Traces kept for plotting; not part of the JSON report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunData {
    pub ids: Vec<String>,
    pub detection: Option<Detection>,
    pub phi: Option<PhiTrace>,
    pub solution: Option<SolutionPath>,
    pub phi_note: Option<String>,
}

impl RunReport {
    pub fn is_success(&self) -> bool {
        self.failure.is_none()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Stages {
    timings: BTreeMap<String, f64>,
}

impl Stages {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T, String>) -> Result<T, StageFailure> {
        let start = Instant::now();
        let out = f();
        self.timings.insert(name.to_string(), start.elapsed().as_secs_f64());
        log::info!("stage {name} finished in {:.3}s", self.timings[name]);
        out.map_err(|message| StageFailure { stage: name.into(), message })
    }
}

fn grid(horizon: f64, samples: usize) -> Vec<f64> {
    (0..samples).map(|i| if i + 1 == samples { horizon } else { horizon * i as f64 / (samples - 1) as f64 }).collect()
}

/// Runs ingest → validate → lambda1 → classify → detect → solve → phi.
/// Stage errors are recorded in the report rather than returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> RunReport {
    run_stages(cfg, false)
}

/// Stops after the classifier; detector and solver entries stay `None`.
pub fn classify_experiment(cfg: &ExperimentConfig) -> RunReport {
    run_stages(cfg, true)
}

fn run_stages(cfg: &ExperimentConfig, classify_only: bool) -> RunReport {
    let mut report = RunReport {
        config: cfg.to_text(),
        failure: None,
        graph: None,
        spectral: None,
        classification: None,
        detection: None,
        certificate: None,
        solver: None,
        timings: BTreeMap::new(),
        manifest: Vec::new(),
        data: RunData::default(),
    };
    let mut stages = Stages { timings: BTreeMap::new() };
    if let Err(f) = pipeline(cfg, &mut report, &mut stages, classify_only) {
        log::error!("stage {} failed: {}", f.stage, f.message);
        report.failure = Some(f);
    }
    report.timings = stages.timings;
    report
}

fn pipeline(
    cfg: &ExperimentConfig,
    report: &mut RunReport,
    stages: &mut Stages,
    classify_only: bool,
) -> Result<(), StageFailure> {
    let g = stages.run("ingest", || load_graph(&cfg.graph))?;
    stages.run("validate", || {
        let v = g.validate();
        if v.is_valid() {
            Ok(())
        } else {
            Err(format!("graph violates {:?}", v.violations))
        }
    })?;
    let x0 = match &cfg.center {
        Some(id) => stages.run("validate", || g.index_of(id).map_err(|e| e.to_string()))?,
        None => 0,
    };
    let ball: Ball = match cfg.radius {
        Some(r) => g.ball(x0, r),
        None => {
            let mut b = g.whole();
            b.center = x0;
            b
        }
    };
    let eig = EigenOptions { seed: cfg.seed, ..Default::default() };
    let gen = TruncatedGenerator::with_options(&g, &ball, GeneratorOptions::default())
        .map_err(|e| StageFailure { stage: "lambda1_estimate".into(), message: e.to_string() })?;
    report.graph = Some(GraphSummary {
        vertices: g.num_vertices(),
        edges: g.num_edges(),
        truncation: gen.len(),
        center: g.id(x0).to_string(),
        radius: cfg.radius,
        has_boundary: gen.has_boundary(),
    });
    report.data.ids = gen.ids().to_vec();

    let (spectral, phi1) = stages.run("lambda1_estimate", || {
        let pair = gen.principal_eigenpair(&eig).map_err(|e| e.to_string())?;
        let mut ladder: Vec<usize> = match cfg.radius {
            Some(r) => cfg.radii.iter().copied().filter(|x| *x < r).collect(),
            None => Vec::new(),
        };
        let est = if let Some(r) = cfg.radius {
            ladder.push(r);
            lambda1_estimate(&g, x0, &ladder, &eig).map_err(|e| e.to_string())?
        } else {
            // radius 0 stands for the whole graph
            let p = TracePoint { radius: 0, lambda1: pair.lambda, residual: pair.residual };
            SpectralEstimate { lambda1: pair.lambda, radius_used: 0, residual: pair.residual, monotone_trace: vec![p] }
        };
        Ok((est, pair.vector))
    })?;
    report.spectral = Some(spectral.clone());

    let src = cfg.source.build();
    let u0_global = match &cfg.datum {
        DatumSpec::Constant(c) => VertexFunction::constant(g.num_vertices(), *c),
        DatumSpec::Indicator { vertices, value } => {
            let mut u = VertexFunction::zeros(g.num_vertices());
            for id in vertices {
                let i = stages.run("ingest", || g.index_of(id).map_err(|e| e.to_string()))?;
                u.0[i] = *value;
            }
            u
        }
        DatumSpec::Eigenfunction(s) => ball.extend(&phi1.scaled(*s), g.num_vertices()),
        DatumSpec::File(p) => stages.run("ingest", || parse_datum_file(p, &g))?,
    };
    let u0 = ball.restrict(&u0_global);
    if !u0.is_nonnegative() {
        return Err(StageFailure { stage: "ingest".into(), message: "datum must be nonnegative".into() });
    }

    let classification = stages.run("classify", || {
        let opts = ClassifyOptions {
            test_times: grid(cfg.horizon, 8).into_iter().skip(1).collect(),
            t_under: cfg.gamma.min(cfg.horizon),
            ..Default::default()
        };
        classify(&gen, &src, &u0, &spectral, cfg.delta, &opts).map_err(|e| e.to_string())
    })?;
    report.classification = Some(classification.clone());
    if classify_only {
        return Ok(());
    }

    let sup0 = u0.sup_norm();
    let cap = cfg.cap.unwrap_or(1e6 * sup0.max(cfg.delta));
    let solver = cfg.solver_config();
    let detection = stages.run("detect_blowup", || {
        let dcfg = DetectorConfig { solver, delta: Some(cfg.delta.max(sup0)), ..Default::default() };
        detect_blowup(&gen, &src, &u0, cfg.horizon, cap, &dcfg).map_err(|e| e.to_string())
    })?;
    report.detection = Some(detection.outcome.clone());

    let solve_horizon = match &detection.outcome {
        Outcome::Blowup { t_est, .. } => 0.9 * t_est.min(*detection.times.last().unwrap()),
        _ => cfg.horizon,
    };
    let times = grid(solve_horizon, cfg.samples);
    let exhaust = cfg.radii.len() >= 2 && matches!(detection.outcome, Outcome::Bounded { .. });
    let (path, summary) = stages.run("solve", || {
        if exhaust {
            let opts = ExhaustOptions { solver, ..Default::default() };
            let ex = exhaust_solve(&g, &src, &u0_global, x0, &cfg.radii, &times, &opts).map_err(|e| e.to_string())?;
            let path = ex.global_path(g.num_vertices());
            let path = SolutionPath::new(
                path.times.clone(),
                path.states.iter().map(|s| ball.restrict(s)).collect(),
                path.iterations.clone(),
            );
            let diag = ex.diagnostics.last().unwrap();
            let summary = SolverSummary {
                method: "exhaustion".into(),
                horizon: solve_horizon,
                final_sup_norm: path.final_state().sup_norm(),
                sup_norm: path.sup_norm(),
                max_ratio: diag.max_ratio,
                ratio_bound: diag.ratio_bound,
                residual: diag.residual,
                clamp_events: diag.clamp_events,
                gaps: ex.gaps.clone(),
                warnings: diag.warnings.clone(),
            };
            Ok((path, summary))
        } else {
            let mode = match cfg.mode {
                SolveMode::Ball => PicardMode::BallSup { segment: None },
                SolveMode::Weighted => {
                    let params = crate::semilinear::MildSpaceParams::fit(
                        &gen,
                        &src,
                        &u0,
                        spectral.lambda1,
                        cfg.delta,
                        cfg.gamma,
                    )
                    .map_err(|e| e.to_string())?;
                    PicardMode::GlobalWeighted { params, lambda1: spectral.lambda1, delta: cfg.delta }
                }
            };
            let (path, diag) = picard_solve(&gen, &src, &u0, &times, &mode, &solver).map_err(|e| e.to_string())?;
            let summary = SolverSummary {
                method: match diag.mode {
                    crate::semilinear::ModeUsed::BallSup => "ball_sup".into(),
                    crate::semilinear::ModeUsed::GlobalWeighted => "global_weighted".into(),
                },
                horizon: solve_horizon,
                final_sup_norm: path.final_state().sup_norm(),
                sup_norm: path.sup_norm(),
                max_ratio: diag.max_ratio,
                ratio_bound: diag.ratio_bound,
                residual: diag.residual,
                clamp_events: diag.clamp_events,
                gaps: Vec::new(),
                warnings: diag.warnings,
            };
            Ok((path, summary))
        }
    })?;
    report.solver = Some(summary);

    match &cfg.phi_vertex {
        Some(id) => {
            let tr = stages.run("phi", || {
                let gx = g.index_of(id).map_err(|e| e.to_string())?;
                let lx = gen.local(gx).ok_or_else(|| format!("vertex `{id}` is outside the truncation"))?;
                phi_trace(&gen, &path, lx, solve_horizon).map_err(|e| e.to_string())
            })?;
            report.data.phi = Some(tr);
        }
        None => report.data.phi_note = Some("no phi_vertex configured".into()),
    }

    let bound = match (&src.h, report.data.phi.as_ref()) {
        (Some(_), Some(tr)) if tr.phi0 > 0.0 => ode_comparison_bound(&src, tr.phi0, cfg.delta).ok(),
        _ => None,
    };
    let c1 = Some(u0_global[x0] * g.mu()[x0]);
    report.certificate =
        Some(certificate(&classification, &src, spectral.lambda1, bound.as_ref(), Some(&detection), c1));
    report.data.solution = Some(path);
    report.data.detection = Some(detection);
    Ok(())
}

/// Writes the CSV traces and returns the manifest. CSVs carry no timings,
/// so identical configs give identical bytes.
pub fn emit_plot_data(report: &RunReport, dir: &Path) -> std::io::Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();
    let mut emit = |kind: &str, file: &str, table: Option<CsvTable>, missing: &str| -> std::io::Result<()> {
        match table {
            Some(t) => {
                let path = dir.join(file);
                t.write(&path)?;
                manifest.push(ManifestEntry { kind: kind.into(), path: Some(file.into()), note: String::new() });
            }
            None => manifest.push(ManifestEntry { kind: kind.into(), path: None, note: missing.into() }),
        }
        Ok(())
    };
    let d = &report.data;
    emit("norm_trace", "norm_trace.csv", d.detection.as_ref().map(|x| x.norm_csv()), "detector did not run")?;
    emit(
        "reciprocal_norm",
        "reciprocal_norm.csv",
        d.detection.as_ref().map(|x| x.reciprocal_csv()),
        "detector did not run",
    )?;
    emit(
        "spectral_trace",
        "spectral_trace.csv",
        report.spectral.as_ref().map(|s| s.trace_csv()),
        "spectral stage did not run",
    )?;
    emit(
        "phi_trace",
        "phi_trace.csv",
        d.phi.as_ref().map(|p| p.to_csv()),
        d.phi_note.as_deref().unwrap_or("phi trace unavailable"),
    )?;
    emit("solution", "solution.csv", d.solution.as_ref().map(|p| p.to_csv(&d.ids)), "solver did not run")?;
    Ok(manifest)
}

/// Emits CSVs and `report.json` into `dir`.
pub fn write_outputs(report: &mut RunReport, dir: &Path) -> std::io::Result<()> {
    report.manifest = emit_plot_data(report, dir)?;
    report.manifest.push(ManifestEntry { kind: "report".into(), path: Some("report.json".into()), note: String::new() });
    std::fs::write(dir.join("report.json"), report.to_json())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: &str = "\
[experiment]
name = square

[graph]
family = complete(2)

[source]
kind = power
p = 2
minorant = self

[datum]
kind = constant
value = 1

[solver]
delta = 1
horizon = 2
";

    #[test]
    fn config_round_trip() {
        let cfg = ExperimentConfig::parse(SQUARE).unwrap();
        assert_eq!(cfg.graph, GraphSpec::Family(GraphFamily::Complete { n: 2 }));
        let again = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again);
        let fancy = ExperimentConfig {
            radii: vec![2, 4, 6],
            radius: Some(6),
            center: Some("v00".into()),
            source: SourceSpec { kind: SourceKind::Table { knots: vec![(0.0, 0.0), (1.0, 0.5)] }, self_minorant: false },
            datum: DatumSpec::Indicator { vertices: vec!["a".into(), "b".into()], value: 0.1 },
            cap: Some(1e9),
            phi_vertex: Some("a".into()),
            mode: SolveMode::Weighted,
            ..cfg
        };
        assert_eq!(ExperimentConfig::parse(&fancy.to_text()).unwrap(), fancy);
    }

    #[test]
    fn overrides_and_errors() {
        let cfg = ExperimentConfig::parse_with_overrides(SQUARE, &["solver.horizon=3".into()]).unwrap();
        assert_eq!(cfg.horizon, 3.0);
        assert!(matches!(
            ExperimentConfig::parse_with_overrides(SQUARE, &["horizon=3".into()]),
            Err(ConfigError::BadOverride(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse_with_overrides(SQUARE, &["solver.horizon=-1".into()]),
            Err(ConfigError::Invalid { .. })
        ));
        let missing = SQUARE.replace("delta = 1\n", "");
        assert!(matches!(ExperimentConfig::parse(&missing), Err(ConfigError::Missing { .. })));
    }

    #[test]
    fn square_run_blows_up_near_one() {
        let report = run_experiment(&ExperimentConfig::parse(SQUARE).unwrap());
        assert!(report.is_success(), "{:?}", report.failure);
        match report.detection.unwrap() {
            Outcome::Blowup { t_est, .. } => assert!((t_est - 1.0).abs() < 0.02),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_graph_file_names_ingest_stage() {
        let text = SQUARE.replace("family = complete(2)", "file = /nonexistent/graph.txt");
        let report = run_experiment(&ExperimentConfig::parse(&text).unwrap());
        assert_eq!(report.failure.unwrap().stage, "ingest");
    }
}
