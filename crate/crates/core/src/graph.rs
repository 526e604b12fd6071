//! Weighted graphs `(G, ω, μ)`, the weighted Laplacian, combinatorial
//! distance, balls and cutoff profiles.
//!
//! A [`WeightedGraph`] is always a finite carrier: infinite graphs are only
//! ever represented through their truncations. Vertex identifiers are opaque
//! strings; they are mapped to dense indices in sorted identifier order so
//! that every downstream computation is reproducible.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard ceiling on generated graph sizes.
pub const MAX_GENERATED_VERTICES: usize = 5_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("duplicate vertex `{0}`")]
    DuplicateVertex(String),
    #[error("vertex index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("distance undefined: `{from}` cannot reach `{to}`")]
    Unreachable { from: String, to: String },
    #[error("non-finite value {value} for {what}")]
    NonFinite { what: String, value: f64 },
    #[error("invalid generator parameters: {0}")]
    BadFamily(String),
    #[error("generated graph would have more than {MAX_GENERATED_VERTICES} vertices")]
    TooLarge,
    #[error("function has {got} values, carrier has {expected} vertices")]
    LengthMismatch { expected: usize, got: usize },
}

/// A real-valued function on a finite carrier, stored in carrier order.
///
/// The carrier is either a whole [`WeightedGraph`] (indexed by vertex index)
/// or a [`Ball`] (indexed by position in `Ball::members`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexFunction(pub Vec<f64>);

impl VertexFunction {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self(vec![c; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// `sup_x |u(x)|`.
    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Unweighted `Σ_x |u(x)|`.
    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).sum()
    }

    /// `Σ_x |u(x)| μ(x)`.
    pub fn l1_norm_weighted(&self, mu: &[f64]) -> f64 {
        self.0.iter().zip(mu).map(|(v, m)| v.abs() * m).sum()
    }

    /// μ-weighted pairing `Σ_x u(x) v(x) μ(x)`.
    pub fn pairing(&self, other: &VertexFunction, mu: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .zip(mu)
            .map(|((a, b), m)| a * b * m)
            .sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|v| v * c).collect())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|v| *v >= 0.0)
    }

    pub fn max_abs_diff(&self, other: &VertexFunction) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl From<Vec<f64>> for VertexFunction {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl std::ops::Index<usize> for VertexFunction {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Finite weighted graph. Adjacency is stored per vertex as `(neighbor, ω)`
/// sorted by neighbor index; entries are kept exactly as supplied so that
/// [`WeightedGraph::validate`] can report asymmetric or looped input.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    mu: Vec<f64>,
    adj: Vec<Vec<(usize, f64)>>,
}

/// Incremental construction of a [`WeightedGraph`].
#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    nodes: BTreeMap<String, f64>,
    arcs: Vec<(String, String, f64)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(mut self, id: impl Into<String>, mu: f64) -> Self {
        self.nodes.insert(id.into(), mu);
        self
    }

    pub fn add_node(&mut self, id: impl Into<String>, mu: f64) -> Result<(), GraphError> {
        let id = id.into();
        if self.nodes.contains_key(&id) {
            return Err(GraphError::DuplicateVertex(id));
        }
        self.nodes.insert(id, mu);
        Ok(())
    }

    /// Undirected edge: sets `ω(a,b) = ω(b,a) = w`.
    pub fn edge(mut self, a: impl Into<String>, b: impl Into<String>, w: f64) -> Self {
        self.add_edge(a, b, w);
        self
    }

    pub fn add_edge(&mut self, a: impl Into<String>, b: impl Into<String>, w: f64) {
        let (a, b) = (a.into(), b.into());
        if a == b {
            self.arcs.push((a, b, w));
        } else {
            self.arcs.push((a.clone(), b.clone(), w));
            self.arcs.push((b, a, w));
        }
    }

    /// One-sided weight `ω(a,b) = w`; only useful to describe raw data that
    /// may violate symmetry.
    pub fn arc(mut self, a: impl Into<String>, b: impl Into<String>, w: f64) -> Self {
        self.arcs.push((a.into(), b.into(), w));
        self
    }

    pub fn build(self) -> Result<WeightedGraph, GraphError> {
        let ids: Vec<String> = self.nodes.keys().cloned().collect();
        let index: HashMap<String, usize> =
            ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mu: Vec<f64> = self.nodes.values().copied().collect();
        for (id, m) in ids.iter().zip(&mu) {
            if !m.is_finite() {
                return Err(GraphError::NonFinite { what: format!("mu({id})"), value: *m });
            }
        }
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); ids.len()];
        for (a, b, w) in self.arcs {
            if !w.is_finite() {
                return Err(GraphError::NonFinite { what: format!("omega({a},{b})"), value: w });
            }
            let i = *index.get(&a).ok_or_else(|| GraphError::UnknownVertex(a.clone()))?;
            let j = *index.get(&b).ok_or_else(|| GraphError::UnknownVertex(b.clone()))?;
            *acc[i].entry(j).or_insert(0.0) += w;
        }
        let adj = acc
            .into_iter()
            .map(|row| row.into_iter().filter(|(_, w)| *w != 0.0).collect())
            .collect();
        Ok(WeightedGraph { ids, index, mu, adj })
    }
}

/// One violated axiom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axiom", rename_all = "snake_case")]
pub enum AxiomViolation {
    Symmetry { x: String, y: String, forward: f64, backward: f64 },
    ZeroDiagonal { x: String, weight: f64 },
    NegativeWeight { x: String, y: String, weight: f64 },
    NonPositiveMeasure { x: String, mu: f64 },
    InfiniteDegree { x: String },
    Disconnected { components: usize },
    NotLocallyFinite { x: String },
    Empty,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<AxiomViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_connectivity_violation(&self) -> bool {
        self.violations.iter().any(|v| matches!(v, AxiomViolation::Disconnected { .. }))
    }

    pub fn has_zero_diagonal_violation(&self) -> bool {
        self.violations.iter().any(|v| matches!(v, AxiomViolation::ZeroDiagonal { .. }))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "{v:?}")?;
        }
        Ok(())
    }
}

impl WeightedGraph {
    pub fn num_vertices(&self) -> usize {
        self.ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adj
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().filter(|(j, _)| *j > i).count())
            .sum()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Result<usize, GraphError> {
        self.index.get(id).copied().ok_or_else(|| GraphError::UnknownVertex(id.to_string()))
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adj[i]
            .binary_search_by_key(&j, |(k, _)| *k)
            .map(|p| self.adj[i][p].1)
            .unwrap_or(0.0)
    }

    /// Weighted degree `Σ_y ω(x,y)`.
    pub fn degree(&self, i: usize) -> f64 {
        self.adj[i].iter().map(|(_, w)| w).sum()
    }

    /// Checks every axiom and collects all violations.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.ids.is_empty() {
            violations.push(AxiomViolation::Empty);
            return ValidationReport { violations };
        }
        for (i, row) in self.adj.iter().enumerate() {
            for &(j, w) in row {
                if i == j {
                    violations.push(AxiomViolation::ZeroDiagonal { x: self.ids[i].clone(), weight: w });
                    continue;
                }
                if w < 0.0 {
                    violations.push(AxiomViolation::NegativeWeight {
                        x: self.ids[i].clone(),
                        y: self.ids[j].clone(),
                        weight: w,
                    });
                }
                let back = self.weight(j, i);
                if (i < j && back != w) || (i > j && back == 0.0) {
                    violations.push(AxiomViolation::Symmetry {
                        x: self.ids[i].clone(),
                        y: self.ids[j].clone(),
                        forward: w,
                        backward: back,
                    });
                }
            }
            if !self.degree(i).is_finite() {
                violations.push(AxiomViolation::InfiniteDegree { x: self.ids[i].clone() });
            }
        }
        for (i, m) in self.mu.iter().enumerate() {
            if !(*m > 0.0) || !m.is_finite() {
                violations.push(AxiomViolation::NonPositiveMeasure { x: self.ids[i].clone(), mu: *m });
            }
        }
        // Finite adjacency lists make local finiteness automatic here.
        let components = self.components();
        if components > 1 {
            violations.push(AxiomViolation::Disconnected { components });
        }
        ValidationReport { violations }
    }

    fn components(&self) -> usize {
        let n = self.num_vertices();
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            let mut queue = VecDeque::from([s]);
            while let Some(x) = queue.pop_front() {
                for &(y, w) in &self.adj[x] {
                    if w > 0.0 && !seen[y] {
                        seen[y] = true;
                        queue.push_back(y);
                    }
                }
            }
        }
        count
    }

    /// `Δu(x) = (1/μ(x)) Σ_y (u(y) − u(x)) ω(x,y)`.
    pub fn laplacian_apply(&self, u: &VertexFunction) -> Result<VertexFunction, GraphError> {
        if u.len() != self.num_vertices() {
            return Err(GraphError::LengthMismatch { expected: self.num_vertices(), got: u.len() });
        }
        let out = (0..self.num_vertices())
            .map(|x| {
                let s: f64 = self.adj[x].iter().map(|&(y, w)| (u[y] - u[x]) * w).sum();
                s / self.mu[x]
            })
            .collect();
        Ok(VertexFunction(out))
    }

    /// Breadth-first hop distances from `source` over positive-weight edges;
    /// `None` marks unreachable vertices.
    pub fn distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_vertices()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(x) = queue.pop_front() {
            let d = dist[x].unwrap();
            for &(y, w) in &self.adj[x] {
                if w > 0.0 && dist[y].is_none() {
                    dist[y] = Some(d + 1);
                    queue.push_back(y);
                }
            }
        }
        dist
    }

    pub fn distance(&self, x: usize, y: usize) -> Result<usize, GraphError> {
        let n = self.num_vertices();
        if x >= n {
            return Err(GraphError::IndexOutOfRange(x));
        }
        if y >= n {
            return Err(GraphError::IndexOutOfRange(y));
        }
        self.distances_from(x)[y].ok_or_else(|| GraphError::Unreachable {
            from: self.ids[x].clone(),
            to: self.ids[y].clone(),
        })
    }

    /// `B_R(x0) = {x : d(x, x0) < R}`.
    pub fn ball(&self, x0: usize, radius: usize) -> Ball {
        let dist = self.distances_from(x0);
        let members = dist
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.filter(|d| *d < radius).map(|_| i))
            .collect();
        Ball { center: x0, radius: Some(radius), members }
    }

    /// The whole vertex set as a ball with no Dirichlet boundary.
    pub fn whole(&self) -> Ball {
        Ball { center: 0, radius: None, members: (0..self.num_vertices()).collect() }
    }

    /// Piecewise-linear cutoff `ζ_R(x) = clamp((R − d)/(R − ⌈R/2⌉), 0, 1)`.
    pub fn cutoff_zeta(&self, x0: usize, radius: usize) -> VertexFunction {
        assert!(radius >= 2, "cutoff radius must be at least 2");
        let r = radius as f64;
        let width = r - (radius as f64 / 2.0).ceil();
        let dist = self.distances_from(x0);
        VertexFunction(
            dist.iter()
                .map(|d| match d {
                    Some(d) => ((r - *d as f64) / width).clamp(0.0, 1.0),
                    None => 0.0,
                })
                .collect(),
        )
    }
}

/// Ball of a graph. `radius == None` denotes the full vertex set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: usize,
    pub radius: Option<usize>,
    /// Sorted global vertex indices.
    pub members: Vec<usize>,
}

impl Ball {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.members.binary_search(&x).is_ok()
    }

    pub fn position(&self, x: usize) -> Option<usize> {
        self.members.binary_search(&x).ok()
    }

    /// Restrict a graph function to the ball.
    pub fn restrict(&self, u: &VertexFunction) -> VertexFunction {
        VertexFunction(self.members.iter().map(|&i| u[i]).collect())
    }

    /// Extend a ball function by zero to the whole graph.
    pub fn extend(&self, u: &VertexFunction, n: usize) -> VertexFunction {
        let mut out = vec![0.0; n];
        for (p, &i) in self.members.iter().enumerate() {
            out[i] = u[p];
        }
        VertexFunction(out)
    }
}

/// Finite graph families used as fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GraphFamily {
    /// Root of degree `d`, every other internal vertex has `d − 1` children,
    /// unit weights, `μ = degree`.
    RegularTree { degree: usize, depth: usize },
    /// Path `0 – 1 – … – n−1`, unit weights, `μ ≡ 1`.
    LatticeLine { n: usize },
    /// Unit weights, `μ ≡ 1`.
    Complete { n: usize },
    /// Unit weights, `μ = degree ≡ 2`.
    Cycle { n: usize },
    /// Path with `ω(i, i+1) = ratio^i` and `μ = Σ_y ω(·, y)`.
    WeightedLine { n: usize, ratio: f64 },
}

impl GraphFamily {
    /// Parses `regular_tree(3,5)`, `lattice_line(10)`, `complete(2)`,
    /// `cycle(4)`, `weighted_line(20,2)`.
    pub fn parse(s: &str) -> Result<Self, GraphError> {
        let s = s.trim();
        let bad = || GraphError::BadFamily(s.to_string());
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let name = s[..open].trim();
        let args: Vec<&str> = s[open + 1..s.len() - 1].split(',').map(str::trim).collect();
        let int = |k: usize| -> Result<usize, GraphError> {
            args.get(k).and_then(|a| a.parse().ok()).ok_or_else(bad)
        };
        let fam = match (name, args.len()) {
            ("regular_tree", 2) => GraphFamily::RegularTree { degree: int(0)?, depth: int(1)? },
            ("lattice_line", 1) => GraphFamily::LatticeLine { n: int(0)? },
            ("complete", 1) => GraphFamily::Complete { n: int(0)? },
            ("cycle", 1) => GraphFamily::Cycle { n: int(0)? },
            ("weighted_line", 2) => GraphFamily::WeightedLine {
                n: int(0)?,
                ratio: args[1].parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        Ok(fam)
    }
}

impl fmt::Display for GraphFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphFamily::RegularTree { degree, depth } => write!(f, "regular_tree({degree},{depth})"),
            GraphFamily::LatticeLine { n } => write!(f, "lattice_line({n})"),
            GraphFamily::Complete { n } => write!(f, "complete({n})"),
            GraphFamily::Cycle { n } => write!(f, "cycle({n})"),
            GraphFamily::WeightedLine { n, ratio } => write!(f, "weighted_line({n},{ratio})"),
        }
    }
}

fn padded_ids(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len();
    (0..n).map(|i| format!("v{i:0width$}")).collect()
}

fn tree_size(degree: usize, depth: usize) -> Option<usize> {
    let mut total: usize = 1;
    let mut level: usize = 1;
    for k in 0..depth {
        level = level.checked_mul(if k == 0 { degree } else { degree - 1 })?;
        total = total.checked_add(level)?;
        if total > MAX_GENERATED_VERTICES {
            return None;
        }
    }
    Some(total)
}

pub fn generate_graph(family: &GraphFamily) -> Result<WeightedGraph, GraphError> {
    let bad = |m: &str| Err(GraphError::BadFamily(m.to_string()));
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let n = match *family {
        GraphFamily::RegularTree { degree, depth } => {
            if degree < 2 {
                return bad("regular_tree needs degree >= 2");
            }
            let n = tree_size(degree, depth).ok_or(GraphError::TooLarge)?;
            // breadth-first numbering: children of vertex i are consecutive
            let mut next = 1;
            let mut frontier = vec![0usize];
            for k in 0..depth {
                let kids = if k == 0 { degree } else { degree - 1 };
                let mut new_frontier = Vec::with_capacity(frontier.len() * kids);
                for &p in &frontier {
                    for _ in 0..kids {
                        edges.push((p, next, 1.0));
                        new_frontier.push(next);
                        next += 1;
                    }
                }
                frontier = new_frontier;
            }
            n
        }
        GraphFamily::LatticeLine { n } | GraphFamily::WeightedLine { n, .. } => {
            if n == 0 {
                return bad("line needs n >= 1");
            }
            let ratio = match *family {
                GraphFamily::WeightedLine { ratio, .. } => ratio,
                _ => 1.0,
            };
            if !(ratio > 0.0) || !ratio.is_finite() {
                return bad("weighted_line needs ratio > 0");
            }
            for i in 0..n.saturating_sub(1) {
                edges.push((i, i + 1, ratio.powi(i as i32)));
            }
            n
        }
        GraphFamily::Complete { n } => {
            if n == 0 {
                return bad("complete needs n >= 1");
            }
            for i in 0..n {
                for j in i + 1..n {
                    edges.push((i, j, 1.0));
                }
            }
            n
        }
        GraphFamily::Cycle { n } => {
            if n < 3 {
                return bad("cycle needs n >= 3");
            }
            for i in 0..n {
                edges.push((i, (i + 1) % n, 1.0));
            }
            n
        }
    };
    if n > MAX_GENERATED_VERTICES {
        return Err(GraphError::TooLarge);
    }
    let ids = padded_ids(n);
    let mut degree = vec![0.0; n];
    for &(a, b, w) in &edges {
        degree[a] += w;
        degree[b] += w;
    }
    let mu: Vec<f64> = match family {
        GraphFamily::LatticeLine { .. } | GraphFamily::Complete { .. } => vec![1.0; n],
        _ => degree.iter().map(|d| if *d > 0.0 { *d } else { 1.0 }).collect(),
    };
    let mut b = GraphBuilder::new();
    for (id, m) in ids.iter().zip(&mu) {
        b = b.node(id.clone(), *m);
    }
    for (a, c, w) in edges {
        b.add_edge(ids[a].clone(), ids[c].clone(), w);
    }
    b.build()
}
