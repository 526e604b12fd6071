//! Line-oriented graph files and CSV writers.
//!
//! ```text
//! graph v2
//! node a 1.0
//! node b 2.5
//! edge a b 0.75
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::graph::{GraphBuilder, GraphError, WeightedGraph};

pub const GRAPH_HEADER: &str = "graph v2";

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Graph { line: usize, source: GraphError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn syntax(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, msg: msg.into() }
}

fn number(tok: Option<&str>, line: usize, what: &str) -> Result<f64, ParseError> {
    let tok = tok.ok_or_else(|| syntax(line, format!("missing {what}")))?;
    tok.parse::<f64>().map_err(|_| syntax(line, format!("bad {what} `{tok}`")))
}

pub fn parse_graph(text: &str) -> Result<WeightedGraph, ParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, GRAPH_HEADER)) => {}
        Some((n, other)) => return Err(syntax(n, format!("expected `{GRAPH_HEADER}`, found `{other}`"))),
        None => return Err(syntax(1, "empty graph file")),
    }
    let mut builder = GraphBuilder::new();
    let mut nodes = HashSet::new();
    let mut pairs = HashSet::new();
    for (n, line) in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("node") => {
                let id = tok.next().ok_or_else(|| syntax(n, "missing node id"))?;
                let mu = number(tok.next(), n, "node measure")?;
                if !nodes.insert(id.to_string()) {
                    return Err(ParseError::Graph { line: n, source: GraphError::DuplicateVertex(id.into()) });
                }
                builder.add_node(id, mu).map_err(|e| ParseError::Graph { line: n, source: e })?;
            }
            Some("edge") => {
                let a = tok.next().ok_or_else(|| syntax(n, "missing edge endpoint"))?;
                let b = tok.next().ok_or_else(|| syntax(n, "missing edge endpoint"))?;
                let w = number(tok.next(), n, "edge weight")?;
                for v in [a, b] {
                    if !nodes.contains(v) {
                        return Err(ParseError::Graph { line: n, source: GraphError::UnknownVertex(v.into()) });
                    }
                }
                let key = if a <= b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
                if !pairs.insert(key) {
                    return Err(syntax(n, format!("duplicate edge {a} {b}")));
                }
                builder.add_edge(a, b, w);
            }
            Some(other) => return Err(syntax(n, format!("unknown record `{other}`"))),
            None => unreachable!(),
        }
        if tok.next().is_some() {
            return Err(syntax(n, "trailing tokens"));
        }
    }
    builder.build().map_err(|e| ParseError::Graph { line: 0, source: e })
}

pub fn read_graph(path: &Path) -> Result<WeightedGraph, ParseError> {
    parse_graph(&std::fs::read_to_string(path)?)
}

/// Serializes a graph; node and edge lines come out in index order.
pub fn write_graph(g: &WeightedGraph) -> String {
    let mut out = String::from(GRAPH_HEADER);
    out.push('\n');
    for (i, id) in g.ids().iter().enumerate() {
        let _ = writeln!(out, "node {id} {}", g.mu()[i]);
    }
    for i in 0..g.num_vertices() {
        for &(j, w) in g.neighbors(i) {
            if j > i {
                let _ = writeln!(out, "edge {} {} {w}", g.id(i), g.id(j));
            }
        }
    }
    out
}

/// Minimal CSV table; values are written with Rust's shortest round-trip
/// float formatting so output is byte-stable.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_graph, GraphFamily};

    #[test]
    fn parses_minimal_file() {
        let g = parse_graph("graph v2\n# comment\nnode a 1\nnode b 2.5\n\nedge a b 0.75\n").unwrap();
        assert_eq!(g.num_vertices(), 2);
        assert_eq!(g.weight(0, 1), 0.75);
        assert_eq!(g.weight(1, 0), 0.75);
        assert_eq!(g.mu()[1], 2.5);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_graph("graph v2\nnode a 1\nnode b 1\nedge a b 1\nedge b a 2\n").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 5, .. }), "{err}");
        let err = parse_graph("graph v2\nnode a 1\nedge a c 1\n").unwrap_err();
        assert!(matches!(err, ParseError::Graph { line: 3, .. }), "{err}");
        let err = parse_graph("graph v1\n").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 1, .. }));
        let err = parse_graph("graph v2\nnode a x\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2"));
        let err = parse_graph("graph v2\nnode a 1\nnode a 2\n").unwrap_err();
        assert!(matches!(err, ParseError::Graph { line: 3, .. }));
    }

    #[test]
    fn write_then_parse_preserves_graph() {
        let g = generate_graph(&GraphFamily::WeightedLine { n: 6, ratio: 1.5 }).unwrap();
        let h = parse_graph(&write_graph(&g)).unwrap();
        assert_eq!(g.ids(), h.ids());
        assert_eq!(g.mu(), h.mu());
        for i in 0..g.num_vertices() {
            assert_eq!(g.neighbors(i), h.neighbors(i));
        }
    }
}
