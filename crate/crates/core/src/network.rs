//! Undirected agent graphs, graph powers, clique covers and a TTL-bounded
//! flooding simulator.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("graph is disconnected")]
    Disconnected,
    #[error("edge list line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("vertex {vertex} out of range for {agents} agents")]
    OutOfRange { vertex: usize, agents: usize },
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("TTL {gamma} outside [1, max(diameter, 1) = {limit}]")]
    BadTtl { gamma: usize, limit: usize },
    #[error("no {degree}-regular graph on {agents} vertices")]
    NoRegularGraph { agents: usize, degree: usize },
}

/// Simple undirected graph stored as a dense adjacency matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<bool>>,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Self { adj: vec![vec![false; n]; n] }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, NetworkError> {
        let mut g = Self::empty(n);
        for &(i, j) in edges {
            g.add_edge(i, j)?;
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, i: usize, j: usize) -> Result<(), NetworkError> {
        let n = self.len();
        for v in [i, j] {
            if v >= n {
                return Err(NetworkError::OutOfRange { vertex: v, agents: n });
            }
        }
        if i == j {
            return Err(NetworkError::SelfLoop(i));
        }
        self.adj[i][j] = true;
        self.adj[j][i] = true;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i][j]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[i].iter().enumerate().filter(|(_, &e)| e).map(|(j, _)| j)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    /// Edges `(i, j)` with `i < j` in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.adj[i][j] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    /// BFS hop distances from `src`; `None` for unreachable vertices.
    pub fn distances_from(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for v in self.neighbors(u) {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// All-pairs hop distances.
    pub fn distance_matrix(&self) -> Result<Vec<Vec<usize>>, NetworkError> {
        (0..self.len())
            .map(|s| self.distances_from(s).into_iter().collect::<Option<Vec<_>>>().ok_or(NetworkError::Disconnected))
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.distances_from(0).iter().all(Option::is_some)
    }

    pub fn diameter(&self) -> Result<usize, NetworkError> {
        Ok(self.distance_matrix()?.into_iter().flatten().max().unwrap_or(0))
    }

    pub fn is_clique(&self, members: &[usize]) -> bool {
        members.iter().enumerate().all(|(a, &i)| members[a + 1..].iter().all(|&j| self.adj[i][j]))
    }
}

/// Parses an edge list: one `i j` pair per line, 0-indexed. Blank lines and
/// lines starting with `#` are skipped. The vertex count is `agents` if
/// given, else one past the largest index.
pub fn parse_edge_list(text: &str, agents: Option<usize>) -> Result<Graph, NetworkError> {
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(NetworkError::Parse { line: idx + 1, msg: format!("expected two indices, got {:?}", line) });
        }
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|e| NetworkError::Parse { line: idx + 1, msg: format!("{s:?}: {e}") })
        };
        edges.push((parse(parts[0])?, parse(parts[1])?));
    }
    let n = agents.unwrap_or_else(|| edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0));
    Graph::from_edges(n, &edges)
}

pub fn complete(n: usize) -> Graph {
    let mut g = Graph::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            g.adj[i][j] = true;
            g.adj[j][i] = true;
        }
    }
    g
}

pub fn line(n: usize) -> Graph {
    let mut g = Graph::empty(n);
    for i in 1..n {
        g.adj[i - 1][i] = true;
        g.adj[i][i - 1] = true;
    }
    g
}

pub fn ring(n: usize) -> Graph {
    let mut g = line(n);
    if n > 2 {
        g.adj[0][n - 1] = true;
        g.adj[n - 1][0] = true;
    }
    g
}

/// Star with hub 0.
pub fn star(n: usize) -> Graph {
    let mut g = Graph::empty(n);
    for i in 1..n {
        g.adj[0][i] = true;
        g.adj[i][0] = true;
    }
    g
}

/// Connected `degree`-regular graph by the configuration model with restarts.
pub fn random_regular(n: usize, degree: usize, seed: u64) -> Result<Graph, NetworkError> {
    let bad = || NetworkError::NoRegularGraph { agents: n, degree };
    if degree >= n || (n * degree) % 2 == 1 || (n > 1 && degree == 0) {
        return Err(bad());
    }
    let mut r = rng::stream(seed, Purpose::Topology, 0, 0, 0);
    'attempt: for _ in 0..10_000 {
        let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, degree)).collect();
        stubs.shuffle(&mut r);
        let mut g = Graph::empty(n);
        for pair in stubs.chunks(2) {
            let (i, j) = (pair[0], pair[1]);
            if i == j || g.adj[i][j] {
                continue 'attempt;
            }
            g.adj[i][j] = true;
            g.adj[j][i] = true;
        }
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(bad())
}

/// `G_γ`: `(i, j)` is an edge iff `0 < dist(i, j) <= γ`.
pub fn power_graph(g: &Graph, gamma: usize) -> Result<Graph, NetworkError> {
    let dist = g.distance_matrix()?;
    let n = g.len();
    let mut p = Graph::empty(n);
    for i in 0..n {
        for j in 0..n {
            p.adj[i][j] = i != j && dist[i][j] <= gamma;
        }
    }
    Ok(p)
}

/// Greedy sequential coloring of the complement: each vertex, in index
/// order, joins the first class it is fully adjacent to.
pub fn clique_cover_greedy(g: &Graph) -> Vec<Vec<usize>> {
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for v in 0..g.len() {
        match classes.iter_mut().find(|c| c.iter().all(|&u| g.has_edge(u, v))) {
            Some(c) => c.push(v),
            None => classes.push(vec![v]),
        }
    }
    classes
}

/// Named topology generators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Topology {
    Complete,
    Line,
    Ring,
    Star,
    RandomRegular { degree: usize, seed: u64 },
    EdgeList { path: String },
}

impl Topology {
    /// Builds the graph on `n` vertices; edge-list paths are read from disk.
    pub fn build(&self, n: usize) -> Result<Graph, NetworkError> {
        match self {
            Topology::Complete => Ok(complete(n)),
            Topology::Line => Ok(line(n)),
            Topology::Ring => Ok(ring(n)),
            Topology::Star => Ok(star(n)),
            Topology::RandomRegular { degree, seed } => random_regular(n, *degree, *seed),
            Topology::EdgeList { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| NetworkError::Parse { line: 0, msg: format!("{path}: {e}") })?;
                parse_edge_list(&text, Some(n))
            }
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Complete => write!(f, "complete"),
            Topology::Line => write!(f, "line"),
            Topology::Ring => write!(f, "ring"),
            Topology::Star => write!(f, "star"),
            Topology::RandomRegular { degree, seed } => write!(f, "random-regular:{degree}:{seed}"),
            Topology::EdgeList { path } => write!(f, "file:{path}"),
        }
    }
}

impl FromStr for Topology {
    type Err = String;

    /// `complete`, `line`, `ring`, `star`, `random-regular:<k>:<seed>`, `file:<path>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "complete" => return Ok(Topology::Complete),
            "line" => return Ok(Topology::Line),
            "ring" => return Ok(Topology::Ring),
            "star" => return Ok(Topology::Star),
            _ => {}
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(Topology::EdgeList { path: path.to_string() });
        }
        if let Some(rest) = s.strip_prefix("random-regular:") {
            let mut it = rest.split(':');
            let degree = it.next().and_then(|v| v.parse().ok());
            let seed = it.next().and_then(|v| v.parse().ok());
            if let (Some(degree), Some(seed), None) = (degree, seed, it.next()) {
                return Ok(Topology::RandomRegular { degree, seed });
            }
        }
        Err(format!("unknown topology {s:?}"))
    }
}

/// A connected graph with its TTL, power graph and static clique cover.
#[derive(Debug, Clone)]
pub struct Network {
    pub graph: Graph,
    pub gamma: usize,
    pub power: Graph,
    pub cliques: Vec<Vec<usize>>,
    pub clique_of: Vec<usize>,
    pub dist: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(graph: Graph, gamma: usize) -> Result<Self, NetworkError> {
        let dist = graph.distance_matrix()?;
        let diameter = dist.iter().flatten().copied().max().unwrap_or(0);
        let limit = diameter.max(1);
        if gamma == 0 || gamma > limit {
            return Err(NetworkError::BadTtl { gamma, limit });
        }
        let power = power_graph(&graph, gamma)?;
        let cliques = clique_cover_greedy(&power);
        let mut clique_of = vec![0; graph.len()];
        for (c, members) in cliques.iter().enumerate() {
            for &v in members {
                clique_of[v] = c;
            }
        }
        Ok(Self { graph, gamma, power, cliques, clique_of, dist })
    }

    pub fn agents(&self) -> usize {
        self.graph.len()
    }

    pub fn cover_size(&self) -> usize {
        self.cliques.len()
    }

    pub fn same_clique(&self, i: usize, j: usize) -> bool {
        self.clique_of[i] == self.clique_of[j]
    }
}

/// One hop of a flooded message: `receiver` gets it from `sender`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    pub sender: usize,
    pub receiver: usize,
}

/// A message being flooded outward from its origin.
#[derive(Debug, Clone)]
pub struct Flood<P> {
    pub payload: P,
    pub origin: usize,
    pub hops_remaining: usize,
    visited: Vec<bool>,
    frontier: Vec<usize>,
}

impl<P> Flood<P> {
    pub fn new(payload: P, origin: usize, agents: usize, ttl: usize) -> Self {
        let mut visited = vec![false; agents];
        visited[origin] = true;
        Self { payload, origin, hops_remaining: ttl, visited, frontier: vec![origin] }
    }

    pub fn is_live(&self) -> bool {
        self.hops_remaining > 0 && !self.frontier.is_empty()
    }

    /// Advances one hop. Every unvisited neighbor of the frontier receives the
    /// message once, credited to its lowest-indexed frontier neighbor.
    pub fn advance(&mut self, g: &Graph) -> Vec<Hop> {
        if !self.is_live() {
            return Vec::new();
        }
        let mut hops = Vec::new();
        for &u in &self.frontier {
            for v in g.neighbors(u) {
                if !self.visited[v] {
                    self.visited[v] = true;
                    hops.push(Hop { sender: u, receiver: v });
                }
            }
        }
        hops.sort_by_key(|h| h.receiver);
        self.frontier = hops.iter().map(|h| h.receiver).collect();
        self.hops_remaining -= 1;
        hops
    }
}
