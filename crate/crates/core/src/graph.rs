//! Directed simple graphs over process ids, strongly connected components
//! and source components.
//!
//! A *source component* is a strongly connected component with no edge
//! entering it from outside, i.e. a source of the condensation DAG.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::Rng;
use thiserror::Error;

use crate::model::ProcessId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("self-loop on {0}")]
    SelfLoop(ProcessId),
    #[error("edge endpoint {0} is not a vertex")]
    UnknownVertex(ProcessId),
    #[error("graph has no vertices")]
    Empty,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// A directed simple graph: no self-loops, no parallel edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    vertices: Vec<ProcessId>,
    index: BTreeMap<ProcessId, usize>,
    out: Vec<Vec<usize>>,
    inn: Vec<Vec<usize>>,
}

impl Digraph {
    pub fn new(
        vertices: impl IntoIterator<Item = ProcessId>,
        edges: impl IntoIterator<Item = (ProcessId, ProcessId)>,
    ) -> Result<Self, GraphError> {
        let vertices: Vec<ProcessId> = vertices
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: BTreeMap<ProcessId, usize> =
            vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut edge_set = BTreeSet::new();
        for (u, w) in edges {
            if u == w {
                return Err(GraphError::SelfLoop(u));
            }
            let ui = *index.get(&u).ok_or(GraphError::UnknownVertex(u))?;
            let wi = *index.get(&w).ok_or(GraphError::UnknownVertex(w))?;
            edge_set.insert((ui, wi));
        }
        let mut out = vec![Vec::new(); vertices.len()];
        let mut inn = vec![Vec::new(); vertices.len()];
        for (u, w) in edge_set {
            out[u].push(w);
            inn[w].push(u);
        }
        Ok(Self {
            vertices,
            index,
            out,
            inn,
        })
    }

    /// Builds a graph from in-neighbourhoods: `u → w` for every `u` in
    /// `in_neighbours[w]`. Endpoints missing from the map become vertices.
    pub fn from_in_neighbours(
        in_neighbours: &BTreeMap<ProcessId, BTreeSet<ProcessId>>,
    ) -> Result<Self, GraphError> {
        let mut vertices: BTreeSet<ProcessId> = in_neighbours.keys().copied().collect();
        vertices.extend(in_neighbours.values().flatten().copied());
        let edges = in_neighbours
            .iter()
            .flat_map(|(&w, us)| us.iter().map(move |&u| (u, w)));
        Self::new(vertices, edges)
    }

    pub fn vertices(&self) -> &[ProcessId] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains(&self, v: ProcessId) -> bool {
        self.index.contains_key(&v)
    }

    pub fn edges(&self) -> impl Iterator<Item = (ProcessId, ProcessId)> + '_ {
        self.out.iter().enumerate().flat_map(move |(u, ws)| {
            ws.iter()
                .map(move |&w| (self.vertices[u], self.vertices[w]))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, u: ProcessId, w: ProcessId) -> bool {
        match (self.index.get(&u), self.index.get(&w)) {
            (Some(&ui), Some(&wi)) => self.out[ui].contains(&wi),
            _ => false,
        }
    }

    pub fn in_degree(&self, v: ProcessId) -> Option<usize> {
        self.index.get(&v).map(|&i| self.inn[i].len())
    }

    pub fn in_neighbours(&self, v: ProcessId) -> Option<BTreeSet<ProcessId>> {
        self.index
            .get(&v)
            .map(|&i| self.inn[i].iter().map(|&u| self.vertices[u]).collect())
    }

    fn to_set(&self, idx: &[usize]) -> BTreeSet<ProcessId> {
        idx.iter().map(|&i| self.vertices[i]).collect()
    }

    /// Strongly connected components, each as a vertex set, ordered by their
    /// smallest member.
    pub fn strongly_connected_components(&self) -> Vec<BTreeSet<ProcessId>> {
        let mut comps: Vec<BTreeSet<ProcessId>> =
            tarjan(&self.out).iter().map(|c| self.to_set(c)).collect();
        comps.sort_by_key(|c| c.first().copied());
        comps
    }

    /// Weakly connected components ordered by smallest member.
    pub fn weakly_connected_components(&self) -> Vec<BTreeSet<ProcessId>> {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &w in self.out[v].iter().chain(self.inn[v].iter()) {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            comps.push(self.to_set(&comp));
        }
        comps
    }

    /// Subgraph induced by `keep`.
    pub fn induced(&self, keep: &BTreeSet<ProcessId>) -> Digraph {
        let edges: Vec<_> = self
            .edges()
            .filter(|(u, w)| keep.contains(u) && keep.contains(w))
            .collect();
        Digraph::new(keep.iter().copied().filter(|v| self.contains(*v)), edges)
            .expect("induced subgraph of a simple graph is simple")
    }

    /// Vertices with a directed path to `v` (including `v`).
    pub fn ancestors(&self, v: ProcessId) -> Option<BTreeSet<ProcessId>> {
        let &start = self.index.get(&v)?;
        let mut seen = vec![false; self.len()];
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            for &u in &self.inn[x] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        Some(
            seen.iter()
                .enumerate()
                .filter(|(_, &s)| s)
                .map(|(i, _)| self.vertices[i])
                .collect(),
        )
    }

    /// Writes the graph in edge-list form: one `u w` pair per line, plus a
    /// single-id line for every isolated vertex.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if self.out[i].is_empty() && self.inn[i].is_empty() {
                let _ = writeln!(out, "{}", v.0);
            }
        }
        for (u, w) in self.edges() {
            let _ = writeln!(out, "{} {}", u.0, w.0);
        }
        out
    }

    /// Parses the edge-list format. Blank lines and `#` comments are skipped.
    pub fn parse_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut vertices = BTreeSet::new();
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse = |s: &str| {
                s.parse::<ProcessId>().map_err(|reason| GraphError::Parse {
                    line: i + 1,
                    reason,
                })
            };
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [v] => {
                    vertices.insert(parse(v)?);
                }
                [u, w] => {
                    let (u, w) = (parse(u)?, parse(w)?);
                    vertices.insert(u);
                    vertices.insert(w);
                    edges.push((u, w));
                }
                _ => {
                    return Err(GraphError::Parse {
                        line: i + 1,
                        reason: format!("expected `u w`, got `{line}`"),
                    })
                }
            }
        }
        Self::new(vertices, edges)
    }
}

/// Iterative Tarjan; components come out in reverse topological order.
fn tarjan(out: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNVISITED: usize = usize::MAX;
    let n = out.len();
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut next = 0;
    // (vertex, position in its adjacency list)
    let mut call: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        call.push((root, 0));
        while let Some(&(v, pos)) = call.last() {
            if pos == 0 && index[v] == UNVISITED {
                index[v] = next;
                low[v] = next;
                next += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if let Some(&w) = out[v].get(pos) {
                if let Some(top) = call.last_mut() {
                    top.1 += 1;
                }
                if index[w] == UNVISITED {
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comps.push(comp);
            }
        }
    }
    comps
}

/// Strongly connected components whose condensation vertex has in-degree 0.
pub fn source_components(g: &Digraph) -> Vec<BTreeSet<ProcessId>> {
    let mut comp_of: BTreeMap<ProcessId, usize> = BTreeMap::new();
    let comps = g.strongly_connected_components();
    for (ci, c) in comps.iter().enumerate() {
        for &v in c {
            comp_of.insert(v, ci);
        }
    }
    let mut has_in = vec![false; comps.len()];
    for (u, w) in g.edges() {
        if comp_of[&u] != comp_of[&w] {
            has_in[comp_of[&w]] = true;
        }
    }
    comps
        .into_iter()
        .zip(has_in)
        .filter(|(_, entered)| !entered)
        .map(|(c, _)| c)
        .collect()
}

pub fn min_in_degree(g: &Digraph) -> Result<usize, GraphError> {
    g.inn.iter().map(Vec::len).min().ok_or(GraphError::Empty)
}

/// Source components from which `v` is reachable by a directed path.
pub fn reachable_sources(
    g: &Digraph,
    v: ProcessId,
) -> Result<Vec<BTreeSet<ProcessId>>, GraphError> {
    let ancestors = g.ancestors(v).ok_or(GraphError::UnknownVertex(v))?;
    Ok(source_components(g)
        .into_iter()
        .filter(|c| c.iter().any(|u| ancestors.contains(u)))
        .collect())
}

/// The unique source component, if there is exactly one.
pub fn initial_clique_consensus_check(g: &Digraph) -> Option<BTreeSet<ProcessId>> {
    let mut sources = source_components(g);
    if sources.len() == 1 {
        sources.pop()
    } else {
        None
    }
}

/// Seeded random simple digraph on `1..=n`.
///
/// Every ordered pair is included with probability `edge_prob`; afterwards
/// each vertex whose in-degree is below `min_in` receives in-edges from
/// uniformly chosen non-neighbours until it reaches `min_in`.
pub fn random_digraph<R: Rng + ?Sized>(
    rng: &mut R,
    n: u32,
    edge_prob: f64,
    min_in: usize,
) -> Digraph {
    assert!(min_in < n.max(1) as usize, "min in-degree must be below n");
    let vs: Vec<ProcessId> = (1..=n).map(ProcessId).collect();
    let mut inn: BTreeMap<ProcessId, BTreeSet<ProcessId>> =
        vs.iter().map(|&v| (v, BTreeSet::new())).collect();
    for &u in &vs {
        for &w in &vs {
            if u != w && rng.random_bool(edge_prob) {
                inn.get_mut(&w).unwrap().insert(u);
            }
        }
    }
    for &w in &vs {
        let set = inn.get_mut(&w).unwrap();
        while set.len() < min_in {
            let candidates: Vec<ProcessId> = vs
                .iter()
                .copied()
                .filter(|&u| u != w && !set.contains(&u))
                .collect();
            let &u = candidates
                .choose(rng)
                .expect("min_in < n leaves candidates");
            set.insert(u);
        }
    }
    Digraph::new(
        vs,
        inn.iter()
            .flat_map(|(&w, us)| us.iter().map(move |&u| (u, w))),
    )
    .expect("generated graph is simple")
}
