//! Undirected simple graphs with optional integer vertex labels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest order accepted by [`is_isomorphic_small`].
pub const ISOMORPHISM_CAP: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("edge ({u}, {v}) has an endpoint outside 0..{n}")]
    EndpointOutOfRange { u: usize, v: usize, n: usize },
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("label vector has length {got}, graph has {expected} vertices")]
    LabelLength { expected: usize, got: usize },
    #[error("isomorphism oracle is capped at {cap} vertices, got {got}")]
    TooLarge { cap: usize, got: usize },
}

/// Neighbor lists of a graph, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AdjacencyView {
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyView {
    fn build(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Self { neighbors }
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }
}

/// An undirected simple graph on the vertices `0..n`.
///
/// Edges are stored canonically as `(min, max)` in ascending order. Unlabeled
/// graphs behave as if every vertex carried label 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    labels: Option<Vec<u32>>,
    adjacency: AdjacencyView,
}

impl Graph {
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self, GraphError> {
        let mut canonical = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::EndpointOutOfRange { u, v, n });
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            canonical.push((u.min(v), u.max(v)));
        }
        canonical.sort_unstable();
        if let Some(w) = canonical.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(GraphError::LabelLength {
                    expected: n,
                    got: l.len(),
                });
            }
        }
        let adjacency = AdjacencyView::build(n, &canonical);
        Ok(Self {
            n,
            edges: canonical,
            labels,
            adjacency,
        })
    }

    pub fn unlabeled(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        Self::new(n, edges, None)
    }

    /// Graph with `n` vertices and no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            edges: Vec::new(),
            labels: None,
            adjacency: AdjacencyView::build(n, &[]),
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Label of `v`, 0 for unlabeled graphs.
    pub fn label(&self, v: usize) -> u32 {
        self.labels.as_ref().map_or(0, |l| l[v])
    }

    pub fn adjacency(&self) -> &AdjacencyView {
        &self.adjacency
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        self.adjacency.neighbors(v)
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency.degree(v)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency.has_edge(u, v)
    }

    pub fn with_labels(&self, labels: Vec<u32>) -> Result<Self, GraphError> {
        Self::new(self.n, self.edges.iter().copied(), Some(labels))
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    /// Relabels vertices so that old vertex `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n, "permutation length must match order");
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v]));
        let labels = self.labels.as_ref().map(|l| {
            let mut out = vec![0; self.n];
            for (v, &lab) in l.iter().enumerate() {
                out[perm[v]] = lab;
            }
            out
        });
        Self::new(self.n, edges, labels).expect("permutation of a valid graph is valid")
    }

    /// Subgraph induced by `vertices`, re-indexed in the given order.
    pub fn induced(&self, vertices: &[usize]) -> Self {
        let mut index = vec![usize::MAX; self.n];
        for (i, &v) in vertices.iter().enumerate() {
            index[v] = i;
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(u, v)| index[u] != usize::MAX && index[v] != usize::MAX)
            .map(|&(u, v)| (index[u], index[v]));
        let labels = self
            .labels
            .as_ref()
            .map(|l| vertices.iter().map(|&v| l[v]).collect());
        Self::new(vertices.len(), edges, labels).expect("induced subgraph is valid")
    }

    /// Connected components as sorted vertex lists, ordered by smallest vertex.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut out = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &w in self.neighbors(v) {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.n <= 1 || self.components().len() == 1
    }

    pub fn is_regular(&self, degree: usize) -> bool {
        (0..self.n).all(|v| self.degree(v) == degree)
    }
}

/// Serializable edge-list form used by the JSON dataset format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u32>>,
}

impl From<&Graph> for GraphRecord {
    fn from(g: &Graph) -> Self {
        Self {
            n: g.n,
            edges: g.edges.clone(),
            labels: g.labels.clone(),
        }
    }
}

impl TryFrom<GraphRecord> for Graph {
    type Error = GraphError;

    fn try_from(r: GraphRecord) -> Result<Self, Self::Error> {
        Graph::new(r.n, r.edges, r.labels)
    }
}

/// `g ⊍ h`: the vertices of `h` are shifted by `g.order()`. If either side is
/// labeled, the result is labeled, with unlabeled vertices getting label 0.
pub fn disjoint_union(g: &Graph, h: &Graph) -> Graph {
    let shift = g.n;
    let edges = g
        .edges
        .iter()
        .copied()
        .chain(h.edges.iter().map(|&(u, v)| (u + shift, v + shift)));
    let labels = if g.labels.is_some() || h.labels.is_some() {
        Some(
            (0..g.n)
                .map(|v| g.label(v))
                .chain((0..h.n).map(|v| h.label(v)))
                .collect(),
        )
    } else {
        None
    };
    Graph::new(g.n + h.n, edges, labels).expect("disjoint union of valid graphs is valid")
}

/// Exhaustive label- and adjacency-preserving bijection search.
///
/// This is a test oracle; both graphs must have at most [`ISOMORPHISM_CAP`]
/// vertices.
pub fn is_isomorphic_small(g: &Graph, h: &Graph) -> Result<bool, GraphError> {
    let got = g.n.max(h.n);
    if got > ISOMORPHISM_CAP {
        return Err(GraphError::TooLarge {
            cap: ISOMORPHISM_CAP,
            got,
        });
    }
    if g.n != h.n || g.edge_count() != h.edge_count() {
        return Ok(false);
    }
    let mut dg: Vec<(usize, u32)> = (0..g.n).map(|v| (g.degree(v), g.label(v))).collect();
    let mut dh: Vec<(usize, u32)> = (0..h.n).map(|v| (h.degree(v), h.label(v))).collect();
    dg.sort_unstable();
    dh.sort_unstable();
    if dg != dh {
        return Ok(false);
    }
    let mut map = vec![usize::MAX; g.n];
    let mut used = vec![false; h.n];
    Ok(extend_iso(g, h, 0, &mut map, &mut used))
}

fn extend_iso(g: &Graph, h: &Graph, v: usize, map: &mut [usize], used: &mut [bool]) -> bool {
    if v == g.n {
        return true;
    }
    for w in 0..h.n {
        if used[w] || g.degree(v) != h.degree(w) || g.label(v) != h.label(w) {
            continue;
        }
        let consistent = (0..v).all(|u| g.has_edge(u, v) == h.has_edge(map[u], w));
        if !consistent {
            continue;
        }
        map[v] = w;
        used[w] = true;
        if extend_iso(g, h, v + 1, map, used) {
            return true;
        }
        used[w] = false;
    }
    map[v] = usize::MAX;
    false
}
