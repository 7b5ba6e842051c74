//! Induced-subgraph labels and occurrence counts.
//!
//! Patterns are matched without regard to vertex labels. Generic patterns are
//! limited to [`PATTERN_CAP`] vertices; cycles and complete graphs are
//! recognized and handled by dedicated searches at any order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generators::{complete, cycle};
use crate::graph::Graph;

pub const PATTERN_CAP: usize = 8;
/// Patterns per set; label bits are packed next to the prior label in a u64.
pub const MAX_PATTERNS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubgraphError {
    #[error("pattern with {order} vertices exceeds the cap of {cap}")]
    PatternTooLarge { order: usize, cap: usize },
    #[error("pattern set has {0} patterns, at most {MAX_PATTERNS} are supported")]
    TooManyPatterns(usize),
    #[error("patterns {0} and {1} are isomorphic")]
    DuplicatePattern(usize, usize),
    #[error("vertex {v} out of range for a graph on {n} vertices")]
    VertexOutOfRange { v: usize, n: usize },
    #[error("empty pattern")]
    EmptyPattern,
    #[error("unknown pattern name {0:?}")]
    UnknownPattern(String),
}

/// Whether occurrences are counted as induced subgraphs (vertex subsets `X`
/// with `G[X]` isomorphic to the pattern) or as not necessarily induced
/// subgraphs (edge subsets forming a copy of the pattern).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountMode {
    #[default]
    Induced,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Cycle,
    Clique,
    Generic,
}

fn shape(f: &Graph) -> Shape {
    let k = f.order();
    if k >= 1 && (0..k).all(|v| f.degree(v) == k - 1) {
        Shape::Clique
    } else if k >= 3 && f.edge_count() == k && f.is_regular(2) && f.is_connected() {
        Shape::Cycle
    } else {
        Shape::Generic
    }
}

fn check_pattern(f: &Graph) -> Result<Shape, SubgraphError> {
    if f.order() == 0 {
        return Err(SubgraphError::EmptyPattern);
    }
    let s = shape(f);
    if s == Shape::Generic && f.order() > PATTERN_CAP {
        return Err(SubgraphError::PatternTooLarge {
            order: f.order(),
            cap: PATTERN_CAP,
        });
    }
    Ok(s)
}

/// Parses `c<k>` (cycle on k >= 3 vertices) or `k<k>` (complete graph on
/// k >= 1 vertices).
pub fn named_pattern(name: &str) -> Result<Graph, SubgraphError> {
    let unknown = || SubgraphError::UnknownPattern(name.to_string());
    let lower = name.trim().to_ascii_lowercase();
    let (kind, digits) = lower.split_at(lower.len().min(1));
    let k: usize = digits.parse().map_err(|_| unknown())?;
    match kind {
        "c" => cycle(k).map_err(|_| unknown()),
        "k" => complete(k).map_err(|_| unknown()),
        _ => Err(unknown()),
    }
}

/// A finite set of pairwise non-isomorphic patterns in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PatternSet {
    patterns: Vec<Graph>,
}

impl PatternSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates the patterns and sorts them by (order, edge count, canonical
    /// form). Vertex labels on patterns are dropped.
    pub fn new(patterns: Vec<Graph>) -> Result<Self, SubgraphError> {
        if patterns.len() > MAX_PATTERNS {
            return Err(SubgraphError::TooManyPatterns(patterns.len()));
        }
        let mut keyed = Vec::with_capacity(patterns.len());
        for f in patterns {
            let s = check_pattern(&f)?;
            let f = f.without_labels();
            let form = canonical_form(&f, s);
            keyed.push(((f.order(), f.edge_count(), form), f));
        }
        for i in 0..keyed.len() {
            for j in i + 1..keyed.len() {
                if keyed[i].0 == keyed[j].0 {
                    return Err(SubgraphError::DuplicatePattern(i, j));
                }
            }
        }
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self {
            patterns: keyed.into_iter().map(|(_, f)| f).collect(),
        })
    }

    pub fn single(f: Graph) -> Result<Self, SubgraphError> {
        Self::new(vec![f])
    }

    pub fn patterns(&self) -> &[Graph] {
        &self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

/// Lexicographically largest upper-triangle adjacency string over all vertex
/// orderings, packed into words. Two generic patterns have equal forms iff
/// they are isomorphic; cycles and cliques use the form of the standard copy.
fn canonical_form(f: &Graph, s: Shape) -> Vec<u64> {
    let k = f.order();
    let pack = |adj: &dyn Fn(usize, usize) -> bool| {
        let mut words = vec![0u64; (k * k.saturating_sub(1) / 2).div_ceil(64).max(1)];
        let mut bit = 0;
        for u in 0..k {
            for v in u + 1..k {
                if adj(u, v) {
                    words[bit / 64] |= 1 << (63 - bit % 64);
                }
                bit += 1;
            }
        }
        words
    };
    match s {
        Shape::Clique => pack(&|_, _| true),
        Shape::Cycle => pack(&|u, v| v == u + 1 || (u == 0 && v == k - 1)),
        Shape::Generic => {
            let mut perm: Vec<usize> = (0..k).collect();
            let mut best: Option<Vec<u64>> = None;
            permute_all(&mut perm, 0, &mut |p| {
                let form = pack(&|u, v| f.has_edge(p[u], p[v]));
                if best.as_ref().is_none_or(|b| form > *b) {
                    best = Some(form);
                }
            });
            best.unwrap_or_default()
        }
    }
}

fn permute_all(p: &mut [usize], i: usize, visit: &mut dyn FnMut(&[usize])) {
    if i == p.len() {
        visit(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute_all(p, i + 1, visit);
        p.swap(i, j);
    }
}

/// Backtracking embedding search of a pattern into a host graph.
struct Matcher<'a> {
    g: &'a Graph,
    f: &'a Graph,
    induced: bool,
    /// Pattern vertices in placement order.
    order: Vec<usize>,
    /// For each placement position, an earlier pattern neighbor if any.
    anchor: Vec<Option<usize>>,
}

impl<'a> Matcher<'a> {
    fn new(g: &'a Graph, f: &'a Graph, root: usize, induced: bool) -> Self {
        let k = f.order();
        let mut placed = vec![false; k];
        let mut order = vec![root];
        let mut anchor = vec![None];
        placed[root] = true;
        while order.len() < k {
            let next = (0..k)
                .filter(|&p| !placed[p])
                .max_by_key(|&p| {
                    let linked = f.neighbors(p).iter().filter(|&&q| placed[q]).count();
                    (linked, f.degree(p), std::cmp::Reverse(p))
                })
                .expect("an unplaced vertex remains");
            anchor.push(f.neighbors(next).iter().copied().find(|&q| placed[q]));
            placed[next] = true;
            order.push(next);
        }
        Self {
            g,
            f,
            induced,
            order,
            anchor,
        }
    }

    fn consistent(&self, pos: usize, x: usize, image: &[usize]) -> bool {
        let p = self.order[pos];
        if self.g.degree(x) < self.f.degree(p) {
            return false;
        }
        for &q in &self.order[..pos] {
            let y = image[q];
            if y == x {
                return false;
            }
            let fe = self.f.has_edge(p, q);
            let ge = self.g.has_edge(x, y);
            if (fe && !ge) || (self.induced && !fe && ge) {
                return false;
            }
        }
        true
    }

    /// Number of embeddings extending `image` from position `pos`, stopping at
    /// the first one when `first_only`.
    fn extend(&self, pos: usize, image: &mut [usize], first_only: bool) -> u64 {
        if pos == self.order.len() {
            return 1;
        }
        let p = self.order[pos];
        let mut total = 0;
        let mut try_one = |x: usize, image: &mut [usize]| -> bool {
            if self.consistent(pos, x, image) {
                image[p] = x;
                total += self.extend(pos + 1, image, first_only);
                if first_only && total > 0 {
                    return true;
                }
            }
            false
        };
        match self.anchor[pos] {
            Some(q) => {
                for &x in self.g.neighbors(image[q]) {
                    if try_one(x, image) {
                        break;
                    }
                }
            }
            None => {
                for x in 0..self.g.order() {
                    if try_one(x, image) {
                        break;
                    }
                }
            }
        }
        total
    }
}

fn generic_contains(g: &Graph, v: usize, f: &Graph) -> bool {
    if f.order() > g.order() {
        return false;
    }
    (0..f.order())
        .filter(|&root| f.degree(root) <= g.degree(v))
        .any(|root| {
            let m = Matcher::new(g, f, root, true);
            let mut image = vec![usize::MAX; f.order()];
            image[root] = v;
            m.extend(1, &mut image, true) > 0
        })
}

/// Is there an induced cycle of length `k` through `v`?
fn cycle_contains(g: &Graph, v: usize, k: usize) -> bool {
    if k == 3 {
        return clique_contains(g, v, 3);
    }
    let mut path = vec![v];
    let mut on_path = vec![false; g.order()];
    on_path[v] = true;
    induced_cycle_dfs(g, k, &mut path, &mut on_path)
}

fn induced_cycle_dfs(g: &Graph, k: usize, path: &mut Vec<usize>, on_path: &mut [bool]) -> bool {
    let last = *path.last().expect("path is non-empty");
    let len = path.len();
    for &x in g.neighbors(last) {
        if on_path[x] {
            continue;
        }
        // x may touch only `last` among the path vertices, except that the
        // closing vertex must also touch the start.
        let closing = len + 1 == k;
        let ok = path[..len - 1]
            .iter()
            .enumerate()
            .all(|(i, &p)| g.has_edge(x, p) == (closing && i == 0));
        if !ok {
            continue;
        }
        if closing {
            return true;
        }
        path.push(x);
        on_path[x] = true;
        let found = induced_cycle_dfs(g, k, path, on_path);
        path.pop();
        on_path[x] = false;
        if found {
            return true;
        }
    }
    false
}

/// Is `v` in a clique on `k` vertices?
fn clique_contains(g: &Graph, v: usize, k: usize) -> bool {
    if k <= 1 {
        return true;
    }
    let candidates: Vec<usize> = g
        .neighbors(v)
        .iter()
        .copied()
        .filter(|&u| g.degree(u) + 1 >= k)
        .collect();
    grow_clique(g, &candidates, k - 1)
}

fn grow_clique(g: &Graph, candidates: &[usize], need: usize) -> bool {
    if need == 0 {
        return true;
    }
    if candidates.len() < need {
        return false;
    }
    for (i, &u) in candidates.iter().enumerate() {
        let rest: Vec<usize> = candidates[i + 1..]
            .iter()
            .copied()
            .filter(|&w| g.has_edge(u, w))
            .collect();
        if grow_clique(g, &rest, need - 1) {
            return true;
        }
    }
    false
}

/// True iff some vertex set containing `v` induces a copy of `f` in `g`.
pub fn contains_induced_at(g: &Graph, v: usize, f: &Graph) -> Result<bool, SubgraphError> {
    let s = check_pattern(f)?;
    if v >= g.order() {
        return Err(SubgraphError::VertexOutOfRange { v, n: g.order() });
    }
    Ok(contains_unchecked(g, v, f, s))
}

fn contains_unchecked(g: &Graph, v: usize, f: &Graph, s: Shape) -> bool {
    match s {
        Shape::Clique => clique_contains(g, v, f.order()),
        Shape::Cycle => cycle_contains(g, v, f.order()),
        Shape::Generic => generic_contains(g, v, f),
    }
}

/// Per-vertex bit vectors: bit `i` is set iff the vertex lies in an induced
/// copy of the `i`-th pattern of `fs`.
pub fn pattern_bits(g: &Graph, fs: &PatternSet) -> Vec<u64> {
    let shapes: Vec<Shape> = fs.patterns().iter().map(shape).collect();
    (0..g.order())
        .into_par_iter()
        .map(|v| {
            fs.patterns()
                .iter()
                .zip(&shapes)
                .enumerate()
                .filter(|(_, (f, &s))| contains_unchecked(g, v, f, s))
                .fold(0u64, |acc, (i, _)| acc | 1 << i)
        })
        .collect()
}

/// Initial labels for subgraph-aware refinement: the pair (prior vertex label,
/// pattern bit vector) packed as `prior << |fs| | bits`.
pub fn label_f(g: &Graph, fs: &PatternSet) -> Vec<u64> {
    let k = fs.len();
    pattern_bits(g, fs)
        .into_iter()
        .enumerate()
        .map(|(v, bits)| (u64::from(g.label(v)) << k) | bits)
        .collect()
}

/// [`label_f`] for every graph of a collection.
pub fn label_f_collection(graphs: &[Graph], fs: &PatternSet) -> Vec<Vec<u64>> {
    graphs.par_iter().map(|g| label_f(g, fs)).collect()
}

/// Number of embeddings of `f` into `g` (injective maps preserving edges, and
/// non-edges too when `induced`).
fn embeddings(g: &Graph, f: &Graph, induced: bool) -> u64 {
    if f.order() > g.order() {
        return 0;
    }
    let m = Matcher::new(g, f, count_root(f), induced);
    let root = m.order[0];
    let mut total = 0;
    let mut image = vec![usize::MAX; f.order()];
    for x in 0..g.order() {
        if g.degree(x) < f.degree(root) {
            continue;
        }
        image[root] = x;
        total += m.extend(1, &mut image, false);
    }
    total
}

fn count_root(f: &Graph) -> usize {
    (0..f.order())
        .max_by_key(|&p| (f.degree(p), std::cmp::Reverse(p)))
        .unwrap_or(0)
}

/// Number of automorphisms of `f`.
pub fn automorphism_count(f: &Graph) -> u64 {
    embeddings(f, f, true)
}

/// Number of occurrences of `f` in `g`: vertex subsets inducing a copy of `f`
/// ([`CountMode::Induced`]) or subgraphs isomorphic to `f`
/// ([`CountMode::Partial`]). Computed as embeddings divided by automorphisms.
pub fn count_occurrences(g: &Graph, f: &Graph, mode: CountMode) -> Result<u64, SubgraphError> {
    if f.order() == 0 {
        return Err(SubgraphError::EmptyPattern);
    }
    if f.order() > PATTERN_CAP {
        return Err(SubgraphError::PatternTooLarge {
            order: f.order(),
            cap: PATTERN_CAP,
        });
    }
    let f = f.without_labels();
    let emb = embeddings(g, &f, mode == CountMode::Induced);
    Ok(emb / automorphism_count(&f))
}
